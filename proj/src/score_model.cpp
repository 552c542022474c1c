#include "diffdet/score_model.hpp"

#include <json.hpp>

#include <cmath>
#include <numbers>

#include "diffdet/rng.hpp"

namespace diffdet {

namespace {

void require_finite(const Mat& m, const char* what) {
  if (!m.allFinite())
    throw std::invalid_argument(std::string(what) + ": non-finite entries");
}

void require_finite(const Vec& v, const char* what) {
  if (!v.allFinite())
    throw std::invalid_argument(std::string(what) + ": non-finite entries");
}

/// Validates symmetry and positive definiteness, returning the Cholesky factor.
Eigen::LLT<Mat> validated_llt(const Mat& sigma, const char* what) {
  if (sigma.rows() != sigma.cols())
    throw std::invalid_argument(std::string(what) + ": covariance not square");
  require_finite(sigma, what);
  double scale = std::max(1.0, sigma.cwiseAbs().maxCoeff());
  double asym = (sigma - sigma.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12 * scale)
    throw std::invalid_argument(std::string(what) +
                                ": covariance not symmetric");
  Eigen::LLT<Mat> llt(sigma);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument(std::string(what) +
                                ": covariance not positive definite");
  return llt;
}

std::vector<double> row_major(const Mat& m) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
  return out;
}

Mat from_row_major(const std::vector<double>& v, Eigen::Index rows,
                   Eigen::Index cols) {
  if (static_cast<Eigen::Index>(v.size()) != rows * cols)
    throw ConfigError("model file: matrix size mismatch");
  Mat m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = v[k++];
  return m;
}

}  // namespace

void ScoreModel::check_dim(const Vec& x) const {
  if (x.size() != dim())
    throw std::invalid_argument("score model: input dimension mismatch");
  if (!x.allFinite())
    throw std::invalid_argument("score model: non-finite input");
}

double softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

GaussianModel::GaussianModel(Vec mu, Mat sigma)
    : mu_(std::move(mu)), sigma_(std::move(sigma)) {
  require_finite(mu_, "GaussianModel");
  if (sigma_.rows() != mu_.size())
    throw std::invalid_argument("GaussianModel: mu/sigma dimension mismatch");
  auto llt = validated_llt(sigma_, "GaussianModel");
  chol_lower_ = llt.matrixL();
  sigma_inv_ = llt.solve(Mat::Identity(mu_.size(), mu_.size()));
  log_det_ = 2.0 * chol_lower_.diagonal().array().log().sum();
}

double GaussianModel::log_density(const Vec& x) const {
  check_dim(x);
  Vec diff = x - mu_;
  double quad = diff.dot(sigma_inv_ * diff);
  double d = static_cast<double>(dim());
  return -0.5 * (quad + log_det_ + d * std::log(2.0 * std::numbers::pi));
}

Vec GaussianModel::score(const Vec& x) const {
  check_dim(x);
  return -(sigma_inv_ * (x - mu_));
}

Mat GaussianModel::score_jacobian(const Vec& x) const {
  check_dim(x);
  return -sigma_inv_;
}

GbRbmModel::GbRbmModel(Vec mu, Mat sigma, Mat w, Vec phi)
    : mu_(std::move(mu)),
      sigma_(std::move(sigma)),
      w_(std::move(w)),
      phi_(std::move(phi)) {
  require_finite(mu_, "GbRbmModel");
  require_finite(w_, "GbRbmModel");
  require_finite(phi_, "GbRbmModel");
  if (sigma_.rows() != mu_.size() || w_.rows() != mu_.size() ||
      w_.cols() != phi_.size())
    throw std::invalid_argument("GbRbmModel: parameter dimension mismatch");
  if (phi_.size() < 1)
    throw std::invalid_argument("GbRbmModel: latent dimension must be >= 1");
  auto llt = validated_llt(sigma_, "GbRbmModel");
  sigma_inv_ = llt.solve(Mat::Identity(mu_.size(), mu_.size()));
  sigma_inv_w_ = sigma_inv_ * w_;
}

Vec GbRbmModel::pre_activation(const Vec& x) const {
  return phi_ + sigma_inv_w_.transpose() * x;
}

double GbRbmModel::log_density(const Vec& x) const {
  check_dim(x);
  Vec diff = x - mu_;
  double quad = 0.5 * diff.dot(sigma_inv_ * diff);
  Vec z = pre_activation(x);
  double sp = 0.0;
  for (Eigen::Index j = 0; j < z.size(); ++j) sp += softplus(z[j]);
  return -quad + sp;
}

Vec GbRbmModel::score(const Vec& x) const {
  check_dim(x);
  Vec z = pre_activation(x);
  Vec sig(z.size());
  for (Eigen::Index j = 0; j < z.size(); ++j) sig[j] = sigmoid(z[j]);
  return -(sigma_inv_ * (x - mu_)) + sigma_inv_w_ * sig;
}

Mat GbRbmModel::score_jacobian(const Vec& x) const {
  check_dim(x);
  Vec z = pre_activation(x);
  Vec dsig(z.size());
  for (Eigen::Index j = 0; j < z.size(); ++j) {
    double s = sigmoid(z[j]);
    dsig[j] = s * (1.0 - s);
  }
  return -sigma_inv_ +
         sigma_inv_w_ * dsig.asDiagonal() * sigma_inv_w_.transpose();
}

QuarticModel::QuarticModel(Vec mu, Mat sigma)
    : mu_(std::move(mu)), sigma_(std::move(sigma)) {
  require_finite(mu_, "QuarticModel");
  if (sigma_.rows() != mu_.size())
    throw std::invalid_argument("QuarticModel: mu/sigma dimension mismatch");
  auto llt = validated_llt(sigma_, "QuarticModel");
  sigma_inv_ = llt.solve(Mat::Identity(mu_.size(), mu_.size()));
}

double QuarticModel::log_density(const Vec& x) const {
  check_dim(x);
  Vec y = x.array().square().matrix() - mu_;
  return -y.dot(sigma_inv_ * y);
}

Vec QuarticModel::score(const Vec& x) const {
  check_dim(x);
  Vec y = x.array().square().matrix() - mu_;
  Vec g = sigma_inv_ * y;
  return (-4.0 * g.array() * x.array()).matrix();
}

Mat QuarticModel::score_jacobian(const Vec& x) const {
  check_dim(x);
  Vec y = x.array().square().matrix() - mu_;
  Vec g = sigma_inv_ * y;
  Mat h = -8.0 * (sigma_inv_.array() *
                  (x * x.transpose()).array())
                     .matrix();
  h.diagonal() -= 4.0 * g;
  return h;
}

ModelPair::ModelPair(std::shared_ptr<const ScoreModel> inf_model,
                     std::shared_ptr<const ScoreModel> one_model)
    : p_inf(std::move(inf_model)), p_one(std::move(one_model)) {
  if (!p_inf || !p_one)
    throw std::invalid_argument("ModelPair: null model");
  if (p_inf->dim() != p_one->dim())
    throw std::invalid_argument("ModelPair: dimension mismatch");
}

Mat reference_covariance() {
  constexpr double t[8][8] = {
      {6.94357, -3.41203, -2.15460, -0.48852, -0.21851, -0.39300, -0.93257,
       -0.75584},
      {-3.41203, 3.78724, 0.5144, -0.30651, 1.64793, 0.06043, 0.71543,
       -1.44385},
      {-2.15460, 0.5144, 3.75500, 2.00786, -1.22796, -0.94496, -2.25916,
       0.8728},
      {-0.48852, -0.30651, 2.00786, 2.93120, -1.57410, -1.91590, -1.7714,
       0.02425},
      {-0.21851, 1.64793, -1.22796, -1.57410, 5.37965, 2.21935, -1.66047,
       -2.40907},
      {-0.39300, 0.06043, -0.94496, -1.91590, 2.21935, 6.24591, -0.93225,
       3.02939},
      {-0.93257, 0.71543, -2.25916, -1.7714, -1.66047, -0.93225, 8.12932,
       0.29485},
      {-0.75584, -1.44385, 0.87281, 0.02425, -2.40907, 3.02939, 0.29485,
       6.82808}};
  Mat v(8, 8);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) v(i, j) = t[i][j];
  return 0.5 * (v + v.transpose());
}

Vec reference_mean_inf() {
  Vec mu(8);
  mu << 0.99974, -1.11210, -0.11677, 0.1231, -0.55111, 0.29397, -0.71772,
      0.93254;
  return mu;
}

Vec reference_mean_one() { return Vec::Zero(8); }

ModelPair build_reference_pair(const std::string& kind, std::uint64_t seed) {
  Mat v = reference_covariance();
  Vec mu_inf = reference_mean_inf();
  Vec mu_one = reference_mean_one();
  if (kind == "gaussian") {
    return ModelPair(std::make_shared<GaussianModel>(mu_inf, v),
                     std::make_shared<GaussianModel>(mu_one, v));
  }
  if (kind == "quartic") {
    return ModelPair(std::make_shared<QuarticModel>(mu_inf, v),
                     std::make_shared<QuarticModel>(mu_one, v));
  }
  if (kind == "gbrbm") {
    // Draw order (fixed for reproducibility): W_inf row-major, phi_inf,
    // then the perturbations W_plus row-major, phi_plus.
    const Eigen::Index d = 8, h = 6;
    Rng rng(derive_seed(seed, 0));
    Mat w_inf(d, h);
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < h; ++j) w_inf(i, j) = rng.normal();
    Vec phi_inf(h);
    for (Eigen::Index j = 0; j < h; ++j) phi_inf[j] = rng.normal();
    Mat w_one = w_inf;
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < h; ++j) w_one(i, j) += 0.1 * rng.normal();
    Vec phi_one = phi_inf;
    for (Eigen::Index j = 0; j < h; ++j) phi_one[j] += 0.1 * rng.normal();
    return ModelPair(
        std::make_shared<GbRbmModel>(mu_inf, v, w_inf, phi_inf),
        std::make_shared<GbRbmModel>(mu_one, v, w_one, phi_one));
  }
  throw ConfigError("unknown model kind: " + kind);
}

std::string model_to_json(const ScoreModel& model) {
  nlohmann::json j;
  j["kind"] = model.kind();
  j["d"] = model.dim();
  if (const auto* g = dynamic_cast<const GaussianModel*>(&model)) {
    j["h"] = 0;
    j["mu"] = std::vector<double>(g->mu().begin(), g->mu().end());
    j["sigma"] = row_major(g->sigma());
  } else if (const auto* r = dynamic_cast<const GbRbmModel*>(&model)) {
    j["h"] = r->latent_dim();
    j["mu"] = std::vector<double>(r->mu().begin(), r->mu().end());
    j["sigma"] = row_major(r->sigma());
    j["w"] = row_major(r->w());
    j["phi"] = std::vector<double>(r->phi().begin(), r->phi().end());
  } else if (const auto* q = dynamic_cast<const QuarticModel*>(&model)) {
    j["h"] = 0;
    j["mu"] = std::vector<double>(q->mu().begin(), q->mu().end());
    j["sigma"] = row_major(q->sigma());
  } else {
    throw ConfigError("model_to_json: unsupported model type");
  }
  return j.dump(2);
}

std::shared_ptr<ScoreModel> model_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model file: invalid JSON: ") + e.what());
  }
  try {
    std::string kind = j.at("kind").get<std::string>();
    Eigen::Index d = j.at("d").get<Eigen::Index>();
    std::vector<double> mu_v = j.at("mu").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(mu_v.size()) != d)
      throw ConfigError("model file: mu size mismatch");
    Vec mu = Eigen::Map<const Vec>(mu_v.data(), d);
    Mat sigma =
        from_row_major(j.at("sigma").get<std::vector<double>>(), d, d);
    if (kind == "gaussian")
      return std::make_shared<GaussianModel>(mu, sigma);
    if (kind == "quartic") return std::make_shared<QuarticModel>(mu, sigma);
    if (kind == "gbrbm") {
      Eigen::Index h = j.at("h").get<Eigen::Index>();
      Mat w = from_row_major(j.at("w").get<std::vector<double>>(), d, h);
      std::vector<double> phi_v = j.at("phi").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(phi_v.size()) != h)
        throw ConfigError("model file: phi size mismatch");
      Vec phi = Eigen::Map<const Vec>(phi_v.data(), h);
      return std::make_shared<GbRbmModel>(mu, sigma, w, phi);
    }
    throw ConfigError("model file: unknown kind " + kind);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model file: missing or malformed field: ") +
                      e.what());
  }
}

}  // namespace diffdet
