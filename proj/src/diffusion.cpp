#include "diffdet/diffusion.hpp"

#include <json.hpp>

#include <cmath>

#include "diffdet/rng.hpp"
#include "diffdet/statistics.hpp"

namespace diffdet {

void DiffusionFunction::check_dim(const Vec& x) const {
  if (x.size() != dim())
    throw std::invalid_argument("diffusion function: input dimension mismatch");
  if (!x.allFinite())
    throw std::invalid_argument("diffusion function: non-finite input");
}

ConstantDiffusion::ConstantDiffusion(Mat m) : m_(std::move(m)) {
  if (m_.rows() != m_.cols())
    throw std::invalid_argument("ConstantDiffusion: matrix must be square");
  if (!m_.allFinite())
    throw std::invalid_argument("ConstantDiffusion: non-finite entries");
}

Mat ConstantDiffusion::eval(const Vec& x) const {
  check_dim(x);
  return m_;
}

std::vector<Mat> ConstantDiffusion::input_jacobian(const Vec& x) const {
  check_dim(x);
  return std::vector<Mat>(static_cast<std::size_t>(dim()),
                          Mat::Zero(dim(), dim()));
}

ScaledDiffusion::ScaledDiffusion(std::shared_ptr<const DiffusionFunction> inner,
                                 double k)
    : inner_(std::move(inner)), k_(k) {
  if (!inner_) throw std::invalid_argument("ScaledDiffusion: null inner");
  if (!(k_ > 0.0) || !std::isfinite(k_))
    throw std::invalid_argument("ScaledDiffusion: factor must be positive");
}

Mat ScaledDiffusion::eval(const Vec& x) const { return k_ * inner_->eval(x); }

std::vector<Mat> ScaledDiffusion::input_jacobian(const Vec& x) const {
  std::vector<Mat> jac = inner_->input_jacobian(x);
  for (Mat& j : jac) j *= k_;
  return jac;
}

MlpDiffusion::MlpDiffusion(Eigen::Index d, Eigen::Index hidden,
                           double output_scale)
    : d_(d), hidden_(hidden), output_scale_(output_scale) {
  if (d < 1 || hidden < 1)
    throw std::invalid_argument("MlpDiffusion: dimensions must be positive");
  if (!(output_scale > 0.0))
    throw std::invalid_argument("MlpDiffusion: output_scale must be positive");
  w1_ = Mat::Zero(hidden_, d_);
  b1_ = Vec::Zero(hidden_);
  w2_ = Mat::Zero(d_ * d_, hidden_);
  b2_ = Vec::Zero(d_ * d_);
}

void MlpDiffusion::init_params(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x6d6c70));
  auto fill = [&rng](auto& block, double bound) {
    for (Eigen::Index j = 0; j < block.cols(); ++j)
      for (Eigen::Index i = 0; i < block.rows(); ++i)
        block(i, j) = bound * (2.0 * rng.uniform() - 1.0);
  };
  double bound1 = 1.0 / std::sqrt(static_cast<double>(d_));
  double bound2 = 1.0 / std::sqrt(static_cast<double>(hidden_));
  fill(w1_, bound1);
  fill(b1_, bound1);
  fill(w2_, bound2);
  fill(b2_, bound2);
}

MlpDiffusion::Forward MlpDiffusion::forward(const Vec& x,
                                            bool with_jacobian) const {
  check_dim(x);
  Forward f;
  Vec z = w1_ * x + b1_;
  f.a.resize(hidden_);
  for (Eigen::Index j = 0; j < hidden_; ++j) f.a[j] = sigmoid(z[j]);
  f.dsig = (f.a.array() * (1.0 - f.a.array())).matrix();
  Vec out = w2_ * f.a + b2_;
  f.m.resize(d_, d_);
  for (Eigen::Index i = 0; i < d_; ++i)
    for (Eigen::Index j = 0; j < d_; ++j)
      f.m(i, j) = output_scale_ * out[i * d_ + j];
  if (with_jacobian) f.tmat = w2_ * f.dsig.asDiagonal() * w1_;
  return f;
}

Mat MlpDiffusion::eval(const Vec& x) const { return forward(x, false).m; }

std::vector<Mat> MlpDiffusion::input_jacobian(const Vec& x) const {
  Forward f = forward(x, true);
  std::vector<Mat> jac(static_cast<std::size_t>(d_));
  for (Eigen::Index k = 0; k < d_; ++k) {
    Mat& jk = jac[static_cast<std::size_t>(k)];
    jk.resize(d_, d_);
    for (Eigen::Index i = 0; i < d_; ++i)
      for (Eigen::Index j = 0; j < d_; ++j)
        jk(i, j) = output_scale_ * f.tmat(i * d_ + j, k);
  }
  return jac;
}

void MlpDiffusion::accumulate_param_grad(const Vec& x, const Forward& f,
                                         const Mat& gm, const Mat* gjac,
                                         Vec& grad) const {
  if (grad.size() != param_count())
    throw std::invalid_argument("accumulate_param_grad: bad gradient size");
  const Eigen::Index n1 = hidden_ * d_;
  const Eigen::Index n2 = n1 + hidden_;
  const Eigen::Index n3 = n2 + d_ * d_ * hidden_;
  auto g_w1 = Eigen::Map<Mat>(grad.data(), hidden_, d_);
  auto g_b1 = Eigen::Map<Vec>(grad.data() + n1, hidden_);
  auto g_w2 = Eigen::Map<Mat>(grad.data() + n2, d_ * d_, hidden_);
  auto g_b2 = Eigen::Map<Vec>(grad.data() + n3, d_ * d_);

  // Output head: out(i*d+j) feeds m(i,j) through output_scale.
  Vec gout(d_ * d_);
  for (Eigen::Index i = 0; i < d_; ++i)
    for (Eigen::Index j = 0; j < d_; ++j)
      gout[i * d_ + j] = output_scale_ * gm(i, j);
  g_w2 += gout * f.a.transpose();
  g_b2 += gout;
  Vec ga = w2_.transpose() * gout;

  Vec gz = ga.cwiseProduct(f.dsig);

  if (gjac != nullptr) {
    // tmat = W2 diag(dsig) W1; the caller's gjac includes output_scale, the
    // stored tmat does not.
    Mat gt = output_scale_ * (*gjac);            // d^2 x d
    Mat u = w2_.transpose() * gt;                // hidden x d
    g_w2 += (gt * w1_.transpose()) * f.dsig.asDiagonal();
    g_w1 += f.dsig.asDiagonal() * u;
    Vec gdsig = (u.array() * w1_.array()).rowwise().sum().matrix();
    // d(dsig)/dz = dsig .* (1 - 2a)
    gz += gdsig.cwiseProduct(f.dsig)
              .cwiseProduct((1.0 - 2.0 * f.a.array()).matrix());
  }

  g_w1 += gz * x.transpose();
  g_b1 += gz;
}

Eigen::Index MlpDiffusion::param_count() const {
  return hidden_ * d_ + hidden_ + d_ * d_ * hidden_ + d_ * d_;
}

Vec MlpDiffusion::params() const {
  Vec p(param_count());
  Eigen::Index o = 0;
  std::copy(w1_.data(), w1_.data() + w1_.size(), p.data() + o);
  o += w1_.size();
  std::copy(b1_.data(), b1_.data() + b1_.size(), p.data() + o);
  o += b1_.size();
  std::copy(w2_.data(), w2_.data() + w2_.size(), p.data() + o);
  o += w2_.size();
  std::copy(b2_.data(), b2_.data() + b2_.size(), p.data() + o);
  return p;
}

void MlpDiffusion::set_params(const Vec& p) {
  if (p.size() != param_count())
    throw std::invalid_argument("MlpDiffusion::set_params: size mismatch");
  Eigen::Index o = 0;
  std::copy(p.data() + o, p.data() + o + w1_.size(), w1_.data());
  o += w1_.size();
  std::copy(p.data() + o, p.data() + o + b1_.size(), b1_.data());
  o += b1_.size();
  std::copy(p.data() + o, p.data() + o + w2_.size(), w2_.data());
  o += w2_.size();
  std::copy(p.data() + o, p.data() + o + b2_.size(), b2_.data());
}

ConstantDiffusion gaussian_optimal(const Mat& v) {
  if (v.rows() != v.cols())
    throw std::invalid_argument("gaussian_optimal: matrix must be square");
  double scale = std::max(1.0, v.cwiseAbs().maxCoeff());
  if ((v - v.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw std::invalid_argument("gaussian_optimal: matrix not symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> es(v);
  if (es.info() != Eigen::Success)
    throw std::invalid_argument("gaussian_optimal: eigendecomposition failed");
  if (es.eigenvalues().minCoeff() <= 0.0)
    throw std::invalid_argument("gaussian_optimal: matrix not positive definite");
  Mat root = es.eigenvectors() *
             es.eigenvalues().array().sqrt().matrix().asDiagonal() *
             es.eigenvectors().transpose();
  return ConstantDiffusion(root);
}

double calibrate_scale_from_draws(const std::vector<double>& z) {
  if (z.empty())
    throw std::invalid_argument("calibrate_scale: empty sample set");
  for (double v : z)
    if (!std::isfinite(v))
      throw NumericalError("calibrate_scale: non-finite statistic draw");

  auto h = [&z](double u) {
    double m = z[0] * u;
    for (double v : z) m = std::max(m, v * u);
    double s = 0.0;
    for (double v : z) s += std::exp(v * u - m);
    return m + std::log(s / static_cast<double>(z.size()));
  };

  if (h(1.0) <= 0.0) return 1.0;

  double mean = 0.0;
  for (double v : z) mean += v;
  mean /= static_cast<double>(z.size());
  if (mean >= 0.0)
    throw CalibrationError(
        "calibrate_scale: mean statistic is not negative, no positive root");

  // h is convex with h(0)=0 and h'(0)<0, so h<0 on (0,u*) for the unique
  // positive root u*. h(1)>0 places u* in (0,1); halve down to bracket it.
  double lo = 0.5;
  int halvings = 0;
  while (h(lo) >= 0.0) {
    lo *= 0.5;
    if (++halvings > 200)
      throw CalibrationError("calibrate_scale: failed to bracket a root");
  }
  double hi = (halvings == 0) ? 1.0 : lo * 2.0;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    double v = h(mid);
    if (std::abs(v) <= 1e-12) {
      lo = hi = mid;
      break;
    }
    (v < 0.0 ? lo : hi) = mid;
    if (hi - lo <= 1e-15 * hi) break;
  }
  return std::sqrt(0.5 * (lo + hi));
}

double calibrate_scale(const DiffusionFunction& m, const ModelPair& pair,
                       const Mat& samples_inf) {
  DetectionStatistic stat = DetectionStatistic::diffusion_ref(pair, m);
  std::vector<double> z(static_cast<std::size_t>(samples_inf.rows()));
  for (Eigen::Index i = 0; i < samples_inf.rows(); ++i)
    z[static_cast<std::size_t>(i)] = stat.z(samples_inf.row(i).transpose());
  return calibrate_scale_from_draws(z);
}

std::string diffusion_to_json(const DiffusionFunction& m) {
  nlohmann::json j;
  if (const auto* mlp = dynamic_cast<const MlpDiffusion*>(&m)) {
    j["kind"] = "mlp";
    j["d"] = mlp->dim();
    j["hidden"] = mlp->hidden();
    j["output_scale"] = mlp->output_scale();
    Vec p = mlp->params();
    j["params"] = std::vector<double>(p.data(), p.data() + p.size());
  } else if (const auto* c = dynamic_cast<const ConstantDiffusion*>(&m)) {
    j["kind"] = "constant";
    j["d"] = c->dim();
    const Mat& mat = c->matrix();
    std::vector<double> vals;
    vals.reserve(static_cast<std::size_t>(mat.size()));
    for (Eigen::Index i = 0; i < mat.rows(); ++i)
      for (Eigen::Index jj = 0; jj < mat.cols(); ++jj)
        vals.push_back(mat(i, jj));
    j["m"] = vals;
  } else {
    throw ConfigError("diffusion_to_json: unsupported diffusion type");
  }
  return j.dump(2);
}

std::shared_ptr<DiffusionFunction> diffusion_from_json(
    const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint: invalid JSON: ") + e.what());
  }
  try {
    std::string kind = j.at("kind").get<std::string>();
    Eigen::Index d = j.at("d").get<Eigen::Index>();
    if (kind == "mlp") {
      auto mlp = std::make_shared<MlpDiffusion>(
          d, j.at("hidden").get<Eigen::Index>(),
          j.at("output_scale").get<double>());
      std::vector<double> p = j.at("params").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(p.size()) != mlp->param_count())
        throw ConfigError("checkpoint: parameter count mismatch");
      mlp->set_params(Eigen::Map<const Vec>(p.data(), mlp->param_count()));
      return mlp;
    }
    if (kind == "constant") {
      std::vector<double> vals = j.at("m").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(vals.size()) != d * d)
        throw ConfigError("checkpoint: matrix size mismatch");
      Mat m(d, d);
      std::size_t k = 0;
      for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index jj = 0; jj < d; ++jj) m(i, jj) = vals[k++];
      return std::make_shared<ConstantDiffusion>(m);
    }
    throw ConfigError("checkpoint: unknown kind " + kind);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint: missing or malformed field: ") +
                      e.what());
  }
}

}  // namespace diffdet
