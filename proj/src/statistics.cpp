#include "diffdet/statistics.hpp"

#include <cmath>
#include <sstream>

#include "diffdet/io.hpp"

namespace diffdet {

double hyvarinen_score(const Vec& x, const ScoreModel& q) {
  Vec s = q.score(x);
  return 0.5 * s.squaredNorm() + q.score_jacobian(x).trace();
}

double diffusion_score_from_parts(const Mat& m, const std::vector<Mat>& jac,
                                  const Vec& s, const Mat& h) {
  Vec g = m.transpose() * s;
  double pa = 0.0;
  double pb = 0.0;
  for (std::size_t k = 0; k < jac.size(); ++k) {
    const Mat& jk = jac[k];
    pa += jk.row(static_cast<Eigen::Index>(k)).dot(g);
    pb += m.row(static_cast<Eigen::Index>(k)).dot(jk.transpose() * s);
  }
  double pc = (m.transpose() * (h * m)).trace();
  return 0.5 * g.squaredNorm() + pa + pb + pc;
}

double diffusion_hyvarinen_score(const Vec& x, const ScoreModel& q,
                                 const DiffusionFunction& m) {
  if (m.dim() != q.dim())
    throw std::invalid_argument(
        "diffusion_hyvarinen_score: model/diffusion dimension mismatch");
  Mat mv = m.eval(x);
  std::vector<Mat> jac = m.input_jacobian(x);
  return diffusion_score_from_parts(mv, jac, q.score(x), q.score_jacobian(x));
}

DetectionStatistic::DetectionStatistic(
    Kind kind, ModelPair pair, std::shared_ptr<const DiffusionFunction> m,
    double norm_ratio_log)
    : kind_(kind),
      pair_(std::move(pair)),
      m_(std::move(m)),
      norm_ratio_log_(norm_ratio_log) {}

DetectionStatistic DetectionStatistic::kl(const ModelPair& pair) {
  if (!pair.both_normalized())
    throw ConfigError(
        "KL statistic on unnormalized densities requires a "
        "normalization-ratio estimate (use kl_corrected)");
  return DetectionStatistic(Kind::kKl, pair, nullptr, 0.0);
}

DetectionStatistic DetectionStatistic::kl_corrected(const ModelPair& pair,
                                                    double norm_ratio_log) {
  if (!std::isfinite(norm_ratio_log))
    throw ConfigError("KL statistic: non-finite normalization ratio");
  return DetectionStatistic(Kind::kKl, pair, nullptr, norm_ratio_log);
}

DetectionStatistic DetectionStatistic::fisher(const ModelPair& pair) {
  return DetectionStatistic(Kind::kFisher, pair, nullptr, 0.0);
}

DetectionStatistic DetectionStatistic::diffusion(
    const ModelPair& pair, std::shared_ptr<const DiffusionFunction> m) {
  if (!m) throw std::invalid_argument("diffusion statistic: null m");
  if (m->dim() != pair.dim())
    throw std::invalid_argument("diffusion statistic: dimension mismatch");
  return DetectionStatistic(Kind::kDiffusion, pair, std::move(m), 0.0);
}

DetectionStatistic DetectionStatistic::diffusion_ref(
    const ModelPair& pair, const DiffusionFunction& m) {
  return diffusion(pair,
                   std::shared_ptr<const DiffusionFunction>(
                       std::shared_ptr<void>(), &m));
}

std::string DetectionStatistic::name() const {
  switch (kind_) {
    case Kind::kKl:
      return "kl";
    case Kind::kFisher:
      return "fisher";
    case Kind::kDiffusion:
      return "diffusion";
  }
  return "unknown";
}

double DetectionStatistic::z(const Vec& x) const {
  switch (kind_) {
    case Kind::kKl:
      return pair_.p_one->log_density(x) - pair_.p_inf->log_density(x) +
             norm_ratio_log_;
    case Kind::kFisher:
      return hyvarinen_score(x, *pair_.p_inf) -
             hyvarinen_score(x, *pair_.p_one);
    case Kind::kDiffusion:
      return diffusion_hyvarinen_score(x, *pair_.p_inf, *m_) -
             diffusion_hyvarinen_score(x, *pair_.p_one, *m_);
  }
  throw std::logic_error("DetectionStatistic: bad kind");
}

double DetectionStatistic::batch_sum(const Mat& batch) const {
  double s = 0.0;
  for (Eigen::Index i = 0; i < batch.rows(); ++i)
    s += z(batch.row(i).transpose());
  return s;
}

DivergenceEstimate divergence_mc(const ModelPair& pair, Direction dir,
                                 const DiffusionFunction* m,
                                 const Mat& samples) {
  if (samples.rows() == 0)
    throw std::invalid_argument("divergence_mc: empty sample set");
  const ScoreModel& first =
      dir == Direction::kInfToOne ? *pair.p_inf : *pair.p_one;
  const ScoreModel& second =
      dir == Direction::kInfToOne ? *pair.p_one : *pair.p_inf;
  std::vector<double> vals(static_cast<std::size_t>(samples.rows()));
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    Vec x = samples.row(i).transpose();
    Vec ds = first.score(x) - second.score(x);
    double v;
    if (m != nullptr) {
      v = 0.5 * (m->eval(x).transpose() * ds).squaredNorm();
    } else {
      v = 0.5 * ds.squaredNorm();
    }
    vals[static_cast<std::size_t>(i)] = v;
  }
  MeanSe ms = mean_and_se(vals);
  return DivergenceEstimate{ms.mean, ms.se, ms.n};
}

NormRatioEstimate norm_ratio_estimate(const ModelPair& pair,
                                      const Mat& samples_one,
                                      std::size_t min_samples) {
  const std::size_t n = static_cast<std::size_t>(samples_one.rows());
  if (n < min_samples)
    throw std::invalid_argument(
        "norm_ratio_estimate: too few samples (floor " +
        std::to_string(min_samples) + ")");
  std::vector<double> l(n);
  double max_l = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    Vec x = samples_one.row(static_cast<Eigen::Index>(i)).transpose();
    double v = pair.p_inf->log_density(x) - pair.p_one->log_density(x);
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
      throw NumericalError("norm_ratio_estimate: non-finite density ratio");
    l[i] = v;
    max_l = std::max(max_l, v);
  }
  if (!std::isfinite(max_l))
    throw NumericalError("norm_ratio_estimate: all ratios vanish");
  std::vector<double> r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = std::exp(l[i] - max_l);
  MeanSe ms = mean_and_se(r);
  if (!(ms.mean > 0.0))
    throw NumericalError("norm_ratio_estimate: degenerate ratio mean");
  NormRatioEstimate out;
  out.log_ratio = max_l + std::log(ms.mean);
  out.std_error = ms.se / ms.mean;
  out.n = n;
  return out;
}

namespace {

PairedCheck paired_from(const std::vector<double>& lhs,
                        const std::vector<double>& rhs) {
  std::vector<double> diff(lhs.size());
  for (std::size_t i = 0; i < lhs.size(); ++i) diff[i] = lhs[i] - rhs[i];
  MeanSe ml = mean_and_se(lhs);
  MeanSe mr = mean_and_se(rhs);
  MeanSe md = mean_and_se(diff);
  PairedCheck out;
  out.lhs = ml.mean;
  out.lhs_se = ml.se;
  out.rhs = mr.mean;
  out.rhs_se = mr.se;
  out.diff = md.mean;
  out.diff_se = md.se;
  out.n = lhs.size();
  return out;
}

}  // namespace

PairedCheck hyvarinen_identity_check(const ScoreModel& p, const ScoreModel& q,
                                     const DiffusionFunction& m,
                                     const Mat& samples_from_p) {
  const std::size_t n = static_cast<std::size_t>(samples_from_p.rows());
  if (n == 0)
    throw std::invalid_argument("hyvarinen_identity_check: empty sample set");
  std::vector<double> lhs(n), rhs(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vec x = samples_from_p.row(static_cast<Eigen::Index>(i)).transpose();
    Mat mv = m.eval(x);
    Vec sp = p.score(x);
    Vec ds = sp - q.score(x);
    lhs[i] = 0.5 * (mv.transpose() * ds).squaredNorm();
    rhs[i] = 0.5 * (mv.transpose() * sp).squaredNorm() +
             diffusion_hyvarinen_score(x, q, m);
  }
  return paired_from(lhs, rhs);
}

DriftCheckReport drift_check(const ModelPair& pair, const DiffusionFunction& m,
                             const Mat& samples_inf, const Mat& samples_one) {
  if (samples_inf.rows() == 0 || samples_one.rows() == 0)
    throw std::invalid_argument("drift_check: empty sample set");
  DetectionStatistic stat = DetectionStatistic::diffusion_ref(pair, m);

  auto side = [&](const Mat& samples, double sign) {
    const std::size_t n = static_cast<std::size_t>(samples.rows());
    std::vector<double> zv(n), dv(n);
    for (std::size_t i = 0; i < n; ++i) {
      Vec x = samples.row(static_cast<Eigen::Index>(i)).transpose();
      zv[i] = stat.z(x);
      Vec ds = pair.p_inf->score(x) - pair.p_one->score(x);
      dv[i] = sign * 0.5 * (m.eval(x).transpose() * ds).squaredNorm();
    }
    return paired_from(zv, dv);
  };

  DriftCheckReport rep;
  rep.pre = side(samples_inf, -1.0);   // E_inf[Z] vs -D(inf||one)
  rep.post = side(samples_one, +1.0);  // E_1[Z] vs +D(one||inf)
  rep.separation = rep.pre.lhs < 0.0 && rep.post.lhs > 0.0;
  return rep;
}

void write_z_csv(const std::string& path, const Mat& samples,
                 const std::vector<const DetectionStatistic*>& stats) {
  std::ostringstream os;
  os << "sample_index";
  for (const auto* s : stats) os << ",z_" << s->name();
  os << "\n";
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    os << i;
    Vec x = samples.row(i).transpose();
    for (const auto* s : stats) os << "," << format_g17(s->z(x));
    os << "\n";
  }
  write_text_file(path, os.str());
}

}  // namespace diffdet
