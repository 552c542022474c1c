#include "diffdet/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "diffdet/io.hpp"
#include "diffdet/rng.hpp"

namespace diffdet {

ScoredBatch score_batch(const ModelPair& pair, const Mat& samples) {
  if (samples.rows() < 1)
    throw std::invalid_argument("score_batch: empty sample set");
  if (samples.cols() != pair.p_inf->dim())
    throw std::invalid_argument("score_batch: sample dimension mismatch");
  const Eigen::Index n = samples.rows();
  const Eigen::Index d = samples.cols();
  ScoredBatch out;
  out.x = samples;
  out.s_inf.resize(n, d);
  out.s_one.resize(n, d);
  out.ds.resize(n, d);
  out.dh.resize(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), 0, [&](std::size_t i) {
    const Eigen::Index r = static_cast<Eigen::Index>(i);
    Vec x = samples.row(r).transpose();
    Vec si = pair.p_inf->score(x);
    Vec so = pair.p_one->score(x);
    out.s_inf.row(r) = si.transpose();
    out.s_one.row(r) = so.transpose();
    out.ds.row(r) = (si - so).transpose();
    out.dh[i] = pair.p_inf->score_jacobian(x) - pair.p_one->score_jacobian(x);
  });
  return out;
}

namespace {

// Chunk width for ordered gradient reductions; fixed so results do not
// depend on the worker count.
constexpr std::size_t kGradChunk = 16;

std::vector<std::size_t> all_rows(Eigen::Index n) {
  std::vector<std::size_t> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

void check_indices(const std::vector<std::size_t>& idx, Eigen::Index n,
                   const char* which) {
  if (idx.empty())
    throw std::invalid_argument(std::string("loss: empty ") + which +
                                " minibatch");
  for (std::size_t r : idx)
    if (r >= static_cast<std::size_t>(n))
      throw std::invalid_argument(std::string("loss: ") + which +
                                  " index out of range");
}

std::vector<Mat> unpack_jacobian(const Mat& tmat, double scale,
                                 Eigen::Index d) {
  std::vector<Mat> jac(static_cast<std::size_t>(d));
  for (Eigen::Index k = 0; k < d; ++k) {
    Mat& jk = jac[static_cast<std::size_t>(k)];
    jk.resize(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j)
        jk(i, j) = scale * tmat(i * d + j, k);
  }
  return jac;
}

// Detection score at one sample from the difference pieces:
// z = 1/2||m^T s_inf||^2 - 1/2||m^T s_one||^2 + A(ds) + B(ds) + C(dh).
double z_from_parts(const Mat& m, const std::vector<Mat>& jac, const Vec& si,
                    const Vec& so, const Vec& dsv, const Mat& dh) {
  const Eigen::Index d = m.rows();
  Vec g0 = m.transpose() * si;
  Vec g1 = m.transpose() * so;
  Vec gd = m.transpose() * dsv;
  double a = 0.0;
  for (Eigen::Index k = 0; k < d; ++k)
    a += jac[static_cast<std::size_t>(k)].row(k).dot(gd.transpose());
  double b = 0.0;
  for (Eigen::Index k = 0; k < d; ++k)
    b += m.row(k).dot(
        (jac[static_cast<std::size_t>(k)].transpose() * dsv).transpose());
  double c = (m.transpose() * dh * m).trace();
  return 0.5 * g0.squaredNorm() - 0.5 * g1.squaredNorm() + a + b + c;
}

// d z / d m and d z / d jac (packing gjac(i*d+j, k) = dz/d jac[k](i,j)).
void z_grads(const Mat& m, const std::vector<Mat>& jac, const Vec& si,
             const Vec& so, const Vec& dsv, const Mat& dh, Mat& gm,
             Mat& gjac) {
  const Eigen::Index d = m.rows();
  Vec g0 = m.transpose() * si;
  Vec g1 = m.transpose() * so;
  Vec gd = m.transpose() * dsv;
  gm = si * g0.transpose() - so * g1.transpose();
  Vec t = Vec::Zero(d);
  for (Eigen::Index k = 0; k < d; ++k)
    t += jac[static_cast<std::size_t>(k)].row(k).transpose();
  gm += dsv * t.transpose();
  for (Eigen::Index p = 0; p < d; ++p)
    gm.row(p) +=
        (jac[static_cast<std::size_t>(p)].transpose() * dsv).transpose();
  gm += 2.0 * dh * m;

  gjac.setZero(d * d, d);
  for (Eigen::Index k = 0; k < d; ++k) {
    gjac.block(k * d, k, d, 1) += gd;
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j)
        gjac(i * d + j, k) += dsv[i] * m(k, j);
  }
}

LossResult loss_core(const MlpDiffusion& mlp, const ScoredBatch& div_set,
                     const std::vector<std::size_t>& div_idx,
                     const ScoredBatch& pen_set,
                     const std::vector<std::size_t>& pen_idx, double alpha,
                     double z_sign, int threads) {
  if (!(alpha >= 0.0))
    throw std::invalid_argument("loss: alpha must be non-negative");
  if (div_set.dim() != mlp.dim() || pen_set.dim() != mlp.dim())
    throw std::invalid_argument("loss: batch dimension mismatch");
  check_indices(div_idx, div_set.n(), "divergence-side");
  check_indices(pen_idx, pen_set.n(), "penalty-side");

  const Eigen::Index d = mlp.dim();
  const double scale = mlp.output_scale();
  LossResult out;
  out.grad = Vec::Zero(mlp.param_count());

  // Divergence term: -(1/N) sum 1/2 ||m(x)^T ds||^2 over the selected rows.
  {
    const std::size_t n = div_idx.size();
    const std::size_t n_chunks = (n + kGradChunk - 1) / kGradChunk;
    std::vector<Vec> part_g(n_chunks);
    std::vector<double> part_v(n_chunks, 0.0);
    parallel_for(n_chunks, threads, [&](std::size_t ci) {
      Vec g = Vec::Zero(mlp.param_count());
      double v = 0.0;
      const std::size_t begin = ci * kGradChunk;
      const std::size_t end = std::min(n, begin + kGradChunk);
      for (std::size_t ii = begin; ii < end; ++ii) {
        const Eigen::Index r = static_cast<Eigen::Index>(div_idx[ii]);
        Vec x = div_set.x.row(r).transpose();
        Vec dsv = div_set.ds.row(r).transpose();
        MlpDiffusion::Forward f = mlp.forward(x, false);
        Vec u = f.m.transpose() * dsv;
        v += 0.5 * u.squaredNorm();
        Mat gm = dsv * u.transpose();
        mlp.accumulate_param_grad(x, f, gm, nullptr, g);
      }
      part_g[ci] = std::move(g);
      part_v[ci] = v;
    });
    double value = 0.0;
    Vec gsum = Vec::Zero(mlp.param_count());
    for (std::size_t ci = 0; ci < n_chunks; ++ci) {
      value += part_v[ci];
      gsum += part_g[ci];
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    out.divergence_term = -value * inv_n;
    out.grad -= gsum * inv_n;
    if (!std::isfinite(out.divergence_term))
      throw NumericalError("loss: divergence term is not finite");
  }

  // Penalty term: alpha * [log mean exp(z_sign * z)]^2 over the penalty rows.
  {
    const std::size_t n = pen_idx.size();
    std::vector<double> zs(n);
    parallel_for(n, threads, [&](std::size_t i) {
      const Eigen::Index r = static_cast<Eigen::Index>(pen_idx[i]);
      Vec x = pen_set.x.row(r).transpose();
      MlpDiffusion::Forward f = mlp.forward(x, true);
      std::vector<Mat> jac = unpack_jacobian(f.tmat, scale, d);
      zs[i] = z_sign * z_from_parts(f.m, jac, pen_set.s_inf.row(r).transpose(),
                                    pen_set.s_one.row(r).transpose(),
                                    pen_set.ds.row(r).transpose(),
                                    pen_set.dh[static_cast<std::size_t>(r)]);
    });
    const double g_val = log_mean_exp(zs);
    out.penalty_term = alpha * g_val * g_val;
    out.constraint_value = std::exp(g_val);
    if (!std::isfinite(out.penalty_term))
      throw NumericalError("loss: penalty term is not finite");

    if (alpha > 0.0) {
      const double zmax = *std::max_element(zs.begin(), zs.end());
      double denom = 0.0;
      for (double z : zs) denom += std::exp(z - zmax);
      // d penalty / d z_i = 2 alpha G softmax_i; chain through z_sign.
      const double outer = 2.0 * alpha * g_val * z_sign;
      const std::size_t n_chunks = (n + kGradChunk - 1) / kGradChunk;
      std::vector<Vec> part_g(n_chunks);
      parallel_for(n_chunks, threads, [&](std::size_t ci) {
        Vec g = Vec::Zero(mlp.param_count());
        Mat gm, gjac;
        const std::size_t begin = ci * kGradChunk;
        const std::size_t end = std::min(n, begin + kGradChunk);
        for (std::size_t ii = begin; ii < end; ++ii) {
          const Eigen::Index r = static_cast<Eigen::Index>(pen_idx[ii]);
          const double w = outer * std::exp(zs[ii] - zmax) / denom;
          if (w == 0.0) continue;
          Vec x = pen_set.x.row(r).transpose();
          MlpDiffusion::Forward f = mlp.forward(x, true);
          std::vector<Mat> jac = unpack_jacobian(f.tmat, scale, d);
          z_grads(f.m, jac, pen_set.s_inf.row(r).transpose(),
                  pen_set.s_one.row(r).transpose(),
                  pen_set.ds.row(r).transpose(),
                  pen_set.dh[static_cast<std::size_t>(r)], gm, gjac);
          gm *= w;
          gjac *= w;
          mlp.accumulate_param_grad(x, f, gm, &gjac, g);
        }
        part_g[ci] = std::move(g);
      });
      for (std::size_t ci = 0; ci < n_chunks; ++ci) out.grad += part_g[ci];
    }
  }

  out.loss = out.divergence_term + out.penalty_term;
  if (!out.grad.allFinite())
    throw NumericalError("loss: gradient is not finite");
  return out;
}

void deterministic_shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.raw() % i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace

LossResult loss_cpd(const MlpDiffusion& m, const ScoredBatch& batch_p1,
                    const ScoredBatch& batch_pinf, double alpha,
                    const std::vector<std::size_t>* idx_p1,
                    const std::vector<std::size_t>* idx_pinf, int threads) {
  std::vector<std::size_t> a1, ai;
  if (idx_p1 == nullptr) a1 = all_rows(batch_p1.n());
  if (idx_pinf == nullptr) ai = all_rows(batch_pinf.n());
  return loss_core(m, batch_p1, idx_p1 ? *idx_p1 : a1, batch_pinf,
                   idx_pinf ? *idx_pinf : ai, alpha, +1.0, threads);
}

LossResult loss_ht(const MlpDiffusion& m, const ScoredBatch& batch_pinf,
                   const ScoredBatch& batch_p1, double alpha,
                   const std::vector<std::size_t>* idx_pinf,
                   const std::vector<std::size_t>* idx_p1, int threads) {
  std::vector<std::size_t> a1, ai;
  if (idx_pinf == nullptr) ai = all_rows(batch_pinf.n());
  if (idx_p1 == nullptr) a1 = all_rows(batch_p1.n());
  return loss_core(m, batch_pinf, idx_pinf ? *idx_pinf : ai, batch_p1,
                   idx_p1 ? *idx_p1 : a1, alpha, -1.0, threads);
}

double default_lr(const std::string& model_kind) {
  if (model_kind == "quartic") return 0.035;
  if (model_kind == "gaussian") return 0.04;
  if (model_kind == "gbrbm") return 0.01;
  throw ConfigError("default_lr: no default learning rate for model kind '" +
                    model_kind + "'");
}

TrainReport train(MlpDiffusion& m, const ScoredBatch& train_p1,
                  const ScoredBatch& train_pinf, const TrainConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw std::invalid_argument("train: lr must be > 0");
  if (!(cfg.alpha >= 0.0))
    throw std::invalid_argument("train: alpha must be >= 0");
  if (!(cfg.l2 >= 0.0)) throw std::invalid_argument("train: l2 must be >= 0");
  if (cfg.epochs < 1 || cfg.batch_size < 1)
    throw std::invalid_argument("train: epochs and batch_size must be >= 1");
  if (train_p1.dim() != m.dim() || train_pinf.dim() != m.dim())
    throw std::invalid_argument("train: dataset dimension mismatch");

  const std::size_t n1 = static_cast<std::size_t>(train_p1.n());
  const std::size_t ninf = static_cast<std::size_t>(train_pinf.n());
  const std::size_t nmin = std::min(n1, ninf);
  const std::size_t bs = std::min(cfg.batch_size, nmin);
  const std::size_t steps_per_epoch = std::max<std::size_t>(1, nmin / bs);

  const Eigen::Index np = m.param_count();
  Vec mom1 = Vec::Zero(np);
  Vec mom2 = Vec::Zero(np);
  Vec last_good = m.params();
  std::size_t t = 0;

  std::vector<std::size_t> order1 = all_rows(train_p1.n());
  std::vector<std::size_t> order_inf = all_rows(train_pinf.n());

  TrainReport report;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, epoch));
    deterministic_shuffle(order1, rng);
    deterministic_shuffle(order_inf, rng);

    double sum_loss = 0.0, sum_div = 0.0, sum_pen = 0.0, sum_con = 0.0;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      std::vector<std::size_t> idx1(
          order1.begin() + static_cast<std::ptrdiff_t>(step * bs),
          order1.begin() + static_cast<std::ptrdiff_t>(step * bs + bs));
      std::vector<std::size_t> idx_inf(
          order_inf.begin() + static_cast<std::ptrdiff_t>(step * bs),
          order_inf.begin() + static_cast<std::ptrdiff_t>(step * bs + bs));

      LossResult res;
      try {
        res = (cfg.objective == Objective::kCpd)
                  ? loss_cpd(m, train_p1, train_pinf, cfg.alpha, &idx1,
                             &idx_inf, cfg.threads)
                  : loss_ht(m, train_pinf, train_p1, cfg.alpha, &idx_inf,
                            &idx1, cfg.threads);
      } catch (const NumericalError& err) {
        m.set_params(last_good);
        report.aborted = true;
        report.abort_reason = err.what();
        report.steps = t;
        return report;
      }
      last_good = m.params();

      ++t;
      mom1 = cfg.beta1 * mom1 + (1.0 - cfg.beta1) * res.grad;
      mom2 = (cfg.beta2 * mom2.array() +
              (1.0 - cfg.beta2) * res.grad.array().square())
                 .matrix();
      const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
      const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
      Vec theta = m.params();
      Vec step_vec =
          (mom1.array() / bias1 /
           ((mom2.array() / bias2).sqrt() + cfg.eps))
              .matrix();
      theta -= cfg.lr * step_vec + (cfg.lr * cfg.l2) * theta;
      m.set_params(theta);

      sum_loss += res.loss;
      sum_div += res.divergence_term;
      sum_pen += res.penalty_term;
      sum_con += res.constraint_value;
    }
    TrainEpochRow row;
    row.epoch = epoch;
    const double inv = 1.0 / static_cast<double>(steps_per_epoch);
    row.loss = sum_loss * inv;
    row.divergence_term = sum_div * inv;
    row.penalty_term = sum_pen * inv;
    row.constraint_value = sum_con * inv;
    report.epochs.push_back(row);
  }
  report.steps = t;
  return report;
}

void write_train_report_csv(const std::string& path,
                            const TrainReport& report) {
  std::string out = "epoch,loss,divergence_term,penalty_term,constraint_value\n";
  for (const TrainEpochRow& r : report.epochs) {
    out += std::to_string(r.epoch);
    out += ',';
    out += format_g17(r.loss);
    out += ',';
    out += format_g17(r.divergence_term);
    out += ',';
    out += format_g17(r.penalty_term);
    out += ',';
    out += format_g17(r.constraint_value);
    out += '\n';
  }
  write_text_file(path, out);
}

}  // namespace diffdet
