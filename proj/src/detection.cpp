#include "diffdet/detection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "diffdet/rng.hpp"

namespace diffdet {

int batch_test(const DetectionStatistic& stat, const Mat& batch, double c) {
  if (batch.rows() < 1)
    throw std::invalid_argument("batch_test: batch must have at least one row");
  return stat.batch_sum(batch) >= c ? 1 : 0;
}

namespace {

template <typename NextZ>
CusumRun cusum_core(NextZ&& next_z, double c, std::uint64_t max_len) {
  CusumState state;
  while (state.t < max_len) {
    state.step(next_z());
    if (state.y >= c) return {state.t, false};
  }
  return {max_len, true};
}

}  // namespace

CusumRun cusum_run(const DetectionStatistic& stat, SampleStream& stream,
                   double c, std::uint64_t max_len) {
  if (!(c > 0.0))
    throw std::invalid_argument("cusum_run: threshold must be positive");
  if (max_len < 1)
    throw std::invalid_argument("cusum_run: max_len must be >= 1");
  return cusum_core([&] { return stat.z(stream.next()); }, c, max_len);
}

CusumRun cusum_run(const std::vector<double>& z, double c) {
  if (!(c > 0.0))
    throw std::invalid_argument("cusum_run: threshold must be positive");
  if (z.empty())
    throw std::invalid_argument("cusum_run: empty score sequence");
  std::size_t i = 0;
  return cusum_core([&] { return z[i++]; }, c, z.size());
}

std::uint64_t default_max_len(double c_max) {
  double len = std::ceil(50.0 * std::exp(c_max));
  if (!(len >= 1.0)) return 1;
  if (len >= 9e18) return std::numeric_limits<std::uint64_t>::max();
  return static_cast<std::uint64_t>(len);
}

namespace {

StoppingRunResult run_paths(const DetectionStatistic& stat,
                            const ModelPair& pair, double c, std::uint64_t nu,
                            const PathConfig& cfg) {
  if (cfg.n_paths < 1)
    throw std::invalid_argument("stopping-time run: n_paths must be >= 1");
  StoppingRunResult out;
  out.stop_times.resize(cfg.n_paths);
  out.censored.assign(cfg.n_paths, 0);
  parallel_for(cfg.n_paths, cfg.threads, [&](std::size_t i) {
    StreamConfig sc;
    sc.nu = nu;
    sc.seed = derive_seed(cfg.seed, i);
    sc.mh = cfg.mh;
    sc.mh_defaults = cfg.mh_defaults;
    SampleStream stream(pair, sc);
    CusumRun r = cusum_run(stat, stream, c, cfg.max_len);
    out.stop_times[i] = r.stop_time;
    out.censored[i] = r.censored ? 1 : 0;
  });
  std::vector<double> times(cfg.n_paths);
  std::size_t n_censored = 0;
  for (std::size_t i = 0; i < cfg.n_paths; ++i) {
    times[i] = static_cast<double>(out.stop_times[i]);
    n_censored += out.censored[i];
  }
  MeanSe ms = mean_and_se(times);
  out.mean = ms.mean;
  out.std_error = ms.se;
  out.censored_fraction =
      static_cast<double>(n_censored) / static_cast<double>(cfg.n_paths);
  return out;
}

}  // namespace

StoppingRunResult estimate_arl(const DetectionStatistic& stat,
                               const ModelPair& pair, double c,
                               const PathConfig& cfg) {
  return run_paths(stat, pair, c, StreamConfig::kNoChange, cfg);
}

StoppingRunResult estimate_edd(const DetectionStatistic& stat,
                               const ModelPair& pair, double c,
                               const PathConfig& cfg) {
  return run_paths(stat, pair, c, 1, cfg);
}

BatchSumSet batch_sums(const std::vector<const DetectionStatistic*>& stats,
                       const ModelPair& pair, std::size_t batch_size,
                       const SumConfig& cfg) {
  if (stats.empty())
    throw std::invalid_argument("batch_sums: no statistics given");
  for (const auto* s : stats)
    if (s == nullptr)
      throw std::invalid_argument("batch_sums: null statistic");
  if (batch_size < 1 || cfg.n_batches < 1)
    throw std::invalid_argument(
        "batch_sums: batch_size and n_batches must be >= 1");
  const Eigen::Index ns = static_cast<Eigen::Index>(stats.size());
  BatchSumSet out;
  out.names.reserve(stats.size());
  for (const auto* s : stats) out.names.push_back(s->name());
  out.sums_inf.resize(static_cast<Eigen::Index>(cfg.n_batches), ns);
  out.sums_one.resize(static_cast<Eigen::Index>(cfg.n_batches), ns);

  const std::uint64_t seed_inf = derive_seed(cfg.seed, 1);
  const std::uint64_t seed_one = derive_seed(cfg.seed, 2);
  parallel_for(cfg.n_batches, cfg.threads, [&](std::size_t b) {
    const Eigen::Index row = static_cast<Eigen::Index>(b);
    Mat batch = draw_batch_cfg(*pair.p_inf, batch_size,
                               derive_seed(seed_inf, b + 1), cfg.mh,
                               cfg.mh_defaults);
    for (Eigen::Index s = 0; s < ns; ++s)
      out.sums_inf(row, s) = stats[static_cast<std::size_t>(s)]->batch_sum(batch);
    batch = draw_batch_cfg(*pair.p_one, batch_size, derive_seed(seed_one, b + 1),
                           cfg.mh, cfg.mh_defaults);
    for (Eigen::Index s = 0; s < ns; ++s)
      out.sums_one(row, s) = stats[static_cast<std::size_t>(s)]->batch_sum(batch);
  });
  return out;
}

std::vector<RocPoint> roc_from_sums(std::vector<double> sums_inf,
                                    std::vector<double> sums_one,
                                    std::size_t batch_size,
                                    std::vector<double> thresholds) {
  if (sums_inf.empty() || sums_one.empty())
    throw std::invalid_argument("roc_from_sums: need sums for both hypotheses");
  std::sort(sums_inf.begin(), sums_inf.end());
  std::sort(sums_one.begin(), sums_one.end());
  if (thresholds.empty()) {
    const double inf = std::numeric_limits<double>::infinity();
    thresholds.reserve(sums_inf.size() + sums_one.size() + 2);
    thresholds.push_back(-inf);
    thresholds.insert(thresholds.end(), sums_inf.begin(), sums_inf.end());
    thresholds.insert(thresholds.end(), sums_one.begin(), sums_one.end());
    thresholds.push_back(inf);
  }
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());

  const double n_inf = static_cast<double>(sums_inf.size());
  const double n_one = static_cast<double>(sums_one.size());
  std::vector<RocPoint> points;
  points.reserve(thresholds.size());
  for (double c : thresholds) {
    RocPoint p;
    p.threshold = c;
    p.n = batch_size;
    auto lo_inf = std::lower_bound(sums_inf.begin(), sums_inf.end(), c);
    p.alpha = static_cast<double>(sums_inf.end() - lo_inf) / n_inf;
    auto lo_one = std::lower_bound(sums_one.begin(), sums_one.end(), c);
    p.beta = static_cast<double>(lo_one - sums_one.begin()) / n_one;
    points.push_back(p);
  }
  return points;
}

std::vector<RocPoint> roc_curve(const DetectionStatistic& stat,
                                const ModelPair& pair, std::size_t batch_size,
                                const SumConfig& cfg,
                                std::vector<double> thresholds) {
  BatchSumSet set = batch_sums({&stat}, pair, batch_size, cfg);
  std::vector<double> si(set.sums_inf.col(0).data(),
                         set.sums_inf.col(0).data() + set.sums_inf.rows());
  std::vector<double> so(set.sums_one.col(0).data(),
                         set.sums_one.col(0).data() + set.sums_one.rows());
  return roc_from_sums(std::move(si), std::move(so), batch_size,
                       std::move(thresholds));
}

RocPoint roc_power_at_alpha(const std::vector<RocPoint>& points,
                            double alpha_max) {
  if (points.empty())
    throw std::invalid_argument("roc_power_at_alpha: empty curve");
  const RocPoint* best = nullptr;
  for (const RocPoint& p : points) {
    if (p.alpha > alpha_max) continue;
    if (best == nullptr || p.beta < best->beta ||
        (p.beta == best->beta && p.alpha > best->alpha))
      best = &p;
  }
  if (best == nullptr)
    throw std::invalid_argument(
        "roc_power_at_alpha: no point with alpha <= alpha_max");
  return *best;
}

ErrorExponentResult error_exponent_estimate(
    const DetectionStatistic& stat, const ModelPair& pair,
    const std::vector<std::size_t>& n_grid, const ExponentConfig& cfg) {
  if (n_grid.size() < 2)
    throw std::invalid_argument(
        "error_exponent_estimate: need at least two batch sizes");
  for (std::size_t i = 0; i + 1 < n_grid.size(); ++i)
    if (n_grid[i] >= n_grid[i + 1])
      throw std::invalid_argument(
          "error_exponent_estimate: n_grid must be strictly increasing");
  if (n_grid.front() < 1)
    throw std::invalid_argument("error_exponent_estimate: batch sizes >= 1");
  if (cfg.n_batches < 1 || cfg.div_samples < 2)
    throw std::invalid_argument(
        "error_exponent_estimate: n_batches >= 1 and div_samples >= 2");

  ErrorExponentResult out;
  out.delta = cfg.delta;

  // Pre-change divergence via -E[z]: the statistic's mean under the
  // pre-change model is the negated divergence for every statistic kind.
  {
    Mat draws = draw_batch_cfg(*pair.p_inf, cfg.div_samples,
                               derive_seed(cfg.seed, 1), cfg.mh,
                               cfg.mh_defaults);
    std::vector<double> neg_z(cfg.div_samples);
    for (Eigen::Index i = 0; i < draws.rows(); ++i)
      neg_z[static_cast<std::size_t>(i)] = -stat.z(draws.row(i).transpose());
    out.divergence = mean_and_se(neg_z);
  }

  std::vector<double> xs, ys;
  for (std::size_t gi = 0; gi < n_grid.size(); ++gi) {
    const std::size_t n = n_grid[gi];
    const double c_n =
        static_cast<double>(n) * (cfg.delta - out.divergence.mean);
    const std::uint64_t base = derive_seed(cfg.seed, 1000 + gi);
    std::vector<double> sums(cfg.n_batches);
    parallel_for(cfg.n_batches, cfg.threads, [&](std::size_t b) {
      Mat batch = draw_batch_cfg(*pair.p_one, n, derive_seed(base, b + 1),
                                 cfg.mh, cfg.mh_defaults);
      sums[b] = stat.batch_sum(batch);
    });
    std::size_t misses = 0;
    for (double s : sums)
      if (s < c_n) ++misses;
    const double beta_hat =
        static_cast<double>(misses) / static_cast<double>(cfg.n_batches);
    if (beta_hat == 0.0) {
      out.dropped.push_back(n);
      continue;
    }
    out.n_grid.push_back(n);
    out.beta_hat.push_back(beta_hat);
    out.neg_log_beta.push_back(-std::log(beta_hat));
    xs.push_back(static_cast<double>(n));
    ys.push_back(-std::log(beta_hat));
  }

  const std::size_t k = xs.size();
  if (k < 2)
    throw std::invalid_argument(
        "error_exponent_estimate: fewer than two usable grid points "
        "(type-II rate vanished)");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(k);
  my /= static_cast<double>(k);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  out.slope = sxy / sxx;
  out.intercept = my - out.slope * mx;
  if (k > 2) {
    double rss = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double r = ys[i] - (out.intercept + out.slope * xs[i]);
      rss += r * r;
    }
    out.slope_se = std::sqrt(rss / static_cast<double>(k - 2) / sxx);
  } else {
    out.slope_se = std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

}  // namespace diffdet
