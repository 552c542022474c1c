#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "diffdet/common.hpp"
#include "diffdet/samplers.hpp"
#include "diffdet/statistics.hpp"

namespace diffdet {

/// Fixed-sample-size test: 1 iff the batch sum of the statistic reaches c.
int batch_test(const DetectionStatistic& stat, const Mat& batch, double c);

/// y <- max(0, y + z), one step per observation.
struct CusumState {
  double y = 0.0;
  std::uint64_t t = 0;

  void step(double z) {
    y = std::max(0.0, y + z);
    ++t;
  }
};

struct CusumRun {
  std::uint64_t stop_time = 0;
  bool censored = false;  // hit max_len before the threshold
};

/// Runs the CUSUM recursion on a stream until y >= c or max_len samples.
/// Decision at time t uses only x_1..x_t. Requires c > 0.
CusumRun cusum_run(const DetectionStatistic& stat, SampleStream& stream,
                   double c, std::uint64_t max_len);

/// Same recursion on a precomputed score sequence (stops at z.size() when the
/// threshold is never reached). Analysis and test surface.
CusumRun cusum_run(const std::vector<double>& z, double c);

struct StoppingRunResult {
  std::vector<std::uint64_t> stop_times;
  std::vector<std::uint8_t> censored;  // 1 = path censored at max_len
  double mean = 0.0;                   // ARL or EDD estimate
  double std_error = 0.0;
  double censored_fraction = 0.0;      // mean is a lower bound when > 0
};

struct PathConfig {
  std::size_t n_paths = 1000;
  std::uint64_t max_len = 100000;
  std::uint64_t seed = 0;
  int threads = 0;  // 0 = all hardware threads
  MhConfig mh;      // forwarded to streams of unnormalized models
  bool mh_defaults = true;
};

/// Censoring horizon used for false-alarm runs: 50 * e^c for the largest
/// threshold in a sweep keeps tails bounded while leaving the mean usable.
std::uint64_t default_max_len(double c_max);

/// Mean time to false alarm: stopping times over pure pre-change streams.
/// Censored paths contribute max_len, so the estimate is a lower bound
/// whenever censored_fraction > 0. Path i runs on sub-seed (seed, i).
StoppingRunResult estimate_arl(const DetectionStatistic& stat,
                               const ModelPair& pair, double c,
                               const PathConfig& cfg);

/// Mean detection delay with the change at the first sample (all post-change).
/// Same per-path seeding as estimate_arl, so a sweep over c with one seed
/// reuses identical streams and stop times are pathwise monotone in c.
StoppingRunResult estimate_edd(const DetectionStatistic& stat,
                               const ModelPair& pair, double c,
                               const PathConfig& cfg);

struct SumConfig {
  std::size_t n_batches = 1000;
  std::uint64_t seed = 0;
  int threads = 0;
  MhConfig mh;
  bool mh_defaults = true;
};

/// Batch sums for several statistics over shared sample batches (common
/// random numbers): batch b under each hypothesis is drawn once from a
/// sub-seed of (seed, hypothesis, b) and scored by every statistic, so the
/// draws do not depend on which statistics are requested.
struct BatchSumSet {
  std::vector<std::string> names;
  Mat sums_inf;  // n_batches x n_stats, pre-change batches
  Mat sums_one;  // n_batches x n_stats, post-change batches
};

BatchSumSet batch_sums(const std::vector<const DetectionStatistic*>& stats,
                       const ModelPair& pair, std::size_t batch_size,
                       const SumConfig& cfg);

struct RocPoint {
  double threshold = 0.0;
  double alpha = 0.0;  // fraction of pre-change batches with sum >= threshold
  double beta = 0.0;   // fraction of post-change batches with sum < threshold
  std::size_t n = 0;   // batch size
};

/// Empirical ROC from per-batch sums. With no thresholds given, the sweep
/// covers every observed sum plus -inf/+inf sentinels, which yields the exact
/// empirical curve including the (1,0) and (0,1) corners.
std::vector<RocPoint> roc_from_sums(std::vector<double> sums_inf,
                                    std::vector<double> sums_one,
                                    std::size_t batch_size,
                                    std::vector<double> thresholds = {});

std::vector<RocPoint> roc_curve(const DetectionStatistic& stat,
                                const ModelPair& pair, std::size_t batch_size,
                                const SumConfig& cfg,
                                std::vector<double> thresholds = {});

/// Largest power achievable subject to alpha <= alpha_max; returns the
/// corresponding curve point. Point sets from roc_from_sums always contain
/// alpha = 0, so the constraint set is never empty.
RocPoint roc_power_at_alpha(const std::vector<RocPoint>& points,
                            double alpha_max);

struct ExponentConfig {
  double delta = 0.02;      // threshold offset, c_n = n * (delta - divergence)
  std::size_t n_batches = 2000;
  std::size_t div_samples = 200000;  // pre-change draws for the divergence
  std::uint64_t seed = 0;
  int threads = 0;
  MhConfig mh;
  bool mh_defaults = true;
};

struct ErrorExponentResult {
  double slope = 0.0;      // OLS slope of -log beta_hat versus n
  double slope_se = 0.0;   // NaN when only two points survive
  double intercept = 0.0;
  MeanSe divergence;       // estimate of the pre-change-side divergence
  double delta = 0.0;
  std::vector<std::size_t> n_grid;        // points kept in the fit
  std::vector<double> beta_hat;           // type-II rates at kept points
  std::vector<double> neg_log_beta;
  std::vector<std::size_t> dropped;       // n values with beta_hat == 0
};

/// Type-II error decay: for each n in the grid, n_batches post-change batches
/// of size n are tested at threshold c_n = n * (delta - D), where D is the
/// Monte-Carlo divergence -E[z] under the pre-change model. Returns the
/// least-squares slope of -log beta_hat versus n. Points with beta_hat = 0
/// are dropped and flagged; fewer than two surviving points is an error.
ErrorExponentResult error_exponent_estimate(const DetectionStatistic& stat,
                                            const ModelPair& pair,
                                            const std::vector<std::size_t>& n_grid,
                                            const ExponentConfig& cfg);

}  // namespace diffdet
