#pragma once

#include <limits>
#include <memory>

#include "diffdet/common.hpp"
#include "diffdet/rng.hpp"
#include "diffdet/score_model.hpp"

namespace diffdet {

/// n draws (rows) from a Gaussian via mean + L * xi with L the Cholesky
/// factor. Deterministic given the seed.
Mat sample_gaussian(const GaussianModel& model, std::size_t n,
                    std::uint64_t seed);

struct MhConfig {
  double step_size = 0.5;
  std::size_t burn_in = 5000;
  std::size_t thinning = 10;
  std::uint64_t seed = 0;
  Vec init;  // start state; zeros(d) when empty
};

struct MhResult {
  Mat samples;
  double acceptance_rate = 0.0;
  bool acceptance_warning = false;  // rate outside [0.05, 0.95]
};

/// Random-walk Metropolis-Hastings on log p~: proposal x' = x + step * N(0,I),
/// accepted with min(1, exp(log p~(x') - log p~(x))). Keeps every thinning-th
/// state after burn_in.
MhResult sample_mh(const ScoreModel& model, const MhConfig& cfg,
                   std::size_t n);

/// Step sizes tuned per model class so acceptance lands near 0.3 on the d=8
/// reference targets.
MhConfig default_mh_config(const ScoreModel& model);

/// Draws a batch from any model: direct sampling for Gaussians, random-walk
/// MH with default settings otherwise. Reports the acceptance rate (1.0 for
/// direct sampling) when acceptance_out is non-null.
Mat draw_batch(const ScoreModel& model, std::size_t n, std::uint64_t seed,
               double* acceptance_out = nullptr);

/// draw_batch with explicit chain settings: with use_defaults the per-model
/// step size is applied and only mh.init is honored; otherwise mh is used as
/// given. The seed always overrides mh.seed.
Mat draw_batch_cfg(const ScoreModel& model, std::size_t n, std::uint64_t seed,
                   const MhConfig& mh, bool use_defaults,
                   double* acceptance_out = nullptr);

struct StreamConfig {
  static constexpr std::uint64_t kNoChange =
      std::numeric_limits<std::uint64_t>::max();

  std::uint64_t nu = 1;  // first post-change index (1-based); kNoChange = never
  std::uint64_t seed = 0;
  MhConfig mh;           // step/burn-in/thinning for unnormalized models
  bool mh_defaults = true;  // use default_mh_config per model when true
};

/// Lazily generates x_1, x_2, ...: pre-change model before index nu, the
/// post-change model from nu on. Each underlying sampler is instantiated on
/// first use with its own sub-seed, so a never-reached segment costs nothing.
class SampleStream {
 public:
  SampleStream(ModelPair pair, StreamConfig cfg);
  ~SampleStream();

  SampleStream(SampleStream&&) noexcept;
  SampleStream& operator=(SampleStream&&) noexcept;

  /// Next sample; t advances 1, 2, ...
  const Vec& next();

  std::uint64_t position() const { return t_; }

 private:
  class Source;
  std::unique_ptr<Source> make_source(const ScoreModel& model,
                                      std::uint64_t sub_seed) const;

  ModelPair pair_;
  StreamConfig cfg_;
  std::uint64_t t_ = 0;
  std::unique_ptr<Source> pre_;
  std::unique_ptr<Source> post_;
  Vec current_;
};

}  // namespace diffdet
