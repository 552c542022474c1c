#include "diffdet/samplers.hpp"

#include <cmath>

namespace diffdet {

Mat sample_gaussian(const GaussianModel& model, std::size_t n,
                    std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample_gaussian: n must be >= 1");
  Rng rng(seed);
  const Eigen::Index d = model.dim();
  Mat out(static_cast<Eigen::Index>(n), d);
  for (std::size_t i = 0; i < n; ++i) {
    Vec xi = rng.normal_vec(d);
    out.row(static_cast<Eigen::Index>(i)) =
        (model.mu() + model.chol_lower() * xi).transpose();
  }
  return out;
}

namespace {

/// One random-walk chain; shared by batch sampling and streams.
class MhChain {
 public:
  MhChain(const ScoreModel& model, const MhConfig& cfg)
      : model_(model),
        cfg_(cfg),
        rng_(cfg.seed),
        x_(cfg.init.size() ? cfg.init : Vec::Zero(model.dim())) {
    if (!(cfg_.step_size > 0.0))
      throw std::invalid_argument("MH: step_size must be positive");
    if (cfg_.thinning < 1)
      throw std::invalid_argument("MH: thinning must be >= 1");
    if (x_.size() != model_.dim())
      throw std::invalid_argument("MH: init dimension mismatch");
    log_p_ = model_.log_density(x_);
  }

  void step() {
    Vec prop = x_ + cfg_.step_size * rng_.normal_vec(x_.size());
    double lp = model_.log_density(prop);
    double u = rng_.uniform();
    ++proposed_;
    if (std::log(std::max(u, 1e-300)) < lp - log_p_) {
      x_ = std::move(prop);
      log_p_ = lp;
      ++accepted_;
    }
  }

  /// Advances past burn-in on first use, then by thinning steps per draw.
  /// The acceptance rate covers post-burn-in proposals only.
  const Vec& draw() {
    if (!warmed_) {
      for (std::size_t i = 0; i < cfg_.burn_in; ++i) step();
      warmed_ = true;
      proposed_ = 0;
      accepted_ = 0;
    }
    for (std::size_t i = 0; i < cfg_.thinning; ++i) step();
    return x_;
  }

  double acceptance_rate() const {
    return proposed_ ? static_cast<double>(accepted_) /
                           static_cast<double>(proposed_)
                     : 0.0;
  }

 private:
  const ScoreModel& model_;
  MhConfig cfg_;
  Rng rng_;
  Vec x_;
  double log_p_;
  bool warmed_ = false;
  std::size_t proposed_ = 0;
  std::size_t accepted_ = 0;
};

}  // namespace

MhResult sample_mh(const ScoreModel& model, const MhConfig& cfg,
                   std::size_t n) {
  if (n < 1) throw std::invalid_argument("sample_mh: n must be >= 1");
  MhChain chain(model, cfg);
  MhResult out;
  out.samples.resize(static_cast<Eigen::Index>(n), model.dim());
  for (std::size_t i = 0; i < n; ++i)
    out.samples.row(static_cast<Eigen::Index>(i)) = chain.draw().transpose();
  out.acceptance_rate = chain.acceptance_rate();
  out.acceptance_warning =
      out.acceptance_rate < 0.05 || out.acceptance_rate > 0.95;
  return out;
}

MhConfig default_mh_config(const ScoreModel& model) {
  MhConfig cfg;
  const std::string kind = model.kind();
  if (kind == "quartic") {
    cfg.step_size = 0.35;
  } else if (kind == "gbrbm") {
    cfg.step_size = 0.9;
  } else {
    cfg.step_size = 0.8;
  }
  return cfg;
}

Mat draw_batch(const ScoreModel& model, std::size_t n, std::uint64_t seed,
               double* acceptance_out) {
  return draw_batch_cfg(model, n, seed, MhConfig{}, true, acceptance_out);
}

Mat draw_batch_cfg(const ScoreModel& model, std::size_t n, std::uint64_t seed,
                   const MhConfig& mh, bool use_defaults,
                   double* acceptance_out) {
  if (const auto* g = dynamic_cast<const GaussianModel*>(&model)) {
    if (acceptance_out) *acceptance_out = 1.0;
    return sample_gaussian(*g, n, seed);
  }
  MhConfig cfg = use_defaults ? default_mh_config(model) : mh;
  if (use_defaults) cfg.init = mh.init;
  cfg.seed = seed;
  MhResult r = sample_mh(model, cfg, n);
  if (acceptance_out) *acceptance_out = r.acceptance_rate;
  return r.samples;
}

class SampleStream::Source {
 public:
  Source(const ScoreModel& model, std::uint64_t seed, const MhConfig& mh,
         bool use_defaults)
      : gaussian_(dynamic_cast<const GaussianModel*>(&model)) {
    if (gaussian_ != nullptr) {
      rng_ = std::make_unique<Rng>(seed);
    } else {
      MhConfig cfg = use_defaults ? default_mh_config(model) : mh;
      cfg.seed = seed;
      cfg.init = mh.init;
      chain_ = std::make_unique<MhChain>(model, cfg);
    }
  }

  Vec next() {
    if (gaussian_ != nullptr)
      return gaussian_->mu() +
             gaussian_->chol_lower() * rng_->normal_vec(gaussian_->dim());
    return chain_->draw();
  }

 private:
  const GaussianModel* gaussian_;
  std::unique_ptr<Rng> rng_;
  std::unique_ptr<MhChain> chain_;
};

SampleStream::SampleStream(ModelPair pair, StreamConfig cfg)
    : pair_(std::move(pair)), cfg_(cfg) {
  if (cfg_.nu < 1)
    throw std::invalid_argument("SampleStream: nu must be >= 1");
}

SampleStream::~SampleStream() = default;
SampleStream::SampleStream(SampleStream&&) noexcept = default;
SampleStream& SampleStream::operator=(SampleStream&&) noexcept = default;

std::unique_ptr<SampleStream::Source> SampleStream::make_source(
    const ScoreModel& model, std::uint64_t sub_seed) const {
  return std::make_unique<Source>(model, derive_seed(cfg_.seed, sub_seed),
                                  cfg_.mh, cfg_.mh_defaults);
}

const Vec& SampleStream::next() {
  ++t_;
  if (t_ < cfg_.nu) {
    if (!pre_) pre_ = make_source(*pair_.p_inf, 1);
    current_ = pre_->next();
  } else {
    if (!post_) post_ = make_source(*pair_.p_one, 2);
    current_ = post_->next();
  }
  return current_;
}

}  // namespace diffdet
