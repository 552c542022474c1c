#include "diffdet/verification.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "diffdet/detection.hpp"
#include "diffdet/io.hpp"
#include "diffdet/rng.hpp"
#include "diffdet/samplers.hpp"
#include "diffdet/statistics.hpp"

namespace diffdet {

namespace {

using KvList = std::vector<std::pair<std::string, std::string>>;

void put(KvList& kv, const std::string& key, const std::string& value) {
  kv.emplace_back(key, value);
}

void put(KvList& kv, const std::string& key, double value) {
  kv.emplace_back(key, format_g17(value));
}

void put(KvList& kv, const std::string& key, std::uint64_t value) {
  kv.emplace_back(key, std::to_string(value));
}

// Short rendering of threshold values for report keys ("2", "0.5", ...).
std::string short_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

}  // namespace

std::string report_to_json(const TheoremReport& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["claim"] = r.claim;
  nlohmann::ordered_json in = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.inputs) in[k] = v;
  j["inputs"] = in;
  nlohmann::ordered_json co = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.computed) co[k] = v;
  j["computed"] = co;
  j["bound"] = r.bound;
  j["pass"] = r.pass;
  j["inconclusive"] = r.inconclusive;
  j["notes"] = r.notes;
  return j.dump(2) + "\n";
}

TheoremReport verify_gaussian_optimal(const Mat& v, const Vec& mu_inf,
                                      const Vec& mu_one, std::size_t n_points,
                                      std::uint64_t seed) {
  if (n_points < 1)
    throw std::invalid_argument("verify_gaussian_optimal: n_points >= 1");
  auto p_inf = std::make_shared<GaussianModel>(mu_inf, v);
  auto p_one = std::make_shared<GaussianModel>(mu_one, v);
  ModelPair pair(p_inf, p_one);
  ConstantDiffusion mstar = gaussian_optimal(v);
  DetectionStatistic z_kl = DetectionStatistic::kl(pair);
  DetectionStatistic z_m = DetectionStatistic::diffusion_ref(pair, mstar);

  Mat xs = sample_gaussian(*p_inf, n_points, derive_seed(seed, 1));
  double max_diff = 0.0;
  for (Eigen::Index i = 0; i < xs.rows(); ++i) {
    Vec x = xs.row(i).transpose();
    max_diff = std::max(max_diff, std::abs(z_m.z(x) - z_kl.z(x)));
  }

  TheoremReport r;
  r.id = "gaussian-optimal";
  r.claim =
      "with M the symmetric square root of the shared covariance, the "
      "detection score equals the log-likelihood ratio everywhere";
  put(r.inputs, "dimension", static_cast<std::uint64_t>(v.rows()));
  put(r.inputs, "n_points", static_cast<std::uint64_t>(n_points));
  put(r.inputs, "seed", seed);
  put(r.inputs, "tolerance", 1e-8);
  put(r.computed, "max_abs_difference", max_diff);
  r.bound = "max |z_m(x) - z_kl(x)| <= 1e-8";
  r.pass = max_diff <= 1e-8;
  return r;
}

TheoremReport verify_ode_counterexample() {
  const double sigma = 0.5;
  const double gamma =
      0.5 * (1.0 - std::pow(sigma, -4.0)) / (1.0 - std::pow(sigma, -2.0));
  const double delta = std::log(sigma) / (1.0 - 1.0 / (sigma * sigma));
  const double zeta = (-delta + 1.0 / (2.0 * gamma)) *
                      std::sqrt(2.0 * std::numbers::pi / gamma);
  auto u_tilde = [&](double x) {
    return zeta * normal_cdf(x * std::sqrt(gamma)) -
           x * std::exp(-gamma * x * x / 2.0) / (2.0 * gamma);
  };
  const double u_left = u_tilde(-1.0);
  const double u_right = u_tilde(-0.05);
  const bool signs_ok = u_left > 0.0 && u_right < 0.0;

  double root = std::numeric_limits<double>::quiet_NaN();
  if (signs_ok) {
    double lo = -1.0, hi = -0.05;  // u(lo) > 0 > u(hi)
    for (int it = 0; it < 200; ++it) {
      double mid = 0.5 * (lo + hi);
      (u_tilde(mid) > 0.0 ? lo : hi) = mid;
    }
    root = 0.5 * (lo + hi);
  }

  TheoremReport r;
  r.id = "ode-counterexample";
  r.claim =
      "at sigma = 1/2 the candidate solution changes sign on (-1, -0.05), so "
      "no valid diffusion function solves the defining equation";
  put(r.inputs, "sigma", sigma);
  put(r.computed, "gamma", gamma);
  put(r.computed, "delta", delta);
  put(r.computed, "zeta", zeta);
  put(r.computed, "u_tilde(-1)", u_left);
  put(r.computed, "u_tilde(-0.05)", u_right);
  put(r.computed, "root", root);
  r.bound = "u_tilde(-1) > 0 and u_tilde(-0.05) < 0, with a root in between";
  r.pass = signs_ok && std::isfinite(root);
  r.notes =
      "reference magnitudes are about 0.0545 and -0.0131; only the signs are "
      "asserted";
  return r;
}

TheoremReport verify_arl_bound(const ModelPair& pair,
                               const DiffusionFunction& m_calibrated,
                               const std::vector<double>& c_list,
                               std::size_t n_paths, std::uint64_t seed,
                               int threads) {
  if (c_list.empty())
    throw std::invalid_argument("verify_arl_bound: empty threshold list");
  DetectionStatistic stat = DetectionStatistic::diffusion_ref(pair, m_calibrated);

  TheoremReport r;
  r.id = "arl-bound";
  r.claim =
      "with E[exp z] <= 1 under the pre-change law, the mean time to false "
      "alarm is at least e^c";
  const std::size_t n_check = 20000;
  put(r.inputs, "held_out_samples", static_cast<std::uint64_t>(n_check));
  put(r.inputs, "n_paths", static_cast<std::uint64_t>(n_paths));
  put(r.inputs, "seed", seed);
  r.bound = "ARL(c) >= e^c - 3 se for every c";

  Mat held = draw_batch(*pair.p_inf, n_check, derive_seed(seed, 1));
  std::vector<double> ez(n_check);
  for (Eigen::Index i = 0; i < held.rows(); ++i)
    ez[static_cast<std::size_t>(i)] = std::exp(stat.z(held.row(i).transpose()));
  MeanSe cons = mean_and_se(ez);
  put(r.computed, "held_out_mean_exp_z", cons.mean);
  put(r.computed, "held_out_se", cons.se);
  if (cons.mean > 1.0 + 3.0 * cons.se) {
    r.inconclusive = true;
    r.notes =
        "held-out constraint check failed: mean exp z exceeds 1 by more than "
        "3 se, so the bound's premise does not hold for this function";
    return r;
  }

  const double c_max = *std::max_element(c_list.begin(), c_list.end());
  PathConfig pc;
  pc.n_paths = n_paths;
  pc.max_len = default_max_len(c_max);
  pc.seed = derive_seed(seed, 2);
  pc.threads = threads;
  put(r.inputs, "max_len", pc.max_len);

  bool all_ok = true;
  for (double c : c_list) {
    StoppingRunResult arl = estimate_arl(stat, pair, c, pc);
    const double bound = std::exp(c);
    const bool ok = arl.mean >= bound - 3.0 * arl.std_error;
    all_ok = all_ok && ok;
    const std::string tag = "c=" + short_num(c);
    put(r.computed, "arl(" + tag + ")", arl.mean);
    put(r.computed, "se(" + tag + ")", arl.std_error);
    put(r.computed, "censored_fraction(" + tag + ")", arl.censored_fraction);
    put(r.computed, "bound(" + tag + ")", bound);
  }
  r.pass = all_ok;
  return r;
}

TheoremReport verify_edd_asymptote(const ModelPair& pair,
                                   const DiffusionFunction& m,
                                   const std::vector<double>& c_list,
                                   std::size_t n_paths, std::uint64_t seed,
                                   int threads) {
  if (c_list.empty())
    throw std::invalid_argument("verify_edd_asymptote: empty threshold list");
  DetectionStatistic stat = DetectionStatistic::diffusion_ref(pair, m);

  TheoremReport r;
  r.id = "edd-asymptote";
  r.claim =
      "the detection delay grows like c over the post-change divergence as "
      "the threshold grows";
  const std::size_t n_div = 50000;
  put(r.inputs, "divergence_samples", static_cast<std::uint64_t>(n_div));
  put(r.inputs, "n_paths", static_cast<std::uint64_t>(n_paths));
  put(r.inputs, "seed", seed);
  r.bound = "EDD(c) * D / c in [0.85, 1.15] at the largest threshold";

  Mat s_one = draw_batch(*pair.p_one, n_div, derive_seed(seed, 1));
  DivergenceEstimate dhat = divergence_mc(pair, Direction::kOneToInf, &m, s_one);
  put(r.computed, "divergence", dhat.value);
  put(r.computed, "divergence_se", dhat.std_error);
  if (!(dhat.value > 0.0)) {
    r.inconclusive = true;
    r.notes = "estimated divergence is not positive; the ratio is undefined";
    return r;
  }

  PathConfig pc;
  pc.n_paths = n_paths;
  pc.max_len = 100000;
  pc.seed = derive_seed(seed, 2);
  pc.threads = threads;

  std::vector<double> sorted_c = c_list;
  std::sort(sorted_c.begin(), sorted_c.end());
  double final_ratio = std::numeric_limits<double>::quiet_NaN();
  for (double c : sorted_c) {
    StoppingRunResult edd = estimate_edd(stat, pair, c, pc);
    const double ratio = edd.mean * dhat.value / c;
    const std::string tag = "c=" + short_num(c);
    put(r.computed, "edd(" + tag + ")", edd.mean);
    put(r.computed, "se(" + tag + ")", edd.std_error);
    put(r.computed, "ratio(" + tag + ")", ratio);
    final_ratio = ratio;
  }
  put(r.computed, "ratio_at_largest_c", final_ratio);
  r.pass = final_ratio >= 0.85 && final_ratio <= 1.15;
  return r;
}

TheoremReport verify_identities(const std::string& id, const ModelPair& pair,
                                const DiffusionFunction& m,
                                std::size_t n_samples, std::uint64_t seed) {
  if (n_samples < 2)
    throw std::invalid_argument("verify_identities: need at least 2 samples");
  Mat x_inf = draw_batch(*pair.p_inf, n_samples, derive_seed(seed, 1));
  Mat x_one = draw_batch(*pair.p_one, n_samples, derive_seed(seed, 2));

  PairedCheck fwd = hyvarinen_identity_check(*pair.p_one, *pair.p_inf, m, x_one);
  PairedCheck rev = hyvarinen_identity_check(*pair.p_inf, *pair.p_one, m, x_inf);
  DriftCheckReport drift = drift_check(pair, m, x_inf, x_one);

  TheoremReport r;
  r.id = id;
  r.claim =
      "the density-free form of the divergence matches the direct form in "
      "both directions, and the detection score drifts the right way under "
      "each regime";
  put(r.inputs, "n_samples", static_cast<std::uint64_t>(n_samples));
  put(r.inputs, "seed", seed);
  put(r.inputs, "model_kind", pair.p_inf->kind());
  put(r.computed, "post_direction_lhs", fwd.lhs);
  put(r.computed, "post_direction_rhs", fwd.rhs);
  put(r.computed, "post_direction_diff", fwd.diff);
  put(r.computed, "post_direction_diff_se", fwd.diff_se);
  put(r.computed, "pre_direction_lhs", rev.lhs);
  put(r.computed, "pre_direction_rhs", rev.rhs);
  put(r.computed, "pre_direction_diff", rev.diff);
  put(r.computed, "pre_direction_diff_se", rev.diff_se);
  put(r.computed, "drift_pre_mean_z", drift.pre.lhs);
  put(r.computed, "drift_pre_diff_se", drift.pre.diff_se);
  put(r.computed, "drift_post_mean_z", drift.post.lhs);
  put(r.computed, "drift_post_diff_se", drift.post.diff_se);
  put(r.computed, "separation", drift.separation ? "true" : "false");
  r.bound = "paired |lhs - rhs| <= 4 se everywhere, and mean z changes sign";
  r.pass = fwd.pass() && rev.pass() && drift.pass() && drift.separation;
  return r;
}

TheoremReport verify_error_exponent(const ModelPair& pair,
                                    const DiffusionFunction& m_calibrated,
                                    std::size_t n_batches, std::uint64_t seed,
                                    int threads) {
  DetectionStatistic stat = DetectionStatistic::diffusion_ref(pair, m_calibrated);
  ExponentConfig ec;
  ec.delta = 0.02;
  ec.n_batches = n_batches;
  ec.div_samples = 200000;
  ec.seed = derive_seed(seed, 1);
  ec.threads = threads;
  const std::vector<std::size_t> grid{2, 4, 6, 8, 10, 12};
  ErrorExponentResult res = error_exponent_estimate(stat, pair, grid, ec);

  TheoremReport r;
  r.id = "error-exponent";
  r.claim =
      "the type-II error of the batch test decays exponentially with rate at "
      "least the pre-change-side divergence";
  put(r.inputs, "n_batches", static_cast<std::uint64_t>(n_batches));
  put(r.inputs, "delta", ec.delta);
  put(r.inputs, "seed", seed);
  {
    std::string g;
    for (std::size_t n : grid) {
      if (!g.empty()) g += ",";
      g += std::to_string(n);
    }
    put(r.inputs, "batch_sizes", g);
  }
  put(r.computed, "slope", res.slope);
  put(r.computed, "slope_se", res.slope_se);
  put(r.computed, "divergence", res.divergence.mean);
  put(r.computed, "divergence_se", res.divergence.se);
  put(r.computed, "dropped_points",
      static_cast<std::uint64_t>(res.dropped.size()));
  for (std::size_t i = 0; i < res.n_grid.size(); ++i)
    put(r.computed, "beta(n=" + std::to_string(res.n_grid[i]) + ")",
        res.beta_hat[i]);
  r.bound = "slope >= divergence - 2 fit se";
  r.pass = std::isfinite(res.slope_se) &&
           res.slope >= res.divergence.mean - 2.0 * res.slope_se;
  return r;
}

std::vector<std::string> suite_ids() {
  return {"gaussian-optimal", "ode-counterexample", "identities-gaussian",
          "identities-gbrbm",  "identities-quartic", "arl-bound",
          "edd-asymptote",     "error-exponent"};
}

std::vector<TheoremReport> run_suite(const SuiteConfig& cfg) {
  const std::vector<std::string> ids = suite_ids();
  if (!cfg.only.empty() &&
      std::find(ids.begin(), ids.end(), cfg.only) == ids.end())
    throw ConfigError("unknown verification item: " + cfg.only);
  auto want = [&](const char* id) {
    return cfg.only.empty() || cfg.only == id;
  };

  const std::size_t paths = cfg.paper_scale ? 10000 : 1000;
  const std::size_t ident_n = cfg.paper_scale ? 100000 : 20000;
  const std::size_t exp_batches = cfg.paper_scale ? 10000 : 4000;

  std::vector<TheoremReport> out;
  if (want("gaussian-optimal"))
    out.push_back(verify_gaussian_optimal(
        reference_covariance(), reference_mean_inf(), reference_mean_one(),
        10000, derive_seed(cfg.seed, 11)));
  if (want("ode-counterexample")) out.push_back(verify_ode_counterexample());

  if (want("identities-gaussian")) {
    ModelPair pair = build_reference_pair("gaussian", derive_seed(cfg.seed, 21));
    ConstantDiffusion ident{Mat::Identity(pair.dim(), pair.dim())};
    out.push_back(verify_identities("identities-gaussian", pair, ident,
                                    ident_n, derive_seed(cfg.seed, 22)));
  }
  if (want("identities-gbrbm")) {
    ModelPair pair = build_reference_pair("gbrbm", derive_seed(cfg.seed, 23));
    Rng rng(derive_seed(cfg.seed, 24));
    Mat cm(pair.dim(), pair.dim());
    for (Eigen::Index i = 0; i < cm.rows(); ++i)
      for (Eigen::Index j = 0; j < cm.cols(); ++j)
        cm(i, j) = 0.5 * rng.normal();
    ConstantDiffusion random_m{cm};
    out.push_back(verify_identities("identities-gbrbm", pair, random_m,
                                    ident_n, derive_seed(cfg.seed, 25)));
  }
  if (want("identities-quartic")) {
    ModelPair pair = build_reference_pair("quartic", derive_seed(cfg.seed, 26));
    Rng rng(derive_seed(cfg.seed, 27));
    Mat cm(pair.dim(), pair.dim());
    for (Eigen::Index i = 0; i < cm.rows(); ++i)
      for (Eigen::Index j = 0; j < cm.cols(); ++j)
        cm(i, j) = 0.5 * rng.normal();
    ConstantDiffusion random_m{cm};
    out.push_back(verify_identities("identities-quartic", pair, random_m,
                                    ident_n, derive_seed(cfg.seed, 28)));
  }

  const bool need_gaussian_harness = want("arl-bound") ||
                                     want("edd-asymptote") ||
                                     want("error-exponent");
  if (need_gaussian_harness) {
    ModelPair pair = build_reference_pair("gaussian", 0);
    auto mstar = std::make_shared<ConstantDiffusion>(
        gaussian_optimal(reference_covariance()));
    if (want("arl-bound")) {
      Mat cal = draw_batch(*pair.p_inf, 20000, derive_seed(cfg.seed, 31));
      const double k = calibrate_scale(*mstar, pair, cal);
      ScaledDiffusion scaled(mstar, k);
      TheoremReport rep = verify_arl_bound(pair, scaled, {2.0, 3.0, 4.0},
                                           paths, derive_seed(cfg.seed, 32),
                                           cfg.threads);
      rep.inputs.emplace_back("calibration_factor", format_g17(k));
      out.push_back(std::move(rep));
    }
    if (want("edd-asymptote"))
      out.push_back(verify_edd_asymptote(pair, *mstar, {2.0, 4.0, 6.0, 8.0},
                                         paths, derive_seed(cfg.seed, 33),
                                         cfg.threads));
    if (want("error-exponent")) {
      Mat cal = draw_batch(*pair.p_inf, 20000, derive_seed(cfg.seed, 34));
      const double k = calibrate_scale(*mstar, pair, cal);
      ScaledDiffusion scaled(mstar, k);
      TheoremReport rep = verify_error_exponent(
          pair, scaled, exp_batches, derive_seed(cfg.seed, 35), cfg.threads);
      rep.inputs.emplace_back("calibration_factor", format_g17(k));
      out.push_back(std::move(rep));
    }
  }
  return out;
}

}  // namespace diffdet
