#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "diffdet/common.hpp"
#include "diffdet/detection.hpp"
#include "diffdet/diffusion.hpp"
#include "diffdet/io.hpp"
#include "diffdet/rng.hpp"
#include "diffdet/samplers.hpp"
#include "diffdet/score_model.hpp"
#include "diffdet/statistics.hpp"
#include "diffdet/training.hpp"
#include "diffdet/verification.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace diffdet;

namespace {

constexpr int kConfigVersion = 1;

// ---------------------------------------------------------------------------
// Config loading

struct CliOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool paper_scale = false;
  std::string only;
};

struct MhSettings {
  bool defaults = true;  // per-model tuned settings; explicit values otherwise
  MhConfig cfg;
};

struct Resolved {
  std::string model_kind;
  std::uint64_t model_seed = 0;  // pins the model pair across commands
  std::uint64_t seed = 0;
  int threads = 0;
  std::string output_dir;
  MhSettings mh;

  std::size_t n_train = 0, n_test = 0;

  std::string objective;
  Eigen::Index hidden = 36;
  double output_scale = 0.1;
  std::size_t epochs = 0, batch_size = 0;
  double lr = 0.0, alpha = 0.0, l2 = 0.0;
  std::string data_one, data_inf;

  std::vector<std::string> roc_stats;
  std::vector<std::size_t> batch_sizes;
  std::size_t n_batches = 0;
  std::string roc_checkpoint;
  std::size_t norm_samples = 0;

  std::vector<std::string> ae_stats;
  std::vector<double> thresholds;
  std::size_t n_paths = 0;
  std::uint64_t max_len = 0;  // 0 = derive from the largest threshold
  std::uint64_t edd_max_len = 0;
  bool calibrate = true;
  std::size_t calibration_samples = 0;
  std::string ae_checkpoint;

  std::string only;
  bool paper_scale = false;
  std::string verify_checkpoint;

  ordered_json echo;  // fully resolved config, echoed into manifests
};

void check_keys(const ordered_json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object())
    throw ConfigError("config section '" + where + "' must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) known = known || it.key() == k;
    if (!known) {
      const std::string full =
          where.empty() ? it.key() : where + "." + it.key();
      throw ConfigError("unknown config key '" + full + "'");
    }
  }
}

template <class T>
T get_or(const ordered_json& j, const std::string& key, T def) {
  if (!j.is_object() || !j.contains(key)) return def;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

ordered_json section(const ordered_json& j, const std::string& key) {
  if (!j.is_object() || !j.contains(key)) return ordered_json::object();
  return j.at(key);
}

ordered_json load_config_file(const std::string& path) {
  if (path.empty()) return ordered_json::object();
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path);
  try {
    return ordered_json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file is not valid JSON: " + path + " (" +
                      e.what() + ")");
  }
}

const std::vector<std::string> kModelKinds{"gaussian", "gbrbm", "quartic"};
const std::vector<std::string> kStatTokens{"kl", "fisher", "diffusion",
                                           "diffusion-identity",
                                           "diffusion-opt"};

Resolved resolve(const ordered_json& file, const CliOptions& cli) {
  check_keys(file, "",
             {"version", "model_kind", "model_seed", "seed", "threads",
              "output_dir", "mh", "sample", "train", "roc", "arl_edd",
              "verify"});
  const int version = get_or(file, "version", kConfigVersion);
  if (version != kConfigVersion)
    throw ConfigError("unsupported config version " + std::to_string(version) +
                      " (expected " + std::to_string(kConfigVersion) + ")");

  Resolved r;
  r.model_kind = get_or<std::string>(file, "model_kind", "gaussian");
  if (std::find(kModelKinds.begin(), kModelKinds.end(), r.model_kind) ==
      kModelKinds.end())
    throw ConfigError("unknown model_kind '" + r.model_kind +
                      "' (expected gaussian, gbrbm, or quartic)");
  r.model_seed = get_or<std::uint64_t>(file, "model_seed", 0);
  r.seed = cli.seed ? *cli.seed : get_or<std::uint64_t>(file, "seed", 0);
  r.threads = cli.threads ? *cli.threads : get_or<int>(file, "threads", 0);
  r.output_dir = get_or<std::string>(file, "output_dir", "out");
  if (r.output_dir.empty()) throw ConfigError("output_dir must not be empty");

  if (file.contains("mh")) {
    const ordered_json mj = file.at("mh");
    check_keys(mj, "mh", {"step_size", "burn_in", "thinning"});
    r.mh.defaults = false;
    r.mh.cfg.step_size = get_or(mj, "step_size", 0.5);
    r.mh.cfg.burn_in = get_or<std::uint64_t>(mj, "burn_in", 5000);
    r.mh.cfg.thinning = get_or<std::uint64_t>(mj, "thinning", 10);
    if (!(r.mh.cfg.step_size > 0.0))
      throw ConfigError("mh.step_size must be positive");
    if (r.mh.cfg.thinning < 1) throw ConfigError("mh.thinning must be >= 1");
  }

  const bool paper = cli.paper_scale;
  const std::size_t default_counts = paper ? 10000 : 1000;

  const ordered_json sj = section(file, "sample");
  check_keys(sj, "sample", {"n_train", "n_test"});
  r.n_train = get_or<std::size_t>(sj, "n_train", 100000);
  r.n_test = get_or<std::size_t>(sj, "n_test", 10000);
  if (r.n_train < 1 || r.n_test < 1)
    throw ConfigError("sample sizes must be >= 1");

  const ordered_json tj = section(file, "train");
  check_keys(tj, "train",
             {"objective", "hidden", "output_scale", "epochs", "batch_size",
              "lr", "alpha", "l2", "data_one", "data_inf"});
  r.objective = get_or<std::string>(tj, "objective", "cpd");
  if (r.objective != "cpd" && r.objective != "ht")
    throw ConfigError("train.objective must be 'cpd' or 'ht'");
  r.hidden = get_or<Eigen::Index>(tj, "hidden", 36);
  r.output_scale = get_or(tj, "output_scale", 0.1);
  r.epochs = get_or<std::size_t>(tj, "epochs", 200);
  r.batch_size = get_or<std::size_t>(tj, "batch_size", 512);
  r.lr = get_or(tj, "lr", default_lr(r.model_kind));
  r.alpha = get_or(tj, "alpha", 10.0);
  r.l2 = get_or(tj, "l2", 1e-5);
  r.data_one =
      get_or<std::string>(tj, "data_one", r.output_dir + "/train_one.csv");
  r.data_inf =
      get_or<std::string>(tj, "data_inf", r.output_dir + "/train_inf.csv");
  if (r.hidden < 1) throw ConfigError("train.hidden must be >= 1");
  if (r.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(r.lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (r.alpha < 0.0) throw ConfigError("train.alpha must be >= 0");
  if (r.l2 < 0.0) throw ConfigError("train.l2 must be >= 0");

  const ordered_json rj = section(file, "roc");
  check_keys(rj, "roc",
             {"statistics", "batch_sizes", "n_batches", "checkpoint",
              "norm_samples"});
  r.roc_stats = get_or<std::vector<std::string>>(rj, "statistics",
                                                 {"kl", "fisher"});
  r.batch_sizes = get_or<std::vector<std::size_t>>(rj, "batch_sizes",
                                                   {1, 5, 10, 25, 50, 100});
  r.n_batches = get_or<std::size_t>(rj, "n_batches", default_counts);
  r.roc_checkpoint = get_or<std::string>(rj, "checkpoint",
                                         r.output_dir + "/checkpoint.json");
  r.norm_samples = get_or<std::size_t>(rj, "norm_samples", 20000);
  if (r.roc_stats.empty()) throw ConfigError("roc.statistics must not be empty");
  if (r.batch_sizes.empty())
    throw ConfigError("roc.batch_sizes must not be empty");
  for (std::size_t n : r.batch_sizes)
    if (n < 1) throw ConfigError("roc.batch_sizes entries must be >= 1");
  if (r.n_batches < 2) throw ConfigError("roc.n_batches must be >= 2");

  const ordered_json aj = section(file, "arl_edd");
  check_keys(aj, "arl_edd",
             {"statistics", "thresholds", "n_paths", "max_len", "edd_max_len",
              "calibrate", "calibration_samples", "checkpoint"});
  r.ae_stats = get_or<std::vector<std::string>>(aj, "statistics",
                                                {"kl", "fisher"});
  r.thresholds = get_or<std::vector<double>>(
      aj, "thresholds", {0.5, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0});
  r.n_paths = get_or<std::size_t>(aj, "n_paths", default_counts);
  r.max_len = get_or<std::uint64_t>(aj, "max_len", 0);
  r.edd_max_len = get_or<std::uint64_t>(aj, "edd_max_len", 100000);
  r.calibrate = get_or(aj, "calibrate", true);
  r.calibration_samples = get_or<std::size_t>(aj, "calibration_samples", 20000);
  r.ae_checkpoint = get_or<std::string>(aj, "checkpoint",
                                        r.output_dir + "/checkpoint.json");
  if (r.ae_stats.empty())
    throw ConfigError("arl_edd.statistics must not be empty");
  if (r.thresholds.empty())
    throw ConfigError("arl_edd.thresholds must not be empty");
  for (double c : r.thresholds)
    if (!(c > 0.0)) throw ConfigError("arl_edd.thresholds must be positive");
  if (r.n_paths < 2) throw ConfigError("arl_edd.n_paths must be >= 2");
  if (r.edd_max_len < 1) throw ConfigError("arl_edd.edd_max_len must be >= 1");
  if (r.calibration_samples < 2)
    throw ConfigError("arl_edd.calibration_samples must be >= 2");

  const ordered_json vj = section(file, "verify");
  check_keys(vj, "verify", {"only", "paper_scale", "checkpoint"});
  r.only = !cli.only.empty() ? cli.only : get_or<std::string>(vj, "only", "");
  r.paper_scale = paper || get_or(vj, "paper_scale", false);
  r.verify_checkpoint = get_or<std::string>(vj, "checkpoint", "");

  for (const auto& list : {r.roc_stats, r.ae_stats})
    for (const auto& tok : list)
      if (std::find(kStatTokens.begin(), kStatTokens.end(), tok) ==
          kStatTokens.end())
        throw ConfigError("unknown statistic '" + tok +
                          "' (expected kl, fisher, diffusion, "
                          "diffusion-identity, or diffusion-opt)");

  ordered_json e;
  e["version"] = kConfigVersion;
  e["model_kind"] = r.model_kind;
  e["model_seed"] = r.model_seed;
  e["seed"] = r.seed;
  e["threads"] = r.threads;
  e["output_dir"] = r.output_dir;
  ordered_json em;
  em["defaults"] = r.mh.defaults;
  if (!r.mh.defaults) {
    em["step_size"] = r.mh.cfg.step_size;
    em["burn_in"] = r.mh.cfg.burn_in;
    em["thinning"] = r.mh.cfg.thinning;
  }
  e["mh"] = em;
  e["sample"] = {{"n_train", r.n_train}, {"n_test", r.n_test}};
  e["train"] = {{"objective", r.objective},
                {"hidden", r.hidden},
                {"output_scale", r.output_scale},
                {"epochs", r.epochs},
                {"batch_size", r.batch_size},
                {"lr", r.lr},
                {"alpha", r.alpha},
                {"l2", r.l2},
                {"data_one", r.data_one},
                {"data_inf", r.data_inf}};
  e["roc"] = {{"statistics", r.roc_stats},
              {"batch_sizes", r.batch_sizes},
              {"n_batches", r.n_batches},
              {"checkpoint", r.roc_checkpoint},
              {"norm_samples", r.norm_samples}};
  e["arl_edd"] = {{"statistics", r.ae_stats},
                  {"thresholds", r.thresholds},
                  {"n_paths", r.n_paths},
                  {"max_len", r.max_len},
                  {"edd_max_len", r.edd_max_len},
                  {"calibrate", r.calibrate},
                  {"calibration_samples", r.calibration_samples},
                  {"checkpoint", r.ae_checkpoint}};
  e["verify"] = {{"only", r.only},
                 {"paper_scale", r.paper_scale},
                 {"checkpoint", r.verify_checkpoint}};
  r.echo = std::move(e);
  return r;
}

// ---------------------------------------------------------------------------
// Shared helpers

std::string hash_file(const std::string& path) {
  return fnv1a64_hex(read_text_file(path));
}

void write_manifest(const Resolved& r, const std::string& command,
                    const std::vector<std::pair<std::string, std::string>>&
                        outputs,
                    const ordered_json& extras) {
  ordered_json m;
  m["version"] = kConfigVersion;
  m["command"] = command;
  m["config_hash"] = fnv1a64_hex(r.echo.dump(2));
  m["config"] = r.echo;
  ordered_json o = ordered_json::object();
  for (const auto& [name, hash] : outputs) o[name] = hash;
  m["outputs"] = o;
  if (!extras.is_null()) m["extras"] = extras;
  const std::string path = r.output_dir + "/manifest_" + command + ".json";
  write_text_file(path, m.dump(2) + "\n");
  std::cout << "wrote " << path << "\n";
}

void ensure_output_dir(const Resolved& r) {
  std::error_code ec;
  fs::create_directories(r.output_dir, ec);
  if (ec)
    throw ConfigError("cannot create output_dir '" + r.output_dir +
                      "': " + ec.message());
}

std::shared_ptr<DiffusionFunction> load_checkpoint(const std::string& path,
                                                   Eigen::Index dim) {
  if (path.empty()) throw ConfigError("checkpoint path is empty");
  if (!fs::exists(path))
    throw ConfigError("checkpoint file not found: " + path);
  std::shared_ptr<DiffusionFunction> m;
  try {
    m = diffusion_from_json(read_text_file(path));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("checkpoint unreadable: " + path + " (" + e.what() +
                      ")");
  }
  if (m->dim() != dim)
    throw ConfigError("checkpoint dimension " + std::to_string(m->dim()) +
                      " does not match the model dimension " +
                      std::to_string(dim));
  return m;
}

struct BuiltStat {
  std::string token;
  DetectionStatistic stat;
  double calibration;     // NaN when no calibration was applied
  double norm_ratio_log;  // NaN unless the corrected likelihood ratio is used
};

/// Builds the statistics named by tokens. With calibrate true, diffusion
/// statistics are rescaled so the pre-change constraint holds empirically on
/// a fresh batch of draws (one shared batch across all of them).
std::vector<BuiltStat> build_stats(const std::vector<std::string>& tokens,
                                   const ModelPair& pair, const Resolved& r,
                                   const std::string& checkpoint_path,
                                   bool calibrate, std::uint64_t seed_tag) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<BuiltStat> out;
  out.reserve(tokens.size());

  std::optional<double> norm_log;     // computed once if any kl needs it
  std::optional<Mat> calibration_set; // shared pre-change draws

  auto norm_ratio = [&]() {
    if (!norm_log) {
      Mat s1 = draw_batch_cfg(*pair.p_one, r.norm_samples,
                              derive_seed(r.seed, 910), r.mh.cfg,
                              r.mh.defaults, nullptr);
      norm_log = norm_ratio_estimate(pair, s1).log_ratio;
    }
    return *norm_log;
  };
  auto calib_draws = [&]() -> const Mat& {
    if (!calibration_set)
      calibration_set = draw_batch_cfg(*pair.p_inf, r.calibration_samples,
                                       derive_seed(r.seed, 920), r.mh.cfg,
                                       r.mh.defaults, nullptr);
    return *calibration_set;
  };
  auto add_diffusion = [&](const std::string& tok,
                           std::shared_ptr<const DiffusionFunction> m) {
    double k = nan;
    if (calibrate) {
      k = calibrate_scale(*m, pair, calib_draws());
      m = std::make_shared<ScaledDiffusion>(std::move(m), k);
    }
    out.push_back(BuiltStat{tok, DetectionStatistic::diffusion(pair, m), k,
                            nan});
  };

  for (const auto& tok : tokens) {
    if (tok == "kl") {
      if (pair.both_normalized()) {
        out.push_back(BuiltStat{tok, DetectionStatistic::kl(pair), nan, nan});
      } else {
        const double lr = norm_ratio();
        out.push_back(BuiltStat{
            tok, DetectionStatistic::kl_corrected(pair, lr), nan, lr});
      }
    } else if (tok == "fisher") {
      out.push_back(BuiltStat{tok, DetectionStatistic::fisher(pair), nan, nan});
    } else if (tok == "diffusion") {
      add_diffusion(tok, load_checkpoint(checkpoint_path, pair.dim()));
    } else if (tok == "diffusion-identity") {
      add_diffusion(tok, std::make_shared<ConstantDiffusion>(
                             Mat::Identity(pair.dim(), pair.dim())));
    } else if (tok == "diffusion-opt") {
      if (r.model_kind != "gaussian")
        throw ConfigError(
            "statistic 'diffusion-opt' is only defined for the gaussian "
            "model pair");
      add_diffusion(tok, std::make_shared<ConstantDiffusion>(gaussian_optimal(
                             reference_covariance())));
    } else {
      throw ConfigError("unknown statistic '" + tok + "'");
    }
  }
  (void)seed_tag;
  return out;
}

ordered_json stat_extras(const std::vector<BuiltStat>& stats) {
  ordered_json e = ordered_json::object();
  for (const auto& s : stats) {
    ordered_json row = ordered_json::object();
    row["kind"] = s.stat.name();
    if (std::isfinite(s.calibration))
      row["calibration_factor"] = format_g17(s.calibration);
    if (std::isfinite(s.norm_ratio_log))
      row["norm_ratio_log"] = format_g17(s.norm_ratio_log);
    e[s.token] = row;
  }
  return e;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_sample(const Resolved& r) {
  ensure_output_dir(r);
  ModelPair pair = build_reference_pair(r.model_kind, r.model_seed);

  struct Job {
    const char* name;
    const ScoreModel* model;
    std::size_t n;
    std::uint64_t tag;
  };
  const Job jobs[] = {
      {"train_inf", pair.p_inf.get(), r.n_train, 101},
      {"train_one", pair.p_one.get(), r.n_train, 102},
      {"test_inf", pair.p_inf.get(), r.n_test, 103},
      {"test_one", pair.p_one.get(), r.n_test, 104},
  };

  std::vector<std::pair<std::string, std::string>> outputs;
  ordered_json acceptance = ordered_json::object();
  for (const Job& job : jobs) {
    double acc = 1.0;
    Mat x = draw_batch_cfg(*job.model, job.n, derive_seed(r.seed, job.tag),
                           r.mh.cfg, r.mh.defaults, &acc);
    const std::string file = std::string(job.name) + ".csv";
    const std::string path = r.output_dir + "/" + file;
    write_matrix_csv(path, x);
    outputs.emplace_back(file, hash_file(path));
    acceptance[job.name] = format_g17(acc);
    std::cout << "wrote " << path << " (" << job.n << " rows)\n";
  }

  ordered_json extras;
  extras["sampler"] = pair.both_normalized() ? "direct" : "mh";
  extras["acceptance_rates"] = acceptance;
  write_manifest(r, "sample", outputs, extras);
  return 0;
}

int cmd_train(const Resolved& r) {
  ensure_output_dir(r);
  ModelPair pair = build_reference_pair(r.model_kind, r.model_seed);

  for (const std::string& path : {r.data_one, r.data_inf})
    if (!fs::exists(path))
      throw ConfigError("dataset file not found: " + path);
  Mat x_one = read_matrix_csv(r.data_one);
  Mat x_inf = read_matrix_csv(r.data_inf);
  if (x_one.cols() != pair.dim() || x_inf.cols() != pair.dim())
    throw ConfigError("dataset dimension does not match the model pair");

  ScoredBatch b_one = score_batch(pair, x_one);
  ScoredBatch b_inf = score_batch(pair, x_inf);

  MlpDiffusion m(pair.dim(), r.hidden, r.output_scale);
  m.init_params(derive_seed(r.seed, 200));

  TrainConfig tc;
  tc.lr = r.lr;
  tc.alpha = r.alpha;
  tc.l2 = r.l2;
  tc.epochs = r.epochs;
  tc.batch_size = r.batch_size;
  tc.seed = derive_seed(r.seed, 201);
  tc.objective = r.objective == "ht" ? Objective::kHt : Objective::kCpd;
  tc.threads = r.threads;
  TrainReport report = train(m, b_one, b_inf, tc);

  const std::string ckpt = r.output_dir + "/checkpoint.json";
  const std::string rep = r.output_dir + "/train_report.csv";
  write_text_file(ckpt, diffusion_to_json(m));
  write_train_report_csv(rep, report);
  std::cout << "wrote " << ckpt << "\n" << "wrote " << rep << "\n";

  std::vector<std::pair<std::string, std::string>> outputs{
      {"checkpoint.json", hash_file(ckpt)},
      {"train_report.csv", hash_file(rep)}};
  ordered_json extras;
  extras["steps"] = report.steps;
  extras["aborted"] = report.aborted;
  if (report.aborted) extras["abort_reason"] = report.abort_reason;
  if (!report.epochs.empty())
    extras["final_loss"] = format_g17(report.epochs.back().loss);
  write_manifest(r, "train", outputs, extras);

  if (report.aborted) {
    std::cerr << "training aborted: " << report.abort_reason
              << " (last finite parameters were saved)\n";
    return 3;
  }
  return 0;
}

int cmd_roc(const Resolved& r) {
  ensure_output_dir(r);
  ModelPair pair = build_reference_pair(r.model_kind, r.model_seed);
  std::vector<BuiltStat> stats = build_stats(r.roc_stats, pair, r,
                                             r.roc_checkpoint,
                                             /*calibrate=*/false, 300);
  std::vector<const DetectionStatistic*> ptrs;
  for (const auto& s : stats) ptrs.push_back(&s.stat);

  std::vector<std::pair<std::string, std::string>> outputs;
  for (std::size_t n : r.batch_sizes) {
    SumConfig sc;
    sc.n_batches = r.n_batches;
    sc.seed = derive_seed(r.seed, 300 + static_cast<std::uint64_t>(n));
    sc.threads = r.threads;
    sc.mh = r.mh.cfg;
    sc.mh_defaults = r.mh.defaults;
    BatchSumSet sums = batch_sums(ptrs, pair, n, sc);

    std::string csv = "statistic,batch_size,threshold,alpha,beta\n";
    for (std::size_t j = 0; j < stats.size(); ++j) {
      const auto col = static_cast<Eigen::Index>(j);
      std::vector<double> si(sums.sums_inf.rows()), so(sums.sums_one.rows());
      for (Eigen::Index b = 0; b < sums.sums_inf.rows(); ++b) {
        si[static_cast<std::size_t>(b)] = sums.sums_inf(b, col);
        so[static_cast<std::size_t>(b)] = sums.sums_one(b, col);
      }
      for (const RocPoint& p : roc_from_sums(si, so, n)) {
        csv += stats[j].token;
        csv += ",";
        csv += std::to_string(n);
        csv += ",";
        csv += format_g17(p.threshold);
        csv += ",";
        csv += format_g17(p.alpha);
        csv += ",";
        csv += format_g17(p.beta);
        csv += "\n";
      }
    }
    const std::string file = "roc_n" + std::to_string(n) + ".csv";
    const std::string path = r.output_dir + "/" + file;
    write_text_file(path, csv);
    outputs.emplace_back(file, hash_file(path));
    std::cout << "wrote " << path << "\n";
  }
  write_manifest(r, "roc", outputs, stat_extras(stats));
  return 0;
}

int cmd_arl_edd(const Resolved& r) {
  ensure_output_dir(r);
  ModelPair pair = build_reference_pair(r.model_kind, r.model_seed);
  std::vector<BuiltStat> stats = build_stats(r.ae_stats, pair, r,
                                             r.ae_checkpoint, r.calibrate,
                                             400);

  const double c_max =
      *std::max_element(r.thresholds.begin(), r.thresholds.end());
  PathConfig arl_pc;
  arl_pc.n_paths = r.n_paths;
  arl_pc.max_len = r.max_len > 0 ? r.max_len : default_max_len(c_max);
  arl_pc.seed = derive_seed(r.seed, 401);
  arl_pc.threads = r.threads;
  arl_pc.mh = r.mh.cfg;
  arl_pc.mh_defaults = r.mh.defaults;
  PathConfig edd_pc = arl_pc;
  edd_pc.max_len = r.edd_max_len;
  edd_pc.seed = derive_seed(r.seed, 402);

  std::string csv =
      "statistic,threshold,arl,arl_se,arl_censored_frac,edd,edd_se\n";
  for (const BuiltStat& s : stats) {
    for (double c : r.thresholds) {
      StoppingRunResult arl = estimate_arl(s.stat, pair, c, arl_pc);
      StoppingRunResult edd = estimate_edd(s.stat, pair, c, edd_pc);
      csv += s.token;
      csv += ",";
      csv += format_g17(c);
      csv += ",";
      csv += format_g17(arl.mean);
      csv += ",";
      csv += format_g17(arl.std_error);
      csv += ",";
      csv += format_g17(arl.censored_fraction);
      csv += ",";
      csv += format_g17(edd.mean);
      csv += ",";
      csv += format_g17(edd.std_error);
      csv += "\n";
    }
  }
  const std::string path = r.output_dir + "/arl_edd.csv";
  write_text_file(path, csv);
  std::cout << "wrote " << path << "\n";

  std::vector<std::pair<std::string, std::string>> outputs{
      {"arl_edd.csv", hash_file(path)}};
  write_manifest(r, "arl-edd", outputs, stat_extras(stats));
  return 0;
}

int cmd_verify(const Resolved& r) {
  ensure_output_dir(r);
  const std::string extra_id = "identities-checkpoint";

  std::vector<TheoremReport> reports;
  if (r.only != extra_id) {
    SuiteConfig sc;
    sc.seed = r.seed;
    sc.threads = r.threads;
    sc.paper_scale = r.paper_scale;
    sc.only = r.only;
    reports = run_suite(sc);
  } else if (r.verify_checkpoint.empty()) {
    throw ConfigError("verify.checkpoint must be set to run " + extra_id);
  }
  if (!r.verify_checkpoint.empty() && (r.only.empty() || r.only == extra_id)) {
    ModelPair pair = build_reference_pair(r.model_kind, r.model_seed);
    std::shared_ptr<DiffusionFunction> m =
        load_checkpoint(r.verify_checkpoint, pair.dim());
    const std::size_t n = r.paper_scale ? 100000 : 20000;
    reports.push_back(verify_identities(extra_id, pair, *m, n,
                                        derive_seed(r.seed, 500)));
  }

  std::vector<std::pair<std::string, std::string>> outputs;
  bool all_pass = true;
  for (const TheoremReport& rep : reports) {
    const std::string file = "verify_" + rep.id + ".json";
    const std::string path = r.output_dir + "/" + file;
    write_text_file(path, report_to_json(rep));
    outputs.emplace_back(file, hash_file(path));
    const char* status = rep.pass ? "pass"
                         : rep.inconclusive ? "INCONCLUSIVE"
                                            : "FAIL";
    std::cout << rep.id << ": " << status << "\n";
    all_pass = all_pass && rep.pass;
  }

  ordered_json extras;
  extras["reports"] = reports.size();
  extras["all_pass"] = all_pass;
  write_manifest(r, "verify", outputs, extras);
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Detection experiments for score-based and diffusion-divergence "
      "statistics: dataset generation, training, ROC sweeps, ARL/EDD "
      "simulation, and executable checks of the supporting results."};
  app.require_subcommand(1);

  CliOptions cli;
  std::uint64_t seed_val = 0;
  int threads_val = 0;
  app.add_option("--config", cli.config_path, "JSON config file");
  auto* seed_opt =
      app.add_option("--seed", seed_val, "override the config seed");
  auto* threads_opt = app.add_option("--threads", threads_val,
                                     "worker threads (0 = all hardware)");
  app.add_flag("--paper-scale", cli.paper_scale,
               "use the 10,000-count runs of the reference figures");
  app.add_option("--only", cli.only, "run a single verification item");

  auto* c_sample = app.add_subcommand(
      "sample", "draw train/test datasets for both models");
  auto* c_train =
      app.add_subcommand("train", "fit the diffusion matrix network");
  auto* c_roc = app.add_subcommand("roc", "batch-test ROC curves per n");
  auto* c_arl = app.add_subcommand("arl-edd",
                                   "CUSUM run-length and delay sweeps");
  auto* c_verify =
      app.add_subcommand("verify", "run the executable-check suite");
  for (CLI::App* sub : {c_sample, c_train, c_roc, c_arl, c_verify})
    sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (seed_opt->count() > 0) cli.seed = seed_val;
  if (threads_opt->count() > 0) cli.threads = threads_val;

  try {
    const Resolved r = resolve(load_config_file(cli.config_path), cli);
    if (c_sample->parsed()) return cmd_sample(r);
    if (c_train->parsed()) return cmd_train(r);
    if (c_roc->parsed()) return cmd_roc(r);
    if (c_arl->parsed()) return cmd_arl_edd(r);
    if (c_verify->parsed()) return cmd_verify(r);
    std::cerr << "no subcommand selected\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
