#pragma once

// Shared fixtures and oracles for the unit and acceptance tests: closed-form
// 1-d model pairs, finite-difference gradients, a brute-force CUSUM, and
// small wrapper models for invariance checks.

#include <sys/wait.h>

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "diffdet/common.hpp"
#include "diffdet/score_model.hpp"

namespace testutil {

using diffdet::Mat;
using diffdet::Vec;

// P_inf = N(0, 1/4), P_one = N(0, 1). Closed forms:
//   z_kl(x) = 1.5 x^2 - log 2
//   z_f(x)  = 7.5 x^2 - 3
//   D_F(P_one || P_inf) = 4.5,  D_F(P_inf || P_one) = 1.125
inline diffdet::ModelPair make_pair_1d() {
  Vec mu = Vec::Zero(1);
  Mat v_inf(1, 1), v_one(1, 1);
  v_inf << 0.25;
  v_one << 1.0;
  return diffdet::ModelPair(
      std::make_shared<diffdet::GaussianModel>(mu, v_inf),
      std::make_shared<diffdet::GaussianModel>(mu, v_one));
}

inline double z_kl_1d(double x) { return 1.5 * x * x - std::log(2.0); }
inline double z_f_1d(double x) { return 7.5 * x * x - 3.0; }

/// Stop time of the CUSUM rule evaluated from the definition: at each t the
/// statistic is the max over 0 and all suffix sums ending at t, each suffix
/// accumulated left to right. Matches the recursion bit for bit because
/// floating-point rounding is monotone. Returns 0 when the threshold is
/// never reached.
inline std::uint64_t cusum_brute_force(const std::vector<double>& z,
                                       double c) {
  for (std::size_t t = 0; t < z.size(); ++t) {
    double best = 0.0;
    for (std::size_t k = 0; k <= t; ++k) {
      double s = 0.0;
      for (std::size_t i = k; i <= t; ++i) s += z[i];
      best = std::max(best, s);
    }
    if (best >= c) return static_cast<std::uint64_t>(t + 1);
  }
  return 0;
}

inline Vec fd_gradient(const std::function<double(const Vec&)>& f,
                       const Vec& x, double h) {
  Vec g(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    Vec xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    g[j] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

/// J(i, j) = d f_i / d x_j by central differences.
inline Mat fd_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x,
                       double h) {
  Vec f0 = f(x);
  Mat j(f0.size(), x.size());
  for (Eigen::Index c = 0; c < x.size(); ++c) {
    Vec xp = x, xm = x;
    xp[c] += h;
    xm[c] -= h;
    j.col(c) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return j;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1e-12, std::abs(a), std::abs(b)});
}

inline double rel_err_vec(const Vec& a, const Vec& b) {
  return (a - b).norm() / std::max({1e-12, a.norm(), b.norm()});
}

inline double rel_err_mat(const Mat& a, const Mat& b) {
  return (a - b).norm() / std::max({1e-12, a.norm(), b.norm()});
}

/// Same distribution as the wrapped model but with a constant added to the
/// unnormalized log-density; reports itself unnormalized. Used for the
/// additive-invariance and normalization-ratio checks.
class ShiftedModel : public diffdet::ScoreModel {
 public:
  ShiftedModel(std::shared_ptr<const diffdet::ScoreModel> base, double shift)
      : base_(std::move(base)), shift_(shift) {}

  Eigen::Index dim() const override { return base_->dim(); }
  std::string kind() const override { return base_->kind(); }
  bool normalized() const override { return false; }
  double log_density(const Vec& x) const override {
    return base_->log_density(x) + shift_;
  }
  Vec score(const Vec& x) const override { return base_->score(x); }
  Mat score_jacobian(const Vec& x) const override {
    return base_->score_jacobian(x);
  }

 private:
  std::shared_ptr<const diffdet::ScoreModel> base_;
  double shift_;
};

/// Flat unnormalized density (log p~ = 0 everywhere): every random-walk
/// proposal is accepted.
class FlatModel : public diffdet::ScoreModel {
 public:
  explicit FlatModel(Eigen::Index d) : d_(d) {}
  Eigen::Index dim() const override { return d_; }
  std::string kind() const override { return "flat"; }
  bool normalized() const override { return false; }
  double log_density(const Vec&) const override { return 0.0; }
  Vec score(const Vec&) const override { return Vec::Zero(d_); }
  Mat score_jacobian(const Vec&) const override { return Mat::Zero(d_, d_); }

 private:
  Eigen::Index d_;
};

/// Standard normal exposed as an unnormalized model, so batch draws go
/// through the Metropolis-Hastings path instead of direct sampling.
class UnnormStdNormal : public diffdet::ScoreModel {
 public:
  explicit UnnormStdNormal(Eigen::Index d) : d_(d) {}
  Eigen::Index dim() const override { return d_; }
  std::string kind() const override { return "unnorm-normal"; }
  bool normalized() const override { return false; }
  double log_density(const Vec& x) const override {
    return -0.5 * x.squaredNorm();
  }
  Vec score(const Vec& x) const override { return -x; }
  Mat score_jacobian(const Vec& x) const override {
    return -Mat::Identity(x.size(), x.size());
  }

 private:
  Eigen::Index d_;
};

/// Fresh empty directory under the system temp root; wiped first so reruns
/// start clean.
inline std::string make_temp_dir(const std::string& tag) {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / ("diffdet_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

#ifdef DIFFDET_CLI_PATH
struct CliResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr combined
};

/// Runs the CLI binary with the given arguments, capturing combined output.
inline CliResult run_cli(const std::string& args, const std::string& workdir) {
  namespace fs = std::filesystem;
  const std::string out_file =
      (fs::path(workdir) / "cli_output.txt").string();
  const std::string cmd = "cd '" + workdir + "' && '" + DIFFDET_CLI_PATH +
                          "' " + args + " > '" + out_file + "' 2>&1";
  const int raw = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = (raw == -1) ? -1 : WEXITSTATUS(raw);
  FILE* f = std::fopen(out_file.c_str(), "rb");
  if (f) {
    char buf[4096];
    std::size_t got;
    while ((got = std::fread(buf, 1, sizeof(buf), f)) > 0)
      r.output.append(buf, got);
    std::fclose(f);
  }
  return r;
}
#endif

}  // namespace testutil
