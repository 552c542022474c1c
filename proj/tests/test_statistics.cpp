#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>
#include <vector>

#include "diffdet/diffusion.hpp"
#include "diffdet/samplers.hpp"
#include "diffdet/score_model.hpp"
#include "diffdet/statistics.hpp"
#include "doctest.h"
#include "test_helpers.hpp"

using namespace diffdet;
using testutil::make_pair_1d;
using testutil::rel_err;

namespace {

Mat random_points(Eigen::Index n, Eigen::Index d, std::uint64_t seed,
                  double spread) {
  Rng rng(seed);
  Mat out(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) out(i, j) = spread * rng.normal();
  return out;
}

}  // namespace

TEST_CASE("kl statistic matches the 1-d closed form") {
  ModelPair pair = make_pair_1d();
  DetectionStatistic stat = DetectionStatistic::kl(pair);
  CHECK(stat.name() == "kl");
  for (double x : {0.0, 0.3, -1.2, 2.0}) {
    Vec v(1);
    v << x;
    CHECK(rel_err(stat.z(v), testutil::z_kl_1d(x)) < 1e-12);
  }
  Vec origin = Vec::Zero(1);
  CHECK(stat.z(origin) == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
  CHECK(stat.z(origin) == doctest::Approx(-0.6931).epsilon(1e-4));
}

TEST_CASE("fisher statistic matches the 1-d closed form") {
  ModelPair pair = make_pair_1d();
  DetectionStatistic stat = DetectionStatistic::fisher(pair);
  CHECK(stat.name() == "fisher");
  for (double x : {0.0, 0.7, -0.4, 1.9}) {
    Vec v(1);
    v << x;
    CHECK(rel_err(stat.z(v), testutil::z_f_1d(x)) < 1e-12);
  }
  Vec origin = Vec::Zero(1);
  CHECK(stat.z(origin) == doctest::Approx(-3.0).epsilon(1e-12));
}

TEST_CASE("identity diffusion reproduces the fisher statistic exactly") {
  for (const char* kind : {"gaussian", "gbrbm", "quartic"}) {
    CAPTURE(kind);
    ModelPair pair = build_reference_pair(kind, 0);
    const Eigen::Index d = static_cast<Eigen::Index>(pair.dim());
    ConstantDiffusion ident(Mat::Identity(d, d));
    DetectionStatistic fisher = DetectionStatistic::fisher(pair);
    DetectionStatistic diff = DetectionStatistic::diffusion_ref(pair, ident);
    CHECK(diff.name() == "diffusion");
    Mat pts = random_points(1000, d, 7101, 1.5);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      Vec x = pts.row(i).transpose();
      double a = fisher.z(x);
      double b = diff.z(x);
      worst = std::max(worst, std::abs(a - b));
    }
    CHECK(worst == 0.0);
  }
}

TEST_CASE("kl on an unnormalized pair is rejected, corrected form works") {
  auto base = std::make_shared<GaussianModel>(Vec::Zero(1), Mat::Identity(1, 1));
  ModelPair pair(std::make_shared<testutil::ShiftedModel>(base, 0.9),
                 std::make_shared<testutil::ShiftedModel>(base, -0.4));
  CHECK(!pair.both_normalized());
  CHECK_THROWS_AS(DetectionStatistic::kl(pair), ConfigError);

  DetectionStatistic stat = DetectionStatistic::kl_corrected(pair, 1.3);
  Vec x(1);
  x << 0.6;
  double expected =
      pair.p_one->log_density(x) - pair.p_inf->log_density(x) + 1.3;
  CHECK(stat.z(x) == expected);
  CHECK_THROWS_AS(
      DetectionStatistic::kl_corrected(pair,
                                       std::numeric_limits<double>::quiet_NaN()),
      ConfigError);
}

TEST_CASE("monte carlo divergence recovers the 1-d closed forms") {
  ModelPair pair = make_pair_1d();
  const auto* inf_model = dynamic_cast<const GaussianModel*>(pair.p_inf.get());
  const auto* one_model = dynamic_cast<const GaussianModel*>(pair.p_one.get());
  REQUIRE(inf_model != nullptr);
  REQUIRE(one_model != nullptr);

  Mat from_one = sample_gaussian(*one_model, 20000, 501);
  DivergenceEstimate post = divergence_mc(pair, Direction::kOneToInf, nullptr,
                                          from_one);
  CHECK(post.n == 20000);
  CHECK(std::abs(post.value - 4.5) <= 4.0 * post.std_error);

  Mat from_inf = sample_gaussian(*inf_model, 20000, 502);
  DivergenceEstimate pre = divergence_mc(pair, Direction::kInfToOne, nullptr,
                                         from_inf);
  CHECK(std::abs(pre.value - 1.125) <= 4.0 * pre.std_error);

  CHECK_THROWS_AS(divergence_mc(pair, Direction::kOneToInf, nullptr, Mat(0, 1)),
                  std::invalid_argument);
}

TEST_CASE("divergence scales quadratically in a constant diffusion factor") {
  ModelPair pair = make_pair_1d();
  const auto* one_model = dynamic_cast<const GaussianModel*>(pair.p_one.get());
  REQUIRE(one_model != nullptr);
  Mat samples = sample_gaussian(*one_model, 4000, 503);

  DivergenceEstimate base = divergence_mc(pair, Direction::kOneToInf, nullptr,
                                          samples);
  ConstantDiffusion twice(2.0 * Mat::Identity(1, 1));
  DivergenceEstimate scaled = divergence_mc(pair, Direction::kOneToInf, &twice,
                                            samples);
  CHECK(rel_err(scaled.value, 4.0 * base.value) < 1e-12);
  CHECK(rel_err(scaled.std_error, 4.0 * base.std_error) < 1e-12);
}

TEST_CASE("integration-by-parts identity holds on the 1-d pair") {
  ModelPair pair = make_pair_1d();
  const auto* one_model = dynamic_cast<const GaussianModel*>(pair.p_one.get());
  REQUIRE(one_model != nullptr);
  Mat from_one = sample_gaussian(*one_model, 20000, 504);
  ConstantDiffusion ident(Mat::Identity(1, 1));

  PairedCheck check = hyvarinen_identity_check(*pair.p_one, *pair.p_inf, ident,
                                               from_one);
  CHECK(check.n == 20000);
  CHECK(check.pass());
  // lhs is the direct divergence integrand; its mean is D(P_1||P_inf) = 4.5.
  CHECK(std::abs(check.lhs - 4.5) <= 4.0 * check.lhs_se);
  CHECK_THROWS_AS(
      hyvarinen_identity_check(*pair.p_one, *pair.p_inf, ident, Mat(0, 1)),
      std::invalid_argument);
}

TEST_CASE("normalization ratio is exact for a constant density ratio") {
  auto base = std::make_shared<GaussianModel>(Vec::Zero(2),
                                              Mat::Identity(2, 2));
  ModelPair pair(std::make_shared<testutil::ShiftedModel>(base, 0.0),
                 std::make_shared<testutil::ShiftedModel>(base, 0.0));
  Mat samples = sample_gaussian(*base, 2000, 505);
  NormRatioEstimate est = norm_ratio_estimate(pair, samples);
  CHECK(est.log_ratio == 0.0);
  CHECK(est.std_error == 0.0);
  CHECK(est.n == 2000);

  // Shifting log p~ by a constant shifts the log normalizer by the same
  // constant, again with zero variance.
  pair.p_inf = std::make_shared<testutil::ShiftedModel>(base, 0.75);
  est = norm_ratio_estimate(pair, samples);
  CHECK(est.log_ratio == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(est.std_error == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("normalization ratio recovers a genuine importance-sampling value") {
  // p~_inf is a shifted N(0, 1/4) density, so its normalizer is exp(shift)
  // while p_one = N(0,1) is exactly normalized: the true log ratio is shift.
  const double shift = 0.6;
  auto narrow = std::make_shared<GaussianModel>(
      Vec::Zero(1), 0.25 * Mat::Identity(1, 1));
  auto wide = std::make_shared<GaussianModel>(Vec::Zero(1),
                                              Mat::Identity(1, 1));
  ModelPair pair(std::make_shared<testutil::ShiftedModel>(narrow, shift),
                 wide);
  Mat from_one = sample_gaussian(*wide, 20000, 506);
  NormRatioEstimate est = norm_ratio_estimate(pair, from_one);
  CHECK(est.std_error > 0.0);
  CHECK(std::abs(est.log_ratio - shift) <= 3.0 * est.std_error);

  CHECK_THROWS_AS(norm_ratio_estimate(pair, from_one.topRows(999)),
                  std::invalid_argument);
}

TEST_CASE("drift check matches the signed divergences on the 1-d pair") {
  ModelPair pair = make_pair_1d();
  const auto* inf_model = dynamic_cast<const GaussianModel*>(pair.p_inf.get());
  const auto* one_model = dynamic_cast<const GaussianModel*>(pair.p_one.get());
  REQUIRE(inf_model != nullptr);
  REQUIRE(one_model != nullptr);
  Mat from_inf = sample_gaussian(*inf_model, 20000, 507);
  Mat from_one = sample_gaussian(*one_model, 20000, 508);
  ConstantDiffusion ident(Mat::Identity(1, 1));

  DriftCheckReport rep = drift_check(pair, ident, from_inf, from_one);
  CHECK(rep.pass());
  CHECK(rep.separation);
  CHECK(std::abs(rep.pre.lhs - (-1.125)) <= 4.0 * rep.pre.lhs_se);
  CHECK(std::abs(rep.post.lhs - 4.5) <= 4.0 * rep.post.lhs_se);
  CHECK_THROWS_AS(drift_check(pair, ident, Mat(0, 1), from_one),
                  std::invalid_argument);
}

TEST_CASE("batch sum equals the ordered sum of per-sample scores") {
  ModelPair pair = make_pair_1d();
  DetectionStatistic stat = DetectionStatistic::fisher(pair);
  Mat batch = random_points(37, 1, 509, 1.0);
  double manual = 0.0;
  for (Eigen::Index i = 0; i < batch.rows(); ++i)
    manual += stat.z(batch.row(i).transpose());
  CHECK(stat.batch_sum(batch) == manual);
  CHECK(stat.batch_sum(Mat(0, 1)) == 0.0);
}

TEST_CASE("score-based statistics ignore additive log-density constants") {
  ModelPair pair = make_pair_1d();
  ModelPair shifted(std::make_shared<testutil::ShiftedModel>(pair.p_inf, 11.0),
                    std::make_shared<testutil::ShiftedModel>(pair.p_one, -6.0));

  DetectionStatistic f0 = DetectionStatistic::fisher(pair);
  DetectionStatistic f1 = DetectionStatistic::fisher(shifted);
  ConstantDiffusion ident(Mat::Identity(1, 1));
  DetectionStatistic d0 = DetectionStatistic::diffusion_ref(pair, ident);
  DetectionStatistic d1 = DetectionStatistic::diffusion_ref(shifted, ident);
  Mat pts = random_points(200, 1, 510, 1.5);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    Vec x = pts.row(i).transpose();
    CHECK(f0.z(x) == f1.z(x));
    CHECK(d0.z(x) == d1.z(x));
  }
}

TEST_CASE("per-sample score table has a fixed format and is reproducible") {
  ModelPair pair = make_pair_1d();
  DetectionStatistic kl = DetectionStatistic::kl(pair);
  DetectionStatistic fisher = DetectionStatistic::fisher(pair);
  Mat pts = random_points(5, 1, 511, 1.0);

  const std::string dir = testutil::make_temp_dir("zcsv");
  const std::string path_a = dir + "/z_a.csv";
  const std::string path_b = dir + "/z_b.csv";
  std::vector<const DetectionStatistic*> stats = {&kl, &fisher};
  write_z_csv(path_a, pts, stats);
  write_z_csv(path_b, pts, stats);

  auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  const std::string a = slurp(path_a);
  CHECK(a == slurp(path_b));

  std::istringstream lines(a);
  std::string header;
  REQUIRE(std::getline(lines, header));
  CHECK(header == "sample_index,z_kl,z_fisher");
  std::string row;
  std::size_t rows = 0;
  double first_kl = 0.0;
  while (std::getline(lines, row)) {
    if (row.empty()) continue;
    if (rows == 0) {
      std::istringstream cells(row);
      std::string cell;
      REQUIRE(std::getline(cells, cell, ','));
      CHECK(cell == "0");
      REQUIRE(std::getline(cells, cell, ','));
      first_kl = std::stod(cell);
    }
    ++rows;
  }
  CHECK(rows == 5);
  CHECK(rel_err(first_kl, kl.z(pts.row(0).transpose())) < 1e-15);
}
