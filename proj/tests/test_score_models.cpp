#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>

#include "diffdet/rng.hpp"
#include "diffdet/score_model.hpp"
#include "test_helpers.hpp"

using namespace diffdet;
using namespace testutil;

namespace {

Mat random_spd(Eigen::Index d, std::uint64_t seed) {
  Rng rng(seed);
  Mat a(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) a(i, j) = rng.normal();
  return a * a.transpose() + 0.5 * Mat::Identity(d, d);
}

void check_derivatives(const ScoreModel& model, const Vec& x, double tol) {
  Vec s = model.score(x);
  Vec s_fd = fd_gradient([&](const Vec& y) { return model.log_density(y); },
                         x, 1e-5);
  CHECK(rel_err_vec(s, s_fd) < tol);

  Mat h = model.score_jacobian(x);
  Mat h_fd =
      fd_jacobian([&](const Vec& y) { return model.score(y); }, x, 1e-5);
  CHECK(rel_err_mat(h, h_fd) < tol);
}

}  // namespace

TEST_CASE("gaussian closed forms in one dimension") {
  Vec mu = Vec::Zero(1);
  Mat v(1, 1);
  v << 0.25;
  GaussianModel g(mu, v);

  Vec x(1);
  x << 0.5;
  CHECK(g.score(x)[0] == doctest::Approx(-2.0).epsilon(1e-12));
  CHECK(g.score_jacobian(x)(0, 0) == doctest::Approx(-4.0).epsilon(1e-12));
  // log pdf at the mean: -1/2 log(2 pi v)
  Vec zero = Vec::Zero(1);
  CHECK(g.log_density(zero) ==
        doctest::Approx(-0.5 * std::log(2.0 * M_PI * 0.25)).epsilon(1e-12));
}

TEST_CASE("gaussian derivatives match finite differences") {
  const Eigen::Index d = 3;
  Vec mu(d);
  mu << 0.3, -1.2, 0.7;
  GaussianModel g(mu, random_spd(d, 11));
  Rng rng(12);
  for (int rep = 0; rep < 5; ++rep)
    check_derivatives(g, rng.normal_vec(d) * 1.5, 1e-6);
}

TEST_CASE("gbrbm reduces to a shifted gaussian when w is zero") {
  const Eigen::Index d = 3, h = 4;
  Vec mu(d);
  mu << 0.5, -0.25, 1.0;
  Mat sigma = random_spd(d, 21);
  Vec phi = Vec::Zero(h);
  GbRbmModel rbm(mu, sigma, Mat::Zero(d, h), phi);
  GaussianModel g(mu, sigma);

  Rng rng(22);
  for (int rep = 0; rep < 5; ++rep) {
    Vec x = rng.normal_vec(d);
    CHECK(rel_err_vec(rbm.score(x), g.score(x)) < 1e-12);
    CHECK(rel_err_mat(rbm.score_jacobian(x), g.score_jacobian(x)) < 1e-12);
    // Unnormalized log-density differs from the normalized gaussian one by a
    // constant: h*softplus(0) = h*log 2 from the latent term, plus the
    // gaussian normalizer the rbm omits.
    const double diff = rbm.log_density(x) - g.log_density(x);
    const double expected =
        static_cast<double>(h) * std::log(2.0) +
        0.5 * (static_cast<double>(d) * std::log(2.0 * M_PI) +
               g.log_det_sigma());
    CHECK(diff == doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("gbrbm derivatives match finite differences") {
  const Eigen::Index d = 3, h = 2;
  Rng rng(31);
  Vec mu = rng.normal_vec(d);
  Mat sigma = random_spd(d, 32);
  Mat w(d, h);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < h; ++j) w(i, j) = rng.normal();
  Vec phi = rng.normal_vec(h);
  GbRbmModel rbm(mu, sigma, w, phi);
  for (int rep = 0; rep < 5; ++rep)
    check_derivatives(rbm, rng.normal_vec(d), 1e-6);
}

TEST_CASE("quartic closed forms and finite differences") {
  Vec mu0 = Vec::Zero(1);
  Mat one = Mat::Identity(1, 1);
  QuarticModel q(mu0, one);  // log p~ = -x^4

  Vec x(1);
  x << 2.0;
  CHECK(q.log_density(x) == doctest::Approx(-16.0).epsilon(1e-12));
  CHECK(q.score(x)[0] == doctest::Approx(-32.0).epsilon(1e-12));
  Vec x1(1);
  x1 << 1.0;
  CHECK(q.score_jacobian(x1)(0, 0) == doctest::Approx(-12.0).epsilon(1e-12));

  const Eigen::Index d = 3;
  Rng rng(41);
  QuarticModel q3(rng.normal_vec(d), random_spd(d, 42));
  for (int rep = 0; rep < 5; ++rep)
    check_derivatives(q3, rng.normal_vec(d), 1e-5);
}

TEST_CASE("reference pairs have dimension eight and expected normalization") {
  for (const char* kind : {"gaussian", "gbrbm", "quartic"}) {
    ModelPair pair = build_reference_pair(kind, 7);
    CHECK(pair.dim() == 8);
    CHECK(pair.p_inf->kind() == kind);
    CHECK(pair.both_normalized() == (std::string(kind) == "gaussian"));
  }
}

TEST_CASE("reference covariance is symmetric positive definite") {
  Mat v = reference_covariance();
  CHECK(v.rows() == 8);
  CHECK((v - v.transpose()).norm() == 0.0);
  Eigen::SelfAdjointEigenSolver<Mat> es(v);
  CHECK(es.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("gbrbm reference pair is seed-deterministic") {
  ModelPair a = build_reference_pair("gbrbm", 5);
  ModelPair b = build_reference_pair("gbrbm", 5);
  ModelPair c = build_reference_pair("gbrbm", 6);
  Rng rng(51);
  Vec x = rng.normal_vec(8);
  CHECK(a.p_one->log_density(x) == b.p_one->log_density(x));
  CHECK(a.p_one->log_density(x) != c.p_one->log_density(x));
}

TEST_CASE("unknown reference kind throws a configuration error") {
  CHECK_THROWS_AS(build_reference_pair("triangular", 0), ConfigError);
}

TEST_CASE("model json round trip preserves evaluations exactly") {
  Rng rng(61);
  for (const char* kind : {"gaussian", "gbrbm", "quartic"}) {
    ModelPair pair = build_reference_pair(kind, 9);
    auto restored = model_from_json(model_to_json(*pair.p_one));
    for (int rep = 0; rep < 3; ++rep) {
      Vec x = rng.normal_vec(8);
      CHECK(restored->log_density(x) == pair.p_one->log_density(x));
      CHECK((restored->score(x) - pair.p_one->score(x)).norm() == 0.0);
    }
  }
}

TEST_CASE("dimension mismatch and non-finite input are rejected") {
  ModelPair pair = build_reference_pair("gaussian", 0);
  Vec bad = Vec::Zero(3);
  CHECK_THROWS_AS(pair.p_inf->score(bad), std::invalid_argument);
  Vec nan_in = Vec::Zero(8);
  nan_in[2] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(pair.p_inf->log_density(nan_in), std::invalid_argument);
}

TEST_CASE("softplus and sigmoid are stable at extremes") {
  CHECK(softplus(800.0) == doctest::Approx(800.0).epsilon(1e-15));
  CHECK(softplus(-800.0) == 0.0);
  CHECK(sigmoid(800.0) == 1.0);
  CHECK(sigmoid(-800.0) == 0.0);
  CHECK(sigmoid(0.0) == doctest::Approx(0.5).epsilon(1e-15));
}
