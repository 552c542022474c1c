#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>
#include <vector>

#include "diffdet/samplers.hpp"
#include "diffdet/score_model.hpp"
#include "diffdet/statistics.hpp"
#include "diffdet/training.hpp"
#include "doctest.h"
#include "test_helpers.hpp"

using namespace diffdet;
using testutil::make_pair_1d;
using testutil::rel_err;

namespace {

ScoredBatch scored_from(const ModelPair& pair, const Mat& samples) {
  return score_batch(pair, samples);
}

Mat column(std::initializer_list<double> xs) {
  Mat out(static_cast<Eigen::Index>(xs.size()), 1);
  Eigen::Index i = 0;
  for (double v : xs) out(i++, 0) = v;
  return out;
}

/// d = 1 network pinned to a constant output: W2 = 0 makes the input
/// Jacobian vanish and the output equals output_scale * b2.
MlpDiffusion constant_net(double b2_value, double scale) {
  MlpDiffusion mlp(1, 3, scale);
  Vec p(mlp.param_count());
  p << 0.3, -0.8, 1.1,    // W1
       0.1, 0.2, -0.4,    // b1
       0.0, 0.0, 0.0,     // W2
       b2_value;          // b2
  mlp.set_params(p);
  return mlp;
}

ModelPair gaussian_pair_2d() {
  Vec mu1(2);
  mu1 << 0.5, -0.3;
  Mat sig1(2, 2);
  sig1 << 1.2, 0.2,
          0.2, 0.8;
  return ModelPair(
      std::make_shared<GaussianModel>(Vec::Zero(2), Mat::Identity(2, 2)),
      std::make_shared<GaussianModel>(mu1, sig1));
}

}  // namespace

TEST_CASE("scoring a batch precomputes the model differences") {
  ModelPair pair = make_pair_1d();
  Mat x = column({1.0, -2.0, 0.5});
  ScoredBatch b = scored_from(pair, x);
  REQUIRE(b.n() == 3);
  REQUIRE(b.dim() == 1);
  for (Eigen::Index i = 0; i < 3; ++i) {
    const double xi = x(i, 0);
    CHECK(b.s_inf(i, 0) == -4.0 * xi);
    CHECK(b.s_one(i, 0) == -xi);
    CHECK(b.ds(i, 0) == -3.0 * xi);
    CHECK(b.dh[static_cast<std::size_t>(i)](0, 0) == -3.0);
  }
}

TEST_CASE("change-point loss matches the constant-diffusion closed form") {
  ModelPair pair = make_pair_1d();
  ScoredBatch post = scored_from(pair, column({1.0, -1.0, 2.0}));
  ScoredBatch pre = scored_from(pair, column({0.5}));

  const double scale = 0.25;
  const double b2v = 1.4;
  MlpDiffusion mlp = constant_net(b2v, scale);
  const double m = scale * b2v;
  const double m2 = m * m;

  // Constant output, vanishing Jacobian.
  Vec probe(1);
  probe << 0.37;
  CHECK(rel_err(mlp.eval(probe)(0, 0), m) < 1e-14);
  CHECK(mlp.input_jacobian(probe)[0](0, 0) == 0.0);

  const double alpha = 2.0;
  LossResult res = loss_cpd(mlp, post, pre, alpha);
  // E over {1,-1,2} of 4.5 m^2 x^2 = 9 m^2; z(0.5) = -1.125 m^2.
  CHECK(rel_err(res.divergence_term, -9.0 * m2) < 1e-10);
  const double g = -1.125 * m2;
  CHECK(rel_err(res.penalty_term, alpha * g * g) < 1e-10);
  CHECK(rel_err(res.constraint_value, std::exp(g)) < 1e-10);
  CHECK(rel_err(res.loss, -9.0 * m2 + alpha * g * g) < 1e-10);

  // Doubling the output scale quadruples the divergence term.
  MlpDiffusion wider = constant_net(b2v, 2.0 * scale);
  LossResult res2 = loss_cpd(wider, post, pre, alpha);
  CHECK(rel_err(res2.divergence_term, 4.0 * res.divergence_term) < 1e-12);

  // With alpha = 0 the penalty vanishes but the constraint is still reported.
  LossResult free = loss_cpd(mlp, post, pre, 0.0);
  CHECK(free.penalty_term == 0.0);
  CHECK(rel_err(free.constraint_value, std::exp(g)) < 1e-10);
  CHECK(free.loss == free.divergence_term);
}

TEST_CASE("analytic loss gradients agree with finite differences") {
  ModelPair pair = gaussian_pair_2d();
  Rng rng(801);
  Mat x1(16, 2), xinf(16, 2);
  for (Eigen::Index i = 0; i < 16; ++i)
    for (Eigen::Index j = 0; j < 2; ++j) {
      x1(i, j) = rng.normal();
      xinf(i, j) = rng.normal();
    }
  ScoredBatch post = scored_from(pair, x1);
  ScoredBatch pre = scored_from(pair, xinf);

  MlpDiffusion mlp(2, 3, 0.1);
  mlp.init_params(802);
  const double alpha = 3.0;

  for (int objective = 0; objective < 2; ++objective) {
    CAPTURE(objective);
    auto eval = [&](const MlpDiffusion& net) {
      return objective == 0 ? loss_cpd(net, post, pre, alpha)
                            : loss_ht(net, pre, post, alpha);
    };
    LossResult res = eval(mlp);
    REQUIRE(res.grad.size() == mlp.param_count());

    const double h = 1e-6;
    Vec base = mlp.params();
    Vec numeric(base.size());
    for (Eigen::Index p = 0; p < base.size(); ++p) {
      MlpDiffusion probe = mlp;
      Vec theta = base;
      theta(p) = base(p) + h;
      probe.set_params(theta);
      const double up = eval(probe).loss;
      theta(p) = base(p) - h;
      probe.set_params(theta);
      const double down = eval(probe).loss;
      numeric(p) = (up - down) / (2.0 * h);
    }
    CHECK(testutil::rel_err_vec(numeric, res.grad) < 1e-4);
  }
}

TEST_CASE("hypothesis-test loss mirrors the change-point loss") {
  ModelPair pair = gaussian_pair_2d();
  ModelPair swapped(pair.p_one, pair.p_inf);

  Rng rng(803);
  Mat x_inf(12, 2), x_one(12, 2);
  for (Eigen::Index i = 0; i < 12; ++i)
    for (Eigen::Index j = 0; j < 2; ++j) {
      x_inf(i, j) = rng.normal();
      x_one(i, j) = rng.normal();
    }

  MlpDiffusion mlp(2, 4, 0.1);
  mlp.init_params(804);
  const double alpha = 5.0;

  // Same sample matrices, scored under the original and the exchanged pair.
  LossResult ht = loss_ht(mlp, scored_from(pair, x_inf),
                          scored_from(pair, x_one), alpha);
  LossResult cpd = loss_cpd(mlp, scored_from(swapped, x_inf),
                            scored_from(swapped, x_one), alpha);
  CHECK(rel_err(ht.loss, cpd.loss) < 1e-12);
  CHECK(rel_err(ht.divergence_term, cpd.divergence_term) < 1e-12);
  CHECK(rel_err(ht.penalty_term, cpd.penalty_term) < 1e-12);
  CHECK(rel_err(ht.constraint_value, cpd.constraint_value) < 1e-12);
  CHECK((ht.grad - cpd.grad).norm() <=
        1e-12 * (1.0 + cpd.grad.norm()));
}

TEST_CASE("loss inputs are validated") {
  ModelPair pair = make_pair_1d();
  ScoredBatch post = scored_from(pair, column({1.0, -1.0}));
  ScoredBatch pre = scored_from(pair, column({0.5, 0.2}));
  MlpDiffusion mlp(1, 3, 0.1);
  mlp.init_params(805);

  std::vector<std::size_t> empty;
  std::vector<std::size_t> oob = {7};
  CHECK_THROWS_AS(loss_cpd(mlp, post, pre, 1.0, &empty, nullptr),
                  std::invalid_argument);
  CHECK_THROWS_AS(loss_cpd(mlp, post, pre, 1.0, nullptr, &oob),
                  std::invalid_argument);
  CHECK_THROWS_AS(loss_cpd(mlp, post, pre, -1.0), std::invalid_argument);

  MlpDiffusion wrong_dim(2, 3, 0.1);
  wrong_dim.init_params(806);
  CHECK_THROWS_AS(loss_cpd(wrong_dim, post, pre, 1.0), std::invalid_argument);
}

TEST_CASE("training is deterministic and reduces the full-batch loss") {
  ModelPair pair = make_pair_1d();
  const auto* inf_model = dynamic_cast<const GaussianModel*>(pair.p_inf.get());
  const auto* one_model = dynamic_cast<const GaussianModel*>(pair.p_one.get());
  REQUIRE(inf_model != nullptr);
  REQUIRE(one_model != nullptr);
  ScoredBatch post = scored_from(pair, sample_gaussian(*one_model, 200, 807));
  ScoredBatch pre = scored_from(pair, sample_gaussian(*inf_model, 200, 808));

  TrainConfig cfg;
  cfg.lr = 0.02;
  cfg.alpha = 10.0;
  cfg.epochs = 30;
  cfg.batch_size = 50;
  cfg.seed = 809;

  MlpDiffusion a(1, 8, 0.1);
  a.init_params(810);
  const double before = loss_cpd(a, post, pre, cfg.alpha).loss;
  TrainReport ra = train(a, post, pre, cfg);
  CHECK(!ra.aborted);
  CHECK(ra.epochs.size() == 30);
  CHECK(ra.steps == 30 * 4);
  const double after = loss_cpd(a, post, pre, cfg.alpha).loss;
  CHECK(after < before);

  MlpDiffusion b(1, 8, 0.1);
  b.init_params(810);
  TrainReport rb = train(b, post, pre, cfg);
  CHECK(a.params() == b.params());
  REQUIRE(ra.epochs.size() == rb.epochs.size());
  for (std::size_t e = 0; e < ra.epochs.size(); ++e)
    CHECK(ra.epochs[e].loss == rb.epochs[e].loss);

  MlpDiffusion c(1, 8, 0.1);
  c.init_params(810);
  TrainConfig other = cfg;
  other.seed = 811;
  train(c, post, pre, other);
  CHECK(a.params() != c.params());
}

TEST_CASE("a poisoned batch aborts training with parameters restored") {
  ModelPair pair = make_pair_1d();
  ScoredBatch post = scored_from(pair, column({1.0, -1.0, 0.5, 2.0}));
  ScoredBatch pre = scored_from(pair, column({0.3, -0.2, 0.8, -1.1}));
  post.ds(1, 0) = std::numeric_limits<double>::quiet_NaN();

  MlpDiffusion mlp(1, 3, 0.1);
  mlp.init_params(812);
  Vec init = mlp.params();

  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.seed = 813;
  TrainReport report = train(mlp, post, pre, cfg);
  CHECK(report.aborted);
  CHECK(report.steps == 0);
  CHECK(!report.abort_reason.empty());
  CHECK(mlp.params() == init);
}

TEST_CASE("an exploding learning rate aborts instead of emitting junk") {
  ModelPair pair = make_pair_1d();
  const auto* one_model = dynamic_cast<const GaussianModel*>(pair.p_one.get());
  const auto* inf_model = dynamic_cast<const GaussianModel*>(pair.p_inf.get());
  REQUIRE(one_model != nullptr);
  REQUIRE(inf_model != nullptr);
  ScoredBatch post = scored_from(pair, sample_gaussian(*one_model, 64, 814));
  ScoredBatch pre = scored_from(pair, sample_gaussian(*inf_model, 64, 815));

  MlpDiffusion mlp(1, 3, 0.1);
  mlp.init_params(816);
  TrainConfig cfg;
  cfg.lr = 1e20;
  cfg.epochs = 5;
  cfg.batch_size = 4;
  cfg.seed = 817;
  TrainReport report = train(mlp, post, pre, cfg);
  CHECK(report.aborted);
  CHECK(!report.abort_reason.empty());
  CHECK(mlp.params().array().isFinite().all());
}

TEST_CASE("training configuration is validated") {
  ModelPair pair = make_pair_1d();
  ScoredBatch post = scored_from(pair, column({1.0, -1.0}));
  ScoredBatch pre = scored_from(pair, column({0.5, 0.2}));
  MlpDiffusion mlp(1, 3, 0.1);
  mlp.init_params(818);

  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(train(mlp, post, pre, cfg), std::invalid_argument);
  cfg.epochs = 1;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(train(mlp, post, pre, cfg), std::invalid_argument);
  cfg.batch_size = 2;
  cfg.lr = 0.0;
  CHECK_THROWS_AS(train(mlp, post, pre, cfg), std::invalid_argument);
  cfg.lr = 0.01;
  cfg.l2 = -1.0;
  CHECK_THROWS_AS(train(mlp, post, pre, cfg), std::invalid_argument);
}

TEST_CASE("trained diffusion approximately satisfies the mean-one constraint") {
  ModelPair pair = make_pair_1d();
  const auto* inf_model = dynamic_cast<const GaussianModel*>(pair.p_inf.get());
  const auto* one_model = dynamic_cast<const GaussianModel*>(pair.p_one.get());
  REQUIRE(inf_model != nullptr);
  REQUIRE(one_model != nullptr);
  ScoredBatch post = scored_from(pair, sample_gaussian(*one_model, 400, 819));
  ScoredBatch pre = scored_from(pair, sample_gaussian(*inf_model, 400, 820));

  MlpDiffusion mlp(1, 8, 0.1);
  mlp.init_params(821);
  TrainConfig cfg;
  cfg.lr = 0.02;
  cfg.alpha = 10.0;
  cfg.epochs = 40;
  cfg.batch_size = 100;
  cfg.seed = 822;
  TrainReport report = train(mlp, post, pre, cfg);
  REQUIRE(!report.aborted);

  // Held-out pre-change draws: exp(Z) should average close to one.
  Mat held = sample_gaussian(*inf_model, 4000, 823);
  DetectionStatistic stat = DetectionStatistic::diffusion(
      pair, std::make_shared<MlpDiffusion>(mlp));
  double mean_exp = 0.0;
  for (Eigen::Index i = 0; i < held.rows(); ++i)
    mean_exp += std::exp(stat.z(held.row(i).transpose()));
  mean_exp /= static_cast<double>(held.rows());
  CHECK(std::abs(mean_exp - 1.0) <= 0.15);
}

TEST_CASE("trained diffusion at least matches the plain score divergence") {
  // Shared-covariance reference pair: the constrained optimum reaches a
  // divergence of 0.220 while the identity matrix only gives 0.040, so a
  // trained network has ample headroom to clear the baseline on held-out
  // data.
  ModelPair pair = build_reference_pair("gaussian", 0);
  const auto* inf_model = dynamic_cast<const GaussianModel*>(pair.p_inf.get());
  const auto* one_model = dynamic_cast<const GaussianModel*>(pair.p_one.get());
  REQUIRE(inf_model != nullptr);
  REQUIRE(one_model != nullptr);
  ScoredBatch post = scored_from(pair, sample_gaussian(*one_model, 10000, 830));
  ScoredBatch pre = scored_from(pair, sample_gaussian(*inf_model, 10000, 831));

  MlpDiffusion mlp(8);
  mlp.init_params(832);
  TrainConfig cfg;
  cfg.lr = default_lr("gaussian");
  cfg.alpha = 10.0;
  cfg.epochs = 30;
  cfg.batch_size = 512;
  cfg.seed = 834;
  TrainReport report = train(mlp, post, pre, cfg);
  REQUIRE(!report.aborted);

  Mat held = sample_gaussian(*one_model, 10000, 833);
  DivergenceEstimate learned =
      divergence_mc(pair, Direction::kOneToInf, &mlp, held);
  DivergenceEstimate baseline =
      divergence_mc(pair, Direction::kOneToInf, nullptr, held);
  CHECK(learned.value >= baseline.value);
}

TEST_CASE("epoch report rows serialize with a fixed header") {
  TrainReport report;
  TrainEpochRow row;
  row.epoch = 1;
  row.loss = -0.5;
  row.divergence_term = -0.625;
  row.penalty_term = 0.125;
  row.constraint_value = 0.98;
  report.epochs.push_back(row);
  row.epoch = 2;
  row.loss = -0.75;
  report.epochs.push_back(row);

  const std::string dir = testutil::make_temp_dir("traincsv");
  const std::string path = dir + "/report.csv";
  write_train_report_csv(path, report);

  std::ifstream in(path);
  REQUIRE(in.good());
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "epoch,loss,divergence_term,penalty_term,constraint_value");
  REQUIRE(std::getline(in, line));
  CHECK(line.rfind("1,-0.5,", 0) == 0);
  REQUIRE(std::getline(in, line));
  CHECK(line.rfind("2,-0.75,", 0) == 0);
  CHECK(!std::getline(in, line));
}

TEST_CASE("reference learning rates are keyed by model class") {
  CHECK(default_lr("quartic") == 0.035);
  CHECK(default_lr("gaussian") == 0.04);
  CHECK(default_lr("gbrbm") == 0.01);
  CHECK_THROWS_AS(default_lr("spline"), ConfigError);
}
