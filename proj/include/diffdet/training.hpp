#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "diffdet/common.hpp"
#include "diffdet/diffusion.hpp"
#include "diffdet/score_model.hpp"

namespace diffdet {

/// Scores and score-Jacobian differences of both models at each sample,
/// computed once up front; the optimizer revisits samples every epoch.
/// Differences are pre-change minus post-change: ds = s_inf - s_one,
/// dh = H_inf - H_one, the combination entering the detection score.
struct ScoredBatch {
  Mat x;             // n x d samples
  Mat s_inf;         // n x d, rows are grad log p_inf
  Mat s_one;         // n x d, rows are grad log p_one
  Mat ds;            // s_inf - s_one
  std::vector<Mat> dh;

  Eigen::Index n() const { return x.rows(); }
  Eigen::Index dim() const { return x.cols(); }
};

ScoredBatch score_batch(const ModelPair& pair, const Mat& samples);

enum class Objective { kCpd, kHt };

struct LossResult {
  double loss = 0.0;
  double divergence_term = 0.0;   // signed term of the loss, always <= 0
  double penalty_term = 0.0;      // alpha * (log mean exp)^2, always >= 0
  double constraint_value = 0.0;  // mean of exp(Z) (CPD) or exp(-Z) (HT)
  Vec grad;                       // layout matches MlpDiffusion::params()
};

/// Change-point loss: minus the divergence estimated on post-change samples
/// plus alpha * [log mean exp Z]^2 over pre-change samples. The index lists
/// select minibatch rows; null means all rows. Throws NumericalError when
/// either term is non-finite, naming the term.
LossResult loss_cpd(const MlpDiffusion& m, const ScoredBatch& batch_p1,
                    const ScoredBatch& batch_pinf, double alpha,
                    const std::vector<std::size_t>* idx_p1 = nullptr,
                    const std::vector<std::size_t>* idx_pinf = nullptr,
                    int threads = 1);

/// Hypothesis-test loss: the mirror image with the roles of the two models
/// interchanged, i.e. minus the divergence on pre-change samples plus
/// alpha * [log mean exp(-Z)]^2 over post-change samples.
LossResult loss_ht(const MlpDiffusion& m, const ScoredBatch& batch_pinf,
                   const ScoredBatch& batch_p1, double alpha,
                   const std::vector<std::size_t>* idx_pinf = nullptr,
                   const std::vector<std::size_t>* idx_p1 = nullptr,
                   int threads = 1);

struct TrainConfig {
  double lr = 0.04;
  double alpha = 10.0;
  double l2 = 1e-5;       // decoupled weight decay
  std::size_t epochs = 200;
  std::size_t batch_size = 512;
  std::uint64_t seed = 0;
  Objective objective = Objective::kCpd;
  int threads = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Learning rates the reference runs used per model class.
double default_lr(const std::string& model_kind);

struct TrainEpochRow {
  std::size_t epoch = 0;          // 1-based
  double loss = 0.0;              // means over the epoch's steps
  double divergence_term = 0.0;
  double penalty_term = 0.0;
  double constraint_value = 0.0;
};

struct TrainReport {
  std::vector<TrainEpochRow> epochs;
  std::size_t steps = 0;
  bool aborted = false;        // non-finite loss; parameters rolled back
  std::string abort_reason;
};

/// Minibatch first-order optimization with adaptive moments and decoupled
/// weight decay. Deterministic given the config: epoch shuffles draw from
/// sub-seeds of (seed, epoch) and gradient reductions are ordered. On a
/// non-finite loss the last parameters that evaluated finite are restored
/// and the report is marked aborted.
TrainReport train(MlpDiffusion& m, const ScoredBatch& train_p1,
                  const ScoredBatch& train_pinf, const TrainConfig& cfg);

/// epoch,loss,divergence_term,penalty_term,constraint_value rows.
void write_train_report_csv(const std::string& path, const TrainReport& report);

}  // namespace diffdet
