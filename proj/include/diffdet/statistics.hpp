#pragma once

#include <memory>
#include <string>
#include <vector>

#include "diffdet/common.hpp"
#include "diffdet/diffusion.hpp"
#include "diffdet/score_model.hpp"

namespace diffdet {

/// Hyvarinen score of x under q: 1/2 ||grad log q||^2 + laplacian(log q).
double hyvarinen_score(const Vec& x, const ScoreModel& q);

/// Generalized score with the matrix function m folded in:
///   1/2 ||m^T s||^2 + div(m m^T s),   s = grad log q,
/// with the divergence assembled analytically from the Jacobians of m and s.
double diffusion_hyvarinen_score(const Vec& x, const ScoreModel& q,
                                 const DiffusionFunction& m);

/// Same quantity from precomputed pieces; jac[k](i,j) = d m_ij / d x_k.
double diffusion_score_from_parts(const Mat& m, const std::vector<Mat>& jac,
                                  const Vec& s, const Mat& h);

/// Per-sample detection score Z(x). KL is the log-likelihood ratio
/// log p1 - log p_inf (plus a normalization-ratio correction when the
/// densities are unnormalized); Fisher and Diffusion are differences of the
/// corresponding scores evaluated under the pre- and post-change models.
class DetectionStatistic {
 public:
  enum class Kind { kKl, kFisher, kDiffusion };

  /// KL on normalized models; throws ConfigError when either density is
  /// unnormalized (use kl_corrected with an estimated log ratio instead).
  static DetectionStatistic kl(const ModelPair& pair);

  /// KL on unnormalized densities: z = log p~1 - log p~inf + norm_ratio_log,
  /// where norm_ratio_log estimates log(C_inf / C_1).
  static DetectionStatistic kl_corrected(const ModelPair& pair,
                                         double norm_ratio_log);

  static DetectionStatistic fisher(const ModelPair& pair);

  static DetectionStatistic diffusion(
      const ModelPair& pair, std::shared_ptr<const DiffusionFunction> m);

  /// Non-owning variant; the caller keeps m alive.
  static DetectionStatistic diffusion_ref(const ModelPair& pair,
                                          const DiffusionFunction& m);

  Kind kind() const { return kind_; }
  std::string name() const;
  const ModelPair& pair() const { return pair_; }
  const DiffusionFunction* diffusion_function() const { return m_.get(); }
  double norm_ratio_log() const { return norm_ratio_log_; }

  double z(const Vec& x) const;

  /// Sum of z over the rows of a batch, accumulated in row order.
  double batch_sum(const Mat& batch) const;

 private:
  DetectionStatistic(Kind kind, ModelPair pair,
                     std::shared_ptr<const DiffusionFunction> m,
                     double norm_ratio_log);

  Kind kind_;
  ModelPair pair_;
  std::shared_ptr<const DiffusionFunction> m_;
  double norm_ratio_log_;
};

enum class Direction { kInfToOne, kOneToInf };

struct DivergenceEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n = 0;
};

/// Monte-Carlo divergence estimate. Samples must be draws (one per row) from
/// the first distribution of the direction. With m null the plain Fisher
/// divergence is estimated, otherwise the m-weighted one.
DivergenceEstimate divergence_mc(const ModelPair& pair, Direction dir,
                                 const DiffusionFunction* m,
                                 const Mat& samples);

struct NormRatioEstimate {
  double log_ratio = 0.0;
  double std_error = 0.0;
  std::size_t n = 0;
};

/// Estimates log(C_inf / C_1) from post-change draws via the sample mean of
/// p~inf / p~1, computed with a max-shifted log-sum-exp. The standard error
/// is for the log estimate (delta method).
NormRatioEstimate norm_ratio_estimate(const ModelPair& pair,
                                      const Mat& samples_one,
                                      std::size_t min_samples = 1000);

/// Two Monte-Carlo estimates of the same quantity with their paired
/// difference. Pairing uses the same draws on both sides, so diff_se is the
/// exact standard error of the discrepancy.
struct PairedCheck {
  double lhs = 0.0, lhs_se = 0.0;
  double rhs = 0.0, rhs_se = 0.0;
  double diff = 0.0, diff_se = 0.0;
  std::size_t n = 0;

  bool pass(double n_sigma = 4.0) const {
    return diff_se > 0.0 ? std::abs(diff) <= n_sigma * diff_se : diff == 0.0;
  }
};

/// Checks the identity D_m(P||Q) = E_P[1/2 ||m^T grad log p||^2 + S_m(X,Q)]
/// on draws from P: lhs is the direct divergence integrand, rhs the
/// density-free form.
PairedCheck hyvarinen_identity_check(const ScoreModel& p, const ScoreModel& q,
                                     const DiffusionFunction& m,
                                     const Mat& samples_from_p);

/// Drift identities of the diffusion statistic:
///   E_inf[Z_m] = -D_m(P_inf||P_1)   and   E_1[Z_m] = +D_m(P_1||P_inf).
struct DriftCheckReport {
  PairedCheck pre;         // pre-change side
  PairedCheck post;        // post-change side
  bool separation = false; // mean Z negative pre-change and positive post-change

  bool pass() const { return pre.pass() && post.pass(); }
};

DriftCheckReport drift_check(const ModelPair& pair, const DiffusionFunction& m,
                             const Mat& samples_inf, const Mat& samples_one);

/// Writes one row per sample with columns sample_index then one z column per
/// statistic (named z_<statistic>).
void write_z_csv(const std::string& path, const Mat& samples,
                 const std::vector<const DetectionStatistic*>& stats);

}  // namespace diffdet
