#pragma once

#include <memory>
#include <string>

#include "diffdet/common.hpp"

namespace diffdet {

/// A distribution exposing what the detection statistics need: the
/// (possibly unnormalized) log-density log p~, its gradient in x (the score),
/// and the Hessian of log p~ (score Jacobian). Implementations are immutable
/// after construction; concurrent read-only use is safe.
class ScoreModel {
 public:
  virtual ~ScoreModel() = default;

  virtual Eigen::Index dim() const = 0;
  virtual std::string kind() const = 0;

  /// True when log_density returns a proper log pdf (integral one).
  virtual bool normalized() const = 0;

  virtual double log_density(const Vec& x) const = 0;
  virtual Vec score(const Vec& x) const = 0;
  virtual Mat score_jacobian(const Vec& x) const = 0;

 protected:
  void check_dim(const Vec& x) const;
};

/// N(mu, sigma) with cached Cholesky factor, inverse, and log-determinant.
/// log_density is the fully normalized log pdf.
class GaussianModel : public ScoreModel {
 public:
  GaussianModel(Vec mu, Mat sigma);

  Eigen::Index dim() const override { return mu_.size(); }
  std::string kind() const override { return "gaussian"; }
  bool normalized() const override { return true; }
  double log_density(const Vec& x) const override;
  Vec score(const Vec& x) const override;
  Mat score_jacobian(const Vec& x) const override;

  const Vec& mu() const { return mu_; }
  const Mat& sigma() const { return sigma_; }
  const Mat& sigma_inv() const { return sigma_inv_; }
  const Mat& chol_lower() const { return chol_lower_; }
  double log_det_sigma() const { return log_det_; }

 private:
  Vec mu_;
  Mat sigma_;
  Mat sigma_inv_;
  Mat chol_lower_;
  double log_det_;
};

/// Gauss-Bernoulli restricted Boltzmann machine with the latent variables
/// marginalized out. The free energy is
///   F(x) = 1/2 (x-mu)^T Sigma^-1 (x-mu) - 1^T softplus(phi + W^T Sigma^-1 x),
/// and log p~ = -F.
class GbRbmModel : public ScoreModel {
 public:
  GbRbmModel(Vec mu, Mat sigma, Mat w, Vec phi);

  Eigen::Index dim() const override { return mu_.size(); }
  Eigen::Index latent_dim() const { return phi_.size(); }
  std::string kind() const override { return "gbrbm"; }
  bool normalized() const override { return false; }
  double log_density(const Vec& x) const override;
  Vec score(const Vec& x) const override;
  Mat score_jacobian(const Vec& x) const override;

  const Vec& mu() const { return mu_; }
  const Mat& sigma() const { return sigma_; }
  const Mat& w() const { return w_; }
  const Vec& phi() const { return phi_; }

 private:
  Vec pre_activation(const Vec& x) const;  // phi + W^T Sigma^-1 x

  Vec mu_;
  Mat sigma_;
  Mat w_;
  Vec phi_;
  Mat sigma_inv_;
  Mat sigma_inv_w_;  // Sigma^-1 W, cached for score and Jacobian
};

/// Quartic exponential family: log p~ = -(x^2 - mu)^T Sigma^-1 (x^2 - mu)
/// with x^2 taken elementwise. Note the exponent carries no 1/2 factor.
class QuarticModel : public ScoreModel {
 public:
  QuarticModel(Vec mu, Mat sigma);

  Eigen::Index dim() const override { return mu_.size(); }
  std::string kind() const override { return "quartic"; }
  bool normalized() const override { return false; }
  double log_density(const Vec& x) const override;
  Vec score(const Vec& x) const override;
  Mat score_jacobian(const Vec& x) const override;

  const Vec& mu() const { return mu_; }
  const Mat& sigma() const { return sigma_; }
  const Mat& sigma_inv() const { return sigma_inv_; }

 private:
  Vec mu_;
  Mat sigma_;
  Mat sigma_inv_;
};

/// Pre-change (null) and post-change (alternate) distributions of matching
/// dimension. Identical models are permitted so degenerate harness cases can
/// be exercised, even though the detection theory assumes distinct ones.
struct ModelPair {
  std::shared_ptr<const ScoreModel> p_inf;
  std::shared_ptr<const ScoreModel> p_one;

  ModelPair(std::shared_ptr<const ScoreModel> inf_model,
            std::shared_ptr<const ScoreModel> one_model);

  Eigen::Index dim() const { return p_inf->dim(); }
  bool both_normalized() const {
    return p_inf->normalized() && p_one->normalized();
  }
};

/// Softplus as max(z,0) + log1p(exp(-|z|)); safe for large |z|.
double softplus(double z);
/// Numerically stable logistic sigmoid.
double sigmoid(double z);

/// Shared covariance used by the reference experiment pairs. The tabulated
/// matrix is rounded to five decimals and is not exactly symmetric; this
/// returns its symmetric part.
Mat reference_covariance();
Vec reference_mean_inf();
Vec reference_mean_one();

/// Builds the d=8 experiment pair for the given model class. The Gaussian and
/// quartic pairs are fully determined; the GB-RBM pair draws W and phi from
/// the seed (base parameters ~ N(0,1), post-change perturbations ~ N(0,0.1^2)).
ModelPair build_reference_pair(const std::string& kind, std::uint64_t seed);

/// Lossless JSON (de)serialization of model parameters.
std::string model_to_json(const ScoreModel& model);
std::shared_ptr<ScoreModel> model_from_json(const std::string& text);

}  // namespace diffdet
