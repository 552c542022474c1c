#pragma once

#include <memory>
#include <vector>

#include "diffdet/common.hpp"
#include "diffdet/score_model.hpp"

namespace diffdet {

/// Matrix-valued function m(x) in R^{d x d} with its input Jacobian. Square
/// shape is fixed; the detection theory allows rectangular m but nothing here
/// needs it. Evaluation is pure; concurrent reads are safe.
class DiffusionFunction {
 public:
  virtual ~DiffusionFunction() = default;

  virtual Eigen::Index dim() const = 0;
  virtual Mat eval(const Vec& x) const = 0;

  /// jac[k](i,j) = d m_ij / d x_k.
  virtual std::vector<Mat> input_jacobian(const Vec& x) const = 0;

 protected:
  void check_dim(const Vec& x) const;
};

class ConstantDiffusion : public DiffusionFunction {
 public:
  explicit ConstantDiffusion(Mat m);

  Eigen::Index dim() const override { return m_.rows(); }
  Mat eval(const Vec& x) const override;
  std::vector<Mat> input_jacobian(const Vec& x) const override;

  const Mat& matrix() const { return m_; }

 private:
  Mat m_;
};

/// k * inner; carries calibration factors without touching the wrapped
/// function's parameters.
class ScaledDiffusion : public DiffusionFunction {
 public:
  ScaledDiffusion(std::shared_ptr<const DiffusionFunction> inner, double k);

  Eigen::Index dim() const override { return inner_->dim(); }
  Mat eval(const Vec& x) const override;
  std::vector<Mat> input_jacobian(const Vec& x) const override;

  double factor() const { return k_; }
  const DiffusionFunction& inner() const { return *inner_; }

 private:
  std::shared_ptr<const DiffusionFunction> inner_;
  double k_;
};

/// One-hidden-layer network: x -> sigmoid(W1 x + b1) -> W2 a + b2, the
/// d^2-dimensional output reshaped row-major to d x d and multiplied by
/// output_scale. The hidden width defaults to 36 and the scale to 0.1.
class MlpDiffusion : public DiffusionFunction {
 public:
  MlpDiffusion(Eigen::Index d, Eigen::Index hidden = 36,
               double output_scale = 0.1);

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per layer.
  void init_params(std::uint64_t seed);

  Eigen::Index dim() const override { return d_; }
  Eigen::Index hidden() const { return hidden_; }
  double output_scale() const { return output_scale_; }

  Mat eval(const Vec& x) const override;
  std::vector<Mat> input_jacobian(const Vec& x) const override;

  /// Forward pass with the intermediates needed for Jacobians and training.
  /// tmat is the unscaled input Jacobian packed as a d^2 x d matrix:
  /// the scaled Jacobian is jac[k](i,j) = output_scale * tmat(i*d+j, k).
  struct Forward {
    Vec a;       // hidden activations
    Vec dsig;    // a .* (1 - a)
    Mat m;       // scaled output, d x d
    Mat tmat;    // W2 * diag(dsig) * W1, d^2 x d (empty unless requested)
  };
  Forward forward(const Vec& x, bool with_jacobian) const;

  /// Accumulates into grad (layout matching params()) the parameter gradient
  /// of a scalar objective with dL/dm = gm and, if gjac is non-null,
  /// dL/djac packed as gjac(i*d+j, k) = dL/d[jac[k](i,j)], where jac includes
  /// output_scale.
  void accumulate_param_grad(const Vec& x, const Forward& f, const Mat& gm,
                             const Mat* gjac, Vec& grad) const;

  Eigen::Index param_count() const;
  /// Flat parameter vector, order W1, b1, W2, b2 (matrices column-major).
  Vec params() const;
  void set_params(const Vec& p);

  const Mat& w1() const { return w1_; }
  const Vec& b1() const { return b1_; }
  const Mat& w2() const { return w2_; }
  const Vec& b2() const { return b2_; }

 private:
  Eigen::Index d_, hidden_;
  double output_scale_;
  Mat w1_;  // hidden x d
  Vec b1_;  // hidden
  Mat w2_;  // d^2 x hidden
  Vec b2_;  // d^2
};

/// Symmetric PSD square root of an SPD matrix via eigendecomposition;
/// the returned M satisfies M M^T = V.
ConstantDiffusion gaussian_optimal(const Mat& v);

/// Finds k > 0 with mean(exp(k^2 * z_i)) = 1 over the given draws of the
/// diffusion statistic under the pre-change law. Returns 1 when the mean at
/// k=1 is already <= 1. Uses the convexity of u -> log mean exp(u*z): the map
/// is 0 at u=0 with negative slope, so any further root is unique and
/// bracketable. Throws CalibrationError when no positive root exists.
double calibrate_scale_from_draws(const std::vector<double>& z);

class DetectionStatistic;  // statistics module

/// Convenience wrapper: evaluates the diffusion statistic on samples_inf
/// (rows = draws from the pre-change model) and calibrates.
double calibrate_scale(const DiffusionFunction& m, const ModelPair& pair,
                       const Mat& samples_inf);

/// Lossless JSON checkpoint (kind, d, hidden, output_scale, parameters in
/// declared order). Supports MlpDiffusion and ConstantDiffusion.
std::string diffusion_to_json(const DiffusionFunction& m);
std::shared_ptr<DiffusionFunction> diffusion_from_json(const std::string& text);

}  // namespace diffdet
