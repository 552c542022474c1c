#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffdet {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Malformed configuration or request (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical-domain failure: non-finite quantities, impossible calibration,
/// degenerate estimates (CLI exit code 3).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// No positive calibration root exists for the given draws.
class CalibrationError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
  std::size_t n = 0;
};

/// Two-pass sample mean and standard error of the mean.
MeanSe mean_and_se(const std::vector<double>& v);

/// log((1/n) * sum exp(v_i)), max-shifted.
double log_mean_exp(const std::vector<double>& v);

int hardware_threads();

/// Runs fn(i) for i in [0, n). Work is handed out in fixed chunks so callers
/// that write to slot i of a preallocated buffer get results independent of
/// the worker count.
void parallel_for(std::size_t n, int threads,
                  const std::function<void(std::size_t)>& fn);

/// Standard normal CDF.
inline double normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

}  // namespace diffdet
