#pragma once

#include <cstdint>
#include <random>

#include "diffdet/common.hpp"

namespace diffdet {

/// splitmix64 finalizer; used to decorrelate user seeds and derive sub-seeds.
std::uint64_t splitmix64(std::uint64_t x);

/// Deterministic sub-seed for an indexed stream (path, chain, epoch, ...).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// mt19937_64 with a fixed Box-Muller normal transform. std::normal_distribution
/// is implementation-defined, so byte-stable outputs require rolling our own.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(splitmix64(seed)) {}

  /// Uniform on [0, 1).
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double normal();

  Vec normal_vec(Eigen::Index d);

  std::uint64_t raw() { return gen_(); }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace diffdet
