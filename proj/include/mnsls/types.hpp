#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace mnsls {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Thrown when operand shapes or horizons do not conform.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A diagonal block failed the conditioning check during block forward
// substitution. `index()` is the offending block row.
class SingularBlockError : public std::runtime_error {
 public:
  SingularBlockError(int index, double condition)
      : std::runtime_error("singular or ill-conditioned diagonal block at index " +
                           std::to_string(index) + " (condition " +
                           std::to_string(condition) + ")"),
        index_(index),
        condition_(condition) {}

  int index() const { return index_; }
  double condition() const { return condition_; }

 private:
  int index_;
  double condition_;
};

class RankDeficientError : public std::runtime_error {
 public:
  RankDeficientError(const std::string& what, double sigma_min)
      : std::runtime_error(what), sigma_min_(sigma_min) {}
  double sigma_min() const { return sigma_min_; }

 private:
  double sigma_min_;
};

// Derives an independent 64-bit seed for sub-stream `index` of `master`
// (splitmix64 finalizer over the pair).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace mnsls
