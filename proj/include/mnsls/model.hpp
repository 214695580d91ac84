#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "mnsls/blt.hpp"
#include "mnsls/types.hpp"

namespace mnsls {

/// Shape of the scalar noise driving each multiplicative direction. Every
/// kind is affinely normalized to zero mean and unit variance before being
/// scaled by sigma_i, so `lo`/`hi` are expressed in standard deviations for
/// the truncated Gaussian and in raw support units for the uniform.
struct DeltaDistribution {
  enum class Kind { kGaussian, kTruncatedGaussian, kUniform };

  Kind kind = Kind::kGaussian;
  double lo = -2.0;
  double hi = 2.0;

  static DeltaDistribution gaussian() { return {}; }
  static DeltaDistribution truncated_gaussian(double lo = -2.0, double hi = 2.0) {
    return {Kind::kTruncatedGaussian, lo, hi};
  }
  static DeltaDistribution uniform(double lo = -1.0, double hi = 1.0) {
    return {Kind::kUniform, lo, hi};
  }
};

/// x_{t+1} = (A0 + sum_i delta_i A_i) x_t + (B0 + sum_i delta_i B_i) u_t + W_t
/// with delta_i zero mean, variance sigma_i^2, and W_t ~ N(0, diag(alpha)).
struct MultNoiseSystem {
  Matrix A0;
  Matrix B0;
  std::vector<Matrix> A_dirs;
  std::vector<Matrix> B_dirs;
  std::vector<double> sigma;
  DeltaDistribution delta_dist;
  Vector alpha;  // additive noise variances, size n

  int n() const { return static_cast<int>(A0.rows()); }
  int m() const { return static_cast<int>(B0.cols()); }
  int n_delta() const { return static_cast<int>(sigma.size()); }

  /// Throws DimensionError / std::invalid_argument on malformed data.
  void validate() const;

  /// Scalar system x+ = (a + delta) x + b u with one direction.
  static MultNoiseSystem scalar(double a, double b, double sigma,
                                DeltaDistribution dist = DeltaDistribution::gaussian(),
                                double alpha = 0.0);
};

/// Draws delta samples normalized to zero mean and unit variance.
class DeltaSampler {
 public:
  explicit DeltaSampler(DeltaDistribution dist);
  double operator()(std::mt19937_64& rng) const;

  double raw_mean() const { return mean_; }
  double raw_stddev() const { return stddev_; }

 private:
  DeltaDistribution dist_;
  double mean_ = 0.0;
  double stddev_ = 1.0;
};

struct NoiseTrace {
  int horizon = 0;
  Matrix deltas;  // T x n_delta
  Vector w;       // [x0; W_0; ...; W_{T-2}], length n*T

  Vector x0(int n) const { return w.head(n); }
};

struct Trajectory {
  Matrix states;  // T x n, row t is x_t
  Matrix inputs;  // T x m, row t is u_t
};

NoiseTrace sample_noise(const MultNoiseSystem& sys, int horizon, const Vector& x0,
                        std::uint64_t seed);

/// Draws only the multiplicative part (T x n_delta).
Matrix sample_deltas(const MultNoiseSystem& sys, int horizon, std::mt19937_64& rng);

Vector step(const MultNoiseSystem& sys, const Vector& x, const Vector& u,
            const Vector& delta, const Vector& w);

/// Closed loop under u_t = sum_{s <= t} K^{t, t-s} x_s.
Trajectory rollout(const MultNoiseSystem& sys, const BltOperator& K,
                   const NoiseTrace& trace);

void check_cost_weights(const Matrix& Q, const Matrix& R);

/// sum_{t=0}^{T-1} x_t' Q x_t + u_t' R u_t.
double lqr_cost(const Trajectory& traj, const Matrix& Q, const Matrix& R);

/// Z (downshift), A0cal = blkdiag(A0, ..., A0, 0), B0cal likewise.
struct StackedNominal {
  BltOperator Z;
  BltOperator A0cal;
  BltOperator B0cal;
};

StackedNominal stacked_nominal(const MultNoiseSystem& sys, int horizon);

struct MsDiagnostic {
  bool decreasing = false;
  std::vector<double> second_moment;  // trace E[x_t x_t'] per step
};

/// Empirical mean-square check over `horizon_long` steps without additive
/// noise. Beyond K's horizon the stage-0 gain K^{0,0} is applied as a
/// static feedback.
MsDiagnostic ms_diagnostic(const MultNoiseSystem& sys, const BltOperator& K,
                           int horizon_long, int n_rollouts, std::uint64_t seed,
                           const Vector& x0 = Vector());

nlohmann::json system_to_json(const MultNoiseSystem& sys);
MultNoiseSystem system_from_json(const nlohmann::json& j);

}  // namespace mnsls
