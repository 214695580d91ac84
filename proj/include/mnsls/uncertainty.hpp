#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>

#include "mnsls/model.hpp"
#include "mnsls/qp.hpp"
#include "mnsls/sls.hpp"

namespace mnsls {

/// One draw of every delta_t^{(i)} over the horizon (already scaled by
/// sigma_i).
struct ScenarioSample {
  int horizon = 0;
  Matrix deltas;  // T x n_delta

  int n_delta() const { return static_cast<int>(deltas.cols()); }

  /// delta_t = [delta_t^{(1)} I_n ... delta_t^{(nd)} I_n], n x n*nd.
  Matrix delta_block(int t, int n) const;
  /// Strictly block-lower nT x (n nd T) matrix with delta_t at block (t+1, t).
  Matrix rcal(int n) const;
  /// blkdiag(delta_0, ..., delta_{T-2}) padded with a zero n x n*nd block.
  Matrix delta_frown(int n) const;
};

struct ThetaParts {
  Matrix theta1;  // n nd T x nT
  Matrix theta2;  // nT x nT
  Matrix theta;   // theta1 * theta2
};

/// [A_1; ...; A_nd] and [B_1; ...; B_nd].
Matrix stacked_directions_a(const MultNoiseSystem& sys);
Matrix stacked_directions_b(const MultNoiseSystem& sys);

ThetaParts build_theta(const BltOperator& K, const MultNoiseSystem& sys, int horizon);

/// Rcal * Theta.
Matrix delta_bar(const ScenarioSample& sample, const Matrix& theta, int n);

/// The same matrix from -Z blkdiag(delta_frown, 0) (I (x) A + (I (x) B) K)
/// (I - Z (A0cal + B0cal K))^{-1}, using a dense inverse.
Matrix delta_bar_direct(const ScenarioSample& sample, const BltOperator& K,
                        const MultNoiseSystem& sys);

/// True closed-loop responses under the perturbed dynamics of `sample`,
/// from a block inverse of I - Z(A(delta) + B(delta) K).
SystemResponse perturbed_response(const BltOperator& K, const ScenarioSample& sample,
                                  const MultNoiseSystem& sys);

/// Perturbed achievability residual of the set-valued response
/// resp (I + dbar)^{-1}:
///   [I - Z A(delta), -Z B(delta)] [phi_x; phi_u] (I + dbar)^{-1} - I
/// with K = phi_u phi_x^{-1} and Theta_2 = phi_x. Equals
/// affine_residual(resp) (I + dbar)^{-1}, so it vanishes exactly when resp is
/// nominally achievable.
Matrix perturbed_residual(const SystemResponse& resp, const ScenarioSample& sample,
                          const MultNoiseSystem& sys);

/// I + Rcal Theta.
Matrix omega(const ScenarioSample& sample, const Matrix& theta, int n);

/// (I - Z A0cal) phi_x - Z B0cal phi_u, dense: diagonal blocks phi_x^{t,0},
/// strictly lower blocks Pi.
Matrix upsilon(const SystemResponse& resp, const MultNoiseSystem& sys);

struct PsiLambda {
  Matrix psi;                                   // nT x nT
  std::map<std::pair<int, int>, Matrix> lambda;  // (t, s), t > s, dense block indices
};

/// Blockwise Psi = Upsilon * Omega - I with Lambda(t, s) = sum_k
/// Upsilon(t, k) Omega(k, s) for t > s.
PsiLambda psi_and_lambda(const SystemResponse& resp, const Matrix& omega_matrix,
                         const MultNoiseSystem& sys);

/// [I - Z A0cal, -Z B0cal] [phi_x; phi_u] (I + dbar) - I computed directly.
Matrix psi_direct(const SystemResponse& resp, const Matrix& dbar, const MultNoiseSystem& sys);

/// Affine map z -> vec of every strictly lower Lambda block, for a fixed
/// Omega. Rows run over t = 1..T-1, s = 0..t-1, then column-major entries
/// of the n x n block; Lambda = G z + g on the layout's coordinates.
struct LambdaAffine {
  SparseMatrix G;
  Vector g;
};

LambdaAffine lambda_affine(const ResponseLayout& layout, const MultNoiseSystem& sys,
                           const Matrix& omega_matrix);

/// n_delta + 2 sqrt(n_delta ln(1/eps)) + 2 ln(1/eps).
double chernoff_radius(int n_delta, double eps);

/// {x : x - center in range(S), (x - center)' S^+ (x - center) <= 1}.
class EllipsoidSet {
 public:
  EllipsoidSet(Vector center, Matrix shape, double confidence);

  const Vector& center() const { return center_; }
  const Matrix& shape() const { return shape_; }
  double confidence() const { return confidence_; }

  /// Mahalanobis value; +inf when the deviation leaves the range of S.
  double distance(const Vector& x) const;
  bool contains(const Vector& x) const { return distance(x) <= 1.0; }

 private:
  Vector center_;
  Matrix shape_;
  double confidence_;
  Matrix pinv_;
  Matrix range_basis_;
};

/// Next-state set: center (A0 + B0 K) x + w, shape
/// r(nd, eps) sum_i sigma_i^2 (A_i + B_i K) x x' (A_i + B_i K)'.
EllipsoidSet state_ellipsoid(const MultNoiseSystem& sys, const Matrix& K, const Vector& x,
                             const Vector& w, double eps);
/// Next-input set for u_{t+1} = K x_{t+1}.
EllipsoidSet input_ellipsoid(const MultNoiseSystem& sys, const Matrix& K, const Vector& x,
                             const Vector& w, double eps);

enum class LambdaMethod { kClosedForm, kMonteCarlo };

LambdaMethod lambda_method_from_string(const std::string& s);

/// Var of vec(Rcal Theta). The closed form sums sigma_i^2 times the squared
/// norm of the Theta rows multiplied by delta_t^{(i)}; the Monte Carlo path
/// samples deltas from `sys`.
double lambda_bound(const Matrix& theta, const MultNoiseSystem& sys, int horizon,
                    LambdaMethod method, int mc_samples = 100000, std::uint64_t seed = 0);

/// Coefficient matrix M with vec(Rcal Theta) = M * d, where d stacks
/// delta_t^{(i)} with t major.
Matrix lambda_coefficients(const Matrix& theta, int n, int n_delta, int horizon);

}  // namespace mnsls
