#pragma once

#include <vector>

#include <nlohmann/json.hpp>

#include "mnsls/blt.hpp"
#include "mnsls/model.hpp"
#include "mnsls/qp.hpp"

namespace mnsls {

/// Closed-loop maps from the stacked disturbance w = [x0; W_0; ...] to the
/// stacked state (phi_x, n x n blocks) and input (phi_u, m x n blocks).
struct SystemResponse {
  BltOperator phi_x;
  BltOperator phi_u;
};

/// Weight on the stacked disturbance. `kFixed` uses W = w w' for one
/// realization; `kCovariance` uses W = E[w w'].
struct WSpec {
  enum class Kind { kFixed, kCovariance };
  Kind kind = Kind::kCovariance;
  Vector w;
  Matrix W;

  static WSpec fixed(Vector w);
  static WSpec covariance(Matrix W);

  /// blkdiag(x0 x0', diag(alpha), ..., diag(alpha)): the expected-cost weight.
  static WSpec expected(const MultNoiseSystem& sys, int horizon, const Vector& x0);
  /// blkdiag(x0 x0', I_n, ..., I_n).
  static WSpec unit_noise(int n, int horizon, const Vector& x0);

  Matrix weight() const;
};

struct CostModel {
  Matrix Q;
  Matrix R;
  WSpec w_spec;

  void validate(int n, int m, int horizon) const;
};

/// Symmetric PSD square root; eigenvalues below 1e-10 are clipped to zero.
Matrix psd_sqrt(const Matrix& S);

/// (I - Z A0cal) phi_x - Z B0cal phi_u - I, dense nT x nT.
Matrix affine_residual(const SystemResponse& resp, const StackedNominal& nominal);

SystemResponse response_from_controller(const BltOperator& K, const StackedNominal& nominal);

BltOperator controller_from_response(const SystemResponse& resp);

/// ||blkdiag(Q^1/2, R^1/2) [phi_x; phi_u] W^1/2||_F^2 evaluated directly.
double sls_objective(const SystemResponse& resp, const CostModel& cost);

/// Decision-vector layout for a response: phi_x blocks with delay >=
/// `x_min_delay` first, then every phi_u block. Excluded phi_x blocks are
/// pinned to the identity on the diagonal.
class ResponseLayout {
 public:
  ResponseLayout(int horizon, int n, int m, int x_min_delay);

  int horizon() const { return x_.horizon(); }
  int n() const { return x_.block_rows(); }
  int m() const { return u_.block_rows(); }
  int size() const { return x_.size() + u_.size(); }
  int u_offset() const { return x_.size(); }
  const BltLayout& x_layout() const { return x_; }
  const BltLayout& u_layout() const { return u_; }

  /// Coordinate of phi_x^{i,j}(r,c), or -1 when pinned.
  int x_index(int i, int j, int r, int c) const {
    return x_.contains(i, j) ? x_.index(i, j, r, c) : -1;
  }
  int u_index(int i, int j, int r, int c) const { return u_offset() + u_.index(i, j, r, c); }

  /// Value of a pinned phi_x entry.
  double pinned_x(int /*i*/, int j, int r, int c) const {
    return (j == 0 && r == c) ? 1.0 : 0.0;
  }

  Vector pack(const SystemResponse& resp) const;
  SystemResponse unpack(const Eigen::Ref<const Vector>& z) const;

 private:
  BltLayout x_;
  BltLayout u_;
};

/// Objective 1/2 z'Pz + q'z + constant equal to sls_objective at unpack(z).
struct QuadraticObjective {
  Matrix P;
  Vector q;
  double constant = 0.0;
};

QuadraticObjective sls_quadratic_objective(const ResponseLayout& layout, const CostModel& cost);

/// Rows of the affine constraint (one per entry of each lower block of
/// (I - Z A0cal) phi_x - Z B0cal phi_u = I) over the layout's coordinates.
struct LinearConstraints {
  Matrix A;
  Vector b;
};

LinearConstraints affine_constraint_rows(const ResponseLayout& layout, const MultNoiseSystem& sys);

struct NominalSolution {
  SystemResponse response;
  double objective = 0.0;
  bool rank_deficient = false;
};

/// Nominal SLS LQR as an equality-constrained least-squares problem. When W
/// is block diagonal the problem separates by column block and each column
/// is solved on its own; `force_monolithic` disables the split.
NominalSolution nominal_sls_solve(const MultNoiseSystem& sys, const CostModel& cost,
                                  int horizon, bool force_monolithic = false);

struct RiccatiSolution {
  std::vector<Matrix> gains;  // K_t, u_t = K_t x_t
  std::vector<Matrix> P;      // P_0 .. P_T with P_T = 0

  double cost(const Vector& x0) const { return x0.dot(P.front() * x0); }
  /// Block-diagonal BLT controller with K^{t,0} = K_t.
  BltOperator controller() const;
};

RiccatiSolution riccati_lqr(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                            int horizon);

nlohmann::json response_to_json(const SystemResponse& resp);
SystemResponse response_from_json(const nlohmann::json& j);

/// cost.json: {"Q": .., "R": .., "w_spec": {"type": "fixed", "w": [..]} |
/// {"type": "covariance", "W": [[..]]} | {"type": "expected", "x0": [..]} |
/// {"type": "unit_noise", "x0": [..]}}. The last two need `sys`/`horizon`.
CostModel cost_from_json(const nlohmann::json& j, const MultNoiseSystem& sys, int horizon);

}  // namespace mnsls
