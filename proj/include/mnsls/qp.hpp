#pragma once

#include <limits>
#include <string>

#include <Eigen/SparseCore>

#include "mnsls/types.hpp"

namespace mnsls {

using SparseMatrix = Eigen::SparseMatrix<double>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// minimize 1/2 z'Pz + q'z  subject to  A_eq z = b_eq,  lo <= G z <= hi.
struct QpProblem {
  Matrix P;
  Vector q;
  SparseMatrix A_eq;
  Vector b_eq;
  SparseMatrix G;
  Vector lo;
  Vector hi;

  int dim() const { return static_cast<int>(q.size()); }
  int num_eq() const { return static_cast<int>(b_eq.size()); }
  int num_ineq() const { return static_cast<int>(lo.size()); }

  /// Empty constraint blocks sized to `dim`.
  static QpProblem unconstrained(Matrix P, Vector q);

  /// Shape checks, symmetry and the PSD eigenvalue floor (-1e-9), lo <= hi.
  void validate() const;

  double objective(const Vector& z) const { return 0.5 * z.dot(P * z) + q.dot(z); }
};

enum class QpStatus { kOptimal, kMaxIters, kInfeasible };

std::string to_string(QpStatus status);

struct QpSettings {
  double eps_abs = 1e-8;
  double eps_rel = 1e-8;
  int max_iters = 200000;
  double rho = 0.1;
  double sigma = 1e-6;
  double alpha = 1.6;
  double eps_pinf = 1e-9;
  int scaling_iters = 15;
  int check_every = 25;
  bool adaptive_rho = true;
  bool polish = true;
};

struct QpSolution {
  Vector z;
  Vector y;  // multipliers stacked [eq; ineq]
  double objective = 0.0;
  QpStatus status = QpStatus::kMaxIters;
  double primal_residual = kInf;
  double dual_residual = kInf;
  int iterations = 0;
  bool polished = false;
};

/// Operator-splitting (ADMM) solve with Ruiz equilibration, adaptive step
/// size, primal infeasibility detection, and an active-set polish. Starts
/// from z = 0, y = 0; identical inputs give bit-identical outputs.
QpSolution qp_solve(const QpProblem& problem, const QpSettings& settings = {});

struct LeastSquaresSolution {
  Vector z;
  double objective = 0.0;  // ||C z - d||^2
  bool rank_deficient = false;
  double equality_residual = 0.0;
};

/// min ||C z - d||^2 s.t. A_eq z = b_eq, via the augmented KKT system. A
/// singular KKT matrix yields the minimum-norm solution and sets
/// `rank_deficient`.
LeastSquaresSolution qp_least_squares(const Matrix& A_eq, const Vector& b_eq,
                                      const Matrix& C, const Vector& d);

}  // namespace mnsls
