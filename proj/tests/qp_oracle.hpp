#pragma once

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "mnsls/qp.hpp"
#include "test_util.hpp"

namespace mnsls::testing {

/// Random strictly convex QP with a known feasible point z0.
inline QpProblem random_qp(std::mt19937_64& rng, int dim, int n_eq, int n_ineq) {
  const Matrix M = random_matrix(rng, dim, dim);
  QpProblem p = QpProblem::unconstrained(M * M.transpose() + 0.1 * Matrix::Identity(dim, dim),
                                         random_matrix(rng, dim, 1, 3.0));
  const Vector z0 = random_matrix(rng, dim, 1);
  const Matrix A = random_matrix(rng, n_eq, dim);
  p.A_eq = A.sparseView();
  p.b_eq = A * z0;
  const Matrix G = random_matrix(rng, n_ineq, dim);
  p.G = G.sparseView();
  const Vector gz = G * z0;
  std::uniform_real_distribution<double> slack(0.0, 1.0);
  p.lo.resize(n_ineq);
  p.hi.resize(n_ineq);
  for (int i = 0; i < n_ineq; ++i) {
    p.lo(i) = slack(rng) < 0.2 ? -kInf : gz(i) - slack(rng);
    p.hi(i) = gz(i) + slack(rng);
  }
  return p;
}

/// Exhaustive active-set oracle: each inequality is free, at lo, or at hi.
/// The optimum is the best primal-feasible stationary point among these.
inline double active_set_optimum(const QpProblem& p, Vector* best_z = nullptr) {
  const int n = p.dim(), ne = p.num_eq(), ni = p.num_ineq();
  const Matrix A = Matrix(p.A_eq), G = Matrix(p.G);
  double best = std::numeric_limits<double>::infinity();
  int combos = 1;
  for (int i = 0; i < ni; ++i) combos *= 3;
  for (int code = 0; code < combos; ++code) {
    std::vector<int> state(ni);
    int c = code, active = 0;
    bool usable = true;
    for (int i = 0; i < ni; ++i) {
      state[i] = c % 3;
      c /= 3;
      if (state[i] == 1 && !std::isfinite(p.lo(i))) usable = false;
      active += state[i] != 0;
    }
    if (!usable) continue;
    const int k = ne + active;
    Matrix C(k, n);
    Vector rhs(k);
    C.topRows(ne) = A;
    rhs.head(ne) = p.b_eq;
    int r = ne;
    for (int i = 0; i < ni; ++i) {
      if (state[i] == 0) continue;
      C.row(r) = G.row(i);
      rhs(r++) = state[i] == 1 ? p.lo(i) : p.hi(i);
    }
    Matrix kkt = Matrix::Zero(n + k, n + k);
    kkt.topLeftCorner(n, n) = p.P;
    kkt.topRightCorner(n, k) = C.transpose();
    kkt.bottomLeftCorner(k, n) = C;
    Vector b(n + k);
    b << -p.q, rhs;
    Eigen::FullPivLU<Matrix> lu(kkt);
    if (lu.rank() < n + k) continue;
    const Vector z = lu.solve(b).head(n);
    const Vector gz = G * z;
    bool feasible = true;
    for (int i = 0; i < ni; ++i) {
      if (gz(i) < p.lo(i) - 1e-9 || gz(i) > p.hi(i) + 1e-9) feasible = false;
    }
    if (!feasible) continue;
    const double obj = p.objective(z);
    if (obj < best) {
      best = obj;
      if (best_z) *best_z = z;
    }
  }
  return best;
}

}  // namespace mnsls::testing
