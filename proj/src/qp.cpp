#include "mnsls/qp.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/SparseCore>

namespace mnsls {

namespace {

constexpr double kRhoMin = 1e-6;
constexpr double kRhoMax = 1e6;
constexpr double kRhoEqScale = 1e3;
constexpr double kMinScaling = 1e-4;
constexpr double kMaxScaling = 1e4;

double inf_norm(const Vector& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

double clamp_scaling(double v) {
  if (!(v > kMinScaling)) return 1.0;
  return std::min(v, kMaxScaling);
}

SparseMatrix stack_rows(const SparseMatrix& top, const SparseMatrix& bottom, int cols) {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(top.nonZeros() + bottom.nonZeros()));
  for (int k = 0; k < top.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(top, k); it; ++it) trip.emplace_back(it.row(), it.col(), it.value());
  }
  for (int k = 0; k < bottom.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(bottom, k); it; ++it) {
      trip.emplace_back(it.row() + top.rows(), it.col(), it.value());
    }
  }
  SparseMatrix out(top.rows() + bottom.rows(), cols);
  out.setFromTriplets(trip.begin(), trip.end());
  return out;
}

// Row-wise infinity norms of a column-major sparse matrix.
Vector row_inf_norms(const SparseMatrix& A) {
  Vector out = Vector::Zero(A.rows());
  for (int k = 0; k < A.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(A, k); it; ++it) {
      out(it.row()) = std::max(out(it.row()), std::abs(it.value()));
    }
  }
  return out;
}

Vector col_inf_norms(const SparseMatrix& A) {
  Vector out = Vector::Zero(A.cols());
  for (int k = 0; k < A.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(A, k); it; ++it) {
      out(k) = std::max(out(k), std::abs(it.value()));
    }
  }
  return out;
}

// Problem data after Ruiz equilibration: Pbar = c D P D, Abar = E A D.
struct Scaled {
  Matrix P;
  Vector q;
  SparseMatrix A;
  Vector l, u;
  Vector D, E;
  double c = 1.0;
};

Scaled equilibrate(const Matrix& P, const Vector& q, const SparseMatrix& A, const Vector& l,
                   const Vector& u, int iters) {
  Scaled s;
  const int n = static_cast<int>(q.size());
  s.P = P;
  s.A = A;
  s.D = Vector::Ones(n);
  s.E = Vector::Ones(A.rows());
  for (int it = 0; it < iters; ++it) {
    Vector col = s.P.cwiseAbs().colwise().maxCoeff().transpose();
    col = col.cwiseMax(col_inf_norms(s.A));
    Vector dD(n);
    for (int j = 0; j < n; ++j) dD(j) = 1.0 / std::sqrt(clamp_scaling(col(j)));
    Vector row = row_inf_norms(s.A);
    Vector dE(row.size());
    for (Eigen::Index i = 0; i < row.size(); ++i) dE(i) = 1.0 / std::sqrt(clamp_scaling(row(i)));
    s.P = dD.asDiagonal() * s.P * dD.asDiagonal();
    s.A = dE.asDiagonal() * s.A * dD.asDiagonal();
    s.D.array() *= dD.array();
    s.E.array() *= dE.array();
  }
  s.q = s.D.cwiseProduct(q);
  const double mean_col = n > 0 ? s.P.cwiseAbs().colwise().maxCoeff().mean() : 0.0;
  const double cost_norm = std::max(mean_col, inf_norm(s.q));
  s.c = 1.0 / clamp_scaling(cost_norm);
  s.P *= s.c;
  s.q *= s.c;
  s.l = s.E.cwiseProduct(l);
  s.u = s.E.cwiseProduct(u);
  return s;
}

struct Residuals {
  double prim = 0.0, dual = 0.0;
  double eps_prim = 0.0, eps_dual = 0.0;
  // Normalizers in scaled space, used by the step-size update.
  double prim_norm = 1.0, dual_norm = 1.0;
  double prim_scaled = 0.0, dual_scaled = 0.0;
};

Residuals residuals(const Scaled& s, const Vector& x, const Vector& z, const Vector& y,
                    const QpSettings& cfg) {
  Residuals r;
  const Vector Ax = s.A * x;
  const Vector Px = s.P * x;
  const Vector Aty = s.A.transpose() * y;
  const Vector Einv = s.E.cwiseInverse();
  const Vector Dinv = s.D.cwiseInverse();
  r.prim = inf_norm(Einv.cwiseProduct(Ax - z));
  r.dual = inf_norm(Dinv.cwiseProduct(Px + s.q + Aty)) / s.c;
  const double ax = inf_norm(Einv.cwiseProduct(Ax));
  const double zz = inf_norm(Einv.cwiseProduct(z));
  r.eps_prim = cfg.eps_abs + cfg.eps_rel * std::max(ax, zz);
  const double px = inf_norm(Dinv.cwiseProduct(Px)) / s.c;
  const double aty = inf_norm(Dinv.cwiseProduct(Aty)) / s.c;
  const double qq = inf_norm(Dinv.cwiseProduct(s.q)) / s.c;
  r.eps_dual = cfg.eps_abs + cfg.eps_rel * std::max({px, aty, qq});
  r.prim_scaled = inf_norm(Ax - z);
  r.dual_scaled = inf_norm(Px + s.q + Aty);
  r.prim_norm = std::max({inf_norm(Ax), inf_norm(z), 1e-30});
  r.dual_norm = std::max({inf_norm(Px), inf_norm(Aty), inf_norm(s.q), 1e-30});
  return r;
}

bool primal_infeasible(const Scaled& s, const Vector& dy, const Vector& l, const Vector& u,
                       double eps) {
  const Vector dy_u = s.E.cwiseProduct(dy);
  const double norm = inf_norm(dy_u);
  if (!(norm > 1e-30)) return false;
  const Vector Atdy = s.D.cwiseInverse().cwiseProduct(s.A.transpose() * dy);
  if (inf_norm(Atdy) > eps * norm) return false;
  double support = 0.0;
  for (Eigen::Index i = 0; i < dy_u.size(); ++i) {
    if (dy_u(i) > 0.0) {
      if (std::isinf(u(i))) return false;
      support += u(i) * dy_u(i);
    } else if (dy_u(i) < 0.0) {
      if (std::isinf(l(i))) return false;
      support += l(i) * dy_u(i);
    }
  }
  return support < -eps * norm;
}

Eigen::LLT<Matrix> factor(const Scaled& s, const Vector& rho, double sigma) {
  const SparseMatrix AtRA = SparseMatrix(s.A.transpose()) * rho.asDiagonal() * s.A;
  Matrix K = s.P + Matrix(AtRA);
  K.diagonal().array() += sigma;
  return Eigen::LLT<Matrix>(K);
}

Vector rho_vector(const Vector& l, const Vector& u, double rho) {
  Vector r(l.size());
  for (Eigen::Index i = 0; i < l.size(); ++i) {
    if (std::isinf(l(i)) && std::isinf(u(i))) {
      r(i) = kRhoMin;
    } else if (u(i) - l(i) < 1e-4 * std::max(1.0, std::abs(u(i)))) {
      r(i) = kRhoEqScale * rho;
    } else {
      r(i) = rho;
    }
  }
  return r;
}

// Solves the equality QP on a guessed active set in scaled space; returns
// false when the guess is rejected.
bool polish(const Scaled& s, Vector& x, Vector& z, Vector& y,
            const QpSettings& cfg, Residuals& res) {
  const int n = static_cast<int>(x.size());
  const int mc = static_cast<int>(z.size());
  std::vector<int> rows;
  std::vector<double> rhs;
  std::vector<int> side;  // -1 lower, +1 upper, 0 equality
  for (int i = 0; i < mc; ++i) {
    const bool eq = s.u(i) - s.l(i) < 1e-12 * std::max(1.0, std::abs(s.u(i)));
    if (eq) {
      rows.push_back(i);
      rhs.push_back(s.u(i));
      side.push_back(0);
    } else if (z(i) - s.l(i) < -y(i)) {
      rows.push_back(i);
      rhs.push_back(s.l(i));
      side.push_back(-1);
    } else if (s.u(i) - z(i) < y(i)) {
      rows.push_back(i);
      rhs.push_back(s.u(i));
      side.push_back(1);
    }
  }
  const int na = static_cast<int>(rows.size());
  if (n + na > 6000) return false;

  const SparseMatrix At = s.A.transpose();
  Matrix Aact(na, n);
  for (int k = 0; k < na; ++k) Aact.row(k) = At.col(rows[k]).transpose();

  constexpr double kDelta = 1e-7;
  Matrix K = Matrix::Zero(n + na, n + na);
  K.topLeftCorner(n, n) = s.P;
  K.topRightCorner(n, na) = Aact.transpose();
  K.bottomLeftCorner(na, n) = Aact;
  Matrix Kreg = K;
  Kreg.topLeftCorner(n, n).diagonal().array() += kDelta;
  Kreg.bottomRightCorner(na, na).diagonal().array() -= kDelta;
  Eigen::PartialPivLU<Matrix> lu(Kreg);

  Vector b(n + na);
  b.head(n) = -s.q;
  for (int k = 0; k < na; ++k) b(n + k) = rhs[k];
  Vector sol = lu.solve(b);
  for (int refine = 0; refine < 5; ++refine) sol += lu.solve(b - K * sol);
  if (!sol.allFinite()) return false;

  Vector xp = sol.head(n);
  Vector yp = Vector::Zero(mc);
  for (int k = 0; k < na; ++k) {
    double v = sol(n + k);
    // A multiplier with the wrong sign means the active-set guess is wrong.
    if (side[k] == -1 && v > 1e-9) return false;
    if (side[k] == 1 && v < -1e-9) return false;
    if (side[k] == -1) v = std::min(v, 0.0);
    if (side[k] == 1) v = std::max(v, 0.0);
    yp(rows[k]) = v;
  }
  Vector zp = (s.A * xp).cwiseMax(s.l).cwiseMin(s.u);
  Residuals rp = residuals(s, xp, zp, yp, cfg);
  if (rp.prim <= std::max(res.prim, rp.eps_prim) && rp.dual <= std::max(res.dual, rp.eps_dual)) {
    x = xp;
    z = zp;
    y = yp;
    res = rp;
    return true;
  }
  return false;
}

}  // namespace

std::string to_string(QpStatus status) {
  switch (status) {
    case QpStatus::kOptimal:
      return "optimal";
    case QpStatus::kMaxIters:
      return "max_iters";
    case QpStatus::kInfeasible:
      return "infeasible";
  }
  return "unknown";
}

QpProblem QpProblem::unconstrained(Matrix P, Vector q) {
  QpProblem p;
  const auto n = q.size();
  p.P = std::move(P);
  p.q = std::move(q);
  p.A_eq.resize(0, n);
  p.G.resize(0, n);
  return p;
}

void QpProblem::validate() const {
  const auto n = q.size();
  if (P.rows() != n || P.cols() != n) throw DimensionError("QP: P must be dim x dim");
  if (A_eq.cols() != n || A_eq.rows() != b_eq.size()) throw DimensionError("QP: bad equality block");
  if (G.cols() != n || G.rows() != lo.size() || lo.size() != hi.size()) {
    throw DimensionError("QP: bad inequality block");
  }
  if (!P.isApprox(P.transpose(), 1e-10) && (P - P.transpose()).cwiseAbs().maxCoeff() > 1e-10) {
    throw std::invalid_argument("QP: P must be symmetric");
  }
  if (n > 0) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(P, Eigen::EigenvaluesOnly);
    const double scale = std::max(1.0, P.cwiseAbs().maxCoeff());
    if (es.eigenvalues()(0) < -1e-9 * scale) throw std::invalid_argument("QP: P must be PSD");
  }
  for (Eigen::Index i = 0; i < lo.size(); ++i) {
    if (lo(i) > hi(i)) throw std::invalid_argument("QP: lo must not exceed hi");
  }
}

QpSolution qp_solve(const QpProblem& problem, const QpSettings& cfg) {
  problem.validate();
  const int n = problem.dim();
  const SparseMatrix A = stack_rows(problem.A_eq, problem.G, n);
  const int mc = static_cast<int>(A.rows());
  Vector l(mc), u(mc);
  l << problem.b_eq, problem.lo;
  u << problem.b_eq, problem.hi;

  // Clip tiny negative curvature from assembly round-off.
  Matrix P = 0.5 * (problem.P + problem.P.transpose());
  const Scaled s = equilibrate(P, problem.q, A, l, u, cfg.scaling_iters);

  double rho = cfg.rho;
  Vector rho_vec = rho_vector(s.l, s.u, rho);
  Eigen::LLT<Matrix> kkt = factor(s, rho_vec, cfg.sigma);

  Vector x = Vector::Zero(n), z = Vector::Zero(mc), y = Vector::Zero(mc);
  QpSolution sol;
  Residuals res;
  const SparseMatrix At = s.A.transpose();

  int iter = 0;
  for (iter = 1; iter <= cfg.max_iters; ++iter) {
    const Vector rhs = cfg.sigma * x - s.q + At * (rho_vec.cwiseProduct(z) - y);
    const Vector xt = kkt.solve(rhs);
    const Vector zt = s.A * xt;
    const Vector x_new = cfg.alpha * xt + (1.0 - cfg.alpha) * x;
    const Vector z_relax = cfg.alpha * zt + (1.0 - cfg.alpha) * z;
    const Vector z_new = (z_relax + y.cwiseQuotient(rho_vec)).cwiseMax(s.l).cwiseMin(s.u);
    const Vector dy = rho_vec.cwiseProduct(z_relax - z_new);
    x = x_new;
    z = z_new;
    y += dy;

    if (iter % cfg.check_every != 0 && iter != cfg.max_iters) continue;

    res = residuals(s, x, z, y, cfg);
    if (res.prim <= res.eps_prim && res.dual <= res.eps_dual) {
      sol.status = QpStatus::kOptimal;
      break;
    }
    if (primal_infeasible(s, dy, l, u, cfg.eps_pinf)) {
      sol.status = QpStatus::kInfeasible;
      break;
    }
    if (cfg.adaptive_rho) {
      const double ratio = (res.prim_scaled / res.prim_norm) /
                           std::max(res.dual_scaled / res.dual_norm, 1e-30);
      const double rho_new = std::clamp(rho * std::sqrt(ratio), kRhoMin, kRhoMax);
      if (rho_new > 5.0 * rho || rho_new < 0.2 * rho) {
        rho = rho_new;
        rho_vec = rho_vector(s.l, s.u, rho);
        kkt = factor(s, rho_vec, cfg.sigma);
      }
    }
  }
  sol.iterations = std::min(iter, cfg.max_iters);

  if (sol.status != QpStatus::kInfeasible && cfg.polish && mc > 0) {
    sol.polished = polish(s, x, z, y, cfg, res);
    if (sol.polished && res.prim <= res.eps_prim && res.dual <= res.eps_dual) {
      sol.status = QpStatus::kOptimal;
    }
  }

  sol.z = s.D.cwiseProduct(x);
  sol.y = s.E.cwiseProduct(y) / s.c;
  sol.primal_residual = res.prim;
  sol.dual_residual = res.dual;
  sol.objective = problem.objective(sol.z);
  return sol;
}

LeastSquaresSolution qp_least_squares(const Matrix& A_eq, const Vector& b_eq, const Matrix& C,
                                      const Vector& d) {
  const auto n = C.cols();
  if (C.rows() != d.size()) throw DimensionError("least squares: C and d disagree");
  if (A_eq.rows() != b_eq.size() || (A_eq.rows() > 0 && A_eq.cols() != n)) {
    throw DimensionError("least squares: equality block has the wrong shape");
  }
  const auto me = A_eq.rows();
  Matrix K = Matrix::Zero(n + me, n + me);
  K.topLeftCorner(n, n) = 2.0 * C.transpose() * C;
  if (me > 0) {
    K.topRightCorner(n, me) = A_eq.transpose();
    K.bottomLeftCorner(me, n) = A_eq;
  }
  Vector rhs(n + me);
  rhs.head(n) = 2.0 * C.transpose() * d;
  rhs.tail(me) = b_eq;

  LeastSquaresSolution out;
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod;
  cod.setThreshold(1e-12);
  cod.compute(K);
  Vector sol = cod.solve(rhs);
  // One refinement step against the unfactored system.
  sol += cod.solve(rhs - K * sol);
  out.rank_deficient = cod.rank() < n + me;
  out.z = sol.head(n);
  out.objective = (C * out.z - d).squaredNorm();
  out.equality_residual = me > 0 ? inf_norm(A_eq * out.z - b_eq) : 0.0;
  return out;
}

}  // namespace mnsls
