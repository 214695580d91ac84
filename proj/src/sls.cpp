#include "mnsls/sls.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mnsls {

namespace {

// W = F F' with F keeping only the numerically positive eigen-directions.
Matrix psd_factor(const Matrix& W) {
  if (W.size() == 0) return Matrix(W.rows(), 0);
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (W + W.transpose()));
  const Vector& ev = es.eigenvalues();
  const double cutoff = 1e-10 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  std::vector<int> keep;
  for (Eigen::Index k = 0; k < ev.size(); ++k) {
    if (ev(k) > cutoff) keep.push_back(static_cast<int>(k));
  }
  Matrix F(W.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    F.col(static_cast<Eigen::Index>(k)) = es.eigenvectors().col(keep[k]) * std::sqrt(ev(keep[k]));
  }
  return F;
}

bool is_block_diagonal(const Matrix& W, int n, int horizon) {
  for (int a = 0; a < horizon; ++a) {
    for (int b = 0; b < horizon; ++b) {
      if (a != b && !W.block(a * n, b * n, n, n).isZero(0.0)) return false;
    }
  }
  return true;
}

// One scalar entry of the decision object: either a free coordinate or a
// pinned constant.
struct Entry {
  int index;
  double value;
};

// Entries of block row t of the dense phi (rows x nT), column-major.
std::vector<Entry> row_entries(const ResponseLayout& layout, bool is_x, int t) {
  const int n = layout.n();
  const int rows = is_x ? n : layout.m();
  std::vector<Entry> out;
  out.reserve(static_cast<std::size_t>(rows) * n * (t + 1));
  for (int s = 0; s <= t; ++s) {
    for (int c = 0; c < n; ++c) {
      for (int r = 0; r < rows; ++r) {
        if (is_x) {
          const int idx = layout.x_index(t, t - s, r, c);
          out.push_back({idx, idx < 0 ? layout.pinned_x(t, t - s, r, c) : 0.0});
        } else {
          out.push_back({layout.u_index(t, t - s, r, c), 0.0});
        }
      }
    }
  }
  return out;
}

}  // namespace

WSpec WSpec::fixed(Vector w) {
  WSpec s;
  s.kind = Kind::kFixed;
  s.w = std::move(w);
  return s;
}

WSpec WSpec::covariance(Matrix W) {
  WSpec s;
  s.kind = Kind::kCovariance;
  s.W = std::move(W);
  return s;
}

WSpec WSpec::expected(const MultNoiseSystem& sys, int horizon, const Vector& x0) {
  const int n = sys.n();
  Matrix W = Matrix::Zero(static_cast<Eigen::Index>(n) * horizon, static_cast<Eigen::Index>(n) * horizon);
  W.topLeftCorner(n, n) = x0 * x0.transpose();
  for (int t = 1; t < horizon; ++t) W.block(t * n, t * n, n, n) = sys.alpha.asDiagonal();
  return covariance(std::move(W));
}

WSpec WSpec::unit_noise(int n, int horizon, const Vector& x0) {
  Matrix W = Matrix::Identity(static_cast<Eigen::Index>(n) * horizon, static_cast<Eigen::Index>(n) * horizon);
  W.topLeftCorner(n, n) = x0 * x0.transpose();
  return covariance(std::move(W));
}

Matrix WSpec::weight() const {
  if (kind == Kind::kFixed) return w * w.transpose();
  return W;
}

void CostModel::validate(int n, int m, int horizon) const {
  if (Q.rows() != n || R.rows() != m) throw DimensionError("cost weights do not match the system");
  check_cost_weights(Q, R);
  const Matrix Wm = w_spec.weight();
  const auto nT = static_cast<Eigen::Index>(n) * horizon;
  if (Wm.rows() != nT || Wm.cols() != nT) throw DimensionError("w weight must be nT x nT");
  if ((Wm - Wm.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, Wm.cwiseAbs().maxCoeff())) {
    throw std::invalid_argument("w weight must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(Wm, Eigen::EigenvaluesOnly);
  if (es.eigenvalues()(0) < -1e-10 * std::max(1.0, Wm.cwiseAbs().maxCoeff())) {
    throw std::invalid_argument("w weight must be positive semidefinite");
  }
}

Matrix psd_sqrt(const Matrix& S) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (S + S.transpose()));
  Vector ev = es.eigenvalues();
  for (Eigen::Index k = 0; k < ev.size(); ++k) ev(k) = ev(k) > 1e-10 ? std::sqrt(ev(k)) : 0.0;
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

Matrix affine_residual(const SystemResponse& resp, const StackedNominal& nominal) {
  const int T = resp.phi_x.horizon();
  const int n = resp.phi_x.block_rows();
  const BltOperator lhs = resp.phi_x - nominal.Z * nominal.A0cal * resp.phi_x -
                          nominal.Z * nominal.B0cal * resp.phi_u;
  return (lhs - BltOperator::identity(T, n)).dense();
}

SystemResponse response_from_controller(const BltOperator& K, const StackedNominal& nominal) {
  const int T = K.horizon();
  const int n = nominal.A0cal.block_rows();
  const BltOperator closed = BltOperator::identity(T, n) -
                             nominal.Z * (nominal.A0cal + nominal.B0cal * K);
  SystemResponse resp;
  resp.phi_x = blt_inverse(closed);
  resp.phi_u = K * resp.phi_x;
  return resp;
}

BltOperator controller_from_response(const SystemResponse& resp) {
  return resp.phi_u * blt_inverse(resp.phi_x);
}

double sls_objective(const SystemResponse& resp, const CostModel& cost) {
  const Matrix W = cost.w_spec.weight();
  const Matrix X = resp.phi_x.dense();
  const Matrix U = resp.phi_u.dense();
  const int T = resp.phi_x.horizon();
  double total = 0.0;
  for (int t = 0; t < T; ++t) {
    const auto Xt = X.middleRows(t * cost.Q.rows(), cost.Q.rows());
    const auto Ut = U.middleRows(t * cost.R.rows(), cost.R.rows());
    total += (Xt.transpose() * cost.Q * Xt * W).trace();
    total += (Ut.transpose() * cost.R * Ut * W).trace();
  }
  return total;
}

ResponseLayout::ResponseLayout(int horizon, int n, int m, int x_min_delay)
    : x_(horizon, n, n, x_min_delay), u_(horizon, m, n, 0) {}

Vector ResponseLayout::pack(const SystemResponse& resp) const {
  Vector z(size());
  z << x_.pack(resp.phi_x), u_.pack(resp.phi_u);
  return z;
}

SystemResponse ResponseLayout::unpack(const Eigen::Ref<const Vector>& z) const {
  if (z.size() != size()) throw DimensionError("response vector does not match layout");
  const BltOperator base = BltOperator::identity(horizon(), n());
  SystemResponse resp;
  resp.phi_x = x_.unpack(z.head(x_.size()), &base);
  resp.phi_u = u_.unpack(z.tail(u_.size()));
  return resp;
}

QuadraticObjective sls_quadratic_objective(const ResponseLayout& layout, const CostModel& cost) {
  const int T = layout.horizon();
  const Matrix W = cost.w_spec.weight();
  QuadraticObjective obj{Matrix::Zero(layout.size(), layout.size()), Vector::Zero(layout.size()), 0.0};
  for (int pass = 0; pass < 2; ++pass) {
    const bool is_x = pass == 0;
    const Matrix& Wt = is_x ? cost.Q : cost.R;
    const int rows = static_cast<int>(Wt.rows());
    for (int t = 0; t < T; ++t) {
      const std::vector<Entry> entries = row_entries(layout, is_x, t);
      // entries[k] sits at (r, a) of the row block with k = a * rows + r.
      const int count = static_cast<int>(entries.size());
      for (int k1 = 0; k1 < count; ++k1) {
        const int r1 = k1 % rows, a1 = k1 / rows;
        for (int k2 = 0; k2 < count; ++k2) {
          const int r2 = k2 % rows, a2 = k2 / rows;
          const double c = Wt(r1, r2) * W(a1, a2);
          if (c == 0.0) continue;
          const Entry& e1 = entries[k1];
          const Entry& e2 = entries[k2];
          if (e1.index >= 0 && e2.index >= 0) {
            obj.P(e1.index, e2.index) += 2.0 * c;
          } else if (e1.index >= 0) {
            obj.q(e1.index) += 2.0 * c * e2.value;
          } else if (e2.index < 0) {
            obj.constant += c * e1.value * e2.value;
          }
        }
      }
    }
  }
  return obj;
}

LinearConstraints affine_constraint_rows(const ResponseLayout& layout, const MultNoiseSystem& sys) {
  const int T = layout.horizon(), n = layout.n(), m = layout.m();
  std::vector<std::pair<Vector, double>> rows;
  for (int t = 0; t < T; ++t) {
    for (int d = 0; d <= t; ++d) {
      for (int c = 0; c < n; ++c) {
        for (int r = 0; r < n; ++r) {
          Vector row = Vector::Zero(layout.size());
          double rhs = (d == 0 && r == c) ? 1.0 : 0.0;
          bool has_free = false;
          auto add_x = [&](int i, int j, int rr, double coef) {
            const int idx = layout.x_index(i, j, rr, c);
            if (idx >= 0) {
              row(idx) += coef;
              has_free = true;
            } else {
              rhs -= coef * layout.pinned_x(i, j, rr, c);
            }
          };
          add_x(t, d, r, 1.0);
          if (d >= 1) {
            for (int k = 0; k < n; ++k) add_x(t - 1, d - 1, k, -sys.A0(r, k));
            for (int k = 0; k < m; ++k) {
              row(layout.u_index(t - 1, d - 1, k, c)) -= sys.B0(r, k);
              has_free = has_free || sys.B0(r, k) != 0.0;
            }
          }
          if (has_free) rows.emplace_back(std::move(row), rhs);
        }
      }
    }
  }
  LinearConstraints out{Matrix(static_cast<Eigen::Index>(rows.size()), layout.size()),
                        Vector(static_cast<Eigen::Index>(rows.size()))};
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.A.row(static_cast<Eigen::Index>(k)) = rows[k].first.transpose();
    out.b(static_cast<Eigen::Index>(k)) = rows[k].second;
  }
  return out;
}

namespace {

// Least-squares factor C z - d for the objective over a full layout (no
// pinned entries), built from W = F F'.
void objective_factor(const ResponseLayout& layout, const CostModel& cost, const Matrix& F,
                      Matrix& C, Vector& d) {
  const int T = layout.horizon(), n = layout.n(), m = layout.m();
  const Matrix Qh = psd_sqrt(cost.Q);
  const Matrix Rh = psd_sqrt(cost.R);
  const auto r = F.cols();
  C = Matrix::Zero(static_cast<Eigen::Index>(T) * (n + m) * r, layout.size());
  d = Vector::Zero(C.rows());
  Eigen::Index row = 0;
  for (int t = 0; t < T; ++t) {
    for (int pass = 0; pass < 2; ++pass) {
      const bool is_x = pass == 0;
      const Matrix& H = is_x ? Qh : Rh;
      const int rows = is_x ? n : m;
      const std::vector<Entry> entries = row_entries(layout, is_x, t);
      for (Eigen::Index b = 0; b < r; ++b) {
        for (int a_row = 0; a_row < rows; ++a_row, ++row) {
          for (std::size_t k = 0; k < entries.size(); ++k) {
            const int rr = static_cast<int>(k) % rows;
            const int a = static_cast<int>(k) / rows;
            const double coef = H(a_row, rr) * F(a, b);
            if (coef == 0.0) continue;
            if (entries[k].index >= 0) {
              C(row, entries[k].index) += coef;
            } else {
              d(row) -= coef * entries[k].value;
            }
          }
        }
      }
    }
  }
}

NominalSolution solve_monolithic(const MultNoiseSystem& sys, const CostModel& cost, int T) {
  const ResponseLayout layout(T, sys.n(), sys.m(), 0);
  Matrix C;
  Vector d;
  objective_factor(layout, cost, psd_factor(cost.w_spec.weight()), C, d);
  const LinearConstraints eq = affine_constraint_rows(layout, sys);
  const LeastSquaresSolution ls = qp_least_squares(eq.A, eq.b, C, d);
  NominalSolution out;
  out.response = layout.unpack(ls.z);
  out.objective = ls.objective;
  out.rank_deficient = ls.rank_deficient;
  return out;
}

// Column block s only involves phi^{t, t-s} for t >= s: a finite-horizon
// problem started at time s from the identity.
NominalSolution solve_by_columns(const MultNoiseSystem& sys, const CostModel& cost, int T) {
  const int n = sys.n(), m = sys.m();
  const Matrix W = cost.w_spec.weight();
  const Matrix Qh = psd_sqrt(cost.Q);
  const Matrix Rh = psd_sqrt(cost.R);
  NominalSolution out;
  out.response.phi_x = BltOperator(T, n, n);
  out.response.phi_u = BltOperator(T, m, n);
  for (int s = 0; s < T; ++s) {
    const int L = T - s;
    const int nx = L * n * n;
    const int dim = nx + L * m * n;
    auto xi = [&](int k, int r, int c) { return k * n * n + c * n + r; };
    auto ui = [&](int k, int r, int c) { return nx + k * m * n + c * m + r; };

    const Matrix F = psd_factor(W.block(s * n, s * n, n, n));
    const auto rank = F.cols();
    Matrix C = Matrix::Zero(static_cast<Eigen::Index>(L) * (n + m) * rank, dim);
    Eigen::Index row = 0;
    for (int k = 0; k < L; ++k) {
      for (Eigen::Index b = 0; b < rank; ++b) {
        for (int a = 0; a < n; ++a, ++row) {
          for (int r = 0; r < n; ++r) {
            for (int c = 0; c < n; ++c) C(row, xi(k, r, c)) += Qh(a, r) * F(c, b);
          }
        }
        for (int a = 0; a < m; ++a, ++row) {
          for (int r = 0; r < m; ++r) {
            for (int c = 0; c < n; ++c) C(row, ui(k, r, c)) += Rh(a, r) * F(c, b);
          }
        }
      }
    }

    Matrix A = Matrix::Zero(static_cast<Eigen::Index>(L) * n * n, dim);
    Vector beq = Vector::Zero(A.rows());
    Eigen::Index erow = 0;
    for (int k = 0; k < L; ++k) {
      for (int c = 0; c < n; ++c) {
        for (int r = 0; r < n; ++r, ++erow) {
          A(erow, xi(k, r, c)) = 1.0;
          if (k == 0) {
            beq(erow) = r == c ? 1.0 : 0.0;
            continue;
          }
          for (int j = 0; j < n; ++j) A(erow, xi(k - 1, j, c)) -= sys.A0(r, j);
          for (int j = 0; j < m; ++j) A(erow, ui(k - 1, j, c)) -= sys.B0(r, j);
        }
      }
    }

    const LeastSquaresSolution ls = qp_least_squares(A, beq, C, Vector::Zero(C.rows()));
    out.objective += ls.objective;
    out.rank_deficient = out.rank_deficient || ls.rank_deficient;
    for (int k = 0; k < L; ++k) {
      Matrix& bx = out.response.phi_x.block(s + k, k);
      Matrix& bu = out.response.phi_u.block(s + k, k);
      for (int c = 0; c < n; ++c) {
        for (int r = 0; r < n; ++r) bx(r, c) = ls.z(xi(k, r, c));
        for (int r = 0; r < m; ++r) bu(r, c) = ls.z(ui(k, r, c));
      }
    }
  }
  return out;
}

}  // namespace

NominalSolution nominal_sls_solve(const MultNoiseSystem& sys, const CostModel& cost, int horizon,
                                  bool force_monolithic) {
  if (horizon < 1) throw std::invalid_argument("horizon must be at least 1");
  sys.validate();
  cost.validate(sys.n(), sys.m(), horizon);
  if (!force_monolithic && is_block_diagonal(cost.w_spec.weight(), sys.n(), horizon)) {
    return solve_by_columns(sys, cost, horizon);
  }
  return solve_monolithic(sys, cost, horizon);
}

BltOperator RiccatiSolution::controller() const {
  return BltOperator::block_diagonal(gains);
}

RiccatiSolution riccati_lqr(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                            int horizon) {
  if (horizon < 1) throw std::invalid_argument("horizon must be at least 1");
  check_cost_weights(Q, R);
  const auto n = A.rows(), m = B.cols();
  RiccatiSolution sol;
  sol.gains.assign(horizon, Matrix::Zero(m, n));
  sol.P.assign(horizon + 1, Matrix::Zero(n, n));
  for (int t = horizon - 1; t >= 0; --t) {
    const Matrix& Pn = sol.P[t + 1];
    const Matrix S = R + B.transpose() * Pn * B;
    sol.gains[t] = -S.ldlt().solve(B.transpose() * Pn * A);
    Matrix P = Q + A.transpose() * Pn * A + A.transpose() * Pn * B * sol.gains[t];
    sol.P[t] = 0.5 * (P + P.transpose());
  }
  return sol;
}

nlohmann::json response_to_json(const SystemResponse& resp) {
  return {{"phi_x", blt_to_json(resp.phi_x)}, {"phi_u", blt_to_json(resp.phi_u)}};
}

SystemResponse response_from_json(const nlohmann::json& j) {
  return {blt_from_json(j.at("phi_x")), blt_from_json(j.at("phi_u"))};
}

CostModel cost_from_json(const nlohmann::json& j, const MultNoiseSystem& sys, int horizon) {
  CostModel cost;
  cost.Q = matrix_from_json(j.at("Q"));
  cost.R = matrix_from_json(j.at("R"));
  const Vector ones = Vector::Ones(sys.n());
  if (!j.contains("w_spec")) {
    cost.w_spec = WSpec::unit_noise(sys.n(), horizon, ones);
  } else {
    const auto& w = j.at("w_spec");
    const std::string type = w.at("type").get<std::string>();
    auto x0_of = [&]() { return w.contains("x0") ? Vector(matrix_from_json(w.at("x0"))) : ones; };
    if (type == "fixed") {
      cost.w_spec = WSpec::fixed(matrix_from_json(w.at("w")));
    } else if (type == "covariance") {
      cost.w_spec = WSpec::covariance(matrix_from_json(w.at("W")));
    } else if (type == "expected") {
      cost.w_spec = WSpec::expected(sys, horizon, x0_of());
    } else if (type == "unit_noise") {
      cost.w_spec = WSpec::unit_noise(sys.n(), horizon, x0_of());
    } else {
      throw std::invalid_argument("unknown w_spec type '" + type + "'");
    }
  }
  cost.validate(sys.n(), sys.m(), horizon);
  return cost;
}

}  // namespace mnsls
