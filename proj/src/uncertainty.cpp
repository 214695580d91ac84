#include "mnsls/uncertainty.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <unsupported/Eigen/KroneckerProduct>

namespace mnsls {

namespace {

void check_sample(const ScenarioSample& sample, const MultNoiseSystem& sys, int horizon) {
  if (sample.horizon != horizon || sample.deltas.rows() != horizon ||
      sample.deltas.cols() != sys.n_delta()) {
    throw DimensionError("scenario sample does not match system/horizon");
  }
}

// blkdiag(M_0, ..., M_{T-2}, 0) with M_t = M0 + sum_i delta_t^{(i)} M_i.
BltOperator perturbed_stack(const Matrix& M0, const std::vector<Matrix>& dirs,
                            const ScenarioSample& sample) {
  const int T = sample.horizon;
  std::vector<Matrix> blocks(T, Matrix::Zero(M0.rows(), M0.cols()));
  for (int t = 0; t + 1 < T; ++t) {
    blocks[t] = M0;
    for (int i = 0; i < sample.n_delta(); ++i) blocks[t] += sample.deltas(t, i) * dirs[i];
  }
  return BltOperator::block_diagonal(blocks);
}

}  // namespace

Matrix ScenarioSample::delta_block(int t, int n) const {
  const int nd = n_delta();
  Matrix d = Matrix::Zero(n, static_cast<Eigen::Index>(n) * nd);
  for (int i = 0; i < nd; ++i) d.block(0, i * n, n, n).diagonal().setConstant(deltas(t, i));
  return d;
}

Matrix ScenarioSample::rcal(int n) const {
  const int T = horizon, nd = n_delta();
  Matrix R = Matrix::Zero(static_cast<Eigen::Index>(n) * T, static_cast<Eigen::Index>(n) * nd * T);
  for (int t = 0; t + 1 < T; ++t) R.block((t + 1) * n, t * n * nd, n, n * nd) = delta_block(t, n);
  return R;
}

Matrix ScenarioSample::delta_frown(int n) const {
  const int T = horizon, nd = n_delta();
  Matrix D = Matrix::Zero(static_cast<Eigen::Index>(n) * T, static_cast<Eigen::Index>(n) * nd * T);
  for (int t = 0; t + 1 < T; ++t) D.block(t * n, t * n * nd, n, n * nd) = delta_block(t, n);
  return D;
}

Matrix stacked_directions_a(const MultNoiseSystem& sys) {
  Matrix A(static_cast<Eigen::Index>(sys.n()) * sys.n_delta(), sys.n());
  for (int i = 0; i < sys.n_delta(); ++i) A.middleRows(i * sys.n(), sys.n()) = sys.A_dirs[i];
  return A;
}

Matrix stacked_directions_b(const MultNoiseSystem& sys) {
  Matrix B(static_cast<Eigen::Index>(sys.n()) * sys.n_delta(), sys.m());
  for (int i = 0; i < sys.n_delta(); ++i) B.middleRows(i * sys.n(), sys.n()) = sys.B_dirs[i];
  return B;
}

ThetaParts build_theta(const BltOperator& K, const MultNoiseSystem& sys, int horizon) {
  const int n = sys.n(), m = sys.m(), nd = sys.n_delta(), T = horizon;
  if (K.horizon() != T || K.block_rows() != m || K.block_cols() != n) {
    throw DimensionError("build_theta: controller shape mismatch");
  }
  const Matrix Ad = stacked_directions_a(sys);
  const Matrix Bd = stacked_directions_b(sys);
  const Matrix Kd = K.dense();
  ThetaParts out;
  out.theta1 = Matrix::Zero(static_cast<Eigen::Index>(n) * nd * T, static_cast<Eigen::Index>(n) * T);
  for (int t = 0; t < T; ++t) {
    auto rows = out.theta1.middleRows(t * n * nd, n * nd);
    rows.middleCols(t * n, n) -= Ad;
    rows.noalias() -= Bd * Kd.middleRows(t * m, m);
  }
  out.theta2 = response_from_controller(K, stacked_nominal(sys, T)).phi_x.dense();
  out.theta = out.theta1 * out.theta2;
  return out;
}

Matrix delta_bar(const ScenarioSample& sample, const Matrix& theta, int n) {
  const int T = sample.horizon, nd = sample.n_delta();
  if (theta.rows() != static_cast<Eigen::Index>(n) * nd * T) {
    throw DimensionError("delta_bar: Theta does not match sample");
  }
  // Rcal only touches block row t + 1, so skip the dense product.
  Matrix D = Matrix::Zero(static_cast<Eigen::Index>(n) * T, theta.cols());
  for (int t = 0; t + 1 < T; ++t) {
    auto dst = D.middleRows((t + 1) * n, n);
    for (int i = 0; i < nd; ++i) dst += sample.deltas(t, i) * theta.middleRows((t * nd + i) * n, n);
  }
  return D;
}

Matrix delta_bar_direct(const ScenarioSample& sample, const BltOperator& K,
                        const MultNoiseSystem& sys) {
  const int n = sys.n(), T = sample.horizon;
  check_sample(sample, sys, T);
  const StackedNominal nom = stacked_nominal(sys, T);
  const Matrix Z = nom.Z.dense();
  const Matrix Kd = K.dense();
  const Eigen::Index nT = static_cast<Eigen::Index>(n) * T;
  const Matrix IA = Eigen::kroneckerProduct(Matrix::Identity(T, T), stacked_directions_a(sys));
  const Matrix IB = Eigen::kroneckerProduct(Matrix::Identity(T, T), stacked_directions_b(sys));
  const Matrix closed = Matrix::Identity(nT, nT) - Z * (nom.A0cal.dense() + nom.B0cal.dense() * Kd);
  const Matrix inv = closed.partialPivLu().inverse();
  return -Z * sample.delta_frown(n) * (IA + IB * Kd) * inv;
}

SystemResponse perturbed_response(const BltOperator& K, const ScenarioSample& sample,
                                  const MultNoiseSystem& sys) {
  const int n = sys.n(), T = sample.horizon;
  check_sample(sample, sys, T);
  const BltOperator Acal = perturbed_stack(sys.A0, sys.A_dirs, sample);
  const BltOperator Bcal = perturbed_stack(sys.B0, sys.B_dirs, sample);
  const BltOperator Z = block_downshift(T, n);
  SystemResponse resp;
  resp.phi_x = blt_inverse(BltOperator::identity(T, n) - Z * (Acal + Bcal * K));
  resp.phi_u = K * resp.phi_x;
  return resp;
}

Matrix perturbed_residual(const SystemResponse& resp, const ScenarioSample& sample,
                          const MultNoiseSystem& sys) {
  const int n = sys.n(), T = resp.phi_x.horizon();
  check_sample(sample, sys, T);
  const BltOperator K = controller_from_response(resp);
  const Matrix theta1 = build_theta(K, sys, T).theta1;
  const Matrix dbar = sample.rcal(n) * theta1 * resp.phi_x.dense();
  const Eigen::Index nT = static_cast<Eigen::Index>(n) * T;
  const Matrix set_x = resp.phi_x.dense() * (Matrix::Identity(nT, nT) + dbar).inverse();
  const Matrix set_u = resp.phi_u.dense() * (Matrix::Identity(nT, nT) + dbar).inverse();
  const Matrix Z = block_downshift(T, n).dense();
  const Matrix Acal = perturbed_stack(sys.A0, sys.A_dirs, sample).dense();
  const Matrix Bcal = perturbed_stack(sys.B0, sys.B_dirs, sample).dense();
  return (Matrix::Identity(nT, nT) - Z * Acal) * set_x - Z * Bcal * set_u -
         Matrix::Identity(nT, nT);
}

Matrix omega(const ScenarioSample& sample, const Matrix& theta, int n) {
  Matrix O = delta_bar(sample, theta, n);
  O.diagonal().array() += 1.0;
  return O;
}

Matrix upsilon(const SystemResponse& resp, const MultNoiseSystem& sys) {
  const int n = sys.n(), T = resp.phi_x.horizon();
  if (resp.phi_x.block_rows() != n || resp.phi_u.block_rows() != sys.m()) {
    throw DimensionError("upsilon: response does not match system");
  }
  Matrix U = Matrix::Zero(static_cast<Eigen::Index>(n) * T, static_cast<Eigen::Index>(n) * T);
  for (int k = 0; k < T; ++k) {
    U.block(k * n, k * n, n, n) = resp.phi_x.block(k, 0);
    for (int j = 0; j < k; ++j) {
      // Pi_{k, k-j}
      const int d = k - j;
      U.block(k * n, j * n, n, n) = resp.phi_x.block(k, d) - sys.A0 * resp.phi_x.block(k - 1, d - 1) -
                                    sys.B0 * resp.phi_u.block(k - 1, d - 1);
    }
  }
  return U;
}

PsiLambda psi_and_lambda(const SystemResponse& resp, const Matrix& omega_matrix,
                         const MultNoiseSystem& sys) {
  const int n = sys.n(), T = resp.phi_x.horizon();
  const Eigen::Index nT = static_cast<Eigen::Index>(n) * T;
  if (omega_matrix.rows() != nT || omega_matrix.cols() != nT) {
    throw DimensionError("psi_and_lambda: Omega must be nT x nT");
  }
  const Matrix U = upsilon(resp, sys);
  PsiLambda out;
  out.psi = Matrix::Zero(nT, nT);
  for (int t = 0; t < T; ++t) {
    out.psi.block(t * n, t * n, n, n) = resp.phi_x.block(t, 0) - Matrix::Identity(n, n);
    for (int s = 0; s < t; ++s) {
      Matrix L = Matrix::Zero(n, n);
      for (int k = s; k <= t; ++k) {
        L.noalias() += U.block(t * n, k * n, n, n) * omega_matrix.block(k * n, s * n, n, n);
      }
      out.psi.block(t * n, s * n, n, n) = L;
      out.lambda.emplace(std::make_pair(t, s), std::move(L));
    }
  }
  return out;
}

Matrix psi_direct(const SystemResponse& resp, const Matrix& dbar, const MultNoiseSystem& sys) {
  const int n = sys.n(), T = resp.phi_x.horizon();
  const StackedNominal nom = stacked_nominal(sys, T);
  const Eigen::Index nT = static_cast<Eigen::Index>(n) * T;
  const Matrix Z = nom.Z.dense();
  const Matrix lhs = (Matrix::Identity(nT, nT) - Z * nom.A0cal.dense()) * resp.phi_x.dense() -
                     Z * nom.B0cal.dense() * resp.phi_u.dense();
  return lhs * (Matrix::Identity(nT, nT) + dbar) - Matrix::Identity(nT, nT);
}

LambdaAffine lambda_affine(const ResponseLayout& layout, const MultNoiseSystem& sys,
                           const Matrix& omega_matrix) {
  const int n = layout.n(), m = layout.m(), T = layout.horizon();
  const Eigen::Index nT = static_cast<Eigen::Index>(n) * T;
  if (omega_matrix.rows() != nT || omega_matrix.cols() != nT) {
    throw DimensionError("lambda_affine: Omega must be nT x nT");
  }
  const int rows = n * n * T * (T - 1) / 2;
  LambdaAffine out;
  out.G.resize(rows, layout.size());
  out.g = Vector::Zero(rows);
  std::vector<Eigen::Triplet<double>> trips;

  // Row t of Upsilon is X_t - A0 X_{t-1} - B0 U_{t-1} over dense columns a;
  // Lambda(t, s)(r, c) = sum_a Upsilon_t(r, a) Omega(a, s n + c).
  int row = 0;
  for (int t = 1; t < T; ++t) {
    for (int s = 0; s < t; ++s) {
      for (int c = 0; c < n; ++c) {
        const int col = s * n + c;
        for (int r = 0; r < n; ++r, ++row) {
          for (int a = s * n; a < (t + 1) * n; ++a) {
            const double w = omega_matrix(a, col);
            if (w == 0.0) continue;
            const int blk = a / n, ac = a % n;
            // X_t(r, a) = phi_x^{t, t - blk}(r, ac)
            const int idx = layout.x_index(t, t - blk, r, ac);
            if (idx >= 0) {
              trips.emplace_back(row, idx, w);
            } else {
              out.g(row) += w * layout.pinned_x(t, t - blk, r, ac);
            }
            if (blk > t - 1) continue;
            for (int l = 0; l < n; ++l) {
              const double coef = -sys.A0(r, l) * w;
              if (coef == 0.0) continue;
              const int xi = layout.x_index(t - 1, t - 1 - blk, l, ac);
              if (xi >= 0) {
                trips.emplace_back(row, xi, coef);
              } else {
                out.g(row) += coef * layout.pinned_x(t - 1, t - 1 - blk, l, ac);
              }
            }
            for (int l = 0; l < m; ++l) {
              const double coef = -sys.B0(r, l) * w;
              if (coef == 0.0) continue;
              trips.emplace_back(row, layout.u_index(t - 1, t - 1 - blk, l, ac), coef);
            }
          }
        }
      }
    }
  }
  out.G.setFromTriplets(trips.begin(), trips.end());
  return out;
}

double chernoff_radius(int n_delta, double eps) {
  if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("eps must lie in (0, 1)");
  if (n_delta < 1) throw std::invalid_argument("n_delta must be at least 1");
  const double l = std::log(1.0 / eps);
  return n_delta + 2.0 * std::sqrt(n_delta * l) + 2.0 * l;
}

EllipsoidSet::EllipsoidSet(Vector center, Matrix shape, double confidence)
    : center_(std::move(center)), shape_(std::move(shape)), confidence_(confidence) {
  if (shape_.rows() != center_.size() || shape_.cols() != center_.size()) {
    throw DimensionError("ellipsoid shape must be square and match the center");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (shape_ + shape_.transpose()));
  const Vector& ev = es.eigenvalues();
  const double cutoff = 1e-12 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  std::vector<int> keep;
  for (Eigen::Index k = 0; k < ev.size(); ++k) {
    if (ev(k) < -cutoff * 1e2) throw std::invalid_argument("ellipsoid shape must be PSD");
    if (ev(k) > cutoff) keep.push_back(static_cast<int>(k));
  }
  range_basis_ = Matrix(center_.size(), static_cast<Eigen::Index>(keep.size()));
  pinv_ = Matrix::Zero(center_.size(), center_.size());
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const Vector v = es.eigenvectors().col(keep[k]);
    range_basis_.col(static_cast<Eigen::Index>(k)) = v;
    pinv_.noalias() += v * v.transpose() / ev(keep[k]);
  }
}

double EllipsoidSet::distance(const Vector& x) const {
  const Vector d = x - center_;
  const double norm = d.norm();
  if (norm == 0.0) return 0.0;
  const Vector off = d - range_basis_ * (range_basis_.transpose() * d);
  if (off.norm() > 1e-8 * norm) return std::numeric_limits<double>::infinity();
  return d.dot(pinv_ * d);
}

namespace {

Matrix direction_covariance(const MultNoiseSystem& sys, const Matrix& K, const Vector& x,
                            const Matrix* post) {
  Matrix S = Matrix::Zero(post ? post->rows() : sys.n(), post ? post->rows() : sys.n());
  for (int i = 0; i < sys.n_delta(); ++i) {
    Vector v = (sys.A_dirs[i] + sys.B_dirs[i] * K) * x;
    if (post) v = *post * v;
    S.noalias() += sys.sigma[i] * sys.sigma[i] * v * v.transpose();
  }
  return S;
}

}  // namespace

EllipsoidSet state_ellipsoid(const MultNoiseSystem& sys, const Matrix& K, const Vector& x,
                             const Vector& w, double eps) {
  const double r = chernoff_radius(sys.n_delta(), eps);
  Vector center = (sys.A0 + sys.B0 * K) * x + w;
  return EllipsoidSet(std::move(center), r * direction_covariance(sys, K, x, nullptr), 1.0 - eps);
}

EllipsoidSet input_ellipsoid(const MultNoiseSystem& sys, const Matrix& K, const Vector& x,
                             const Vector& w, double eps) {
  const double r = chernoff_radius(sys.n_delta(), eps);
  Vector center = K * ((sys.A0 + sys.B0 * K) * x + w);
  return EllipsoidSet(std::move(center), r * direction_covariance(sys, K, x, &K), 1.0 - eps);
}

LambdaMethod lambda_method_from_string(const std::string& s) {
  if (s == "closed_form") return LambdaMethod::kClosedForm;
  if (s == "monte_carlo") return LambdaMethod::kMonteCarlo;
  throw std::invalid_argument("unknown lambda method '" + s + "'");
}

Matrix lambda_coefficients(const Matrix& theta, int n, int n_delta, int horizon) {
  const int T = horizon;
  const Eigen::Index nT = static_cast<Eigen::Index>(n) * T;
  if (theta.rows() != nT * n_delta || theta.cols() != nT) {
    throw DimensionError("lambda_coefficients: Theta shape mismatch");
  }
  Matrix M = Matrix::Zero(nT * nT, static_cast<Eigen::Index>(T) * n_delta);
  for (int t = 0; t + 1 < T; ++t) {
    for (int i = 0; i < n_delta; ++i) {
      // delta_t^{(i)} places rows (t, i) of Theta into block row t + 1.
      Matrix E = Matrix::Zero(nT, nT);
      E.middleRows((t + 1) * n, n) = theta.middleRows((t * n_delta + i) * n, n);
      M.col(t * n_delta + i) = Eigen::Map<const Vector>(E.data(), E.size());
    }
  }
  return M;
}

double lambda_bound(const Matrix& theta, const MultNoiseSystem& sys, int horizon,
                    LambdaMethod method, int mc_samples, std::uint64_t seed) {
  const int n = sys.n(), nd = sys.n_delta(), T = horizon;
  if (method == LambdaMethod::kClosedForm) {
    double total = 0.0;
    for (int t = 0; t + 1 < T; ++t) {
      for (int i = 0; i < nd; ++i) {
        total += sys.sigma[i] * sys.sigma[i] * theta.middleRows((t * nd + i) * n, n).squaredNorm();
      }
    }
    return total;
  }
  if (mc_samples < 1) throw std::invalid_argument("mc_samples must be positive");
  std::mt19937_64 rng(seed);
  ScenarioSample sample{T, Matrix()};
  double acc = 0.0;
  for (int k = 0; k < mc_samples; ++k) {
    sample.deltas = sample_deltas(sys, T, rng);
    acc += delta_bar(sample, theta, n).squaredNorm();
  }
  return acc / mc_samples;
}

}  // namespace mnsls
