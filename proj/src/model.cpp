#include "mnsls/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace mnsls {

namespace {

double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }
double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double min_eigenvalue(const Matrix& S) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (S + S.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

}  // namespace

void MultNoiseSystem::validate() const {
  const int nx = n();
  if (nx < 1 || A0.cols() != nx) throw DimensionError("A0 must be square and nonempty");
  if (B0.rows() != nx || B0.cols() < 1) throw DimensionError("B0 must be n x m with m >= 1");
  if (static_cast<int>(A_dirs.size()) != n_delta() ||
      static_cast<int>(B_dirs.size()) != n_delta()) {
    throw DimensionError("A_dirs, B_dirs and sigma must have equal length");
  }
  for (int i = 0; i < n_delta(); ++i) {
    if (A_dirs[i].rows() != nx || A_dirs[i].cols() != nx) {
      throw DimensionError("A_dirs[" + std::to_string(i) + "] must be n x n");
    }
    if (B_dirs[i].rows() != nx || B_dirs[i].cols() != m()) {
      throw DimensionError("B_dirs[" + std::to_string(i) + "] must be n x m");
    }
    if (!(sigma[i] >= 0.0)) throw std::invalid_argument("sigma must be nonnegative");
  }
  if (alpha.size() != nx) throw DimensionError("alpha must have n entries");
  if ((alpha.array() < 0.0).any()) throw std::invalid_argument("alpha must be nonnegative");
  if (delta_dist.kind != DeltaDistribution::Kind::kGaussian && !(delta_dist.lo < delta_dist.hi)) {
    throw std::invalid_argument("delta distribution bounds must satisfy lo < hi");
  }
}

MultNoiseSystem MultNoiseSystem::scalar(double a, double b, double sigma,
                                        DeltaDistribution dist, double alpha) {
  MultNoiseSystem sys;
  sys.A0 = Matrix::Constant(1, 1, a);
  sys.B0 = Matrix::Constant(1, 1, b);
  sys.A_dirs = {Matrix::Ones(1, 1)};
  sys.B_dirs = {Matrix::Zero(1, 1)};
  sys.sigma = {sigma};
  sys.delta_dist = dist;
  sys.alpha = Vector::Constant(1, alpha);
  return sys;
}

DeltaSampler::DeltaSampler(DeltaDistribution dist) : dist_(dist) {
  switch (dist_.kind) {
    case DeltaDistribution::Kind::kGaussian:
      break;
    case DeltaDistribution::Kind::kTruncatedGaussian: {
      const double a = dist_.lo, b = dist_.hi;
      const double z = normal_cdf(b) - normal_cdf(a);
      if (!(z > 0.0)) throw std::invalid_argument("truncation interval has no mass");
      mean_ = (normal_pdf(a) - normal_pdf(b)) / z;
      const double var = 1.0 + (a * normal_pdf(a) - b * normal_pdf(b)) / z - mean_ * mean_;
      stddev_ = std::sqrt(var);
      break;
    }
    case DeltaDistribution::Kind::kUniform:
      mean_ = 0.5 * (dist_.lo + dist_.hi);
      stddev_ = (dist_.hi - dist_.lo) / std::sqrt(12.0);
      break;
  }
}

double DeltaSampler::operator()(std::mt19937_64& rng) const {
  switch (dist_.kind) {
    case DeltaDistribution::Kind::kGaussian: {
      std::normal_distribution<double> g(0.0, 1.0);
      return g(rng);
    }
    case DeltaDistribution::Kind::kTruncatedGaussian: {
      std::normal_distribution<double> g(0.0, 1.0);
      double v;
      do {
        v = g(rng);
      } while (v < dist_.lo || v > dist_.hi);
      return (v - mean_) / stddev_;
    }
    case DeltaDistribution::Kind::kUniform: {
      std::uniform_real_distribution<double> u(dist_.lo, dist_.hi);
      return (u(rng) - mean_) / stddev_;
    }
  }
  return 0.0;
}

Matrix sample_deltas(const MultNoiseSystem& sys, int horizon, std::mt19937_64& rng) {
  const DeltaSampler sampler(sys.delta_dist);
  Matrix deltas(horizon, sys.n_delta());
  for (int t = 0; t < horizon; ++t) {
    for (int i = 0; i < sys.n_delta(); ++i) deltas(t, i) = sys.sigma[i] * sampler(rng);
  }
  return deltas;
}

NoiseTrace sample_noise(const MultNoiseSystem& sys, int horizon, const Vector& x0,
                        std::uint64_t seed) {
  if (horizon < 1) throw std::invalid_argument("horizon must be at least 1");
  const int n = sys.n();
  if (x0.size() != n) throw DimensionError("x0 must have n entries");
  std::mt19937_64 rng(seed);
  NoiseTrace trace;
  trace.horizon = horizon;
  trace.deltas = sample_deltas(sys, horizon, rng);
  trace.w = Vector::Zero(static_cast<Eigen::Index>(n) * horizon);
  trace.w.head(n) = x0;
  std::normal_distribution<double> g(0.0, 1.0);
  for (int t = 1; t < horizon; ++t) {
    for (int k = 0; k < n; ++k) {
      const double std_k = std::sqrt(sys.alpha(k));
      trace.w(t * n + k) = std_k > 0.0 ? std_k * g(rng) : 0.0;
    }
  }
  return trace;
}

Vector step(const MultNoiseSystem& sys, const Vector& x, const Vector& u,
            const Vector& delta, const Vector& w) {
  if (x.size() != sys.n() || u.size() != sys.m() || delta.size() != sys.n_delta() ||
      w.size() != sys.n()) {
    throw DimensionError("step: operand sizes do not match the system");
  }
  Matrix A = sys.A0;
  Matrix B = sys.B0;
  for (int i = 0; i < sys.n_delta(); ++i) {
    A += delta(i) * sys.A_dirs[i];
    B += delta(i) * sys.B_dirs[i];
  }
  return A * x + B * u + w;
}

Trajectory rollout(const MultNoiseSystem& sys, const BltOperator& K,
                   const NoiseTrace& trace) {
  const int n = sys.n(), m = sys.m(), T = trace.horizon;
  if (K.horizon() != T) throw DimensionError("rollout: controller horizon differs from trace");
  if (K.block_rows() != m || K.block_cols() != n) {
    throw DimensionError("rollout: controller blocks must be m x n");
  }
  Trajectory traj{Matrix::Zero(T, n), Matrix::Zero(T, m)};
  traj.states.row(0) = trace.w.head(n).transpose();
  for (int t = 0; t < T; ++t) {
    Vector u = Vector::Zero(m);
    for (int s = 0; s <= t; ++s) u.noalias() += K.block(t, t - s) * traj.states.row(s).transpose();
    traj.inputs.row(t) = u.transpose();
    if (t + 1 < T) {
      traj.states.row(t + 1) =
          step(sys, traj.states.row(t).transpose(), u, trace.deltas.row(t).transpose(),
               trace.w.segment((t + 1) * n, n))
              .transpose();
    }
  }
  return traj;
}

void check_cost_weights(const Matrix& Q, const Matrix& R) {
  if (Q.rows() != Q.cols() || R.rows() != R.cols()) {
    throw DimensionError("Q and R must be square");
  }
  if (min_eigenvalue(Q) < -1e-10) throw std::invalid_argument("Q must be positive semidefinite");
  if (min_eigenvalue(R) <= 1e-12) throw std::invalid_argument("R must be positive definite");
}

double lqr_cost(const Trajectory& traj, const Matrix& Q, const Matrix& R) {
  check_cost_weights(Q, R);
  if (traj.states.cols() != Q.rows() || traj.inputs.cols() != R.rows()) {
    throw DimensionError("lqr_cost: weights do not match trajectory");
  }
  double cost = 0.0;
  for (Eigen::Index t = 0; t < traj.states.rows(); ++t) {
    cost += traj.states.row(t) * Q * traj.states.row(t).transpose();
    cost += traj.inputs.row(t) * R * traj.inputs.row(t).transpose();
  }
  return cost;
}

StackedNominal stacked_nominal(const MultNoiseSystem& sys, int horizon) {
  if (horizon < 1) throw std::invalid_argument("horizon must be at least 1");
  std::vector<Matrix> a(horizon, sys.A0), b(horizon, sys.B0);
  a.back().setZero();
  b.back().setZero();
  return {block_downshift(horizon, sys.n()), BltOperator::block_diagonal(a),
          BltOperator::block_diagonal(b)};
}

MsDiagnostic ms_diagnostic(const MultNoiseSystem& sys, const BltOperator& K,
                           int horizon_long, int n_rollouts, std::uint64_t seed,
                           const Vector& x0_in) {
  const int n = sys.n(), m = sys.m(), T = K.horizon();
  if (K.block_rows() != m || K.block_cols() != n) {
    throw DimensionError("ms_diagnostic: controller blocks must be m x n");
  }
  const Vector x0 = x0_in.size() == 0 ? Vector::Ones(n) : x0_in;
  MsDiagnostic out;
  out.second_moment.assign(horizon_long, 0.0);
  const DeltaSampler sampler(sys.delta_dist);
  const Vector zero_w = Vector::Zero(n);
  std::vector<Vector> xs(horizon_long);
  for (int r = 0; r < n_rollouts; ++r) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    xs[0] = x0;
    for (int t = 0; t < horizon_long; ++t) {
      out.second_moment[t] += xs[t].squaredNorm();
      if (t + 1 == horizon_long) break;
      Vector u = Vector::Zero(m);
      if (t < T) {
        for (int s = 0; s <= t; ++s) u.noalias() += K.block(t, t - s) * xs[s];
      } else {
        u.noalias() = K.block(0, 0) * xs[t];
      }
      Vector delta(sys.n_delta());
      for (int i = 0; i < sys.n_delta(); ++i) delta(i) = sys.sigma[i] * sampler(rng);
      xs[t + 1] = step(sys, xs[t], u, delta, zero_w);
    }
  }
  for (double& v : out.second_moment) v /= std::max(n_rollouts, 1);
  const int window = std::max(1, horizon_long / 10);
  double head = 0.0, tail = 0.0;
  for (int k = 0; k < window; ++k) {
    head += out.second_moment[k];
    tail += out.second_moment[horizon_long - 1 - k];
  }
  out.decreasing = tail < head;
  return out;
}

nlohmann::json system_to_json(const MultNoiseSystem& sys) {
  nlohmann::json a_dirs = nlohmann::json::array(), b_dirs = nlohmann::json::array();
  for (const auto& a : sys.A_dirs) a_dirs.push_back(matrix_to_json(a));
  for (const auto& b : sys.B_dirs) b_dirs.push_back(matrix_to_json(b));
  nlohmann::json dist;
  switch (sys.delta_dist.kind) {
    case DeltaDistribution::Kind::kGaussian:
      dist = {{"type", "gaussian"}};
      break;
    case DeltaDistribution::Kind::kTruncatedGaussian:
      dist = {{"type", "truncated_gaussian"}, {"lo", sys.delta_dist.lo}, {"hi", sys.delta_dist.hi}};
      break;
    case DeltaDistribution::Kind::kUniform:
      dist = {{"type", "uniform"}, {"lo", sys.delta_dist.lo}, {"hi", sys.delta_dist.hi}};
      break;
  }
  return {{"n", sys.n()},
          {"m", sys.m()},
          {"n_delta", sys.n_delta()},
          {"A0", matrix_to_json(sys.A0)},
          {"B0", matrix_to_json(sys.B0)},
          {"A_dirs", a_dirs},
          {"B_dirs", b_dirs},
          {"sigma", sys.sigma},
          {"delta_dist", dist},
          {"alpha", std::vector<double>(sys.alpha.data(), sys.alpha.data() + sys.alpha.size())}};
}

MultNoiseSystem system_from_json(const nlohmann::json& j) {
  MultNoiseSystem sys;
  const int n = j.at("n").get<int>();
  const int m = j.at("m").get<int>();
  const int nd = j.at("n_delta").get<int>();
  auto read = [](const nlohmann::json& v, int rows, int cols) {
    Matrix mat = matrix_from_json(v);
    // Flat arrays for 1 x k matrices come back as columns.
    if (mat.rows() != rows && mat.cols() == rows && mat.rows() == cols) mat.transposeInPlace();
    if (mat.rows() != rows || mat.cols() != cols) {
      throw DimensionError("system file: matrix has the wrong shape");
    }
    return mat;
  };
  sys.A0 = read(j.at("A0"), n, n);
  sys.B0 = read(j.at("B0"), n, m);
  for (const auto& a : j.at("A_dirs")) sys.A_dirs.push_back(read(a, n, n));
  for (const auto& b : j.at("B_dirs")) sys.B_dirs.push_back(read(b, n, m));
  sys.sigma = j.at("sigma").get<std::vector<double>>();
  if (static_cast<int>(sys.sigma.size()) != nd) {
    throw DimensionError("system file: sigma length differs from n_delta");
  }
  if (j.contains("delta_dist")) {
    const auto& d = j.at("delta_dist");
    const std::string type = d.is_string() ? d.get<std::string>() : d.at("type").get<std::string>();
    if (type == "gaussian") {
      sys.delta_dist = DeltaDistribution::gaussian();
    } else if (type == "truncated_gaussian") {
      sys.delta_dist = DeltaDistribution::truncated_gaussian(d.is_object() ? d.value("lo", -2.0) : -2.0,
                                                             d.is_object() ? d.value("hi", 2.0) : 2.0);
    } else if (type == "uniform") {
      sys.delta_dist = DeltaDistribution::uniform(d.is_object() ? d.value("lo", -1.0) : -1.0,
                                                  d.is_object() ? d.value("hi", 1.0) : 1.0);
    } else {
      throw std::invalid_argument("unknown delta_dist type '" + type + "'");
    }
  }
  if (j.contains("alpha")) {
    const auto a = j.at("alpha").get<std::vector<double>>();
    sys.alpha = Eigen::Map<const Vector>(a.data(), static_cast<Eigen::Index>(a.size()));
  } else {
    sys.alpha = Vector::Zero(n);
  }
  sys.validate();
  return sys;
}

}  // namespace mnsls
