#include "mnsls/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace mnsls {

namespace {

// max |Lambda(t, s)| over strictly lower blocks for Psi = Upsilon * Omega - I.
double max_lambda(const Matrix& ups, const Matrix& omega_matrix, int n, int horizon) {
  double worst = 0.0;
  for (int t = 1; t < horizon; ++t) {
    const Matrix row = ups.middleRows(t * n, n).leftCols((t + 1) * n) *
                       omega_matrix.topLeftCorner((t + 1) * n, t * n);
    worst = std::max(worst, row.cwiseAbs().maxCoeff());
  }
  return worst;
}

QpSolution solve_scaled(const P7Problem& p, double bound, const QpSettings& settings) {
  QpProblem qp = p.qp;
  for (std::size_t k = 0; k < p.constants.size(); ++k) {
    const auto off = static_cast<Eigen::Index>(k) * p.rows_per_scenario;
    qp.lo.segment(off, p.rows_per_scenario) = -bound * Vector::Ones(p.rows_per_scenario) - p.constants[k];
    qp.hi.segment(off, p.rows_per_scenario) = bound * Vector::Ones(p.rows_per_scenario) - p.constants[k];
  }
  return qp_solve(qp, settings);
}

}  // namespace

void ScenarioConfig::validate() const {
  if (!(eps_tol > 0.0)) throw std::invalid_argument("eps_tol must be positive");
  if (!(eps_risk > 0.0 && eps_risk < 1.0)) throw std::invalid_argument("eps_risk must lie in (0, 1)");
  if (!(beta > 0.0 && beta < 1.0)) throw std::invalid_argument("beta must lie in (0, 1)");
  if (bisection_steps < 0 || validation_factor < 0) {
    throw std::invalid_argument("bisection_steps and validation_factor must be nonnegative");
  }
}

long long required_scenarios(double beta, double eps_risk, int n, int m, int horizon) {
  if (!(beta > 0.0 && beta < 1.0)) throw std::invalid_argument("beta must lie in (0, 1)");
  if (!(eps_risk > 0.0 && eps_risk < 1.0)) throw std::invalid_argument("eps_risk must lie in (0, 1)");
  if (n < 1 || m < 1 || horizon < 1) throw std::invalid_argument("dimensions must be positive");
  const double T = horizon;
  const double value = (2.0 / (1.0 - eps_risk)) * (std::log(1.0 / beta) + n * (m + n) * T * T);
  // Guard against a value that is an integer up to round-off.
  const double r = std::round(value);
  if (std::abs(value - r) < 1e-9 * std::max(1.0, value)) return static_cast<long long>(r);
  return static_cast<long long>(std::ceil(value));
}

std::vector<ScenarioSample> draw_scenarios(const MultNoiseSystem& sys, int horizon, int N,
                                           std::uint64_t seed) {
  std::vector<ScenarioSample> out;
  out.reserve(static_cast<std::size_t>(std::max(N, 0)));
  for (int k = 0; k < N; ++k) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    out.push_back({horizon, sample_deltas(sys, horizon, rng)});
  }
  return out;
}

double lambda_bound_level(double eps_tol, int n, int horizon) {
  return 2.0 * eps_tol / (static_cast<double>(n) * horizon);
}

P7Problem assemble_p7(const MultNoiseSystem& sys, const CostModel& cost, int horizon,
                      double eps_tol, const std::vector<ScenarioSample>& samples,
                      const Matrix& reference_theta) {
  const int n = sys.n(), m = sys.m(), T = horizon;
  sys.validate();
  cost.validate(n, m, T);
  P7Problem p{QpProblem(), ResponseLayout(T, n, m, 1), 0.0, {}, n * n * T * (T - 1) / 2};
  const QuadraticObjective obj = sls_quadratic_objective(p.layout, cost);
  p.objective_constant = obj.constant;
  p.qp = QpProblem::unconstrained(obj.P, obj.q);

  if (samples.empty()) {
    const LinearConstraints eq = affine_constraint_rows(p.layout, sys);
    p.qp.A_eq = eq.A.sparseView();
    p.qp.b_eq = eq.b;
    return p;
  }

  const double bound = lambda_bound_level(eps_tol, n, T);
  const int rows = p.rows_per_scenario;
  const auto total = static_cast<Eigen::Index>(rows) * static_cast<Eigen::Index>(samples.size());
  std::vector<Eigen::Triplet<double>> trips;
  p.qp.lo.resize(total);
  p.qp.hi.resize(total);
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const ScenarioSample& s = samples[k];
    if (s.horizon != T || s.n_delta() != sys.n_delta()) {
      throw DimensionError("assemble_p7: sample does not match system/horizon");
    }
    const LambdaAffine la = lambda_affine(p.layout, sys, omega(s, reference_theta, n));
    const auto off = static_cast<Eigen::Index>(k) * rows;
    for (int c = 0; c < la.G.outerSize(); ++c) {
      for (SparseMatrix::InnerIterator it(la.G, c); it; ++it) {
        trips.emplace_back(static_cast<int>(off + it.row()), c, it.value());
      }
    }
    p.qp.lo.segment(off, rows) = -bound * Vector::Ones(rows) - la.g;
    p.qp.hi.segment(off, rows) = bound * Vector::Ones(rows) - la.g;
    p.constants.push_back(la.g);
  }
  p.qp.G.resize(total, p.layout.size());
  p.qp.G.setFromTriplets(trips.begin(), trips.end());
  return p;
}

double scenario_violation(const SystemResponse& resp, const Matrix& omega_matrix,
                          const MultNoiseSystem& sys, double bound) {
  const int T = resp.phi_x.horizon();
  return max_lambda(upsilon(resp, sys), omega_matrix, sys.n(), T) - bound;
}

SynthesisResult solve_p7(const MultNoiseSystem& sys, const CostModel& cost, int horizon,
                         const ScenarioConfig& cfg) {
  cfg.validate();
  const int n = sys.n(), m = sys.m(), T = horizon;
  SynthesisResult out;
  out.N_required = required_scenarios(cfg.beta, cfg.eps_risk, n, m, T);
  out.N = cfg.N >= 0 ? cfg.N : static_cast<int>(std::min<long long>(out.N_required, 1 << 30));
  out.N_override = out.N < out.N_required;
  out.eps_tol = cfg.eps_tol;
  out.eps_tol_used = cfg.eps_tol;
  out.bound = lambda_bound_level(cfg.eps_tol, n, T);

  // Omega^k is built around the nominal optimum's controller.
  const NominalSolution nominal = nominal_sls_solve(sys, cost, T);
  const BltOperator K_ref = controller_from_response(nominal.response);
  const Matrix theta = build_theta(K_ref, sys, T).theta;

  const std::vector<ScenarioSample> samples = draw_scenarios(sys, T, out.N, cfg.seed);
  const P7Problem p = assemble_p7(sys, cost, T, cfg.eps_tol, samples, theta);

  QpSolution sol = qp_solve(p.qp, cfg.qp);
  out.qp_status = sol.status;
  out.qp_iterations = sol.iterations;

  if (sol.status == QpStatus::kInfeasible && !samples.empty()) {
    // Grow eps_tol until feasible, then bisect down toward the requested value.
    double lo = cfg.eps_tol, hi = cfg.eps_tol;
    QpSolution best;
    bool found = false;
    for (int k = 0; k < 60 && !found; ++k) {
      hi *= 2.0;
      best = solve_scaled(p, lambda_bound_level(hi, n, T), cfg.qp);
      found = best.status == QpStatus::kOptimal;
      if (!found) lo = hi;
    }
    if (!found) return out;
    for (int k = 0; k < cfg.bisection_steps; ++k) {
      const double mid = 0.5 * (lo + hi);
      QpSolution trial = solve_scaled(p, lambda_bound_level(mid, n, T), cfg.qp);
      // An unconverged solve near the boundary does not count as feasible.
      if (trial.status != QpStatus::kOptimal) {
        lo = mid;
      } else {
        hi = mid;
        best = std::move(trial);
      }
    }
    out.eps_tol_used = hi;
    sol = std::move(best);
  }

  out.response = p.layout.unpack(sol.z);
  out.controller = controller_from_response(out.response);
  out.alpha = sls_objective(out.response, cost);

  const double bound_used = lambda_bound_level(out.eps_tol_used, n, T);
  const Matrix ups = upsilon(out.response, sys);
  out.scenario_violation.reserve(samples.size());
  for (const ScenarioSample& s : samples) {
    const double v = max_lambda(ups, omega(s, theta, n), n, T) - bound_used;
    out.scenario_violation.push_back(v);
    out.max_violation = std::max(out.max_violation, v);
  }

  out.lambda = lambda_bound(build_theta(out.controller, sys, T).theta, sys, T,
                            LambdaMethod::kClosedForm);
  out.lambda_level = 1.0 - out.lambda / (out.eps_tol_used * out.eps_tol_used);

  if (!samples.empty() && cfg.validation_factor > 0) {
    out.validation_scenarios = cfg.validation_factor * out.N;
    // Fresh stream: indices past any drawn sample.
    const std::uint64_t fresh_seed = derive_seed(cfg.seed, 0xF2E5D00DULL);
    int violated = 0;
    for (int k = 0; k < out.validation_scenarios; ++k) {
      std::mt19937_64 rng(derive_seed(fresh_seed, static_cast<std::uint64_t>(k)));
      const ScenarioSample s{T, sample_deltas(sys, T, rng)};
      if (max_lambda(ups, omega(s, theta, n), n, T) > bound_used + 1e-9) ++violated;
    }
    out.empirical_violation = static_cast<double>(violated) / out.validation_scenarios;
  }
  return out;
}

nlohmann::json synthesis_to_json(const SynthesisResult& r) {
  nlohmann::json j;
  j["response"] = response_to_json(r.response);
  j["controller"] = blt_to_json(r.controller);
  j["alpha"] = r.alpha;
  j["qp_status"] = to_string(r.qp_status);
  j["qp_iterations"] = r.qp_iterations;
  j["N"] = r.N;
  j["N_required"] = r.N_required;
  j["N_override"] = r.N_override;
  j["eps_tol"] = r.eps_tol;
  j["eps_tol_used"] = r.eps_tol_used;
  j["bound"] = r.bound;
  j["scenario_violation"] = r.scenario_violation;
  j["max_violation"] = r.max_violation;
  j["lambda"] = r.lambda;
  j["lambda_level"] = r.lambda_level;
  j["validation_scenarios"] = r.validation_scenarios;
  j["empirical_violation"] = r.empirical_violation;
  return j;
}

}  // namespace mnsls
