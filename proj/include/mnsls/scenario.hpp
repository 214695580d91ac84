#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "mnsls/qp.hpp"
#include "mnsls/sls.hpp"
#include "mnsls/uncertainty.hpp"

namespace mnsls {

struct ScenarioConfig {
  double eps_tol = 5.8;   // residual tolerance, bound 2 eps_tol / (n T)
  double eps_risk = 0.1;  // risk level in the sample bound
  double beta = 1e-6;     // confidence complement in the sample bound
  int N = -1;             // scenario count; negative means required_scenarios
  std::uint64_t seed = 0;
  int bisection_steps = 20;
  int validation_factor = 10;  // fresh scenarios per drawn one for the a-posteriori check
  QpSettings qp;

  void validate() const;
};

/// ceil((2 / (1 - eps_risk)) (ln(1 / beta) + n (m + n) T^2)).
long long required_scenarios(double beta, double eps_risk, int n, int m, int horizon);

/// Sample k is drawn from its own stream derive_seed(seed, k), so a smaller
/// N gives a prefix of a larger one.
std::vector<ScenarioSample> draw_scenarios(const MultNoiseSystem& sys, int horizon, int N,
                                           std::uint64_t seed);

/// Componentwise bound 2 eps_tol / (n T).
double lambda_bound_level(double eps_tol, int n, int horizon);

struct P7Problem {
  QpProblem qp;
  ResponseLayout layout;
  double objective_constant = 0.0;
  std::vector<Vector> constants;  // per scenario, g of Lambda = G z + g
  int rows_per_scenario = 0;
};

/// Decision vector: strictly lower phi_x blocks (diagonal pinned to I) and
/// every phi_u block. Each scenario contributes |Lambda(Phi; Omega^k)| <=
/// bound on all strictly lower blocks, with Omega^k = I + Rcal^k Theta and
/// Theta taken from `reference_theta`. With no samples the nominal affine
/// constraint is imposed as an equality instead.
P7Problem assemble_p7(const MultNoiseSystem& sys, const CostModel& cost, int horizon,
                      double eps_tol, const std::vector<ScenarioSample>& samples,
                      const Matrix& reference_theta);

struct SynthesisResult {
  SystemResponse response;
  BltOperator controller;
  double alpha = 0.0;  // epigraph value, the SLS objective at the solution
  QpStatus qp_status = QpStatus::kMaxIters;
  int qp_iterations = 0;
  int N = 0;
  long long N_required = 0;
  bool N_override = false;  // N below the sample bound
  double eps_tol = 0.0;
  double bound = 0.0;
  /// Smallest eps_tol found feasible by bisection when the requested one is
  /// infeasible; equals eps_tol otherwise.
  double eps_tol_used = 0.0;
  std::vector<double> scenario_violation;  // max(|Lambda|) - bound per scenario
  double max_violation = 0.0;              // max(0, max scenario_violation)
  double lambda = 0.0;
  double lambda_level = 0.0;  // 1 - lambda / eps_tol^2
  int validation_scenarios = 0;
  double empirical_violation = 0.0;  // fraction of fresh scenarios violating the bound
};

SynthesisResult solve_p7(const MultNoiseSystem& sys, const CostModel& cost, int horizon,
                         const ScenarioConfig& cfg);

/// Max over strictly lower blocks of |Lambda(resp; Omega)| - bound.
double scenario_violation(const SystemResponse& resp, const Matrix& omega_matrix,
                          const MultNoiseSystem& sys, double bound);

nlohmann::json synthesis_to_json(const SynthesisResult& r);

}  // namespace mnsls
