#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mnsls/scenario.hpp"

namespace mnsls {

struct EvalReport {
  int n_rollouts = 0;
  std::uint64_t seed = 0;
  double mean_cost = 0.0;
  double std_error = 0.0;
  double min_cost = 0.0;
  double max_cost = 0.0;
  double q10 = 0.0;
  double q50 = 0.0;
  double q90 = 0.0;
  // Per-step bands, T x n (states) and T x m (inputs).
  Matrix state_q10, state_q50, state_q90;
  Matrix input_q10, input_q50, input_q90;
};

/// Linear-interpolation quantile of `values` (copied and sorted).
double quantile(std::vector<double> values, double p);

/// Rollout r uses sample_noise(sys, T, x0, derive_seed(seed, r)); costs
/// are lqr_cost with (Q, R).
EvalReport evaluate(const MultNoiseSystem& sys, const BltOperator& K, const Matrix& Q,
                    const Matrix& R, const Vector& x0, int n_rollouts, std::uint64_t seed);

nlohmann::json eval_to_json(const EvalReport& r);

struct SweepRow {
  int N = 0;
  int repeat = 0;
  std::string status;
  double alpha = 0.0;
  double mean_cost = 0.0;
  double q10 = 0.0;
  double q50 = 0.0;
  double q90 = 0.0;
  double max_violation = 0.0;
  double solve_ms = 0.0;

  bool operator==(const SweepRow&) const = default;
};

struct SweepAggregate {
  int N = 0;
  double mean_of_means = 0.0;
  double q10_of_means = 0.0;
  double q90_of_means = 0.0;
  double mean_band = 0.0;  // average q90 - q10 across repeats
};

struct SweepReport {
  std::vector<SweepRow> rows;

  std::vector<SweepAggregate> aggregate() const;
};

struct SweepConfig {
  std::vector<int> N_list{50, 200, 1000};
  int repeats = 25;
  std::uint64_t master_seed = 0;
  int n_rollouts = 2000;
  Vector x0;  // empty means ones
  bool record_timing = true;
};

/// Repeat r draws its scenarios from derive_seed(master, r) for every N, so
/// scenario sets are nested across N. Every controller is evaluated on the
/// same held-out traces. Solver failures are recorded in the row's status.
SweepReport experiment_sweep(const MultNoiseSystem& sys, const CostModel& cost, int horizon,
                             const ScenarioConfig& base, const SweepConfig& sweep);

void export_csv(const SweepReport& report, const std::string& path);
SweepReport import_csv(const std::string& path);
std::string sweep_csv(const SweepReport& report);
SweepReport parse_sweep_csv(const std::string& text);

void export_json(const nlohmann::json& j, const std::string& path);
nlohmann::json import_json(const std::string& path);

/// One-sided paired t-test of H0: mean(after - before) <= 0 against an
/// increase. `increase_significant` is set when H0 is rejected at `level`.
struct PairedTrend {
  double mean_diff = 0.0;  // mean of after - before
  double t_stat = 0.0;
  double p_increase = 1.0;
  bool increase_significant = false;
};

PairedTrend paired_trend(const std::vector<double>& before, const std::vector<double>& after,
                         double level = 0.05);

/// Scalar example: a = 0.8, b = 0.5, truncated normal with sigma 0.5, Q = R = 1.
MultNoiseSystem example_system();
CostModel example_cost(int horizon);

/// {system, cost{Q,R,w_spec}, horizon, scenario{eps_tol,eps_risk,beta,N_list,repeats},
///  eval{n_rollouts,x0}, seed}
struct ExperimentConfig {
  MultNoiseSystem system;
  CostModel cost;
  int horizon = 10;
  ScenarioConfig scenario;
  SweepConfig sweep;
};

ExperimentConfig experiment_from_json(const nlohmann::json& j);

}  // namespace mnsls
