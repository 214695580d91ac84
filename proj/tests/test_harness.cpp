#include <gtest/gtest.h>

#include <locale>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "mnsls/harness.hpp"

using namespace mnsls;

TEST(Quantile, Interpolates) {
  EXPECT_DOUBLE_EQ(quantile({3.0, 1.0, 2.0}, 0.5), 2.0);
  EXPECT_DOUBLE_EQ(quantile({0.0, 10.0}, 0.1), 1.0);
  EXPECT_DOUBLE_EQ(quantile({4.0}, 0.9), 4.0);
  EXPECT_THROW(quantile({}, 0.5), std::invalid_argument);
}

TEST(Evaluate, DeterministicSystemHasNoSpread) {
  const MultNoiseSystem sys = MultNoiseSystem::scalar(0.8, 0.5, 0.0);
  const BltOperator K = BltOperator::block_diagonal(std::vector<Matrix>(6, Matrix::Constant(1, 1, -0.5)));
  const EvalReport r = evaluate(sys, K, Matrix::Ones(1, 1), Matrix::Ones(1, 1), Vector::Ones(1), 50, 3);
  EXPECT_EQ(r.q10, r.q90);
  EXPECT_NEAR(r.mean_cost, r.q10, 1e-12);
  EXPECT_NEAR(r.std_error, 0.0, 1e-12);
  double x = 1.0, cost = 0.0;
  for (int t = 0; t < 6; ++t) {
    cost += 1.25 * x * x;
    x *= 0.8 - 0.25;
  }
  EXPECT_NEAR(r.mean_cost, cost, 1e-12);
}

TEST(Evaluate, OpenLoopMomentRecursion) {
  const MultNoiseSystem sys = example_system();
  const int T = 10;
  const EvalReport r = evaluate(sys, BltOperator(T, 1, 1), Matrix::Ones(1, 1), Matrix::Ones(1, 1),
                                Vector::Ones(1), 40000, 5);
  double m2 = 1.0, expected = 0.0;
  for (int t = 0; t < T; ++t) {
    expected += m2;
    m2 *= 0.8 * 0.8 + 0.25;
  }
  EXPECT_NEAR(r.mean_cost, expected, 3.0 * r.std_error);
  EXPECT_LE(r.min_cost, r.mean_cost);
  EXPECT_GE(r.max_cost, r.mean_cost);
  EXPECT_LE(r.q10, r.q50);
  EXPECT_LE(r.q50, r.q90);
  EXPECT_EQ(r.state_q10.rows(), T);
}

TEST(Evaluate, StandardErrorShrinks) {
  const MultNoiseSystem sys = example_system();
  const BltOperator K(10, 1, 1);
  const Matrix I = Matrix::Ones(1, 1);
  const EvalReport a = evaluate(sys, K, I, I, Vector::Ones(1), 20000, 8);
  const EvalReport b = evaluate(sys, K, I, I, Vector::Ones(1), 40000, 8);
  EXPECT_NEAR(b.std_error / a.std_error, 1.0 / std::sqrt(2.0), 0.05);
}

TEST(Evaluate, SeedDeterminism) {
  const MultNoiseSystem sys = example_system();
  const BltOperator K(5, 1, 1);
  const Matrix I = Matrix::Ones(1, 1);
  EXPECT_EQ(eval_to_json(evaluate(sys, K, I, I, Vector::Ones(1), 100, 4)).dump(),
            eval_to_json(evaluate(sys, K, I, I, Vector::Ones(1), 100, 4)).dump());
}

namespace {

SweepReport sample_report() {
  SweepReport r;
  r.rows.push_back({50, 0, "optimal", 12.97, 14.1 / 3.0, 0.1, 1e-300, 1e300, 0.0, 0.0});
  r.rows.push_back({200, 1, "infeasible", 0.30000000000000004, -2.5, 3.0, 4.0, 5.0, 6.5e-7, 12.75});
  return r;
}

}  // namespace

TEST(SweepCsv, RoundTrip) {
  const SweepReport r = sample_report();
  const std::string text = sweep_csv(r);
  EXPECT_EQ(text.substr(0, text.find('\n')),
            "N,repeat,status,alpha,mean_cost,q10,q50,q90,max_violation,solve_ms");
  EXPECT_EQ(parse_sweep_csv(text).rows, r.rows);

  const auto path = std::filesystem::temp_directory_path() / "mnsls_sweep_roundtrip.csv";
  export_csv(r, path.string());
  EXPECT_EQ(import_csv(path.string()).rows, r.rows);
  std::filesystem::remove(path);
}

TEST(SweepCsv, EmptyIsHeaderOnly) {
  const std::string text = sweep_csv(SweepReport());
  EXPECT_EQ(text, "N,repeat,status,alpha,mean_cost,q10,q50,q90,max_violation,solve_ms\n");
  EXPECT_TRUE(parse_sweep_csv(text).rows.empty());
}

namespace {

struct CommaDecimal : std::numpunct<char> {
  char do_decimal_point() const override { return ','; }
  char do_thousands_sep() const override { return '.'; }
  std::string do_grouping() const override { return "\3"; }
};

}  // namespace

TEST(SweepCsv, LocaleIndependent) {
  const std::string before = sweep_csv(sample_report());
  const std::locale saved = std::locale::global(std::locale(std::locale::classic(), new CommaDecimal));
  const std::string after = sweep_csv(sample_report());
  const SweepReport parsed = parse_sweep_csv(after);
  std::locale::global(saved);
  EXPECT_EQ(before, after);
  EXPECT_EQ(parsed.rows, sample_report().rows);
}

TEST(SweepCsv, RejectsMalformed) {
  EXPECT_THROW(parse_sweep_csv("bogus\n"), std::invalid_argument);
  EXPECT_THROW(parse_sweep_csv("N,repeat,status,alpha,mean_cost,q10,q50,q90,max_violation,solve_ms\n1,2\n"),
               std::invalid_argument);
}

TEST(Sweep, SingleCell) {
  SweepConfig sc;
  sc.N_list = {20};
  sc.repeats = 1;
  sc.n_rollouts = 200;
  ScenarioConfig base;
  const SweepReport r = experiment_sweep(example_system(), example_cost(5), 5, base, sc);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.rows[0].N, 20);
  EXPECT_EQ(r.rows[0].status, "optimal");
  ASSERT_EQ(r.aggregate().size(), 1u);
  EXPECT_DOUBLE_EQ(r.aggregate()[0].mean_of_means, r.rows[0].mean_cost);
}

TEST(Sweep, IdenticalSeedIdenticalBytes) {
  SweepConfig sc;
  sc.N_list = {10, 30};
  sc.repeats = 2;
  sc.n_rollouts = 100;
  sc.master_seed = 17;
  sc.record_timing = false;
  ScenarioConfig base;
  const std::string a = sweep_csv(experiment_sweep(example_system(), example_cost(5), 5, base, sc));
  const std::string b = sweep_csv(experiment_sweep(example_system(), example_cost(5), 5, base, sc));
  EXPECT_EQ(a, b);
  EXPECT_EQ(parse_sweep_csv(a).rows.size(), 4u);
}

TEST(PairedTrend, DetectsIncrease) {
  const std::vector<double> before{1.0, 2.0, 3.0, 4.0, 5.0};
  const std::vector<double> up{1.5, 2.4, 3.6, 4.5, 5.4};
  const std::vector<double> down{0.5, 1.6, 2.4, 3.5, 4.6};
  EXPECT_TRUE(paired_trend(before, up).increase_significant);
  EXPECT_FALSE(paired_trend(before, down).increase_significant);
  EXPECT_FALSE(paired_trend(before, before).increase_significant);
  // mean diff 0.48, sd 0.0837, t = 12.83 on 4 dof.
  const PairedTrend p = paired_trend(before, up);
  EXPECT_NEAR(p.mean_diff, 0.48, 1e-12);
  EXPECT_NEAR(p.t_stat, 0.48 / (std::sqrt(0.007) / std::sqrt(5.0)), 1e-9);
  EXPECT_THROW(paired_trend({1.0}, {2.0}), std::invalid_argument);
}

TEST(ExperimentConfig, ParsesFile) {
  const auto j = nlohmann::json::parse(R"({
    "horizon": 6,
    "seed": 9,
    "scenario": {"eps_tol": 2.0, "eps_risk": 0.2, "beta": 1e-3, "N_list": [5, 10], "repeats": 3},
    "eval": {"n_rollouts": 50, "x0": [2.0]}
  })");
  const ExperimentConfig cfg = experiment_from_json(j);
  EXPECT_EQ(cfg.horizon, 6);
  EXPECT_EQ(cfg.scenario.eps_tol, 2.0);
  EXPECT_EQ(cfg.sweep.N_list, (std::vector<int>{5, 10}));
  EXPECT_EQ(cfg.sweep.repeats, 3);
  EXPECT_EQ(cfg.sweep.n_rollouts, 50);
  EXPECT_EQ(cfg.sweep.master_seed, 9u);
  EXPECT_EQ(cfg.sweep.x0(0), 2.0);
  EXPECT_EQ(cfg.system.n(), 1);
}
