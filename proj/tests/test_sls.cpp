#include <gtest/gtest.h>

#include "mnsls/sls.hpp"
#include "test_util.hpp"

using namespace mnsls;
using mnsls::testing::random_blt;
using mnsls::testing::random_system;

namespace {

CostModel first_state_cost(int n, int m, int T, const Vector& x0) {
  Vector w = Vector::Zero(n * T);
  w.head(n) = x0;
  return {Matrix::Identity(n, n), Matrix::Identity(m, m), WSpec::fixed(w)};
}

}  // namespace

TEST(Sls, AffineResidualExamples) {
  std::mt19937_64 rng(21);
  const MultNoiseSystem sys = random_system(rng, 3, 2, 1);
  const StackedNominal nom = stacked_nominal(sys, 5);
  const SystemResponse r = response_from_controller(random_blt(rng, 5, 2, 3, 0.5), nom);
  EXPECT_LT(affine_residual(r, nom).norm(), 1e-10);

  MultNoiseSystem zero = MultNoiseSystem::scalar(0.0, 0.0, 0.0);
  const StackedNominal nz = stacked_nominal(zero, 4);
  SystemResponse open{BltOperator::identity(4, 1), BltOperator(4, 1, 1)};
  EXPECT_EQ(affine_residual(open, nz).norm(), 0.0);

  SystemResponse bumped = r;
  bumped.phi_x.block(3, 1)(0, 2) += 0.25;
  EXPECT_GE(affine_residual(bumped, nom).norm(), 0.25 - 1e-12);
}

TEST(Sls, ResponseFromControllerExamples) {
  const MultNoiseSystem sys = MultNoiseSystem::scalar(0.8, 0.5, 0.0);
  const StackedNominal nom = stacked_nominal(sys, 3);
  const SystemResponse r0 = response_from_controller(BltOperator(3, 1, 1), nom);
  EXPECT_TRUE(r0.phi_u.dense().isZero(0.0));
  EXPECT_NEAR(r0.phi_x.block(2, 2)(0, 0), 0.64, 1e-15);

  const BltOperator K = BltOperator::block_diagonal(std::vector<Matrix>(3, Matrix::Constant(1, 1, -1.0)));
  const SystemResponse r = response_from_controller(K, nom);
  EXPECT_NEAR(r.phi_x.block(0, 0)(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(r.phi_x.block(1, 1)(0, 0), 0.3, 1e-15);
  EXPECT_NEAR(r.phi_x.block(2, 2)(0, 0), 0.09, 1e-15);
}

TEST(Sls, ControllerRoundTrip) {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 10; ++trial) {
    const MultNoiseSystem sys = random_system(rng, 2, 2, 1);
    const int T = 6;
    const BltOperator K = random_blt(rng, T, 2, 2, 0.5);
    const StackedNominal nom = stacked_nominal(sys, T);
    const SystemResponse r = response_from_controller(K, nom);
    EXPECT_LT((controller_from_response(r) - K).dense().norm(), 1e-8);
    const SystemResponse back = response_from_controller(controller_from_response(r), nom);
    EXPECT_LT((back.phi_x - r.phi_x).dense().norm(), 1e-8);
    EXPECT_LT((back.phi_u - r.phi_u).dense().norm(), 1e-8);
  }
  SystemResponse zero{BltOperator::identity(3, 1), BltOperator(3, 1, 1)};
  EXPECT_TRUE(controller_from_response(zero).dense().isZero(0.0));
}

TEST(Sls, DeadbeatGain) {
  // Phi_x = I, Phi_u^{t,0} = -a/b: the state is cleared after one step.
  const double a = 0.8, b = 0.5;
  SystemResponse r{BltOperator::identity(3, 1),
                   BltOperator::block_diagonal(std::vector<Matrix>(3, Matrix::Constant(1, 1, -a / b)))};
  const BltOperator K = controller_from_response(r);
  EXPECT_NEAR(K.block(1, 0)(0, 0), -a / b, 1e-15);
}

TEST(Sls, RiccatiExamples) {
  const Matrix one = Matrix::Ones(1, 1);
  const RiccatiSolution t1 = riccati_lqr(0.8 * one, 0.5 * one, one, one, 1);
  EXPECT_EQ(t1.gains[0](0, 0), 0.0);
  EXPECT_EQ(t1.P[0](0, 0), 1.0);
  const RiccatiSolution t2 = riccati_lqr(0.8 * one, 0.5 * one, one, one, 2);
  EXPECT_NEAR(t2.P[1](0, 0), 1.0, 1e-15);
  EXPECT_NEAR(t2.gains[1](0, 0), 0.0, 1e-15);
  EXPECT_NEAR(t2.gains[0](0, 0), -0.32, 1e-15);
  EXPECT_NEAR(t2.P[0](0, 0), 1.512, 1e-15);
}

TEST(Sls, NominalMatchesRiccatiScalar) {
  const MultNoiseSystem sys = MultNoiseSystem::scalar(0.8, 0.5, 0.0);
  const int T = 10;
  const NominalSolution sol = nominal_sls_solve(sys, first_state_cost(1, 1, T, Vector::Ones(1)), T);
  const RiccatiSolution ric = riccati_lqr(sys.A0, sys.B0, Matrix::Ones(1, 1), Matrix::Ones(1, 1), T);
  EXPECT_NEAR(sol.objective, ric.cost(Vector::Ones(1)), 1e-6 * ric.cost(Vector::Ones(1)));
}

TEST(Sls, NominalSingleStep) {
  const MultNoiseSystem sys = MultNoiseSystem::scalar(0.8, 0.5, 0.0);
  const NominalSolution sol = nominal_sls_solve(sys, first_state_cost(1, 1, 1, Vector::Ones(1)), 1);
  EXPECT_NEAR(sol.response.phi_x.block(0, 0)(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(sol.response.phi_u.block(0, 0)(0, 0), 0.0, 1e-12);
}

TEST(Sls, CostDecreasesWithR) {
  std::mt19937_64 rng(23);
  MultNoiseSystem sys = random_system(rng, 2, 2, 1);
  const int T = 5;
  double prev = 1e300;
  for (double eps : {1.0, 0.1, 0.01}) {
    CostModel cost{Matrix::Identity(2, 2), eps * Matrix::Identity(2, 2), WSpec::unit_noise(2, T, Vector::Ones(2))};
    const double obj = nominal_sls_solve(sys, cost, T).objective;
    EXPECT_LT(obj, prev);
    prev = obj;
  }
}

TEST(Sls, ColumnSplitMatchesMonolithic) {
  std::mt19937_64 rng(24);
  for (int trial = 0; trial < 5; ++trial) {
    const MultNoiseSystem sys = random_system(rng, 3, 2, 1);
    const int T = 5;
    CostModel cost{Matrix::Identity(3, 3), Matrix::Identity(2, 2), WSpec::unit_noise(3, T, Vector::Ones(3))};
    const NominalSolution a = nominal_sls_solve(sys, cost, T);
    const NominalSolution b = nominal_sls_solve(sys, cost, T, true);
    EXPECT_NEAR(a.objective, b.objective, 1e-8 * std::max(1.0, a.objective));
    EXPECT_NEAR(sls_objective(a.response, cost), a.objective, 1e-8 * std::max(1.0, a.objective));
  }
}

TEST(Sls, QuadraticObjectiveMatchesDirect) {
  std::mt19937_64 rng(25);
  const MultNoiseSystem sys = random_system(rng, 2, 1, 1);
  const int T = 4;
  const Matrix F = mnsls::testing::random_matrix(rng, 8, 8);
  CostModel cost{Matrix::Identity(2, 2) * 2.0, Matrix::Identity(1, 1), WSpec::covariance(F * F.transpose())};
  for (int min_delay : {0, 1}) {
    const ResponseLayout layout(T, 2, 1, min_delay);
    const QuadraticObjective q = sls_quadratic_objective(layout, cost);
    const Vector z = mnsls::testing::random_matrix(rng, layout.size(), 1);
    const double via_qp = 0.5 * z.dot(q.P * z) + q.q.dot(z) + q.constant;
    EXPECT_NEAR(via_qp, sls_objective(layout.unpack(z), cost), 1e-9 * std::abs(via_qp));
  }
}

TEST(Sls, ExpectedCostMatchesMonteCarlo) {
  MultNoiseSystem sys = MultNoiseSystem::scalar(0.9, 0.5, 0.0, DeltaDistribution::gaussian(), 0.4);
  const int T = 6;
  const Vector x0 = Vector::Ones(1);
  const CostModel cost{Matrix::Ones(1, 1), Matrix::Ones(1, 1), WSpec::expected(sys, T, x0)};
  const NominalSolution sol = nominal_sls_solve(sys, cost, T);
  const BltOperator K = controller_from_response(sol.response);
  const int N = 100000;
  double sum = 0.0, sq = 0.0;
  for (int r = 0; r < N; ++r) {
    const double c = lqr_cost(rollout(sys, K, sample_noise(sys, T, x0, derive_seed(5, r))), cost.Q, cost.R);
    sum += c;
    sq += c * c;
  }
  const double mean = sum / N;
  const double se = std::sqrt((sq / N - mean * mean) / N);
  EXPECT_NEAR(sol.objective, mean, 3.0 * se);
}

TEST(Sls, CostJson) {
  const MultNoiseSystem sys = MultNoiseSystem::scalar(0.8, 0.5, 0.0);
  const auto j = nlohmann::json::parse(R"({"Q": [[1.0]], "R": [[2.0]], "w_spec": {"type": "unit_noise", "x0": [3.0]}})");
  const CostModel c = cost_from_json(j, sys, 3);
  EXPECT_EQ(c.R(0, 0), 2.0);
  EXPECT_EQ(c.w_spec.weight()(0, 0), 9.0);
  EXPECT_EQ(c.w_spec.weight()(2, 2), 1.0);
  const auto bad = nlohmann::json::parse(R"({"Q": [[1.0]], "R": [[1.0]], "w_spec": {"type": "nope"}})");
  EXPECT_THROW(cost_from_json(bad, sys, 3), std::invalid_argument);
}
