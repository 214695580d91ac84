#include <gtest/gtest.h>

#include <cmath>

#include <unsupported/Eigen/KroneckerProduct>

#include "mnsls/uncertainty.hpp"
#include "test_util.hpp"

using namespace mnsls;
using mnsls::testing::random_blt;
using mnsls::testing::random_system;

namespace {

ScenarioSample draw(const MultNoiseSystem& sys, int T, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return {T, sample_deltas(sys, T, rng)};
}

}  // namespace

TEST(Uncertainty, ThetaExamples) {
  std::mt19937_64 rng(41);
  MultNoiseSystem sys = random_system(rng, 2, 1, 2);
  const int T = 4;
  const BltOperator K = random_blt(rng, T, 1, 2, 0.5);

  MultNoiseSystem quiet = sys;
  for (auto& a : quiet.A_dirs) a.setZero();
  for (auto& b : quiet.B_dirs) b.setZero();
  EXPECT_TRUE(build_theta(K, quiet, T).theta.isZero(0.0));

  const ThetaParts k0 = build_theta(BltOperator(T, 1, 2), sys, T);
  const StackedNominal nom = stacked_nominal(sys, T);
  const Matrix inv = (Matrix::Identity(8, 8) - nom.Z.dense() * nom.A0cal.dense()).inverse();
  const Matrix IA = -Eigen::kroneckerProduct(Matrix::Identity(T, T), stacked_directions_a(sys)).eval();
  EXPECT_LT((k0.theta - IA * inv).cwiseAbs().maxCoeff(), 1e-12);

  const ThetaParts parts = build_theta(K, sys, T);
  const Matrix closed = Matrix::Identity(8, 8) - nom.Z.dense() * (nom.A0cal.dense() + nom.B0cal.dense() * K.dense());
  EXPECT_LT((parts.theta2 - closed.inverse()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(parts.theta.rows(), 2 * 2 * T);
}

TEST(Uncertainty, DeltaBarExamples) {
  MultNoiseSystem sys = MultNoiseSystem::scalar(0.8, 0.5, 0.5);
  const int T = 2;
  const BltOperator K = BltOperator::block_diagonal({Matrix::Constant(1, 1, -0.4), Matrix::Constant(1, 1, -0.2)});
  const Matrix theta = build_theta(K, sys, T).theta;
  ScenarioSample zero{T, Matrix::Zero(T, 1)};
  EXPECT_TRUE(delta_bar(zero, theta, 1).isZero(0.0));
  ScenarioSample s{T, Matrix::Zero(T, 1)};
  s.deltas(0, 0) = 0.3;
  s.deltas(1, 0) = 9.0;  // delta_{T-1} never enters
  const Matrix d = delta_bar(s, theta, 1);
  EXPECT_EQ(d(0, 0), 0.0);
  EXPECT_EQ(d(0, 1), 0.0);
  EXPECT_EQ(d(1, 1), 0.0);
  EXPECT_NEAR(d(1, 0), 0.3 * theta(0, 0), 1e-15);
  EXPECT_LT((d - s.rcal(1) * theta).norm(), 1e-15);
}

TEST(Uncertainty, DeltaBarTwoFormulas) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 10; ++trial) {
    const MultNoiseSystem sys = random_system(rng, 2, 2, 3);
    const int T = 5;
    const BltOperator K = random_blt(rng, T, 2, 2, 0.5);
    const ScenarioSample s = draw(sys, T, trial);
    const Matrix a = delta_bar(s, build_theta(K, sys, T).theta, 2);
    EXPECT_LT((a - delta_bar_direct(s, K, sys)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Uncertainty, SetValuedResponseIsTrueResponse) {
  std::mt19937_64 rng(43);
  const MultNoiseSystem sys = random_system(rng, 2, 1, 2);
  const int T = 6;
  const BltOperator K = random_blt(rng, T, 1, 2, 0.5);
  const ScenarioSample s = draw(sys, T, 1);
  const SystemResponse nom = response_from_controller(K, stacked_nominal(sys, T));
  const Matrix dbar = delta_bar(s, build_theta(K, sys, T).theta, 2);
  const SystemResponse truth = perturbed_response(K, s, sys);
  const Matrix set_x = nom.phi_x.dense() * (Matrix::Identity(12, 12) + dbar).inverse();
  EXPECT_LT((truth.phi_x.dense() - set_x).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Uncertainty, PerturbedResidual) {
  std::mt19937_64 rng(44);
  const MultNoiseSystem sys = random_system(rng, 3, 2, 2);
  const int T = 5;
  const StackedNominal nom = stacked_nominal(sys, T);
  const SystemResponse r = response_from_controller(random_blt(rng, T, 2, 3, 0.5), nom);
  const ScenarioSample s = draw(sys, T, 2);
  EXPECT_LT(perturbed_residual(r, s, sys).norm(), 1e-10);
  ScenarioSample zero{T, Matrix::Zero(T, 2)};
  SystemResponse bumped = r;
  bumped.phi_x.block(3, 2)(1, 0) += 0.5;
  EXPECT_LT((perturbed_residual(bumped, zero, sys) - affine_residual(bumped, nom)).norm(), 1e-12);
  EXPECT_GT(perturbed_residual(bumped, s, sys).norm(), 1e-3);
}

TEST(Uncertainty, OmegaExamples) {
  std::mt19937_64 rng(45);
  const MultNoiseSystem sys = random_system(rng, 2, 1, 2, 0.01);
  const int T = 5;
  const Matrix theta = build_theta(random_blt(rng, T, 1, 2, 0.3), sys, T).theta;
  EXPECT_EQ(omega({T, Matrix::Zero(T, 2)}, theta, 2), Matrix::Identity(10, 10));
  const ScenarioSample s = draw(sys, T, 3);
  const Matrix O = omega(s, theta, 2);
  EXPECT_LT((O - Matrix::Identity(10, 10) - delta_bar(s, theta, 2)).cwiseAbs().maxCoeff(), 1e-15);
  const Matrix D = delta_bar(s, theta, 2);
  ASSERT_LT(D.operatorNorm(), 1.0);
  Matrix neumann = Matrix::Identity(10, 10), term = Matrix::Identity(10, 10);
  for (int k = 1; k < 60; ++k) {
    term = -term * D;
    neumann += term;
  }
  EXPECT_LT((O * neumann - Matrix::Identity(10, 10)).norm(), 1e-12);
}

TEST(Uncertainty, UpsilonExamples) {
  std::mt19937_64 rng(46);
  MultNoiseSystem zero = MultNoiseSystem::scalar(0.0, 0.0, 0.0);
  EXPECT_EQ(upsilon({BltOperator::identity(3, 1), BltOperator(3, 1, 1)}, zero), Matrix::Identity(3, 3));

  const MultNoiseSystem sys = random_system(rng, 2, 1, 1);
  const int T = 4;
  const SystemResponse r{random_blt(rng, T, 2, 2), random_blt(rng, T, 1, 2)};
  const StackedNominal nom = stacked_nominal(sys, T);
  const Matrix direct = (Matrix::Identity(8, 8) - nom.Z.dense() * nom.A0cal.dense()) * r.phi_x.dense() -
                        nom.Z.dense() * nom.B0cal.dense() * r.phi_u.dense();
  EXPECT_LT((upsilon(r, sys) - direct).cwiseAbs().maxCoeff(), 1e-14);

  const SystemResponse r2{random_blt(rng, T, 2, 2), random_blt(rng, T, 1, 2)};
  const SystemResponse sum{r.phi_x + r2.phi_x, r.phi_u + r2.phi_u};
  EXPECT_LT((upsilon(sum, sys) - upsilon(r, sys) - upsilon(r2, sys)).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(Uncertainty, PsiTwoPaths) {
  std::mt19937_64 rng(47);
  for (int trial = 0; trial < 10; ++trial) {
    const MultNoiseSystem sys = random_system(rng, 2, 2, 2);
    const int T = 1 + trial % 6;
    const Matrix theta = build_theta(random_blt(rng, T, 2, 2, 0.4), sys, T).theta;
    const ScenarioSample s = draw(sys, T, trial);
    const SystemResponse r{random_blt(rng, T, 2, 2), random_blt(rng, T, 2, 2)};
    const PsiLambda pl = psi_and_lambda(r, omega(s, theta, 2), sys);
    EXPECT_LT((pl.psi - psi_direct(r, delta_bar(s, theta, 2), sys)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(static_cast<int>(pl.lambda.size()), T * (T - 1) / 2);
  }
}

TEST(Uncertainty, PsiZeroForExactNominal) {
  std::mt19937_64 rng(48);
  const MultNoiseSystem sys = random_system(rng, 2, 1, 1);
  const int T = 5;
  const SystemResponse r = response_from_controller(random_blt(rng, T, 1, 2), stacked_nominal(sys, T));
  EXPECT_LT(psi_and_lambda(r, Matrix::Identity(10, 10), sys).psi.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Uncertainty, LambdaAffineFiniteDifference) {
  std::mt19937_64 rng(49);
  const MultNoiseSystem sys = random_system(rng, 2, 1, 2);
  const int T = 4;
  const Matrix theta = build_theta(random_blt(rng, T, 1, 2, 0.4), sys, T).theta;
  const Matrix O = omega(draw(sys, T, 4), theta, 2);
  const ResponseLayout layout(T, 2, 1, 1);
  const LambdaAffine la = lambda_affine(layout, sys, O);
  const Vector z = mnsls::testing::random_matrix(rng, layout.size(), 1);

  auto lambda_vec = [&](const Vector& zz) {
    const PsiLambda pl = psi_and_lambda(layout.unpack(zz), O, sys);
    Vector v(la.g.size());
    int k = 0;
    for (int t = 1; t < T; ++t) {
      for (int s = 0; s < t; ++s) {
        const Matrix& L = pl.lambda.at({t, s});
        for (int c = 0; c < 2; ++c) {
          for (int r = 0; r < 2; ++r) v(k++) = L(r, c);
        }
      }
    }
    return v;
  };
  const Vector base = lambda_vec(z);
  EXPECT_LT((Vector(la.G * z) + la.g - base).cwiseAbs().maxCoeff(), 1e-12);
  const Matrix G = Matrix(la.G);
  const double h = 1e-6;
  for (int i = 0; i < layout.size(); ++i) {
    Vector zp = z;
    zp(i) += h;
    const Vector fd = (lambda_vec(zp) - base) / h;
    EXPECT_LT((fd - G.col(i)).cwiseAbs().maxCoeff(), 1e-9 + 1e-7 * G.col(i).cwiseAbs().maxCoeff());
  }
}

TEST(Uncertainty, ChernoffRadius) {
  EXPECT_NEAR(chernoff_radius(1, std::exp(-1.0)), 5.0, 1e-12);
  EXPECT_NEAR(chernoff_radius(4, std::exp(-1.0)), 10.0, 1e-12);
  double prev = 1e300;
  for (double eps : {0.01, 0.05, 0.1, 0.3, 0.9}) {
    const double r = chernoff_radius(3, eps);
    EXPECT_LT(r, prev);
    prev = r;
  }
  EXPECT_THROW(chernoff_radius(1, 0.0), std::invalid_argument);
  EXPECT_THROW(chernoff_radius(1, 1.0), std::invalid_argument);
}

TEST(Uncertainty, EllipsoidExamples) {
  MultNoiseSystem sys = MultNoiseSystem::scalar(0.8, 0.5, 0.0);
  const Vector x = Vector::Constant(1, 2.0), w = Vector::Zero(1);
  const Matrix K = Matrix::Constant(1, 1, -0.3);
  const EllipsoidSet degenerate = state_ellipsoid(sys, K, x, w, 0.1);
  EXPECT_TRUE(degenerate.contains(degenerate.center()));
  EXPECT_FALSE(degenerate.contains(degenerate.center() + Vector::Ones(1)));

  sys.sigma = {0.5};
  const EllipsoidSet e = state_ellipsoid(sys, K, x, w, 0.1);
  const double r = chernoff_radius(1, 0.1);
  EXPECT_NEAR(e.shape()(0, 0), r, 1e-12);
  const double half = std::sqrt(r);
  EXPECT_TRUE(e.contains(e.center() + Vector::Constant(1, 0.999 * half)));
  EXPECT_FALSE(e.contains(e.center() + Vector::Constant(1, 1.001 * half)));
}

TEST(Uncertainty, EllipsoidRangeCheck) {
  // Rank-one shape in R^2: deviations off the range are rejected.
  const EllipsoidSet e(Vector::Zero(2), (Matrix(2, 2) << 4, 0, 0, 0).finished(), 0.9);
  EXPECT_TRUE(e.contains((Vector(2) << 1.9, 0.0).finished()));
  EXPECT_FALSE(e.contains((Vector(2) << 0.1, 1e-3).finished()));
}

TEST(Uncertainty, EllipsoidCoverage) {
  std::mt19937_64 rng(50);
  const MultNoiseSystem sys = random_system(rng, 3, 2, 3, 0.4);
  const Matrix K = mnsls::testing::random_matrix(rng, 2, 3, 0.2);
  const Vector x = Vector::Ones(3), w = Vector::Zero(3);
  const double eps = 0.1;
  const EllipsoidSet e = state_ellipsoid(sys, K, x, w, eps);
  const EllipsoidSet eu = input_ellipsoid(sys, K, x, w, eps);
  const int draws = 100000;
  int in = 0, in_u = 0;
  for (int k = 0; k < draws; ++k) {
    const Vector d = sample_deltas(sys, 1, rng).row(0).transpose();
    const Vector xn = step(sys, x, K * x, d, w);
    in += e.contains(xn);
    in_u += eu.contains(K * xn);
  }
  const double slack = 3.0 * std::sqrt(eps * (1 - eps) / draws);
  EXPECT_GE(static_cast<double>(in) / draws, 1.0 - eps - slack);
  EXPECT_GE(static_cast<double>(in_u) / draws, 1.0 - eps - slack);
}

TEST(Uncertainty, LambdaBound) {
  std::mt19937_64 rng(51);
  MultNoiseSystem sys = random_system(rng, 2, 1, 2, 0.3);
  const int T = 5;
  EXPECT_EQ(lambda_bound(Matrix::Zero(20, 10), sys, T, LambdaMethod::kClosedForm), 0.0);
  const Matrix theta = build_theta(random_blt(rng, T, 1, 2, 0.3), sys, T).theta;
  MultNoiseSystem still = sys;
  still.sigma = {0.0, 0.0};
  EXPECT_EQ(lambda_bound(theta, still, T, LambdaMethod::kClosedForm), 0.0);
  const double cf = lambda_bound(theta, sys, T, LambdaMethod::kClosedForm);
  const double mc = lambda_bound(theta, sys, T, LambdaMethod::kMonteCarlo, 100000, 3);
  EXPECT_NEAR(mc, cf, 0.05 * cf);
  const Matrix M = lambda_coefficients(theta, 2, 2, T);
  double via = 0.0;
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < 2; ++i) via += sys.sigma[i] * sys.sigma[i] * M.col(t * 2 + i).squaredNorm();
  }
  EXPECT_NEAR(via, cf, 1e-12 * cf);
  EXPECT_THROW(lambda_method_from_string("bogus"), std::invalid_argument);
}
