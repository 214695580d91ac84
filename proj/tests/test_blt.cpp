#include <gtest/gtest.h>

#include "mnsls/blt.hpp"
#include "test_util.hpp"

using namespace mnsls;
using mnsls::testing::random_blt;

TEST(Blt, FromBlocksSingle) {
  const BltOperator a = blt_from_blocks(1, 1, 1, {{{0, 0}, Matrix::Constant(1, 1, 2.0)}});
  EXPECT_EQ(a.dense()(0, 0), 2.0);
}

TEST(Blt, FromBlocksDenseLayout) {
  const BltOperator a = blt_from_blocks(2, 1, 1,
                                        {{{0, 0}, Matrix::Constant(1, 1, 1.0)},
                                         {{1, 0}, Matrix::Constant(1, 1, 1.0)},
                                         {{1, 1}, Matrix::Constant(1, 1, 3.0)}});
  Matrix expected(2, 2);
  expected << 1, 0, 3, 1;
  EXPECT_EQ(a.dense(), expected);
}

TEST(Blt, FromBlocksRejectsUpper) {
  EXPECT_THROW(blt_from_blocks(2, 1, 1, {{{0, 1}, Matrix::Ones(1, 1)}}), std::out_of_range);
  EXPECT_THROW(blt_from_blocks(2, 1, 1, {{{1, 0}, Matrix::Ones(2, 1)}}), DimensionError);
}

TEST(Blt, MulIdentity) {
  std::mt19937_64 rng(1);
  const BltOperator b = random_blt(rng, 4, 2, 3);
  EXPECT_LT((blt_mul(BltOperator::identity(4, 2), b).dense() - b.dense()).norm(), 1e-15);
}

TEST(Blt, MulScalarTwoByTwo) {
  const double a = 2.0, b = 3.0, c = 5.0;
  const BltOperator A = blt_from_blocks(2, 1, 1,
                                        {{{0, 0}, Matrix::Constant(1, 1, a)},
                                         {{1, 0}, Matrix::Constant(1, 1, b)},
                                         {{1, 1}, Matrix::Constant(1, 1, c)}});
  Matrix d(2, 2);
  d << a, 0, c, b;
  EXPECT_LT((blt_mul(A, A).dense() - d * d).norm(), 1e-14);
}

TEST(Blt, MulMatchesDenseProperty) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 40; ++trial) {
    const int T = 1 + static_cast<int>(rng() % 8);
    const int p = 1 + static_cast<int>(rng() % 4), q = 1 + static_cast<int>(rng() % 4),
              r = 1 + static_cast<int>(rng() % 4);
    const BltOperator a = random_blt(rng, T, p, q), b = random_blt(rng, T, q, r);
    EXPECT_LT((blt_mul(a, b).dense() - a.dense() * b.dense()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Blt, MulDimensionMismatch) {
  EXPECT_THROW(blt_mul(BltOperator(3, 2, 2), BltOperator(3, 3, 2)), DimensionError);
  EXPECT_THROW(blt_mul(BltOperator(3, 2, 2), BltOperator(2, 2, 2)), DimensionError);
}

TEST(Blt, InverseExamples) {
  EXPECT_LT((blt_inverse(BltOperator::identity(3, 2)).dense() - Matrix::Identity(6, 6)).norm(), 0.0 + 1e-300);
  const double m = 4.0;
  const BltOperator a = blt_from_blocks(2, 1, 1,
                                        {{{0, 0}, Matrix::Ones(1, 1)},
                                         {{1, 0}, Matrix::Ones(1, 1)},
                                         {{1, 1}, Matrix::Constant(1, 1, m)}});
  const BltOperator inv = blt_inverse(a);
  EXPECT_DOUBLE_EQ(inv.block(0, 0)(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(inv.block(1, 0)(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(inv.block(1, 1)(0, 0), -m);
}

TEST(Blt, InverseSingularReportsIndex) {
  BltOperator a = BltOperator::identity(3, 2);
  a.block(2, 0).setZero();
  try {
    blt_inverse(a);
    FAIL() << "expected SingularBlockError";
  } catch (const SingularBlockError& e) {
    EXPECT_EQ(e.index(), 2);
  }
}

TEST(Blt, InverseRoundTripProperty) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const int T = 1 + static_cast<int>(rng() % 8), n = 1 + static_cast<int>(rng() % 4);
    BltOperator a = random_blt(rng, T, n, n, 0.5);
    for (int i = 0; i < T; ++i) a.block(i, 0) += 2.0 * Matrix::Identity(n, n);
    const BltOperator inv = blt_inverse(a);
    const BltOperator I = BltOperator::identity(T, n);
    EXPECT_LT(((a * inv) - I).dense().norm(), 1e-10);
    EXPECT_LT(((inv * a) - I).dense().norm(), 1e-10);
  }
}

TEST(Blt, ApplyAndDownshift) {
  std::mt19937_64 rng(4);
  StackedSignal s(3, 2, mnsls::testing::random_matrix(rng, 6, 1));
  EXPECT_EQ(blt_apply(BltOperator::identity(3, 2), s).values(), s.values());
  const StackedSignal shifted = blt_apply(block_downshift(3, 2), s);
  EXPECT_TRUE(shifted.block(0).isZero(0.0));
  EXPECT_EQ(Vector(shifted.block(1)), Vector(s.block(0)));
  EXPECT_EQ(Vector(shifted.block(2)), Vector(s.block(1)));
  const BltOperator a = random_blt(rng, 3, 4, 2);
  EXPECT_LT((blt_apply(a, s).values() - a.dense() * s.values()).norm(), 1e-12);
}

TEST(Blt, DownshiftNilpotent) {
  EXPECT_TRUE(block_downshift(1, 2).dense().isZero(0.0));
  Matrix z3(3, 3);
  z3 << 0, 0, 0, 1, 0, 0, 0, 1, 0;
  const BltOperator Z = block_downshift(3, 1);
  EXPECT_EQ(Z.dense(), z3);
  EXPECT_TRUE((Z * Z * Z).dense().isZero(0.0));
}

TEST(Blt, Causality) {
  std::mt19937_64 rng(5);
  const BltOperator a = random_blt(rng, 6, 2, 3);
  StackedSignal s(6, 3, mnsls::testing::random_matrix(rng, 18, 1));
  StackedSignal s2 = s;
  for (int t = 4; t < 6; ++t) s2.block(t).setConstant(7.0);
  const StackedSignal y1 = blt_apply(a, s), y2 = blt_apply(a, s2);
  EXPECT_EQ(y1.values().head(8), y2.values().head(8));
}

TEST(Blt, LayoutOrdering) {
  EXPECT_EQ(blt_vec_layout(1, 1, 1).size(), 1);
  const BltLayout l = blt_vec_layout(2, 1, 1);
  EXPECT_EQ(l.size(), 3);
  EXPECT_EQ(l.index(0, 0, 0, 0), 0);
  EXPECT_EQ(l.index(1, 0, 0, 0), 1);
  EXPECT_EQ(l.index(1, 1, 0, 0), 2);
  EXPECT_EQ(blt_vec_layout(3, 2, 1).size(), 12);
  std::mt19937_64 rng(6);
  const BltOperator a = random_blt(rng, 4, 2, 3);
  const BltLayout l4 = blt_vec_layout(4, 2, 3);
  EXPECT_EQ(l4.unpack(l4.pack(a)).dense(), a.dense());
}

TEST(Blt, JsonRoundTrip) {
  std::mt19937_64 rng(7);
  BltOperator a = random_blt(rng, 3, 2, 1);
  a.block(2, 1).setZero();
  const nlohmann::json j = blt_to_json(a);
  EXPECT_EQ(j.at("blocks").size(), 5u);
  EXPECT_EQ(blt_from_json(j).dense(), a.dense());
}
