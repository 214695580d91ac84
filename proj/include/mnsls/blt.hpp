#pragma once

#include <map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mnsls/types.hpp"

namespace mnsls {

/// Causal block-lower-triangular operator over a finite horizon.
///
/// Blocks are addressed as R^{i,j}: block row i (time) and delay j, so that
/// R^{i,j} multiplies the input j steps in the past. The dense realization
/// has block (t, s) = R^{t, t-s} for s <= t and zero above the diagonal.
class BltOperator {
 public:
  BltOperator() = default;

  /// Zero operator with T block rows/cols of size p x q.
  BltOperator(int horizon, int block_rows, int block_cols);

  static BltOperator identity(int horizon, int n);

  /// Block-diagonal operator with `block` repeated on every delay-0 slot.
  static BltOperator block_diagonal(const std::vector<Matrix>& blocks);

  /// Reads a dense (T*p)x(T*q) matrix. Nonzero entries above the block
  /// diagonal (beyond `tol`) are rejected.
  static BltOperator from_dense(const Matrix& dense, int horizon, int block_rows,
                                int block_cols, double tol = 0.0);

  int horizon() const { return horizon_; }
  int block_rows() const { return rows_; }
  int block_cols() const { return cols_; }

  /// R^{i,j}; requires 0 <= j <= i < T.
  const Matrix& block(int i, int j) const;
  Matrix& block(int i, int j);

  /// Block (t, s) of the dense form; zero when s > t.
  Matrix dense_block(int t, int s) const;

  Matrix dense() const;

  BltOperator& operator+=(const BltOperator& other);
  BltOperator& operator-=(const BltOperator& other);
  BltOperator& operator*=(double scale);

 private:
  static std::size_t slot(int i, int j) {
    return static_cast<std::size_t>(i) * (i + 1) / 2 + j;
  }
  void check_index(int i, int j) const;

  int horizon_ = 0;
  int rows_ = 0;
  int cols_ = 0;
  std::vector<Matrix> blocks_;
};

BltOperator operator+(BltOperator a, const BltOperator& b);
BltOperator operator-(BltOperator a, const BltOperator& b);
BltOperator operator*(double scale, BltOperator a);

/// A stacked signal [v_0; ...; v_{T-1}] with v_t of size `block_dim`.
class StackedSignal {
 public:
  StackedSignal() = default;
  StackedSignal(int horizon, int block_dim);
  StackedSignal(int horizon, int block_dim, Vector values);

  int horizon() const { return horizon_; }
  int block_dim() const { return dim_; }
  const Vector& values() const { return values_; }
  Vector& values() { return values_; }

  auto block(int t) const { return values_.segment(t * dim_, dim_); }
  auto block(int t) { return values_.segment(t * dim_, dim_); }

 private:
  int horizon_ = 0;
  int dim_ = 0;
  Vector values_;
};

using BlockMap = std::map<std::pair<int, int>, Matrix>;

/// Builds an operator from (i, j) -> R^{i,j}; missing blocks are zero.
BltOperator blt_from_blocks(int horizon, int block_rows, int block_cols,
                            const BlockMap& blocks);

BltOperator blt_mul(const BltOperator& a, const BltOperator& b);
inline BltOperator operator*(const BltOperator& a, const BltOperator& b) {
  return blt_mul(a, b);
}

inline constexpr double kDefaultConditionThreshold = 1e12;

/// Inverse by block forward substitution. Throws SingularBlockError naming
/// the first diagonal block whose condition number exceeds the threshold.
BltOperator blt_inverse(const BltOperator& a,
                        double condition_threshold = kDefaultConditionThreshold);

StackedSignal blt_apply(const BltOperator& a, const StackedSignal& s);

/// Identity blocks on the first block subdiagonal (delay 1).
BltOperator block_downshift(int horizon, int n);

/// Flat coordinate layout of the lower-triangular block entries.
///
/// Blocks are ordered by i ascending then delay j ascending, entries
/// column-major within a block. Blocks with delay below `min_delay` are
/// excluded, which lets callers pin the diagonal.
class BltLayout {
 public:
  BltLayout() = default;
  BltLayout(int horizon, int block_rows, int block_cols, int min_delay = 0);

  int horizon() const { return horizon_; }
  int block_rows() const { return rows_; }
  int block_cols() const { return cols_; }
  int min_delay() const { return min_delay_; }
  int size() const { return size_; }

  bool contains(int i, int j) const {
    return j >= min_delay_ && j <= i && i < horizon_;
  }
  /// First coordinate of block (i, j); -1 when the block is excluded.
  int offset(int i, int j) const;
  /// Coordinate of entry (r, c) of block (i, j).
  int index(int i, int j, int r, int c) const { return offset(i, j) + c * rows_ + r; }

  Vector pack(const BltOperator& op) const;
  /// Blocks outside the layout are taken from `base` (zero when omitted).
  BltOperator unpack(const Eigen::Ref<const Vector>& z,
                     const BltOperator* base = nullptr) const;

 private:
  int horizon_ = 0;
  int rows_ = 0;
  int cols_ = 0;
  int min_delay_ = 0;
  int size_ = 0;
  std::vector<int> offsets_;
};

inline BltLayout blt_vec_layout(int horizon, int block_rows, int block_cols) {
  return BltLayout(horizon, block_rows, block_cols);
}

nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);

nlohmann::json blt_to_json(const BltOperator& op);
BltOperator blt_from_json(const nlohmann::json& j);

}  // namespace mnsls
