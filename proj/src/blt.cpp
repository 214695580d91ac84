#include "mnsls/blt.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace mnsls {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

}  // namespace

BltOperator::BltOperator(int horizon, int block_rows, int block_cols)
    : horizon_(horizon), rows_(block_rows), cols_(block_cols) {
  require(horizon >= 1 && block_rows >= 1 && block_cols >= 1,
          "BltOperator requires positive horizon and block sizes");
  blocks_.assign(slot(horizon, 0), Matrix::Zero(block_rows, block_cols));
}

BltOperator BltOperator::identity(int horizon, int n) {
  BltOperator op(horizon, n, n);
  for (int i = 0; i < horizon; ++i) op.block(i, 0).setIdentity();
  return op;
}

BltOperator BltOperator::block_diagonal(const std::vector<Matrix>& blocks) {
  require(!blocks.empty(), "block_diagonal needs at least one block");
  BltOperator op(static_cast<int>(blocks.size()), static_cast<int>(blocks[0].rows()),
                 static_cast<int>(blocks[0].cols()));
  for (int i = 0; i < op.horizon(); ++i) {
    require(blocks[i].rows() == op.rows_ && blocks[i].cols() == op.cols_,
            "block_diagonal blocks must share a shape");
    op.block(i, 0) = blocks[i];
  }
  return op;
}

BltOperator BltOperator::from_dense(const Matrix& dense, int horizon, int block_rows,
                                    int block_cols, double tol) {
  require(dense.rows() == static_cast<Eigen::Index>(horizon) * block_rows &&
              dense.cols() == static_cast<Eigen::Index>(horizon) * block_cols,
          "dense matrix does not match horizon and block sizes");
  BltOperator op(horizon, block_rows, block_cols);
  for (int t = 0; t < horizon; ++t) {
    for (int s = 0; s < horizon; ++s) {
      auto blk = dense.block(t * block_rows, s * block_cols, block_rows, block_cols);
      if (s <= t) {
        op.block(t, t - s) = blk;
      } else if (blk.cwiseAbs().maxCoeff() > tol) {
        throw DimensionError("dense matrix has nonzero entries above the block diagonal");
      }
    }
  }
  return op;
}

void BltOperator::check_index(int i, int j) const {
  if (i < 0 || i >= horizon_ || j < 0 || j > i) {
    throw std::out_of_range("BLT block (" + std::to_string(i) + "," + std::to_string(j) +
                            ") outside 0 <= j <= i < " + std::to_string(horizon_));
  }
}

const Matrix& BltOperator::block(int i, int j) const {
  check_index(i, j);
  return blocks_[slot(i, j)];
}

Matrix& BltOperator::block(int i, int j) {
  check_index(i, j);
  return blocks_[slot(i, j)];
}

Matrix BltOperator::dense_block(int t, int s) const {
  if (s > t) return Matrix::Zero(rows_, cols_);
  return block(t, t - s);
}

Matrix BltOperator::dense() const {
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(horizon_) * rows_,
                            static_cast<Eigen::Index>(horizon_) * cols_);
  for (int t = 0; t < horizon_; ++t) {
    for (int s = 0; s <= t; ++s) {
      out.block(t * rows_, s * cols_, rows_, cols_) = blocks_[slot(t, t - s)];
    }
  }
  return out;
}

BltOperator& BltOperator::operator+=(const BltOperator& other) {
  require(horizon_ == other.horizon_ && rows_ == other.rows_ && cols_ == other.cols_,
          "BLT addition requires identical shapes");
  for (std::size_t k = 0; k < blocks_.size(); ++k) blocks_[k] += other.blocks_[k];
  return *this;
}

BltOperator& BltOperator::operator-=(const BltOperator& other) {
  require(horizon_ == other.horizon_ && rows_ == other.rows_ && cols_ == other.cols_,
          "BLT subtraction requires identical shapes");
  for (std::size_t k = 0; k < blocks_.size(); ++k) blocks_[k] -= other.blocks_[k];
  return *this;
}

BltOperator& BltOperator::operator*=(double scale) {
  for (auto& b : blocks_) b *= scale;
  return *this;
}

BltOperator operator+(BltOperator a, const BltOperator& b) { return a += b; }
BltOperator operator-(BltOperator a, const BltOperator& b) { return a -= b; }
BltOperator operator*(double scale, BltOperator a) { return a *= scale; }

StackedSignal::StackedSignal(int horizon, int block_dim)
    : horizon_(horizon), dim_(block_dim), values_(Vector::Zero(horizon * block_dim)) {}

StackedSignal::StackedSignal(int horizon, int block_dim, Vector values)
    : horizon_(horizon), dim_(block_dim), values_(std::move(values)) {
  require(values_.size() == static_cast<Eigen::Index>(horizon) * block_dim,
          "stacked signal length must equal T * block_dim");
}

BltOperator blt_from_blocks(int horizon, int block_rows, int block_cols,
                            const BlockMap& blocks) {
  BltOperator op(horizon, block_rows, block_cols);
  for (const auto& [key, value] : blocks) {
    const auto [i, j] = key;
    if (i < 0 || i >= horizon || j < 0 || j > i) {
      throw std::out_of_range("block (" + std::to_string(i) + "," + std::to_string(j) +
                              ") is not lower triangular within the horizon");
    }
    require(value.rows() == block_rows && value.cols() == block_cols,
            "block (" + std::to_string(i) + "," + std::to_string(j) +
                ") has the wrong shape");
    op.block(i, j) = value;
  }
  return op;
}

BltOperator blt_mul(const BltOperator& a, const BltOperator& b) {
  require(a.horizon() == b.horizon(), "BLT product requires equal horizons");
  require(a.block_cols() == b.block_rows(), "BLT product inner block sizes differ");
  const int T = a.horizon();
  BltOperator out(T, a.block_rows(), b.block_cols());
  // Dense (t, s) = sum_{s <= k <= t} A(t, k) B(k, s); in delay form
  // C^{t, d} = sum_{e=0}^{d} A^{t, e} B^{t-e, d-e}.
  for (int t = 0; t < T; ++t) {
    for (int d = 0; d <= t; ++d) {
      Matrix& c = out.block(t, d);
      for (int e = 0; e <= d; ++e) c.noalias() += a.block(t, e) * b.block(t - e, d - e);
    }
  }
  return out;
}

BltOperator blt_inverse(const BltOperator& a, double condition_threshold) {
  require(a.block_rows() == a.block_cols(), "BLT inverse requires square blocks");
  const int T = a.horizon();
  const int n = a.block_rows();
  BltOperator inv(T, n, n);

  std::vector<Eigen::PartialPivLU<Matrix>> diag;
  diag.reserve(T);
  for (int t = 0; t < T; ++t) {
    const Matrix& d = a.block(t, 0);
    Eigen::JacobiSVD<Matrix> svd(d);
    const auto& sv = svd.singularValues();
    const double smax = sv(0);
    const double smin = sv(sv.size() - 1);
    const double cond = smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();
    if (!(cond <= condition_threshold)) throw SingularBlockError(t, cond);
    diag.emplace_back(d);
  }

  // Column s of the dense inverse: X(s,s) = D_s^{-1};
  // X(t,s) = -D_t^{-1} sum_{k=s}^{t-1} A(t,k) X(k,s).
  for (int t = 0; t < T; ++t) {
    inv.block(t, 0) = diag[t].inverse();
    for (int d = 1; d <= t; ++d) {
      const int s = t - d;
      Matrix acc = Matrix::Zero(n, n);
      for (int k = s; k < t; ++k) acc.noalias() += a.block(t, t - k) * inv.block(k, k - s);
      inv.block(t, d) = -diag[t].solve(acc);
    }
  }
  return inv;
}

StackedSignal blt_apply(const BltOperator& a, const StackedSignal& s) {
  require(a.horizon() == s.horizon(), "BLT apply requires equal horizons");
  require(a.block_cols() == s.block_dim(), "BLT apply: signal block size mismatch");
  StackedSignal out(a.horizon(), a.block_rows());
  for (int t = 0; t < a.horizon(); ++t) {
    auto y = out.block(t);
    for (int k = 0; k <= t; ++k) y.noalias() += a.block(t, t - k) * s.block(k);
  }
  return out;
}

BltOperator block_downshift(int horizon, int n) {
  BltOperator z(horizon, n, n);
  for (int i = 1; i < horizon; ++i) z.block(i, 1).setIdentity();
  return z;
}

BltLayout::BltLayout(int horizon, int block_rows, int block_cols, int min_delay)
    : horizon_(horizon), rows_(block_rows), cols_(block_cols), min_delay_(min_delay) {
  require(horizon >= 1 && block_rows >= 1 && block_cols >= 1 && min_delay >= 0,
          "invalid layout dimensions");
  offsets_.assign(static_cast<std::size_t>(horizon) * (horizon + 1) / 2, -1);
  int next = 0;
  for (int i = 0; i < horizon; ++i) {
    for (int j = min_delay; j <= i; ++j) {
      offsets_[static_cast<std::size_t>(i) * (i + 1) / 2 + j] = next;
      next += block_rows * block_cols;
    }
  }
  size_ = next;
}

int BltLayout::offset(int i, int j) const {
  if (i < 0 || i >= horizon_ || j < 0 || j > i) return -1;
  return offsets_[static_cast<std::size_t>(i) * (i + 1) / 2 + j];
}

Vector BltLayout::pack(const BltOperator& op) const {
  require(op.horizon() == horizon_ && op.block_rows() == rows_ && op.block_cols() == cols_,
          "layout does not match operator shape");
  Vector z(size_);
  for (int i = 0; i < horizon_; ++i) {
    for (int j = min_delay_; j <= i; ++j) {
      z.segment(offset(i, j), rows_ * cols_) = op.block(i, j).reshaped();
    }
  }
  return z;
}

BltOperator BltLayout::unpack(const Eigen::Ref<const Vector>& z,
                              const BltOperator* base) const {
  require(z.size() == size_, "coordinate vector does not match layout size");
  BltOperator op = base ? *base : BltOperator(horizon_, rows_, cols_);
  require(op.horizon() == horizon_ && op.block_rows() == rows_ && op.block_cols() == cols_,
          "base operator does not match layout");
  for (int i = 0; i < horizon_; ++i) {
    for (int j = min_delay_; j <= i; ++j) {
      op.block(i, j) = z.segment(offset(i, j), rows_ * cols_).reshaped(rows_, cols_);
    }
  }
  return op;
}

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const nlohmann::json& j) {
  if (j.is_number()) return Matrix::Constant(1, 1, j.get<double>());
  if (!j.is_array()) throw DimensionError("matrix must be a nested array");
  if (j.empty()) return Matrix(0, 0);
  // A flat array is read as a column vector.
  if (!j[0].is_array()) {
    Matrix m(static_cast<Eigen::Index>(j.size()), 1);
    for (std::size_t r = 0; r < j.size(); ++r) m(static_cast<Eigen::Index>(r), 0) = j[r].get<double>();
    return m;
  }
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[r].size()) != cols) {
      throw DimensionError("ragged matrix rows");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

nlohmann::json blt_to_json(const BltOperator& op) {
  nlohmann::json blocks = nlohmann::json::array();
  for (int i = 0; i < op.horizon(); ++i) {
    for (int j = 0; j <= i; ++j) {
      const Matrix& b = op.block(i, j);
      if (b.isZero(0.0)) continue;
      blocks.push_back({{"i", i}, {"j", j}, {"data", matrix_to_json(b)}});
    }
  }
  return {{"T", op.horizon()}, {"p", op.block_rows()}, {"q", op.block_cols()},
          {"blocks", blocks}};
}

BltOperator blt_from_json(const nlohmann::json& j) {
  const int T = j.at("T").get<int>();
  const int p = j.at("p").get<int>();
  const int q = j.at("q").get<int>();
  BlockMap blocks;
  for (const auto& b : j.at("blocks")) {
    Matrix data = matrix_from_json(b.at("data"));
    if (data.rows() != p || data.cols() != q) {
      // Row vectors of 1 x q arrive as flat arrays.
      if (data.cols() == 1 && data.rows() == p * q && p == 1) {
        data = data.transpose().eval();
      } else {
        throw DimensionError("serialized block has the wrong shape");
      }
    }
    blocks[{b.at("i").get<int>(), b.at("j").get<int>()}] = std::move(data);
  }
  return blt_from_blocks(T, p, q, blocks);
}

}  // namespace mnsls
