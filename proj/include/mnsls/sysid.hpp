#pragma once

#include <string>

#include "mnsls/model.hpp"

namespace mnsls {

/// One recorded trajectory: states x_0..x_T as columns of X (n x (T+1)),
/// inputs u_0..u_{T-1} as columns of U (m x T).
struct DataBatch {
  Matrix X;
  Matrix U;
  Vector alpha;  // additive-noise variances, may be empty if unknown

  int n() const { return static_cast<int>(X.rows()); }
  int m() const { return static_cast<int>(U.rows()); }
  int length() const { return static_cast<int>(U.cols()); }

  /// [U; X_{0..T-1}]
  Matrix data_matrix() const;
  Matrix next_states() const { return X.rightCols(length()); }
};

struct RankCheck {
  bool ok = false;
  double sigma_min = 0.0;
  double sigma_max = 0.0;
};

RankCheck data_rank_ok(const DataBatch& batch, double rel_tol = 1e-8);

struct Identification {
  MultNoiseSystem system;
  Matrix V1;  // T x m, paired with B
  Matrix V2;  // T x n, paired with A
};

/// Minimum-norm right inverse [V1 V2] of [U; X-]; A0 = X+ V2, B0 = X+ V1.
/// Direction i has row i equal to the column sums of V2 (A part) and V1
/// (B part); sigma_i^2 = alpha_i. With `estimate_alpha` the variances come
/// from the residual rows instead of batch.alpha.
Identification identify_full(const DataBatch& batch, bool estimate_alpha = false);
MultNoiseSystem identify(const DataBatch& batch, bool estimate_alpha = false);

/// X+ - A0 X- - B0 U
Matrix residual_check(const DataBatch& batch, const Matrix& A0, const Matrix& B0);

/// CSV with header t,x_1..x_n,u_1..u_m; the final row has empty u cells.
DataBatch read_batch_csv(const std::string& path);
void write_batch_csv(const DataBatch& batch, const std::string& path);

}  // namespace mnsls
