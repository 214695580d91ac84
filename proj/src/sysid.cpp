#include "mnsls/sysid.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <locale>
#include <sstream>
#include <vector>

namespace mnsls {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::invalid_argument("bad number '" + s + "' in data batch");
  }
  return v;
}

}  // namespace

Matrix DataBatch::data_matrix() const {
  Matrix D(m() + n(), length());
  D << U, X.leftCols(length());
  return D;
}

RankCheck data_rank_ok(const DataBatch& batch, double rel_tol) {
  RankCheck out;
  const Matrix D = batch.data_matrix();
  if (D.cols() < D.rows() || D.size() == 0) return out;
  Eigen::JacobiSVD<Matrix> svd(D);
  const Vector& s = svd.singularValues();
  out.sigma_max = s(0);
  out.sigma_min = s(s.size() - 1);
  out.ok = out.sigma_max > 0.0 && out.sigma_min > rel_tol * out.sigma_max;
  return out;
}

Identification identify_full(const DataBatch& batch, bool estimate_alpha) {
  const int n = batch.n(), m = batch.m(), T = batch.length();
  if (batch.X.cols() != T + 1) throw DimensionError("X must have one more column than U");
  const RankCheck rank = data_rank_ok(batch);
  if (!rank.ok) {
    throw RankDeficientError("data matrix [U; X] is not full row rank", rank.sigma_min);
  }
  const Matrix D = batch.data_matrix();
  // D' (D D')^{-1}, the Moore-Penrose right inverse for full row rank D.
  const Matrix V = D.transpose() * (D * D.transpose()).ldlt().solve(Matrix::Identity(m + n, m + n));

  Identification out;
  out.V1 = V.leftCols(m);
  out.V2 = V.rightCols(n);
  const Matrix Xp = batch.next_states();

  MultNoiseSystem& sys = out.system;
  sys.A0 = Xp * out.V2;
  sys.B0 = Xp * out.V1;

  if (estimate_alpha) {
    const Matrix Wh = residual_check(batch, sys.A0, sys.B0);
    sys.alpha = Vector(n);
    const int dof = std::max(1, T - n - m);
    for (int i = 0; i < n; ++i) sys.alpha(i) = Wh.row(i).squaredNorm() / dof;
  } else {
    if (batch.alpha.size() != n) throw DimensionError("alpha must have n entries");
    sys.alpha = batch.alpha;
  }

  const Eigen::RowVectorXd a_sums = out.V2.colwise().sum();
  const Eigen::RowVectorXd b_sums = out.V1.colwise().sum();
  for (int i = 0; i < n; ++i) {
    Matrix Ai = Matrix::Zero(n, n);
    Matrix Bi = Matrix::Zero(n, m);
    Ai.row(i) = a_sums;
    Bi.row(i) = b_sums;
    sys.A_dirs.push_back(Ai);
    sys.B_dirs.push_back(Bi);
    sys.sigma.push_back(std::sqrt(std::max(0.0, sys.alpha(i))));
  }
  sys.delta_dist = DeltaDistribution::gaussian();
  sys.validate();
  return out;
}

MultNoiseSystem identify(const DataBatch& batch, bool estimate_alpha) {
  return identify_full(batch, estimate_alpha).system;
}

Matrix residual_check(const DataBatch& batch, const Matrix& A0, const Matrix& B0) {
  const int T = batch.length();
  return batch.next_states() - A0 * batch.X.leftCols(T) - B0 * batch.U;
}

DataBatch read_batch_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("empty data file " + path);
  const std::vector<std::string> header = split_csv(line);
  std::vector<int> xcols, ucols;
  for (int k = 0; k < static_cast<int>(header.size()); ++k) {
    if (header[k].rfind("x_", 0) == 0) xcols.push_back(k);
    if (header[k].rfind("u_", 0) == 0) ucols.push_back(k);
  }
  if (xcols.empty()) throw std::invalid_argument("data file has no x_ columns");

  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \r\t") == std::string::npos) continue;
    rows.push_back(split_csv(line));
  }
  if (rows.size() < 2) throw std::invalid_argument("data file needs at least two rows");
  const int T = static_cast<int>(rows.size()) - 1;
  DataBatch batch;
  batch.X = Matrix(static_cast<Eigen::Index>(xcols.size()), T + 1);
  batch.U = Matrix(static_cast<Eigen::Index>(ucols.size()), T);
  for (int t = 0; t <= T; ++t) {
    const auto& r = rows[t];
    for (std::size_t k = 0; k < xcols.size(); ++k) {
      if (xcols[k] >= static_cast<int>(r.size())) throw std::invalid_argument("short row in data file");
      batch.X(static_cast<Eigen::Index>(k), t) = parse_double(r[xcols[k]]);
    }
    if (t == T) break;
    for (std::size_t k = 0; k < ucols.size(); ++k) {
      if (ucols[k] >= static_cast<int>(r.size())) throw std::invalid_argument("short row in data file");
      batch.U(static_cast<Eigen::Index>(k), t) = parse_double(r[ucols[k]]);
    }
  }
  return batch;
}

void write_batch_csv(const DataBatch& batch, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.imbue(std::locale::classic());
  out.precision(17);
  out << "t";
  for (int i = 0; i < batch.n(); ++i) out << ",x_" << i + 1;
  for (int i = 0; i < batch.m(); ++i) out << ",u_" << i + 1;
  out << "\n";
  for (int t = 0; t <= batch.length(); ++t) {
    out << t;
    for (int i = 0; i < batch.n(); ++i) out << "," << batch.X(i, t);
    for (int i = 0; i < batch.m(); ++i) {
      out << ",";
      if (t < batch.length()) out << batch.U(i, t);
    }
    out << "\n";
  }
}

}  // namespace mnsls
