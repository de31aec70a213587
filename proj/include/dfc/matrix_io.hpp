#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace dfc {

using DenseMatrix = Eigen::MatrixXd;  // column-major by Eigen default
using Index = Eigen::Index;

struct ParseError : std::runtime_error {
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line(line) {}
  std::size_t line;
};

struct Observation {
  Index row;
  Index col;
  double value;
};

// P_Omega(M): dimensions plus the set of revealed entries.
// Entries are kept sorted in column-major order; immutable after construction.
class ObservedMatrix {
 public:
  ObservedMatrix(Index m, Index n, std::vector<Observation> obs)
      : m_(m), n_(n), obs_(std::move(obs)) {
    if (m < 1 || n < 1) throw std::invalid_argument("ObservedMatrix: dims must be positive");
    std::sort(obs_.begin(), obs_.end(), [](const Observation& a, const Observation& b) {
      return a.col != b.col ? a.col < b.col : a.row < b.row;
    });
    for (std::size_t i = 0; i < obs_.size(); ++i) {
      const Observation& e = obs_[i];
      if (e.row < 0 || e.row >= m_ || e.col < 0 || e.col >= n_)
        throw std::out_of_range("ObservedMatrix: entry (" + std::to_string(e.row) + ", " +
                                std::to_string(e.col) + ") outside " + std::to_string(m_) +
                                "x" + std::to_string(n_));
      if (!std::isfinite(e.value))
        throw std::invalid_argument("ObservedMatrix: non-finite value");
      if (i > 0 && obs_[i - 1].row == e.row && obs_[i - 1].col == e.col)
        throw std::invalid_argument("ObservedMatrix: duplicate entry (" +
                                    std::to_string(e.row) + ", " + std::to_string(e.col) + ")");
    }
  }

  Index rows() const { return m_; }
  Index cols() const { return n_; }
  Index count() const { return static_cast<Index>(obs_.size()); }
  bool empty() const { return obs_.empty(); }
  const std::vector<Observation>& entries() const { return obs_; }

 private:
  Index m_, n_;
  std::vector<Observation> obs_;
};

// Rank-k matrix in factored form L = left * right^T; never densified
// implicitly. k = 0 is the zero matrix.
class LowRankEstimate {
 public:
  LowRankEstimate(DenseMatrix left, DenseMatrix right)
      : left_(std::move(left)), right_(std::move(right)) {
    if (left_.cols() != right_.cols())
      throw std::invalid_argument("LowRankEstimate: factor rank mismatch");
    if (left_.rows() < 1 || right_.rows() < 1)
      throw std::invalid_argument("LowRankEstimate: dims must be positive");
    if (left_.cols() > std::min(left_.rows(), right_.rows()))
      throw std::invalid_argument("LowRankEstimate: k exceeds min(m, n)");
    if (!left_.allFinite() || !right_.allFinite())
      throw std::invalid_argument("LowRankEstimate: non-finite factor entry");
  }

  static LowRankEstimate zero(Index m, Index n) {
    return LowRankEstimate(DenseMatrix(m, 0), DenseMatrix(n, 0));
  }

  Index rows() const { return left_.rows(); }
  Index cols() const { return right_.rows(); }
  Index rank_bound() const { return left_.cols(); }
  const DenseMatrix& left() const { return left_; }
  const DenseMatrix& right() const { return right_; }

 private:
  DenseMatrix left_;
  DenseMatrix right_;
};

// Compact SVD triple; U and V have orthonormal columns, s is nonincreasing.
struct SvdFactors {
  DenseMatrix U;
  Eigen::VectorXd s;
  DenseMatrix V;

  Index rank() const { return s.size(); }

  LowRankEstimate to_estimate() const {
    if (s.size() == 0) return LowRankEstimate::zero(U.rows(), V.rows());
    return LowRankEstimate(U, V * s.asDiagonal());
  }
};

inline DenseMatrix materialize(const LowRankEstimate& est) {
  if (est.rank_bound() == 0) return DenseMatrix::Zero(est.rows(), est.cols());
  return est.left() * est.right().transpose();
}

inline DenseMatrix densify(const ObservedMatrix& obs) {
  DenseMatrix A = DenseMatrix::Zero(obs.rows(), obs.cols());
  for (const Observation& e : obs.entries()) A(e.row, e.col) = e.value;
  return A;
}

// Text format: optional "% m n" header, then one "i j v" triple per line.
// Indices are 0-based unless one_based is set.
inline ObservedMatrix load_triplets(std::istream& in, bool one_based = false) {
  const Index base = one_based ? 1 : 0;
  Index m = -1, n = -1;
  std::vector<Observation> obs;
  std::string line;
  std::size_t lineno = 0;
  bool seen_data = false;
  Index max_row = -1, max_col = -1;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok)) continue;  // blank line
    if (tok == "%") {
      if (seen_data || m >= 0) throw ParseError(lineno, "unexpected header");
      if (!(ls >> m >> n) || m < 1 || n < 1) throw ParseError(lineno, "bad header dims");
      std::string extra;
      if (ls >> extra) throw ParseError(lineno, "trailing tokens in header");
      continue;
    }
    Index i, j;
    double v;
    std::istringstream es(line);
    if (!(es >> i >> j >> v)) throw ParseError(lineno, "expected 'i j v'");
    std::string extra;
    if (es >> extra) throw ParseError(lineno, "trailing tokens");
    i -= base;
    j -= base;
    if (i < 0 || j < 0) throw ParseError(lineno, "negative index");
    if (m >= 0 && (i >= m || j >= n))
      throw std::out_of_range("line " + std::to_string(lineno) + ": index outside declared " +
                              std::to_string(m) + "x" + std::to_string(n));
    seen_data = true;
    max_row = std::max(max_row, i);
    max_col = std::max(max_col, j);
    obs.push_back({i, j, v});
  }
  if (m < 0) {
    if (!seen_data) throw std::invalid_argument("load_triplets: no header and no data");
    m = max_row + 1;
    n = max_col + 1;
  }
  return ObservedMatrix(m, n, std::move(obs));  // ctor rejects duplicates
}

inline void save_triplets(std::ostream& out, const ObservedMatrix& obs) {
  out << "% " << obs.rows() << " " << obs.cols() << "\n";
  char buf[32];
  for (const Observation& e : obs.entries()) {
    std::snprintf(buf, sizeof buf, "%.17g", e.value);
    out << e.row << " " << e.col << " " << buf << "\n";
  }
}

// JSON checkpoint for a factored estimate; factor arrays are row-major.
inline nlohmann::json estimate_to_json(const LowRankEstimate& est) {
  auto flatten = [](const DenseMatrix& A) {
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(A.size()));
    for (Index i = 0; i < A.rows(); ++i)
      for (Index j = 0; j < A.cols(); ++j) v.push_back(A(i, j));
    return v;
  };
  return nlohmann::json{{"m", est.rows()},
                        {"n", est.cols()},
                        {"k", est.rank_bound()},
                        {"left", flatten(est.left())},
                        {"right", flatten(est.right())}};
}

inline LowRankEstimate estimate_from_json(const nlohmann::json& j) {
  const Index m = j.at("m").get<Index>();
  const Index n = j.at("n").get<Index>();
  const Index k = j.at("k").get<Index>();
  auto unflatten = [](const nlohmann::json& arr, Index rows, Index cols) {
    if (static_cast<Index>(arr.size()) != rows * cols)
      throw std::invalid_argument("estimate_from_json: factor size mismatch");
    DenseMatrix A(rows, cols);
    std::size_t p = 0;
    for (Index i = 0; i < rows; ++i)
      for (Index j2 = 0; j2 < cols; ++j2) A(i, j2) = arr.at(p++).get<double>();
    return A;
  };
  return LowRankEstimate(unflatten(j.at("left"), m, k), unflatten(j.at("right"), n, k));
}

}  // namespace dfc
