#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <optional>
#include <stdexcept>
#include <vector>

#include "dfc/matrix_io.hpp"
#include "dfc/rng.hpp"
#include "dfc/sampling.hpp"

namespace dfc {

struct RpParams {
  Index k = 1;  // target rank
  Index p = 5;  // oversampling
  Index q = 2;  // power iterations
};

// Numerical-rank cutoff: singular values at or below
// rel_cutoff * max(m,n) * s_max count as zero.
struct RankTolerance {
  double rel_cutoff = 1e-12;

  double absolute(double s_max, Index m, Index n) const {
    return rel_cutoff * static_cast<double>(std::max(m, n)) * s_max;
  }
};

inline Index numerical_rank(const Eigen::VectorXd& s, Index m, Index n,
                            RankTolerance tol = {}) {
  if (s.size() == 0) return 0;
  const double cut = tol.absolute(s(0), m, n);
  Index r = 0;
  while (r < s.size() && s(r) > cut) ++r;
  return r;
}

// Thin QR: Q has min(rows, cols) orthonormal columns, R is upper triangular.
inline std::pair<DenseMatrix, DenseMatrix> thin_qr(const DenseMatrix& A) {
  const Index r = std::min(A.rows(), A.cols());
  Eigen::HouseholderQR<DenseMatrix> qr(A);
  DenseMatrix Q = qr.householderQ() * DenseMatrix::Identity(A.rows(), r);
  DenseMatrix R = qr.matrixQR().topRows(r).triangularView<Eigen::Upper>();
  return {std::move(Q), std::move(R)};
}

inline SvdFactors empty_svd(Index m, Index n) {
  return SvdFactors{DenseMatrix(m, 0), Eigen::VectorXd(0), DenseMatrix(n, 0)};
}

// Top-k singular triplets of a dense matrix.
inline SvdFactors truncated_svd(const DenseMatrix& A, Index k) {
  if (k < 1 || k > std::min(A.rows(), A.cols()))
    throw std::invalid_argument("truncated_svd: need 1 <= k <= min(m,n)");
  Eigen::BDCSVD<DenseMatrix> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return SvdFactors{svd.matrixU().leftCols(k), svd.singularValues().head(k),
                    svd.matrixV().leftCols(k)};
}

// Compact SVD truncated at numerical rank.
inline SvdFactors compact_svd(const DenseMatrix& A, RankTolerance tol = {}) {
  Eigen::BDCSVD<DenseMatrix> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Index r = numerical_rank(svd.singularValues(), A.rows(), A.cols(), tol);
  if (r == 0) return empty_svd(A.rows(), A.cols());
  return SvdFactors{svd.matrixU().leftCols(r), svd.singularValues().head(r),
                    svd.matrixV().leftCols(r)};
}

// Exact compact SVD of left * right^T without forming the product:
// QR both factors, SVD the small core.
inline SvdFactors svd_of_product(const DenseMatrix& left, const DenseMatrix& right,
                                 RankTolerance tol = {}) {
  const Index m = left.rows(), n = right.rows();
  if (left.cols() != right.cols()) throw std::invalid_argument("svd_of_product: rank mismatch");
  if (left.cols() == 0) return empty_svd(m, n);
  auto [Ql, Rl] = thin_qr(left);
  auto [Qr, Rr] = thin_qr(right);
  DenseMatrix core = Rl * Rr.transpose();
  Eigen::BDCSVD<DenseMatrix> svd(core, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Index r = numerical_rank(svd.singularValues(), m, n, tol);
  if (r == 0) return empty_svd(m, n);
  return SvdFactors{Ql * svd.matrixU().leftCols(r), svd.singularValues().head(r),
                    Qr * svd.matrixV().leftCols(r)};
}

// Moore-Penrose pseudoinverse with numerical-rank truncation.
inline DenseMatrix pinv(const DenseMatrix& A, RankTolerance tol = {}) {
  SvdFactors f = compact_svd(A, tol);
  if (f.rank() == 0) return DenseMatrix::Zero(A.cols(), A.rows());
  return f.V * f.s.cwiseInverse().asDiagonal() * f.U.transpose();
}

namespace detail {

// Linear operator over the column-blocked factored matrix
// [C_1 ... C_t] with columns living at their original indices.
struct BlocksOp {
  const std::vector<LowRankEstimate>& blocks;
  const PartitionPlan& plan;
  Index m;

  Index rows() const { return m; }
  Index cols() const { return plan.total_cols(); }

  // A * X for X with rows indexed by original column ids.
  DenseMatrix apply(const DenseMatrix& X) const {
    DenseMatrix Y = DenseMatrix::Zero(m, X.cols());
    for (std::size_t g = 0; g < blocks.size(); ++g) {
      const auto& idx = plan.group(g);
      if (blocks[g].rank_bound() == 0) continue;
      DenseMatrix Xg(idx.size(), X.cols());
      for (std::size_t p = 0; p < idx.size(); ++p) Xg.row(p) = X.row(idx[p]);
      Y.noalias() += blocks[g].left() * (blocks[g].right().transpose() * Xg);
    }
    return Y;
  }

  // A^T * X, result rows indexed by original column ids.
  DenseMatrix apply_adjoint(const DenseMatrix& X) const {
    DenseMatrix Y = DenseMatrix::Zero(plan.total_cols(), X.cols());
    for (std::size_t g = 0; g < blocks.size(); ++g) {
      const auto& idx = plan.group(g);
      if (blocks[g].rank_bound() == 0) continue;
      DenseMatrix Yg = blocks[g].right() * (blocks[g].left().transpose() * X);
      for (std::size_t p = 0; p < idx.size(); ++p) Y.row(idx[p]) = Yg.row(p);
    }
    return Y;
  }
};

inline DenseMatrix gaussian_matrix(Index rows, Index cols, SeededRng& rng) {
  DenseMatrix G(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) G(i, j) = rng.normal();
  return G;
}

}  // namespace detail

// Subspace iteration: orthonormal basis for the approximate range of op,
// re-orthonormalized after every application for stability.
template <class Op>
DenseMatrix randomized_range(const Op& op, Index b, Index q, SeededRng& rng) {
  DenseMatrix G = detail::gaussian_matrix(op.cols(), b, rng);
  DenseMatrix Q = thin_qr(op.apply(G)).first;
  for (Index it = 0; it < q; ++it) {
    DenseMatrix Z = thin_qr(op.apply_adjoint(Q)).first;
    Q = thin_qr(op.apply(Z)).first;
  }
  return Q;
}

// Randomized top-k SVD of an operator (k + p sketch columns, q power passes).
template <class Op>
SvdFactors partial_svd(const Op& op, Index k, Index p, Index q, SeededRng& rng) {
  const Index b = std::min(k + p, std::min(op.rows(), op.cols()));
  if (b == 0 || k < 1) return empty_svd(op.rows(), op.cols());
  DenseMatrix Q = randomized_range(op, b, q, rng);
  DenseMatrix Z = op.apply_adjoint(Q);  // n x b; A ~= Q * Z^T
  Eigen::BDCSVD<DenseMatrix> svd(Z, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Index kk = std::min(k, svd.singularValues().size());
  return SvdFactors{Q * svd.matrixV().leftCols(kk), svd.singularValues().head(kk),
                    svd.matrixU().leftCols(kk)};
}

// Projection of the blocked matrix onto the column space of one factored
// estimate: U_B U_B^T [C_1 ... C_t], columns restored to original order.
inline LowRankEstimate column_project(const LowRankEstimate& basis,
                                      const std::vector<LowRankEstimate>& blocks,
                                      const PartitionPlan& plan,
                                      RankTolerance tol = {}) {
  if (blocks.empty()) throw std::invalid_argument("column_project: no blocks");
  if (blocks.size() != plan.group_count())
    throw std::invalid_argument("column_project: block count does not match plan");
  const Index m = basis.rows();
  const Index n = plan.total_cols();
  for (std::size_t g = 0; g < blocks.size(); ++g) {
    if (blocks[g].rows() != m) throw std::invalid_argument("column_project: row count mismatch");
    if (blocks[g].cols() != static_cast<Index>(plan.group(g).size()))
      throw std::invalid_argument("column_project: block width does not match plan group");
  }
  SvdFactors bf = svd_of_product(basis.left(), basis.right(), tol);
  if (bf.rank() == 0) return LowRankEstimate::zero(m, n);
  const DenseMatrix& Ub = bf.U;  // m x kb
  DenseMatrix right(n, Ub.cols());
  for (std::size_t g = 0; g < blocks.size(); ++g) {
    const auto& idx = plan.group(g);
    if (blocks[g].rank_bound() == 0) {
      for (std::size_t p = 0; p < idx.size(); ++p) right.row(idx[p]).setZero();
      continue;
    }
    DenseMatrix proj = Ub.transpose() * blocks[g].left();       // kb x kg
    DenseMatrix Rg = blocks[g].right() * proj.transpose();      // w x kb
    for (std::size_t p = 0; p < idx.size(); ++p) right.row(idx[p]) = Rg.row(p);
  }
  return LowRankEstimate(Ub, std::move(right));
}

// Randomized rank-k reconstruction of the blocked matrix:
// Y = (A A^T)^q A G for Gaussian G, Q = top-k left singular vectors of Y,
// output Q Q^T A in factored form with original column order.
inline LowRankEstimate random_project(const std::vector<LowRankEstimate>& blocks,
                                      const PartitionPlan& plan, const RpParams& params,
                                      SeededRng& rng, RankTolerance tol = {}) {
  if (blocks.empty()) throw std::invalid_argument("random_project: no blocks");
  if (blocks.size() != plan.group_count())
    throw std::invalid_argument("random_project: block count does not match plan");
  if (params.k < 1 || params.p < 0 || params.q < 0)
    throw std::invalid_argument("random_project: bad RpParams");
  const Index m = blocks[0].rows();
  const Index n = plan.total_cols();
  for (std::size_t g = 0; g < blocks.size(); ++g) {
    if (blocks[g].rows() != m) throw std::invalid_argument("random_project: row count mismatch");
    if (blocks[g].cols() != static_cast<Index>(plan.group(g).size()))
      throw std::invalid_argument("random_project: block width does not match plan group");
  }
  if (params.k + params.p > std::min(m, n))
    throw std::invalid_argument("random_project: k + p exceeds min(m, n)");

  detail::BlocksOp op{blocks, plan, m};
  const Index b = params.k + params.p;
  DenseMatrix G = detail::gaussian_matrix(n, b, rng);
  DenseMatrix Y = op.apply(G);
  for (Index it = 0; it < params.q; ++it) {
    DenseMatrix Q = thin_qr(Y).first;
    DenseMatrix Z = thin_qr(op.apply_adjoint(Q)).first;
    Y = op.apply(Z);
  }
  Eigen::BDCSVD<DenseMatrix> svd(Y, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Index kk = std::min(params.k, numerical_rank(svd.singularValues(), m, n, tol));
  if (kk == 0) return LowRankEstimate::zero(m, n);
  DenseMatrix Q = svd.matrixU().leftCols(kk);
  DenseMatrix right = op.apply_adjoint(Q);  // n x kk, original order
  return LowRankEstimate(std::move(Q), std::move(right));
}

// Generalized Nystrom reconstruction C W^+ R from factored column and row
// estimates; W is C_hat restricted to the sampled rows.
inline LowRankEstimate gen_nystrom(const LowRankEstimate& C_hat, const LowRankEstimate& R_hat,
                                   const std::vector<Index>& row_idx,
                                   const std::vector<Index>& col_idx, RankTolerance tol = {}) {
  const Index m = C_hat.rows();
  const Index n = R_hat.cols();
  const Index d = static_cast<Index>(row_idx.size());
  const Index l = static_cast<Index>(col_idx.size());
  if (R_hat.rows() != d) throw std::invalid_argument("gen_nystrom: R_hat rows != |row_idx|");
  if (C_hat.cols() != l) throw std::invalid_argument("gen_nystrom: C_hat cols != |col_idx|");
  for (Index i : row_idx)
    if (i < 0 || i >= m) throw std::out_of_range("gen_nystrom: row index out of range");
  for (Index j : col_idx)
    if (j < 0 || j >= n) throw std::out_of_range("gen_nystrom: col index out of range");
  if (C_hat.rank_bound() == 0 || R_hat.rank_bound() == 0) return LowRankEstimate::zero(m, n);

  DenseMatrix Wleft(d, C_hat.rank_bound());
  for (Index i = 0; i < d; ++i) Wleft.row(i) = C_hat.left().row(row_idx[i]);
  SvdFactors wf = svd_of_product(Wleft, C_hat.right(), tol);  // W = U_W s V_W^T
  if (wf.rank() == 0) return LowRankEstimate::zero(m, n);

  // C V_W s^-1 * (U_W^T R), each side kept factored.
  DenseMatrix left = C_hat.left() * (C_hat.right().transpose() * wf.V) *
                     wf.s.cwiseInverse().asDiagonal();
  DenseMatrix right = R_hat.right() * (R_hat.left().transpose() * wf.U);
  return LowRankEstimate(std::move(left), std::move(right));
}

// Factored average (1/t) sum of estimates. Stacked factors are compacted by
// an exact SVD whenever the stacked rank bound exceeds min(m,n); optional
// recompress_to truncates to that rank.
inline LowRankEstimate average_estimates(const std::vector<LowRankEstimate>& ests,
                                         std::optional<Index> recompress_to = std::nullopt,
                                         RankTolerance tol = {}) {
  if (ests.empty()) throw std::invalid_argument("average_estimates: empty list");
  const Index m = ests[0].rows(), n = ests[0].cols();
  Index total_k = 0;
  for (const auto& e : ests) {
    if (e.rows() != m || e.cols() != n)
      throw std::invalid_argument("average_estimates: dimension mismatch");
    total_k += e.rank_bound();
  }
  if (total_k == 0) return LowRankEstimate::zero(m, n);
  DenseMatrix left(m, total_k), right(n, total_k);
  const double scale = 1.0 / static_cast<double>(ests.size());
  Index at = 0;
  for (const auto& e : ests) {
    const Index k = e.rank_bound();
    left.middleCols(at, k) = e.left();
    right.middleCols(at, k) = e.right() * scale;
    at += k;
  }
  if (!recompress_to && total_k <= std::min(m, n)) return LowRankEstimate(left, right);
  SvdFactors f = svd_of_product(left, right, tol);
  Index keep = f.rank();
  if (recompress_to) keep = std::min(keep, std::max<Index>(*recompress_to, 0));
  if (keep == 0) return LowRankEstimate::zero(m, n);
  return SvdFactors{f.U.leftCols(keep), f.s.head(keep), f.V.leftCols(keep)}.to_estimate();
}

}  // namespace dfc
