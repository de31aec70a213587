#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <chrono>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <tuple>
#include <utility>
#include <vector>

#include "dfc/matrix_io.hpp"
#include "dfc/rng.hpp"
#include "dfc/sketch.hpp"

namespace dfc {

struct ApgConfig {
  int max_iters = 500;
  double rel_tol = 1e-4;
  std::optional<double> mu_init;   // default 0.99 * ||P_Omega(M)||_2
  std::optional<double> mu_floor;  // default 1e-4 * mu_init
  double mu_decay = 0.7;
  bool line_search = false;

  // For noiseless exact-recovery runs: decay the threshold to numerical zero
  // instead of the usual 1e-4 relative floor.
  static ApgConfig high_accuracy() {
    ApgConfig c;
    c.rel_tol = 1e-9;
    c.mu_decay = 0.5;
    c.mu_floor = 0.0;
    c.max_iters = 400;
    return c;
  }
};

struct SolveReport {
  int iterations = 0;
  double objective = 0.0;
  double residual = 0.0;
  Index rank = 0;
  double wall_ms = 0.0;
};

// Sparse outlier matrix S_hat (or ground truth S0).
struct OutlierEstimate {
  Index m = 0, n = 0;
  std::vector<Observation> entries;

  OutlierEstimate(Index m_, Index n_, std::vector<Observation> e)
      : m(m_), n(n_), entries(std::move(e)) {
    if (m < 1 || n < 1) throw std::invalid_argument("OutlierEstimate: dims must be positive");
    for (const auto& o : entries) {
      if (o.row < 0 || o.row >= m || o.col < 0 || o.col >= n)
        throw std::out_of_range("OutlierEstimate: entry out of range");
      if (!std::isfinite(o.value)) throw std::invalid_argument("OutlierEstimate: non-finite value");
    }
  }

  DenseMatrix to_dense() const {
    DenseMatrix S = DenseMatrix::Zero(m, n);
    for (const auto& o : entries) S(o.row, o.col) = o.value;
    return S;
  }
};

inline double default_rmf_lambda(Index m, Index n) {
  return 1.0 / std::sqrt(static_cast<double>(std::max(m, n)));
}

inline DenseMatrix soft_threshold(const DenseMatrix& A, double tau) {
  if (tau < 0) throw std::invalid_argument("soft_threshold: tau must be nonnegative");
  return A.unaryExpr([tau](double a) {
    const double mag = std::abs(a) - tau;
    return mag > 0 ? (a > 0 ? mag : -mag) : 0.0;
  });
}

namespace detail {

inline SvdFactors shrink_factors(const SvdFactors& f, double tau) {
  Index r = 0;
  while (r < f.rank() && f.s(r) > tau) ++r;
  if (r == 0) return empty_svd(f.U.rows(), f.V.rows());
  return SvdFactors{f.U.leftCols(r), f.s.head(r).array() - tau, f.V.leftCols(r)};
}

inline SvdFactors svt_factors_dense(const DenseMatrix& A, double tau) {
  Eigen::BDCSVD<DenseMatrix> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return shrink_factors(SvdFactors{svd.matrixU(), svd.singularValues(), svd.matrixV()}, tau);
}

// SVT of a linear operator. Small problems go dense; otherwise a randomized
// partial SVD at rank_hint + 5, expanding until the smallest retained
// singular value drops below the threshold.
template <class Op>
SvdFactors svt_operator(const Op& op, double tau, Index rank_hint, SeededRng& rng) {
  const Index minmn = std::min(op.rows(), op.cols());
  if (minmn <= 64) return svt_factors_dense(op.to_dense(), tau);
  Index k = std::clamp<Index>(rank_hint + 5, 1, minmn);
  for (;;) {
    if (k >= minmn) return svt_factors_dense(op.to_dense(), tau);
    SvdFactors f = partial_svd(op, k, 10, 2, rng);
    if (f.rank() < k || f.s(f.rank() - 1) <= tau) return shrink_factors(f, tau);
    k = std::min<Index>(2 * k, minmn);
  }
}

// G = left * right^T + s_coeff * S.
struct FactoredSparseOp {
  const DenseMatrix& left;
  const DenseMatrix& right;
  const Eigen::SparseMatrix<double>& S;
  double s_coeff;

  Index rows() const { return left.rows(); }
  Index cols() const { return right.rows(); }

  DenseMatrix apply(const DenseMatrix& X) const {
    DenseMatrix Y = s_coeff * (S * X);
    if (left.cols() > 0) Y.noalias() += left * (right.transpose() * X);
    return Y;
  }
  DenseMatrix apply_adjoint(const DenseMatrix& X) const {
    DenseMatrix Y = s_coeff * (S.transpose() * X);
    if (left.cols() > 0) Y.noalias() += right * (left.transpose() * X);
    return Y;
  }
  DenseMatrix to_dense() const {
    DenseMatrix Y = s_coeff * DenseMatrix(S);
    if (left.cols() > 0) Y.noalias() += left * right.transpose();
    return Y;
  }
};

struct DenseOp {
  const DenseMatrix& A;
  Index rows() const { return A.rows(); }
  Index cols() const { return A.cols(); }
  DenseMatrix apply(const DenseMatrix& X) const { return A * X; }
  DenseMatrix apply_adjoint(const DenseMatrix& X) const { return A.transpose() * X; }
  DenseMatrix to_dense() const { return A; }
};

template <class Mat>
double spectral_norm(const Mat& A, int max_iters = 200, double tol = 1e-10) {
  Eigen::VectorXd v = Eigen::VectorXd::Ones(A.cols());
  v.normalize();
  double s = 0.0, prev = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    Eigen::VectorXd w = A * v;
    const double nw = w.norm();
    if (nw == 0.0) return 0.0;
    w /= nw;
    Eigen::VectorXd z = A.transpose() * w;
    s = z.norm();
    if (s == 0.0) return 0.0;
    v = z / s;
    if (std::abs(s - prev) <= tol * s) break;
    prev = s;
  }
  return s;
}

inline void validate_config(const ApgConfig& cfg) {
  if (cfg.max_iters < 1) throw std::invalid_argument("ApgConfig: max_iters must be >= 1");
  if (!(cfg.rel_tol > 0 && cfg.rel_tol < 1))
    throw std::invalid_argument("ApgConfig: rel_tol must be in (0,1)");
  if (!(cfg.mu_decay > 0 && cfg.mu_decay < 1))
    throw std::invalid_argument("ApgConfig: mu_decay must be in (0,1)");
  if (cfg.mu_init && *cfg.mu_init < 0) throw std::invalid_argument("ApgConfig: mu_init < 0");
  if (cfg.mu_floor && *cfg.mu_floor < 0) throw std::invalid_argument("ApgConfig: mu_floor < 0");
  if (cfg.mu_init && cfg.mu_floor && *cfg.mu_floor > *cfg.mu_init)
    throw std::invalid_argument("ApgConfig: mu_floor exceeds mu_init");
}

inline double factored_inner(const LowRankEstimate& a, const LowRankEstimate& b) {
  if (a.rank_bound() == 0 || b.rank_bound() == 0) return 0.0;
  return ((a.left().transpose() * b.left()).array() *
          (a.right().transpose() * b.right()).array())
      .sum();
}

inline double factored_norm(const LowRankEstimate& a) {
  return std::sqrt(std::max(0.0, factored_inner(a, a)));
}

inline double factored_diff_norm(const LowRankEstimate& a, const LowRankEstimate& b) {
  const double d2 = factored_inner(a, a) - 2.0 * factored_inner(a, b) + factored_inner(b, b);
  return std::sqrt(std::max(0.0, d2));
}

// Extrapolated iterate Y = L_curr + beta * (L_curr - L_prev), factored.
inline LowRankEstimate extrapolate(const LowRankEstimate& curr, const LowRankEstimate& prev,
                                   double beta) {
  if (beta == 0.0 || prev.rank_bound() == 0) {
    if (curr.rank_bound() == 0) return curr;
    return LowRankEstimate(curr.left(), (1.0 + beta) * curr.right());
  }
  const Index m = curr.rows(), n = curr.cols();
  const Index kc = curr.rank_bound(), kp = prev.rank_bound();
  DenseMatrix left(m, kc + kp), right(n, kc + kp);
  left.leftCols(kc) = curr.left();
  left.rightCols(kp) = prev.left();
  right.leftCols(kc) = (1.0 + beta) * curr.right();
  right.rightCols(kp) = -beta * prev.right();
  // factored rank bound may exceed min(m,n); compact exactly if so
  if (kc + kp > std::min(m, n)) return svd_of_product(left, right).to_estimate();
  return LowRankEstimate(std::move(left), std::move(right));
}

// Values of a factored estimate on an observation set, in entry order.
inline Eigen::VectorXd eval_on_support(const LowRankEstimate& est,
                                       const std::vector<Observation>& entries) {
  Eigen::VectorXd v(static_cast<Index>(entries.size()));
  if (est.rank_bound() == 0) {
    v.setZero();
    return v;
  }
  for (std::size_t i = 0; i < entries.size(); ++i)
    v(static_cast<Index>(i)) = est.left().row(entries[i].row).dot(est.right().row(entries[i].col));
  return v;
}

}  // namespace detail

// Proximal operator of tau * nuclear norm: soft-shrink the singular values.
inline LowRankEstimate svt(const DenseMatrix& A, double tau) {
  if (tau < 0) throw std::invalid_argument("svt: tau must be nonnegative");
  return detail::svt_factors_dense(A, tau).to_estimate();
}

// Accelerated proximal gradient for noisy matrix completion:
//   minimize  mu * ||L||_* + 1/2 * ||P_Omega(L - M)||_F^2
// with Nesterov extrapolation, unit gradient step (P_Omega is a projection),
// SVT prox, and continuation mu <- max(mu_decay * mu, mu_floor). Stops when
// the relative iterate change drops below rel_tol; on noisy data that halts
// the continuation before the fit starts absorbing noise.
inline std::pair<LowRankEstimate, SolveReport> apg_mc(const ObservedMatrix& obs,
                                                      const ApgConfig& cfg = {}) {
  const auto start = std::chrono::steady_clock::now();
  if (obs.empty()) throw std::invalid_argument("apg_mc: empty observation set");
  detail::validate_config(cfg);
  const Index m = obs.rows(), n = obs.cols();

  Eigen::SparseMatrix<double> M(m, n);
  {
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(obs.entries().size());
    for (const auto& e : obs.entries()) trips.emplace_back(e.row, e.col, e.value);
    M.setFromTriplets(trips.begin(), trips.end());
    M.makeCompressed();
  }
  Eigen::VectorXd m_vals(obs.count());
  for (Index i = 0; i < obs.count(); ++i) m_vals(i) = obs.entries()[static_cast<std::size_t>(i)].value;

  const double mu_init = cfg.mu_init.value_or(0.99 * detail::spectral_norm(M));
  const double mu_floor = cfg.mu_floor.value_or(1e-4 * mu_init);
  if (mu_floor > mu_init) throw std::invalid_argument("apg_mc: mu_floor exceeds mu_init");

  SeededRng svd_rng(0x737674u, 0);  // internal to the solve; inputs determine outputs
  Eigen::SparseMatrix<double> R = M;

  LowRankEstimate L_prev = LowRankEstimate::zero(m, n);
  LowRankEstimate L_curr = L_prev;
  SvdFactors last_factors = empty_svd(m, n);
  double tau_prev = 1.0, tau_curr = 1.0;
  double mu = mu_init;
  double mu_used = mu_init;
  Index rank_hint = 1;
  int iters = 0;

  for (int it = 1; it <= cfg.max_iters; ++it) {
    iters = it;
    const double beta = (tau_prev - 1.0) / tau_curr;
    LowRankEstimate Y = detail::extrapolate(L_curr, L_prev, beta);

    // R = P_Omega(Y) - P_Omega(M); valuePtr order matches the sorted entries
    Eigen::VectorXd y_vals = detail::eval_on_support(Y, obs.entries());
    {
      double* v = R.valuePtr();
      for (Index i = 0; i < obs.count(); ++i) v[i] = y_vals(i) - m_vals(i);
    }

    double step = 1.0;
    SvdFactors f;
    LowRankEstimate L_next = LowRankEstimate::zero(m, n);
    for (;;) {  // gradient step G = Y - step * R, then SVT
      detail::FactoredSparseOp G{Y.left(), Y.right(), R, -step};
      f = detail::svt_operator(G, step * mu, rank_hint, svd_rng);
      L_next = f.to_estimate();
      if (!cfg.line_search || step <= 0.125) break;
      // backtracking majorization test on the smooth part
      Eigen::VectorXd next_vals = detail::eval_on_support(L_next, obs.entries());
      const double f_next = 0.5 * (next_vals - m_vals).squaredNorm();
      const double f_y = 0.5 * (y_vals - m_vals).squaredNorm();
      const double lin = (y_vals - m_vals).dot(next_vals - y_vals);
      const double dist2 = detail::factored_diff_norm(L_next, Y);
      if (f_next <= f_y + lin + dist2 * dist2 / (2.0 * step) + 1e-12) break;
      step *= 0.5;
    }

    const double rel =
        detail::factored_diff_norm(L_next, L_curr) / std::max(1.0, detail::factored_norm(L_curr));
    const double tau_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tau_curr * tau_curr));
    L_prev = std::move(L_curr);
    L_curr = std::move(L_next);
    last_factors = std::move(f);
    tau_prev = tau_curr;
    tau_curr = tau_next;
    rank_hint = std::max<Index>(1, L_curr.rank_bound());
    mu_used = mu;
    mu = std::max(cfg.mu_decay * mu, mu_floor);
    if (rel < cfg.rel_tol) break;
  }

  SolveReport rep;
  rep.iterations = iters;
  rep.rank = L_curr.rank_bound();
  Eigen::VectorXd final_vals = detail::eval_on_support(L_curr, obs.entries());
  rep.residual = (final_vals - m_vals).norm();
  rep.objective = mu_used * last_factors.s.sum() + 0.5 * rep.residual * rep.residual;
  rep.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return {std::move(L_curr), rep};
}

// Accelerated proximal gradient for robust matrix factorization:
//   minimize  ||L||_* + lambda * ||S||_1 + 1/(2 mu) * ||M - L - S||_F^2
// Joint gradient has Lipschitz constant 2, so both prox steps use 1/2.
inline std::tuple<LowRankEstimate, OutlierEstimate, SolveReport> apg_rmf(
    const DenseMatrix& Mfull, double lambda, const ApgConfig& cfg = {}) {
  const auto start = std::chrono::steady_clock::now();
  if (!(lambda > 0)) throw std::invalid_argument("apg_rmf: lambda must be positive");
  if (!Mfull.allFinite()) throw std::invalid_argument("apg_rmf: non-finite input");
  detail::validate_config(cfg);
  const Index m = Mfull.rows(), n = Mfull.cols();

  const double mu_init = cfg.mu_init.value_or(0.99 * detail::spectral_norm(Mfull));
  const double mu_floor = cfg.mu_floor.value_or(1e-4 * mu_init);
  if (mu_floor > mu_init) throw std::invalid_argument("apg_rmf: mu_floor exceeds mu_init");

  SeededRng svd_rng(0x737674u, 1);
  SvdFactors last_factors = empty_svd(m, n);
  DenseMatrix Ld_prev = DenseMatrix::Zero(m, n), Ld_curr = Ld_prev;
  DenseMatrix S_prev = DenseMatrix::Zero(m, n), S_curr = S_prev;
  Index rank_curr = 0;
  double tau_prev = 1.0, tau_curr = 1.0;
  double mu = mu_init;
  double mu_used = mu_init;
  Index rank_hint = 1;
  int iters = 0;

  for (int it = 1; it <= cfg.max_iters; ++it) {
    iters = it;
    const double beta = (tau_prev - 1.0) / tau_curr;
    DenseMatrix YL = Ld_curr + beta * (Ld_curr - Ld_prev);
    DenseMatrix YS = S_curr + beta * (S_curr - S_prev);
    DenseMatrix g = YL + YS - Mfull;  // shared gradient of the smooth part

    double step = 0.5;
    SvdFactors f;
    DenseMatrix Ld_next, S_next;
    for (;;) {
      DenseMatrix GL = YL - step * g;
      f = detail::svt_operator(detail::DenseOp{GL}, step * mu, rank_hint, svd_rng);
      Ld_next = f.rank() == 0 ? DenseMatrix::Zero(m, n)
                              : DenseMatrix(f.U * f.s.asDiagonal() * f.V.transpose());
      S_next = soft_threshold(YS - step * g, step * lambda * mu);
      if (!cfg.line_search || step <= 0.0625) break;
      const double f_next = 0.5 * (Mfull - Ld_next - S_next).squaredNorm();
      const double f_y = 0.5 * g.squaredNorm();
      const double lin = (g.array() * (Ld_next - YL + S_next - YS).array()).sum();
      const double dist2 = (Ld_next - YL).squaredNorm() + (S_next - YS).squaredNorm();
      if (f_next <= f_y + lin + dist2 / (2.0 * step) + 1e-12) break;
      step *= 0.5;
    }

    const double denom = std::max(1.0, std::sqrt(Ld_curr.squaredNorm() + S_curr.squaredNorm()));
    const double rel = std::sqrt((Ld_next - Ld_curr).squaredNorm() +
                                 (S_next - S_curr).squaredNorm()) / denom;
    const double tau_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tau_curr * tau_curr));
    Ld_prev = std::move(Ld_curr);
    Ld_curr = std::move(Ld_next);
    S_prev = std::move(S_curr);
    S_curr = std::move(S_next);
    last_factors = std::move(f);
    rank_curr = last_factors.rank();
    tau_prev = tau_curr;
    tau_curr = tau_next;
    rank_hint = std::max<Index>(1, rank_curr);
    mu_used = mu;
    mu = std::max(cfg.mu_decay * mu, mu_floor);
    if (rel < cfg.rel_tol) break;
  }

  LowRankEstimate L = last_factors.to_estimate();
  std::vector<Observation> s_entries;
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < m; ++i)
      if (S_curr(i, j) != 0.0) s_entries.push_back({i, j, S_curr(i, j)});
  OutlierEstimate S(m, n, std::move(s_entries));

  SolveReport rep;
  rep.iterations = iters;
  rep.rank = L.rank_bound();
  rep.residual = (Mfull - Ld_curr - S_curr).norm();
  const double s_l1 = S_curr.cwiseAbs().sum();
  rep.objective = last_factors.s.sum() + lambda * s_l1 +
                  (mu_used > 0 ? rep.residual * rep.residual / (2.0 * mu_used) : 0.0);
  rep.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return {std::move(L), std::move(S), rep};
}

}  // namespace dfc
