#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "dfc/matrix_io.hpp"
#include "dfc/sketch.hpp"

namespace dfc {

struct CoherenceProfile {
  Index r = 0;
  double mu0_u = 0.0;
  double mu0_v = 0.0;
  double mu1 = 0.0;
  double alpha = 0.0;
};

// mu0(V) = (n/r) * max_i ||row_i(V)||^2 for an orthonormal factor V.
inline double mu0(const DenseMatrix& V) {
  const Index n = V.rows(), r = V.cols();
  if (r < 1) throw std::invalid_argument("mu0: empty factor");
  const double ortho = (V.transpose() * V - DenseMatrix::Identity(r, r)).norm();
  if (ortho > 1e-8 * static_cast<double>(r))
    throw std::invalid_argument("mu0: factor is not orthonormal");
  return static_cast<double>(n) / static_cast<double>(r) * V.rowwise().squaredNorm().maxCoeff();
}

// alpha(A) = sqrt(mn) * max|A_ij| / ||A||_F.
inline double spikiness(const DenseMatrix& A) {
  const double fro = A.norm();
  if (fro == 0.0) throw std::domain_error("spikiness: zero matrix");
  return std::sqrt(static_cast<double>(A.rows()) * static_cast<double>(A.cols())) *
         A.cwiseAbs().maxCoeff() / fro;
}

// mu1(L) = sqrt(mn/r) * max_ij |(U V^T)_ij| over the compact SVD of L.
inline double mu1(const LowRankEstimate& L, RankTolerance tol = {}) {
  SvdFactors f = svd_of_product(L.left(), L.right(), tol);
  if (f.rank() == 0) throw std::domain_error("mu1: zero matrix");
  const double mx = (f.U * f.V.transpose()).cwiseAbs().maxCoeff();
  return std::sqrt(static_cast<double>(L.rows()) * static_cast<double>(L.cols()) /
                   static_cast<double>(f.rank())) *
         mx;
}

inline CoherenceProfile coherence_profile(const LowRankEstimate& L, RankTolerance tol = {}) {
  SvdFactors f = svd_of_product(L.left(), L.right(), tol);
  if (f.rank() == 0) throw std::domain_error("coherence_profile: zero matrix");
  CoherenceProfile prof;
  prof.r = f.rank();
  prof.mu0_u = mu0(f.U);
  prof.mu0_v = mu0(f.V);
  prof.mu1 = std::sqrt(static_cast<double>(L.rows()) * static_cast<double>(L.cols()) /
                       static_cast<double>(f.rank())) *
             (f.U * f.V.transpose()).cwiseAbs().maxCoeff();
  prof.alpha = spikiness(materialize(L));
  return prof;
}

}  // namespace dfc
