#pragma once

#include <stdexcept>
#include <vector>

#include "dfc/matrix_io.hpp"
#include "dfc/rng.hpp"
#include "dfc/sampling.hpp"
#include "dfc/solvers.hpp"

namespace dfc {

struct McInstance {
  LowRankEstimate L0;
  ObservedMatrix obs;
  double sigma;
  Index s;
};

struct RmfInstance {
  LowRankEstimate L0;
  OutlierEstimate S0;
  DenseMatrix M;
  Index s;
};

// Ground truth A * B^T with factor entries i.i.d. normal of std (1/r)^(1/4),
// so each product entry has unit variance. Factors are filled column-major;
// A first, then B.
inline LowRankEstimate gen_low_rank(Index m, Index n, Index r, SeededRng& rng) {
  if (r < 1 || r > std::min(m, n))
    throw std::invalid_argument("gen_low_rank: need 1 <= r <= min(m,n)");
  const double stddev = std::pow(1.0 / static_cast<double>(r), 0.25);
  DenseMatrix A(m, r), B(n, r);
  for (Index j = 0; j < r; ++j)
    for (Index i = 0; i < m; ++i) A(i, j) = rng.normal(0.0, stddev);
  for (Index j = 0; j < r; ++j)
    for (Index i = 0; i < n; ++i) B(i, j) = rng.normal(0.0, stddev);
  return LowRankEstimate(std::move(A), std::move(B));
}

// s entries of L0 + Z0 revealed uniformly without replacement; Z0 entries
// are i.i.d. N(0, sigma^2) drawn in support draw order. Cells are numbered
// column-major (cell = j * m + i).
inline McInstance gen_mc_instance(Index m, Index n, Index r, Index s, double sigma,
                                  SeededRng& rng) {
  if (s < 1 || s > m * n) throw std::invalid_argument("gen_mc_instance: need 1 <= s <= m*n");
  if (sigma < 0) throw std::invalid_argument("gen_mc_instance: sigma must be nonnegative");
  LowRankEstimate L0 = gen_low_rank(m, n, r, rng);
  std::vector<Index> cells = sample_without_replacement(m * n, s, rng);
  std::vector<Observation> obs;
  obs.reserve(static_cast<std::size_t>(s));
  for (Index c : cells) {
    const Index i = c % m, j = c / m;
    const double noise = sigma > 0 ? rng.normal(0.0, sigma) : 0.0;
    obs.push_back({i, j, L0.left().row(i).dot(L0.right().row(j)) + noise});
  }
  return McInstance{std::move(L0), ObservedMatrix(m, n, std::move(obs)), sigma, s};
}

// Fully observed M = L0 + S0 + Z0: s outlier cells uniform without
// replacement with values U[0,1] (drawn in support order), then Z0 i.i.d.
// N(0, sigma^2) filled column-major.
inline RmfInstance gen_rmf_instance(Index m, Index n, Index r, Index s, double sigma,
                                    SeededRng& rng) {
  if (s < 0 || s > m * n) throw std::invalid_argument("gen_rmf_instance: need 0 <= s <= m*n");
  if (sigma < 0) throw std::invalid_argument("gen_rmf_instance: sigma must be nonnegative");
  LowRankEstimate L0 = gen_low_rank(m, n, r, rng);
  std::vector<Observation> outliers;
  if (s > 0) {
    std::vector<Index> cells = sample_without_replacement(m * n, s, rng);
    outliers.reserve(static_cast<std::size_t>(s));
    for (Index c : cells) outliers.push_back({c % m, c / m, rng.uniform()});
  }
  OutlierEstimate S0(m, n, std::move(outliers));
  DenseMatrix M = materialize(L0) + S0.to_dense();
  if (sigma > 0) {
    for (Index j = 0; j < n; ++j)
      for (Index i = 0; i < m; ++i) M(i, j) += rng.normal(0.0, sigma);
  }
  return RmfInstance{std::move(L0), std::move(S0), std::move(M), s};
}

}  // namespace dfc
