#pragma once

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "dfc/matrix_io.hpp"
#include "dfc/rng.hpp"

namespace dfc {

// l distinct indices from {0..n-1}, every size-l subset equally likely.
// Partial Fisher-Yates; returned in draw order (callers sort when they care).
inline std::vector<Index> sample_without_replacement(Index n, Index l, SeededRng& rng) {
  if (n < 1) throw std::invalid_argument("sample_without_replacement: empty population");
  if (l < 1 || l > n) throw std::invalid_argument("sample_without_replacement: need 1 <= l <= n");
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  for (Index i = 0; i < l; ++i) {
    const Index j = i + static_cast<Index>(rng.index(static_cast<std::uint64_t>(n - i)));
    std::swap(perm[i], perm[j]);
  }
  perm.resize(static_cast<std::size_t>(l));
  return perm;
}

// Disjoint sorted column groups covering {0..n-1}, sizes differing by at
// most one, induced by a uniform random permutation chunked into t blocks.
class PartitionPlan {
 public:
  PartitionPlan(Index n, std::vector<std::vector<Index>> groups)
      : n_(n), groups_(std::move(groups)) {
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    std::size_t total = 0;
    std::size_t min_sz = static_cast<std::size_t>(n), max_sz = 0;
    for (const auto& g : groups_) {
      min_sz = std::min(min_sz, g.size());
      max_sz = std::max(max_sz, g.size());
      for (std::size_t p = 0; p < g.size(); ++p) {
        const Index c = g[p];
        if (c < 0 || c >= n) throw std::out_of_range("PartitionPlan: column out of range");
        if (seen[static_cast<std::size_t>(c)]++) throw std::invalid_argument("PartitionPlan: overlapping groups");
        if (p > 0 && g[p - 1] >= c) throw std::invalid_argument("PartitionPlan: group not sorted");
        ++total;
      }
    }
    if (total != static_cast<std::size_t>(n)) throw std::invalid_argument("PartitionPlan: groups do not cover all columns");
    if (max_sz > min_sz + 1) throw std::invalid_argument("PartitionPlan: group sizes differ by more than 1");
  }

  Index total_cols() const { return n_; }
  std::size_t group_count() const { return groups_.size(); }
  const std::vector<Index>& group(std::size_t g) const { return groups_.at(g); }

  // Inverse permutation: original column index of position p in group g.
  Index original_index(std::size_t g, Index p) const {
    return groups_.at(g).at(static_cast<std::size_t>(p));
  }

 private:
  Index n_;
  std::vector<std::vector<Index>> groups_;
};

inline PartitionPlan partition_columns(Index n, Index t, SeededRng& rng) {
  if (t < 1 || t > n) throw std::invalid_argument("partition_columns: need 1 <= t <= n");
  std::vector<Index> perm = sample_without_replacement(n, n, rng);
  const Index base = n / t, rem = n % t;
  std::vector<std::vector<Index>> groups(static_cast<std::size_t>(t));
  std::size_t at = 0;
  for (Index g = 0; g < t; ++g) {
    const Index sz = base + (g < rem ? 1 : 0);
    groups[static_cast<std::size_t>(g)].assign(perm.begin() + at, perm.begin() + at + sz);
    std::sort(groups[static_cast<std::size_t>(g)].begin(), groups[static_cast<std::size_t>(g)].end());
    at += static_cast<std::size_t>(sz);
  }
  return PartitionPlan(n, std::move(groups));
}

// Submatrix extraction in P_Omega form: entry (i, p) of the result is
// present iff (i, idx[p]) is observed.
inline ObservedMatrix extract_columns(const ObservedMatrix& obs, const std::vector<Index>& idx) {
  std::vector<Index> pos(static_cast<std::size_t>(obs.cols()), Index{-1});
  for (std::size_t p = 0; p < idx.size(); ++p) {
    const Index c = idx[p];
    if (c < 0 || c >= obs.cols()) throw std::out_of_range("extract_columns: index out of range");
    if (pos[static_cast<std::size_t>(c)] >= 0) throw std::invalid_argument("extract_columns: duplicate index");
    pos[static_cast<std::size_t>(c)] = static_cast<Index>(p);
  }
  std::vector<Observation> sub;
  for (const Observation& e : obs.entries()) {
    const Index p = pos[static_cast<std::size_t>(e.col)];
    if (p >= 0) sub.push_back({e.row, p, e.value});
  }
  return ObservedMatrix(obs.rows(), static_cast<Index>(idx.size()), std::move(sub));
}

inline ObservedMatrix extract_rows(const ObservedMatrix& obs, const std::vector<Index>& idx) {
  std::vector<Index> pos(static_cast<std::size_t>(obs.rows()), Index{-1});
  for (std::size_t p = 0; p < idx.size(); ++p) {
    const Index r = idx[p];
    if (r < 0 || r >= obs.rows()) throw std::out_of_range("extract_rows: index out of range");
    if (pos[static_cast<std::size_t>(r)] >= 0) throw std::invalid_argument("extract_rows: duplicate index");
    pos[static_cast<std::size_t>(r)] = static_cast<Index>(p);
  }
  std::vector<Observation> sub;
  for (const Observation& e : obs.entries()) {
    const Index p = pos[static_cast<std::size_t>(e.row)];
    if (p >= 0) sub.push_back({p, e.col, e.value});
  }
  return ObservedMatrix(static_cast<Index>(idx.size()), obs.cols(), std::move(sub));
}

}  // namespace dfc
