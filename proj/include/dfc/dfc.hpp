#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "dfc/matrix_io.hpp"
#include "dfc/rng.hpp"
#include "dfc/sampling.hpp"
#include "dfc/sketch.hpp"
#include "dfc/solvers.hpp"

namespace dfc {

enum class Task { MC, RMF };
enum class DfcVariant { Proj, Rp, Nys };

// RNG stream ids used by the orchestrator. Instance generators conventionally
// use small stream ids, so these are kept far away on the same seed.
namespace streams {
inline constexpr std::uint64_t partition = 0xDFC0000000000001ull;
inline constexpr std::uint64_t nys_rows = 0xDFC0000000000002ull;
inline constexpr std::uint64_t nys_cols = 0xDFC0000000000003ull;
inline constexpr std::uint64_t rp_draw = 0xDFC0000000000100ull;  // + draw index
}  // namespace streams

struct DfcConfig {
  DfcVariant variant = DfcVariant::Proj;
  bool ensemble = false;
  Index t = 4;        // column groups (Proj/Rp)
  Index l = 0;        // sampled columns (Nys)
  Index d = 0;        // sampled rows (Nys)
  RpParams rp;        // p and q; k is chosen from subproblem ranks
  std::uint64_t seed = 0;
  ApgConfig solver_cfg;
  Task task = Task::MC;
  double lambda = 0.0;  // RMF; 0 means 1/sqrt(max(dims)) per block
  int workers = 1;
};

struct BlockError : std::runtime_error {
  BlockError(std::size_t block, const std::string& what)
      : std::runtime_error("block " + std::to_string(block) + ": " + what), block(block) {}
  std::size_t block;
};

struct DfcReport {
  std::vector<SolveReport> subproblems;
  double divide_ms = 0.0;
  double factor_ms = 0.0;
  double combine_ms = 0.0;
  double total_ms = 0.0;
  Index chosen_k = 0;           // Rp: sketch rank actually used
  bool k_clamped = false;       // Rp: k + p hit min(m, n)
  bool rank_deficient = false;  // Nys: intersection lost rank vs the block estimates
};

using BaseSolver =
    std::function<std::pair<LowRankEstimate, SolveReport>(const ObservedMatrix&)>;

inline BaseSolver make_base_solver(Task task, const ApgConfig& cfg, double lambda = 0.0) {
  if (task == Task::MC)
    return [cfg](const ObservedMatrix& block) { return apg_mc(block, cfg); };
  return [cfg, lambda](const ObservedMatrix& block) {
    const double lam = lambda > 0 ? lambda : default_rmf_lambda(block.rows(), block.cols());
    auto [L, S, rep] = apg_rmf(densify(block), lam, cfg);
    return std::pair<LowRankEstimate, SolveReport>{std::move(L), rep};
  };
}

namespace detail {

// Run fn(i) for i in [0, count) on up to `workers` threads. Results must be
// written to pre-sized slots keyed by i; the lowest-index failure wins.
template <class Fn>
void parallel_for(std::size_t count, int workers, Fn&& fn) {
  if (workers < 1) throw std::invalid_argument("parallel_for: workers must be >= 1");
  const std::size_t nthreads = std::min<std::size_t>(static_cast<std::size_t>(workers), count);
  std::vector<std::pair<std::size_t, std::string>> failures(count == 0 ? 1 : count);
  std::vector<char> failed(count, 0);
  if (nthreads <= 1) {
    for (std::size_t i = 0; i < count; ++i) {
      try {
        fn(i);
      } catch (const std::exception& e) {
        throw BlockError(i, e.what());
      }
    }
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (const std::exception& e) {
        failures[i] = {i, e.what()};
        failed[i] = 1;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(nthreads);
  for (std::size_t w = 0; w < nthreads; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  for (std::size_t i = 0; i < count; ++i)
    if (failed[i]) throw BlockError(failures[i].first, failures[i].second);
}

struct PhaseClock {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double lap() {
    const auto t1 = std::chrono::steady_clock::now();
    const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    t0 = t1;
    return ms;
  }
};

// Blocks with no observations get a zero estimate instead of a solver call;
// random partitions can starve a block of a sparse matrix entirely.
inline void solve_blocks(const std::vector<ObservedMatrix>& blocks, const BaseSolver& solver,
                         int workers, std::vector<LowRankEstimate>& ests,
                         std::vector<SolveReport>& reports) {
  ests.assign(blocks.size(), LowRankEstimate::zero(1, 1));
  reports.assign(blocks.size(), SolveReport{});
  parallel_for(blocks.size(), workers, [&](std::size_t i) {
    if (blocks[i].empty()) {
      ests[i] = LowRankEstimate::zero(blocks[i].rows(), blocks[i].cols());
      return;
    }
    auto [est, rep] = solver(blocks[i]);
    ests[i] = std::move(est);
    reports[i] = rep;
  });
}

inline std::vector<Index> block_ranks(const std::vector<LowRankEstimate>& ests) {
  std::vector<Index> r;
  r.reserve(ests.size());
  for (const auto& e : ests) r.push_back(e.rank_bound());
  return r;
}

}  // namespace detail

// Lower median, floored at 1 so downstream sketches always have a target.
inline Index median_rank(const std::vector<Index>& ranks) {
  if (ranks.empty()) throw std::invalid_argument("median_rank: empty list");
  std::vector<Index> sorted = ranks;
  std::sort(sorted.begin(), sorted.end());
  return std::max<Index>(1, sorted[(sorted.size() - 1) / 2]);
}

inline std::pair<LowRankEstimate, DfcReport> dfc_proj(const ObservedMatrix& obs,
                                                      const DfcConfig& cfg,
                                                      const BaseSolver& solver) {
  if (cfg.variant != DfcVariant::Proj) throw std::invalid_argument("dfc_proj: wrong variant");
  if (cfg.t < 1 || cfg.t > obs.cols())
    throw std::invalid_argument("dfc_proj: need 1 <= t <= n");
  DfcReport report;
  detail::PhaseClock total, phase;

  SeededRng prng(cfg.seed, streams::partition);
  PartitionPlan plan = partition_columns(obs.cols(), cfg.t, prng);
  std::vector<ObservedMatrix> blocks;
  blocks.reserve(plan.group_count());
  for (std::size_t g = 0; g < plan.group_count(); ++g)
    blocks.push_back(extract_columns(obs, plan.group(g)));
  report.divide_ms = phase.lap();

  std::vector<LowRankEstimate> ests;
  detail::solve_blocks(blocks, solver, cfg.workers, ests, report.subproblems);
  report.factor_ms = phase.lap();

  LowRankEstimate out = LowRankEstimate::zero(obs.rows(), obs.cols());
  if (!cfg.ensemble) {
    out = column_project(ests[0], ests, plan);
  } else {
    std::vector<LowRankEstimate> projected(ests.size(), LowRankEstimate::zero(1, 1));
    detail::parallel_for(ests.size(), cfg.workers, [&](std::size_t i) {
      projected[i] = column_project(ests[i], ests, plan);
    });
    out = average_estimates(projected, median_rank(detail::block_ranks(ests)));
  }
  report.combine_ms = phase.lap();
  report.total_ms = total.lap();
  return {std::move(out), std::move(report)};
}

inline std::pair<LowRankEstimate, DfcReport> dfc_rp(const ObservedMatrix& obs,
                                                    const DfcConfig& cfg,
                                                    const BaseSolver& solver) {
  if (cfg.variant != DfcVariant::Rp) throw std::invalid_argument("dfc_rp: wrong variant");
  if (cfg.t < 1 || cfg.t > obs.cols()) throw std::invalid_argument("dfc_rp: need 1 <= t <= n");
  DfcReport report;
  detail::PhaseClock total, phase;

  SeededRng prng(cfg.seed, streams::partition);
  PartitionPlan plan = partition_columns(obs.cols(), cfg.t, prng);
  std::vector<ObservedMatrix> blocks;
  blocks.reserve(plan.group_count());
  for (std::size_t g = 0; g < plan.group_count(); ++g)
    blocks.push_back(extract_columns(obs, plan.group(g)));
  report.divide_ms = phase.lap();

  std::vector<LowRankEstimate> ests;
  detail::solve_blocks(blocks, solver, cfg.workers, ests, report.subproblems);
  report.factor_ms = phase.lap();

  RpParams params = cfg.rp;
  params.k = median_rank(detail::block_ranks(ests));
  const Index minmn = std::min(obs.rows(), obs.cols());
  if (params.k + params.p > minmn) {
    report.k_clamped = true;
    params.p = std::min(params.p, minmn - 1);
    params.k = minmn - params.p;
  }
  report.chosen_k = params.k;

  LowRankEstimate out = LowRankEstimate::zero(obs.rows(), obs.cols());
  if (!cfg.ensemble) {
    SeededRng rng(cfg.seed, streams::rp_draw);
    out = random_project(ests, plan, params, rng);
  } else {
    std::vector<LowRankEstimate> draws(static_cast<std::size_t>(cfg.t),
                                       LowRankEstimate::zero(1, 1));
    detail::parallel_for(draws.size(), cfg.workers, [&](std::size_t i) {
      SeededRng rng(cfg.seed, streams::rp_draw + 1 + i);
      draws[i] = random_project(ests, plan, params, rng);
    });
    out = average_estimates(draws, params.k);
  }
  report.combine_ms = phase.lap();
  report.total_ms = total.lap();
  return {std::move(out), std::move(report)};
}

inline std::pair<LowRankEstimate, DfcReport> dfc_nys(const ObservedMatrix& obs,
                                                     const DfcConfig& cfg,
                                                     const BaseSolver& solver) {
  if (cfg.variant != DfcVariant::Nys) throw std::invalid_argument("dfc_nys: wrong variant");
  const Index m = obs.rows(), n = obs.cols();
  if (cfg.l < 1 || cfg.l > n) throw std::invalid_argument("dfc_nys: need 1 <= l <= n");
  if (cfg.d < 1 || cfg.d > m) throw std::invalid_argument("dfc_nys: need 1 <= d <= m");
  DfcReport report;
  detail::PhaseClock total, phase;

  SeededRng row_rng(cfg.seed, streams::nys_rows);
  std::vector<Index> row_idx = sample_without_replacement(m, cfg.d, row_rng);
  std::sort(row_idx.begin(), row_idx.end());

  auto finish = [&](LowRankEstimate out) {
    report.combine_ms = phase.lap();
    report.total_ms = total.lap();
    return std::pair<LowRankEstimate, DfcReport>{std::move(out), std::move(report)};
  };

  // Exact recovery needs rank(W) = rank(M) >= both block ranks, so flag any
  // intersection whose rank falls short of the larger block rank.
  auto pair_deficient = [&](const LowRankEstimate& C_hat, const LowRankEstimate& R_hat) {
    const Index kmax = std::max(C_hat.rank_bound(), R_hat.rank_bound());
    if (kmax == 0 || C_hat.rank_bound() == 0) return kmax > 0;
    DenseMatrix Wleft(static_cast<Index>(row_idx.size()), C_hat.rank_bound());
    for (std::size_t i = 0; i < row_idx.size(); ++i)
      Wleft.row(static_cast<Index>(i)) = C_hat.left().row(row_idx[i]);
    const Index wrank = svd_of_product(Wleft, C_hat.right()).rank();
    return wrank < kmax;
  };

  if (!cfg.ensemble) {
    SeededRng col_rng(cfg.seed, streams::nys_cols);
    std::vector<Index> col_idx = sample_without_replacement(n, cfg.l, col_rng);
    std::sort(col_idx.begin(), col_idx.end());
    std::vector<ObservedMatrix> blocks{extract_columns(obs, col_idx), extract_rows(obs, row_idx)};
    report.divide_ms = phase.lap();

    std::vector<LowRankEstimate> ests;
    detail::solve_blocks(blocks, solver, cfg.workers, ests, report.subproblems);
    report.factor_ms = phase.lap();

    report.rank_deficient = pair_deficient(ests[0], ests[1]);
    return finish(gen_nystrom(ests[0], ests[1], row_idx, col_idx));
  }

  // Ensemble: partition columns into about n/l groups and reuse one row
  // estimate across every (C_i, R) pair.
  const Index groups = std::clamp<Index>(
      static_cast<Index>(std::llround(static_cast<double>(n) / static_cast<double>(cfg.l))), 1, n);
  SeededRng prng(cfg.seed, streams::partition);
  PartitionPlan plan = partition_columns(n, groups, prng);
  std::vector<ObservedMatrix> blocks;
  blocks.reserve(plan.group_count() + 1);
  for (std::size_t g = 0; g < plan.group_count(); ++g)
    blocks.push_back(extract_columns(obs, plan.group(g)));
  blocks.push_back(extract_rows(obs, row_idx));
  report.divide_ms = phase.lap();

  std::vector<LowRankEstimate> ests;
  detail::solve_blocks(blocks, solver, cfg.workers, ests, report.subproblems);
  report.factor_ms = phase.lap();

  const LowRankEstimate& R_hat = ests.back();
  std::vector<LowRankEstimate> col_ests(ests.begin(), ests.end() - 1);
  std::vector<LowRankEstimate> combined(col_ests.size(), LowRankEstimate::zero(1, 1));
  std::vector<char> deficient(col_ests.size(), 0);
  detail::parallel_for(col_ests.size(), cfg.workers, [&](std::size_t i) {
    deficient[i] = pair_deficient(col_ests[i], R_hat) ? 1 : 0;
    combined[i] = gen_nystrom(col_ests[i], R_hat, row_idx, plan.group(i));
  });
  for (char dflag : deficient) report.rank_deficient = report.rank_deficient || dflag;
  return finish(average_estimates(combined, median_rank(detail::block_ranks(col_ests))));
}

inline std::pair<LowRankEstimate, DfcReport> dfc_run(const ObservedMatrix& obs,
                                                     const DfcConfig& cfg) {
  const BaseSolver solver = make_base_solver(cfg.task, cfg.solver_cfg, cfg.lambda);
  switch (cfg.variant) {
    case DfcVariant::Proj: return dfc_proj(obs, cfg, solver);
    case DfcVariant::Rp: return dfc_rp(obs, cfg, solver);
    case DfcVariant::Nys: return dfc_nys(obs, cfg, solver);
  }
  throw std::logic_error("dfc_run: unknown variant");
}

// Theorem-driven sampling sizes. The column count l and projection
// oversampling p are direct formula values; the row count d depends on the
// coherence of the solved column estimate, so it is returned as a
// coefficient to be closed post hoc.
struct SamplingRecommendation {
  Index l = 0;
  Index p = 0;
  double d_coefficient = 0.0;  // d >= d_coefficient * mu0(C_hat)
  double c = 0.0;
  double l_raw = 0.0;
  Index m = 0;

  Index d_for(double mu0_c) const {
    if (!(mu0_c >= 1.0)) throw std::invalid_argument("d_for: mu0 must be >= 1");
    return std::clamp<Index>(static_cast<Index>(std::ceil(d_coefficient * mu0_c)), 1, m);
  }
};

inline SamplingRecommendation recommend_sampling(Index m, Index n, Index r, double mu, Index s,
                                                 double eps, double beta) {
  if (m < 1 || n < 1 || r < 1 || s < 1)
    throw std::invalid_argument("recommend_sampling: dims, rank, and s must be positive");
  if (!(mu >= 1.0)) throw std::invalid_argument("recommend_sampling: mu must be >= 1");
  if (!(eps > 0 && eps <= 1)) throw std::invalid_argument("recommend_sampling: eps in (0,1]");
  if (!(beta > 1)) throw std::invalid_argument("recommend_sampling: beta must exceed 1");

  const double c = 48000.0 / std::log(1.0 / 0.45);
  const double nbar = static_cast<double>(std::max(m, n));
  const double logmn = std::log(static_cast<double>(m + n));
  const double md = static_cast<double>(m), nd = static_cast<double>(n);

  SamplingRecommendation rec;
  rec.c = c;
  rec.m = m;
  rec.l_raw = c * mu * mu * static_cast<double>(r) * static_cast<double>(r) * (md + nd) * nd *
              beta * logmn * logmn / (static_cast<double>(s) * eps * eps);
  rec.l = std::clamp<Index>(static_cast<Index>(std::ceil(rec.l_raw)), 1, n);
  // log(14 nbar^(2 beta - 2)) expanded to avoid overflowing pow
  const double p_raw = 242.0 * static_cast<double>(r) *
                       (std::log(14.0) + (2.0 * beta - 2.0) * std::log(nbar)) / (eps * eps);
  rec.p = std::max<Index>(1, static_cast<Index>(std::ceil(p_raw)));
  const double log4n = std::log(4.0 * nbar);
  rec.d_coefficient = c * static_cast<double>(rec.l) * (2.0 * beta - 1.0) * log4n * log4n *
                      nbar / (nd * eps * eps);
  return rec;
}

}  // namespace dfc
