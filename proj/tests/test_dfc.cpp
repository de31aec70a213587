#include <gtest/gtest.h>

#include <dfc/dfc.hpp>
#include <dfc/simgen.hpp>

#include <cmath>
#include <string>
#include <utility>
#include <vector>

using namespace dfc;

namespace {

ObservedMatrix observe_dense(const DenseMatrix& M) {
  std::vector<Observation> obs;
  obs.reserve(static_cast<std::size_t>(M.size()));
  for (Index j = 0; j < M.cols(); ++j)
    for (Index i = 0; i < M.rows(); ++i) obs.push_back({i, j, M(i, j)});
  return ObservedMatrix(M.rows(), M.cols(), std::move(obs));
}

double rel_diff(const LowRankEstimate& a, const LowRankEstimate& b) {
  DenseMatrix B = materialize(b);
  return (materialize(a) - B).norm() / B.norm();
}

double rmse_vs(const LowRankEstimate& est, const DenseMatrix& truth) {
  const double cells = static_cast<double>(truth.rows()) * static_cast<double>(truth.cols());
  return (materialize(est) - truth).norm() / std::sqrt(cells);
}

// slow continuation for noiseless instances where the answer is exact
ApgConfig exact_recovery_cfg() {
  ApgConfig cfg = ApgConfig::high_accuracy();
  cfg.rel_tol = 1e-12;
  cfg.max_iters = 1500;
  return cfg;
}

}  // namespace

TEST(MedianRank, LowerMedianFlooredAtOne) {
  EXPECT_EQ(median_rank({2, 3, 5}), 3);
  EXPECT_EQ(median_rank({2, 4}), 2);
  EXPECT_EQ(median_rank({0, 0, 0}), 1);
  EXPECT_EQ(median_rank({7}), 7);
  EXPECT_THROW(median_rank({}), std::invalid_argument);
}

TEST(DfcProj, SingleGroupMatchesBaseSolver) {
  SeededRng g(2, 0);
  McInstance inst = gen_mc_instance(20, 20, 2, 400, 0.0, g);
  auto [base, base_rep] = apg_mc(inst.obs, ApgConfig{});
  DfcConfig cfg;
  cfg.variant = DfcVariant::Proj;
  cfg.t = 1;
  cfg.seed = 7;
  auto [est, rep] = dfc_run(inst.obs, cfg);
  EXPECT_LT(rel_diff(est, base), 1e-9);
  EXPECT_EQ(rep.subproblems.size(), 1u);
}

TEST(DfcProj, NoiselessRecoveryAndEnsembleMargin) {
  SeededRng g(1, 0);
  McInstance inst = gen_mc_instance(60, 60, 2, 3600, 0.0, g);
  DenseMatrix L0 = materialize(inst.L0);
  DfcConfig cfg;
  cfg.variant = DfcVariant::Proj;
  cfg.t = 3;
  cfg.seed = 1;
  cfg.solver_cfg = exact_recovery_cfg();
  auto [est, rep] = dfc_run(inst.obs, cfg);
  const double err = rmse_vs(est, L0);
  EXPECT_LT(err, 1e-6);
  cfg.ensemble = true;
  auto [ens, ens_rep] = dfc_run(inst.obs, cfg);
  EXPECT_LE(rmse_vs(ens, L0), err + 1e-9);
}

TEST(DfcProj, EmptyBlocksGetZeroEstimates) {
  // three of the four singleton column groups see no observations
  std::vector<Observation> one{{0, 0, 5.0}};
  ObservedMatrix obs(3, 4, std::move(one));
  DfcConfig cfg;
  cfg.variant = DfcVariant::Proj;
  cfg.ensemble = true;
  cfg.t = 4;
  cfg.seed = 2;
  auto [est, rep] = dfc_run(obs, cfg);
  EXPECT_EQ(est.rows(), 3);
  EXPECT_EQ(est.cols(), 4);
  EXPECT_TRUE(materialize(est).allFinite());
  int untouched = 0;
  for (const auto& r : rep.subproblems) untouched += (r.iterations == 0);
  EXPECT_EQ(untouched, 3);
}

TEST(DfcProj, EnsembleOfIdenticalBlockEstimatesMatchesSingle) {
  DenseMatrix U0(6, 2), Vw(4, 2);
  U0 << 1, 0, 0, 1, 1, 1, 1, -1, 2, 1, 0, 3;
  Vw << 1, 2, 0, 1, 1, 0, 2, 1;
  BaseSolver fixed = [&](const ObservedMatrix&) {
    return std::pair<LowRankEstimate, SolveReport>(LowRankEstimate(U0, Vw), SolveReport{});
  };
  ObservedMatrix obs = observe_dense(DenseMatrix::Ones(6, 12));
  DfcConfig cfg;
  cfg.variant = DfcVariant::Proj;
  cfg.t = 3;  // divides n, so every block gets the same estimate shape
  cfg.seed = 4;
  auto [single, rep_s] = dfc_proj(obs, cfg, fixed);
  cfg.ensemble = true;
  auto [ens, rep_e] = dfc_proj(obs, cfg, fixed);
  DenseMatrix S = materialize(single);
  EXPECT_LT((materialize(ens) - S).norm(), 1e-9 * (1.0 + S.norm()));
}

TEST(DfcProj, BlockFailureCarriesBlockIndex) {
  // group sizes are {3, 2}, so the failing width-2 block is always index 1
  BaseSolver flaky = [](const ObservedMatrix& block) {
    if (block.cols() == 2) throw std::runtime_error("deliberate failure");
    SeededRng r(1, 0);
    return std::pair<LowRankEstimate, SolveReport>(
        gen_low_rank(block.rows(), block.cols(), 1, r), SolveReport{});
  };
  ObservedMatrix obs = observe_dense(DenseMatrix::Ones(6, 5));
  for (int workers : {1, 2}) {
    DfcConfig cfg;
    cfg.variant = DfcVariant::Proj;
    cfg.t = 2;
    cfg.seed = 9;
    cfg.workers = workers;
    bool caught = false;
    try {
      dfc_proj(obs, cfg, flaky);
    } catch (const BlockError& e) {
      caught = true;
      EXPECT_EQ(e.block, 1u);
      EXPECT_NE(std::string(e.what()).find("block 1"), std::string::npos);
      EXPECT_NE(std::string(e.what()).find("deliberate failure"), std::string::npos);
    }
    EXPECT_TRUE(caught);
  }
}

TEST(DfcProj, ValidatesConfig) {
  ObservedMatrix obs = observe_dense(DenseMatrix::Ones(4, 4));
  DfcConfig cfg;
  cfg.variant = DfcVariant::Proj;
  cfg.t = 0;
  EXPECT_THROW(dfc_run(obs, cfg), std::invalid_argument);
  cfg.t = 5;
  EXPECT_THROW(dfc_run(obs, cfg), std::invalid_argument);
  cfg.t = 2;
  cfg.workers = 0;
  EXPECT_THROW(dfc_run(obs, cfg), std::invalid_argument);
  cfg.workers = 1;
  cfg.variant = DfcVariant::Rp;
  const BaseSolver solver = make_base_solver(Task::MC, ApgConfig{});
  EXPECT_THROW(dfc_proj(obs, cfg, solver), std::invalid_argument);
}

TEST(DfcRp, SingleGroupExactRankRecovery) {
  SeededRng g(1, 0);
  McInstance inst = gen_mc_instance(60, 60, 2, 3600, 0.0, g);
  DfcConfig cfg;
  cfg.variant = DfcVariant::Rp;
  cfg.t = 1;
  cfg.seed = 1;
  cfg.solver_cfg = exact_recovery_cfg();
  auto [est, rep] = dfc_run(inst.obs, cfg);
  EXPECT_LT(rmse_vs(est, materialize(inst.L0)), 1e-6);
}

TEST(DfcRp, ThreeGroupRecoveryAndChosenRank) {
  SeededRng g(1, 0);
  McInstance inst = gen_mc_instance(60, 60, 2, 3600, 0.0, g);
  DenseMatrix L0 = materialize(inst.L0);
  DfcConfig cfg;
  cfg.variant = DfcVariant::Rp;
  cfg.t = 3;
  cfg.seed = 1;
  cfg.solver_cfg = exact_recovery_cfg();
  auto [est, rep] = dfc_run(inst.obs, cfg);
  EXPECT_LT(rmse_vs(est, L0), 1e-5);
  EXPECT_EQ(rep.chosen_k, 2);
  EXPECT_FALSE(rep.k_clamped);
  cfg.ensemble = true;
  auto [ens, erep] = dfc_run(inst.obs, cfg);
  EXPECT_LT(rmse_vs(ens, L0), 1e-5);
}

TEST(DfcRp, MedianOfForcedBlockRanks) {
  ObservedMatrix obs = observe_dense(DenseMatrix::Ones(8, 12));
  int call = 0;
  BaseSolver fake = [&call](const ObservedMatrix& block) {
    const Index ranks[3] = {2, 2, 4};
    SeededRng r(99 + static_cast<std::uint64_t>(call), 0);
    LowRankEstimate est = gen_low_rank(block.rows(), block.cols(), ranks[call], r);
    ++call;
    return std::pair<LowRankEstimate, SolveReport>(std::move(est), SolveReport{});
  };
  DfcConfig cfg;
  cfg.variant = DfcVariant::Rp;
  cfg.t = 3;
  cfg.seed = 3;
  auto [est, rep] = dfc_rp(obs, cfg, fake);
  EXPECT_EQ(rep.chosen_k, 2);
  EXPECT_FALSE(rep.k_clamped);
}

TEST(DfcRp, SketchClampsOnNarrowMatrices) {
  SeededRng g(6, 0);
  McInstance inst = gen_mc_instance(6, 4, 1, 24, 0.0, g);
  DfcConfig cfg;
  cfg.variant = DfcVariant::Rp;
  cfg.t = 1;
  cfg.seed = 6;
  cfg.solver_cfg = ApgConfig::high_accuracy();
  auto [est, rep] = dfc_run(inst.obs, cfg);
  EXPECT_TRUE(rep.k_clamped);
  EXPECT_EQ(rep.chosen_k, 1);
  EXPECT_LT(rmse_vs(est, materialize(inst.L0)), 1e-3);
}

TEST(DfcNys, FullSamplingMatchesBaseSolver) {
  SeededRng g(2, 0);
  McInstance inst = gen_mc_instance(20, 20, 2, 400, 0.0, g);
  auto [base, base_rep] = apg_mc(inst.obs, ApgConfig{});
  DfcConfig cfg;
  cfg.variant = DfcVariant::Nys;
  cfg.l = 20;
  cfg.d = 20;
  cfg.seed = 7;
  auto [est, rep] = dfc_run(inst.obs, cfg);
  EXPECT_LT(rel_diff(est, base), 1e-9);
  EXPECT_FALSE(rep.rank_deficient);
  EXPECT_EQ(rep.subproblems.size(), 2u);
}

TEST(DfcNys, NoiselessRecoveryAcrossSeeds) {
  int hits = 0;
  for (int seed = 1; seed <= 100; ++seed) {
    SeededRng g(static_cast<std::uint64_t>(seed), 0);
    McInstance inst = gen_mc_instance(60, 60, 2, 3600, 0.0, g);
    DfcConfig cfg;
    cfg.variant = DfcVariant::Nys;
    cfg.l = 12;
    cfg.d = 12;
    cfg.seed = static_cast<std::uint64_t>(seed);
    cfg.solver_cfg = ApgConfig::high_accuracy();
    auto [est, rep] = dfc_run(inst.obs, cfg);
    if (rmse_vs(est, materialize(inst.L0)) < 1e-5) ++hits;
  }
  EXPECT_GE(hits, 95);
}

TEST(DfcNys, RankDeficiencyIsFlagged) {
  const Index m = 8, n = 6;
  ObservedMatrix obs = observe_dense(DenseMatrix::Ones(m, n));
  DfcConfig cfg;
  cfg.variant = DfcVariant::Nys;
  cfg.l = 3;
  cfg.d = 1;
  cfg.seed = 21;
  SeededRng row_rng(cfg.seed, streams::nys_rows);
  const Index sampled_row = sample_without_replacement(m, 1, row_rng)[0];

  auto crafted = [&](bool dead_row) {
    return [&, dead_row](const ObservedMatrix& block) {
      DenseMatrix left, right;
      if (block.rows() == m) {  // column block: rank-1 estimate
        left = DenseMatrix::Ones(m, 1);
        if (dead_row) left(sampled_row, 0) = 0.0;  // vanishes on the sampled row
        right = DenseMatrix::Ones(block.cols(), 1);
      } else {  // row block
        left = DenseMatrix::Ones(block.rows(), 1);
        right = DenseMatrix::Ones(block.cols(), 1);
      }
      return std::pair<LowRankEstimate, SolveReport>(
          LowRankEstimate(std::move(left), std::move(right)), SolveReport{});
    };
  };

  auto [bad, bad_rep] = dfc_nys(obs, cfg, crafted(true));
  EXPECT_TRUE(bad_rep.rank_deficient);
  EXPECT_LT(materialize(bad).norm(), 1e-12);  // dead intersection pins the output at zero
  auto [good, good_rep] = dfc_nys(obs, cfg, crafted(false));
  EXPECT_FALSE(good_rep.rank_deficient);
}

TEST(DfcNys, ValidatesConfig) {
  ObservedMatrix obs = observe_dense(DenseMatrix::Ones(4, 5));
  DfcConfig cfg;
  cfg.variant = DfcVariant::Nys;
  for (auto [l, d] : {std::pair<Index, Index>{0, 2}, {6, 2}, {2, 0}, {2, 5}})
  {
    cfg.l = l;
    cfg.d = d;
    EXPECT_THROW(dfc_run(obs, cfg), std::invalid_argument);
  }
}

TEST(DfcTask, RmfSingleGroupMatchesDirectSolve) {
  SeededRng g(3, 0);
  RmfInstance inst = gen_rmf_instance(20, 24, 2, 40, 0.0, g);
  ApgConfig tight;
  tight.rel_tol = 1e-6;
  tight.max_iters = 2000;
  auto [Lb, Sb, rb] = apg_rmf(inst.M, default_rmf_lambda(20, 24), tight);
  DfcConfig cfg;
  cfg.variant = DfcVariant::Proj;
  cfg.t = 1;
  cfg.seed = 5;
  cfg.task = Task::RMF;
  cfg.solver_cfg = tight;
  auto [est, rep] = dfc_run(observe_dense(inst.M), cfg);
  EXPECT_LT(rel_diff(est, Lb), 1e-9);
  EXPECT_LT(rmse_vs(est, materialize(inst.L0)), 1e-3);
}

TEST(DfcScheduling, WorkerCountDoesNotChangeResult) {
  SeededRng g(4, 0);
  McInstance inst = gen_mc_instance(40, 40, 2, 1600, 0.0, g);
  auto bitwise_equal = [&](DfcVariant v, Index t, Index l, Index d) {
    DfcConfig serial;
    serial.variant = v;
    serial.ensemble = true;
    serial.t = t;
    serial.l = l;
    serial.d = d;
    serial.seed = 11;
    DfcConfig pooled = serial;
    pooled.workers = 4;
    auto [a, ra] = dfc_run(inst.obs, serial);
    auto [b, rb] = dfc_run(inst.obs, pooled);
    return a.left() == b.left() && a.right() == b.right();
  };
  EXPECT_TRUE(bitwise_equal(DfcVariant::Proj, 4, 0, 0));
  EXPECT_TRUE(bitwise_equal(DfcVariant::Rp, 4, 0, 0));
  EXPECT_TRUE(bitwise_equal(DfcVariant::Nys, 4, 10, 10));
}

TEST(DfcStatistical, HundredSeedNoiselessProjRecovery) {
  int hits = 0;
  for (int seed = 1; seed <= 100; ++seed) {
    SeededRng g(static_cast<std::uint64_t>(seed), 0);
    McInstance inst = gen_mc_instance(100, 100, 5, 10000, 0.0, g);
    DfcConfig cfg;
    cfg.variant = DfcVariant::Proj;
    cfg.t = 4;
    cfg.seed = static_cast<std::uint64_t>(seed);
    cfg.solver_cfg = ApgConfig::high_accuracy();
    auto [est, rep] = dfc_run(inst.obs, cfg);
    if (rmse_vs(est, materialize(inst.L0)) < 1e-6) ++hits;
  }
  EXPECT_GE(hits, 99);
}

TEST(DfcReporting, PhaseAccountingAndSubproblemCounts) {
  SeededRng g(4, 0);
  McInstance inst = gen_mc_instance(40, 40, 2, 1600, 0.0, g);
  DfcConfig cfg;
  cfg.variant = DfcVariant::Proj;
  cfg.t = 3;
  cfg.seed = 8;
  auto [est, rep] = dfc_run(inst.obs, cfg);
  EXPECT_EQ(rep.subproblems.size(), 3u);
  EXPECT_GE(rep.divide_ms, 0.0);
  EXPECT_GE(rep.factor_ms, 0.0);
  EXPECT_GE(rep.combine_ms, 0.0);
  EXPECT_GE(rep.total_ms + 1e-6, rep.combine_ms);
  EXPECT_GE(rep.total_ms + 1e-6, rep.factor_ms);
  for (const auto& sub : rep.subproblems) EXPECT_GE(sub.iterations, 1);

  DfcConfig ncfg;
  ncfg.variant = DfcVariant::Nys;
  ncfg.l = 10;
  ncfg.d = 10;
  ncfg.seed = 8;
  auto [nest, nrep] = dfc_run(inst.obs, ncfg);
  EXPECT_EQ(nrep.subproblems.size(), 2u);
  EXPECT_GE(nrep.total_ms + 1e-6, nrep.combine_ms);
}

TEST(RecommendSampling, ConstantMatchesClosedForm) {
  SamplingRecommendation rec = recommend_sampling(1000, 1000, 5, 1.0, 200000, 0.5, 1.5);
  EXPECT_DOUBLE_EQ(rec.c, 48000.0 / std::log(1.0 / 0.45));
  EXPECT_NEAR(rec.c, 60112.8, 1.0);
}

TEST(RecommendSampling, ReferenceTupleMatchesIndependentEvaluation) {
  const Index m = 1000, n = 1000, r = 5;
  const double mu = 1.0, eps = 0.5, beta = 1.5;
  const Index s = 200000;
  SamplingRecommendation rec = recommend_sampling(m, n, r, mu, s, eps, beta);

  // same formulas, independently grouped
  const double c = 48000.0 / std::log(1.0 / 0.45);
  const double lterm = mu * static_cast<double>(r) * std::log(static_cast<double>(m + n));
  const double l_raw = c / (static_cast<double>(s) * eps * eps) * lterm * lterm *
                       static_cast<double>(m + n) * static_cast<double>(n) * beta;
  EXPECT_NEAR(rec.l_raw, l_raw, 1.0);
  EXPECT_NEAR(rec.l_raw, 5.20935e9, 1e5);
  EXPECT_EQ(rec.l, 1000);  // clamped to n

  const double nbar = 1000.0;
  const double p_raw = 242.0 * 5.0 * std::log(14.0 * std::pow(nbar, 2.0 * beta - 2.0)) /
                       (eps * eps);
  EXPECT_EQ(rec.p, static_cast<Index>(std::ceil(p_raw)));
  EXPECT_EQ(rec.p, 46207);

  const double log4n = std::log(4.0 * nbar);
  const double d_coef = c * 1000.0 * (2.0 * beta - 1.0) * log4n * log4n / (eps * eps);
  EXPECT_NEAR(rec.d_coefficient, d_coef, 1.0);
  EXPECT_NEAR(rec.d_coefficient, 3.30815141e10, 1e3);
  EXPECT_EQ(rec.d_for(1.0), 1000);  // clamped to m
  EXPECT_THROW(rec.d_for(0.99), std::invalid_argument);
}

TEST(RecommendSampling, ClampsToMatrixBounds) {
  SamplingRecommendation rec = recommend_sampling(50, 40, 1, 1.0, 2000, 1.0, 1.5);
  EXPECT_EQ(rec.l, 40);
  EXPECT_GE(rec.p, 1);
  EXPECT_EQ(rec.d_for(1.0), 50);
}

TEST(RecommendSampling, ValidatesArguments) {
  EXPECT_THROW(recommend_sampling(0, 10, 1, 1.0, 5, 0.5, 1.5), std::invalid_argument);
  EXPECT_THROW(recommend_sampling(10, 10, 1, 1.0, 0, 0.5, 1.5), std::invalid_argument);
  EXPECT_THROW(recommend_sampling(10, 10, 1, 0.9, 5, 0.5, 1.5), std::invalid_argument);
  EXPECT_THROW(recommend_sampling(10, 10, 1, 1.0, 5, 0.0, 1.5), std::invalid_argument);
  EXPECT_THROW(recommend_sampling(10, 10, 1, 1.0, 5, 1.2, 1.5), std::invalid_argument);
  EXPECT_THROW(recommend_sampling(10, 10, 1, 1.0, 5, 0.5, 1.0), std::invalid_argument);
}
