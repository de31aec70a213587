// Command-line front end: generate instances, run the base solvers or the
// divide-factor-combine variants, inspect coherence, and drive benchmark grids.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dfc/bench.hpp"
#include "dfc/dfc.hpp"
#include "dfc/diagnostics.hpp"
#include "dfc/simgen.hpp"

namespace {

using nlohmann::json;

dfc::Task parse_task(const std::string& s) {
  if (s == "mc") return dfc::Task::MC;
  if (s == "rmf") return dfc::Task::RMF;
  throw CLI::ValidationError("--task", "expected 'mc' or 'rmf'");
}

dfc::ObservedMatrix load_file(const std::string& path, bool one_based) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return dfc::load_triplets(in, one_based);
}

void write_estimate(const std::string& path, const dfc::LowRankEstimate& est) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << dfc::estimate_to_json(est).dump(2) << "\n";
}

json report_json(const dfc::SolveReport& rep) {
  return json{{"iterations", rep.iterations},
              {"objective", rep.objective},
              {"residual", rep.residual},
              {"rank", rep.rank},
              {"wall_ms", rep.wall_ms}};
}

struct GenArgs {
  std::string task = "mc", out;
  dfc::Index m = 100, n = 100, r = 5;
  std::int64_t s = -1;
  double frac = 0.25, sigma = 0.1;
  std::uint64_t seed = 0;
};

int run_gen(const GenArgs& a) {
  dfc::SeededRng rng(a.seed, 0);
  const dfc::Index s =
      a.s >= 0 ? static_cast<dfc::Index>(a.s)
               : static_cast<dfc::Index>(std::llround(a.frac * static_cast<double>(a.m) *
                                                      static_cast<double>(a.n)));
  dfc::LowRankEstimate truth = dfc::LowRankEstimate::zero(a.m, a.n);
  std::optional<dfc::ObservedMatrix> obs;
  if (parse_task(a.task) == dfc::Task::MC) {
    auto inst = dfc::gen_mc_instance(a.m, a.n, a.r, s, a.sigma, rng);
    truth = std::move(inst.L0);
    obs.emplace(std::move(inst.obs));
  } else {
    auto inst = dfc::gen_rmf_instance(a.m, a.n, a.r, s, a.sigma, rng);
    truth = std::move(inst.L0);
    std::vector<dfc::Observation> all;
    all.reserve(static_cast<std::size_t>(a.m * a.n));
    for (dfc::Index j = 0; j < a.n; ++j)
      for (dfc::Index i = 0; i < a.m; ++i) all.push_back({i, j, inst.M(i, j)});
    obs.emplace(a.m, a.n, std::move(all));
  }
  {
    std::ofstream out(a.out);
    if (!out) throw std::runtime_error("cannot write '" + a.out + "'");
    dfc::save_triplets(out, *obs);
  }
  write_estimate(a.out + ".truth.json", truth);
  std::cout << json{{"out", a.out},
                    {"truth", a.out + ".truth.json"},
                    {"m", a.m},
                    {"n", a.n},
                    {"r", a.r},
                    {"s", s},
                    {"sigma", a.sigma},
                    {"seed", a.seed}}
                   .dump(2)
            << "\n";
  return 0;
}

struct SolveArgs {
  std::string task = "mc", in, out;
  bool one_based = false;
  double lambda = 0.0, rel_tol = 1e-4;
  int max_iters = 500;
};

int run_solve(const SolveArgs& a) {
  dfc::ObservedMatrix obs = load_file(a.in, a.one_based);
  dfc::ApgConfig cfg;
  cfg.max_iters = a.max_iters;
  cfg.rel_tol = a.rel_tol;
  json out;
  if (parse_task(a.task) == dfc::Task::MC) {
    auto [L, rep] = dfc::apg_mc(obs, cfg);
    if (!a.out.empty()) write_estimate(a.out, L);
    out = report_json(rep);
  } else {
    const dfc::DenseMatrix M = dfc::densify(obs);
    const double lam = a.lambda > 0 ? a.lambda : dfc::default_rmf_lambda(M.rows(), M.cols());
    auto [L, S, rep] = dfc::apg_rmf(M, lam, cfg);
    if (!a.out.empty()) write_estimate(a.out, L);
    out = report_json(rep);
    out["outliers"] = S.entries.size();
    out["lambda"] = lam;
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

struct DfcArgs {
  std::string task = "mc", in, out, method = "proj";
  bool one_based = false;
  dfc::Index t = 4;
  double l_frac = 0.1, d_frac = 0.1;
  dfc::Index p = 5, q = 2;
  int workers = 1;
  std::uint64_t seed = 0;
  double lambda = 0.0, rel_tol = 1e-4;
  int max_iters = 500;
};

int run_dfc(const DfcArgs& a) {
  dfc::ObservedMatrix obs = load_file(a.in, a.one_based);
  const dfc::Method method = dfc::parse_method(a.method);
  if (method == dfc::Method::Base || method == dfc::Method::Part)
    throw CLI::ValidationError("--method", "expected a proj/rp/nys variant");

  dfc::DfcConfig cfg;
  cfg.task = parse_task(a.task);
  cfg.ensemble = method == dfc::Method::ProjEns || method == dfc::Method::RpEns ||
                 method == dfc::Method::NysEns;
  cfg.variant = (method == dfc::Method::Proj || method == dfc::Method::ProjEns)
                    ? dfc::DfcVariant::Proj
                : (method == dfc::Method::Rp || method == dfc::Method::RpEns)
                    ? dfc::DfcVariant::Rp
                    : dfc::DfcVariant::Nys;
  cfg.t = a.t;
  cfg.l = std::max<dfc::Index>(1, static_cast<dfc::Index>(std::llround(
                                      a.l_frac * static_cast<double>(obs.cols()))));
  cfg.d = std::max<dfc::Index>(1, static_cast<dfc::Index>(std::llround(
                                      a.d_frac * static_cast<double>(obs.rows()))));
  cfg.rp.p = a.p;
  cfg.rp.q = a.q;
  cfg.seed = a.seed;
  cfg.workers = a.workers;
  cfg.lambda = a.lambda;
  cfg.solver_cfg.max_iters = a.max_iters;
  cfg.solver_cfg.rel_tol = a.rel_tol;

  auto [L, rep] = dfc::dfc_run(obs, cfg);
  if (!a.out.empty()) write_estimate(a.out, L);
  json sub = json::array();
  for (const auto& r : rep.subproblems) sub.push_back(report_json(r));
  std::cout << json{{"method", a.method},
                    {"rank", L.rank_bound()},
                    {"ms_divide", rep.divide_ms},
                    {"ms_factor", rep.factor_ms},
                    {"ms_combine", rep.combine_ms},
                    {"ms_total", rep.total_ms},
                    {"chosen_k", rep.chosen_k},
                    {"k_clamped", rep.k_clamped},
                    {"rank_deficient", rep.rank_deficient},
                    {"subproblems", sub}}
                   .dump(2)
            << "\n";
  return 0;
}

struct DiagArgs {
  std::string in;
  bool one_based = false;
  double eps = 0.0, beta = 2.0;
};

int run_diag(const DiagArgs& a) {
  dfc::ObservedMatrix obs = load_file(a.in, a.one_based);
  const dfc::DenseMatrix A = dfc::densify(obs);
  const dfc::LowRankEstimate est = dfc::compact_svd(A).to_estimate();
  const dfc::CoherenceProfile prof = dfc::coherence_profile(est);
  json out{{"m", A.rows()},     {"n", A.cols()},     {"rank", prof.r},
           {"mu0_u", prof.mu0_u}, {"mu0_v", prof.mu0_v}, {"mu1", prof.mu1},
           {"alpha", prof.alpha}};
  if (a.eps > 0) {
    const double mu = std::max({1.0, prof.mu0_u, prof.mu0_v, prof.mu1 * prof.mu1});
    const auto rec = dfc::recommend_sampling(A.rows(), A.cols(), std::max<dfc::Index>(1, prof.r),
                                             mu, obs.count(), a.eps, a.beta);
    out["recommendation"] = {{"mu", mu},
                             {"eps", a.eps},
                             {"beta", a.beta},
                             {"l", rec.l},
                             {"l_raw", rec.l_raw},
                             {"p", rec.p},
                             {"d_coefficient", rec.d_coefficient},
                             {"d_at_mu0_u", rec.d_for(std::max(1.0, prof.mu0_u))},
                             {"c", rec.c}};
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

struct BenchArgs {
  std::string task = "mc", in, truth, out, json_out;
  bool one_based = false;
  dfc::Index m = 500, n = 500, r = 5;
  std::int64_t s = -1;
  double frac = 0.25, sigma = 0.1;
  std::vector<std::string> methods{"base"};
  dfc::Index t = 4;
  double l_frac = 0.1, d_frac = 0.1;
  dfc::Index p = 5, q = 2;
  int workers = 1;
  std::vector<std::uint64_t> seeds{0};
  double lambda = 0.0, rel_tol = 1e-4;
  int max_iters = 500;
};

int run_bench(const BenchArgs& a) {
  dfc::ExperimentSpec spec;
  spec.task = parse_task(a.task);
  spec.m = a.m;
  spec.n = a.n;
  spec.r = a.r;
  spec.s = a.s >= 0 ? static_cast<dfc::Index>(a.s)
                    : static_cast<dfc::Index>(std::llround(a.frac * static_cast<double>(a.m) *
                                                           static_cast<double>(a.n)));
  spec.sigma = a.sigma;
  spec.input_path = a.in;
  spec.truth_path = a.truth;
  spec.one_based = a.one_based;
  for (const auto& ms : a.methods) spec.methods.push_back(dfc::parse_method(ms));
  spec.t = a.t;
  spec.l_frac = a.l_frac;
  spec.d_frac = a.d_frac;
  spec.rp.p = a.p;
  spec.rp.q = a.q;
  spec.workers = a.workers;
  spec.seeds = a.seeds;
  spec.lambda = a.lambda;
  spec.solver_cfg.max_iters = a.max_iters;
  spec.solver_cfg.rel_tol = a.rel_tol;

  const auto rows = dfc::run_experiment(spec);
  if (a.out.empty()) {
    dfc::write_csv(std::cout, rows);
  } else {
    std::ofstream csv(a.out);
    if (!csv) throw std::runtime_error("cannot write '" + a.out + "'");
    dfc::write_csv(csv, rows);
  }
  if (!a.json_out.empty()) {
    std::ofstream js(a.json_out);
    if (!js) throw std::runtime_error("cannot write '" + a.json_out + "'");
    js << dfc::results_to_json(spec, rows).dump(2) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"divide-factor-combine matrix factorization toolkit"};
  app.require_subcommand(1);

  GenArgs g;
  auto* gen = app.add_subcommand("gen", "generate a synthetic instance as triplets");
  gen->add_option("--task", g.task, "mc or rmf")->capture_default_str();
  gen->add_option("--m", g.m, "rows")->capture_default_str();
  gen->add_option("--n", g.n, "columns")->capture_default_str();
  gen->add_option("--r", g.r, "rank")->capture_default_str();
  gen->add_option("--s", g.s, "revealed entries (mc) or outliers (rmf); overrides --frac");
  gen->add_option("--frac", g.frac, "fraction of cells for --s")->capture_default_str();
  gen->add_option("--sigma", g.sigma, "noise std")->capture_default_str();
  gen->add_option("--seed", g.seed, "rng seed")->capture_default_str();
  gen->add_option("--out", g.out, "output triplet file")->required();

  SolveArgs s;
  auto* solve = app.add_subcommand("solve", "run the base solver on a triplet file");
  solve->add_option("--task", s.task, "mc or rmf")->capture_default_str();
  solve->add_option("--in", s.in, "input triplet file")->required();
  solve->add_flag("--one-based", s.one_based, "input indices start at 1");
  solve->add_option("--lambda", s.lambda, "rmf outlier weight; 0 = 1/sqrt(max(m,n))");
  solve->add_option("--max-iters", s.max_iters, "iteration cap")->capture_default_str();
  solve->add_option("--rel-tol", s.rel_tol, "relative-change stop")->capture_default_str();
  solve->add_option("--out", s.out, "estimate checkpoint (json)");

  DfcArgs d;
  auto* dsub = app.add_subcommand("dfc", "divide-factor-combine on a triplet file");
  dsub->add_option("--task", d.task, "mc or rmf")->capture_default_str();
  dsub->add_option("--in", d.in, "input triplet file")->required();
  dsub->add_flag("--one-based", d.one_based, "input indices start at 1");
  dsub->add_option("--method", d.method, "proj|proj-ens|rp|rp-ens|nys|nys-ens")
      ->capture_default_str();
  dsub->add_option("--t", d.t, "column groups / projection draws")->capture_default_str();
  dsub->add_option("--l-frac", d.l_frac, "sampled column fraction")->capture_default_str();
  dsub->add_option("--d-frac", d.d_frac, "sampled row fraction")->capture_default_str();
  dsub->add_option("--p", d.p, "projection oversampling")->capture_default_str();
  dsub->add_option("--q", d.q, "power iterations")->capture_default_str();
  dsub->add_option("--workers", d.workers, "parallel block solves")->capture_default_str();
  dsub->add_option("--seed", d.seed, "rng seed")->capture_default_str();
  dsub->add_option("--lambda", d.lambda, "rmf outlier weight; 0 = per-block default");
  dsub->add_option("--max-iters", d.max_iters, "iteration cap")->capture_default_str();
  dsub->add_option("--rel-tol", d.rel_tol, "relative-change stop")->capture_default_str();
  dsub->add_option("--out", d.out, "estimate checkpoint (json)");

  DiagArgs di;
  auto* diag = app.add_subcommand("diag", "coherence profile of a triplet file");
  diag->add_option("--in", di.in, "input triplet file")->required();
  diag->add_flag("--one-based", di.one_based, "input indices start at 1");
  diag->add_option("--eps", di.eps, "also print sampling sizes for this accuracy");
  diag->add_option("--beta", di.beta, "failure-probability exponent")->capture_default_str();

  BenchArgs b;
  auto* bench = app.add_subcommand("bench", "method x seed grid, csv output");
  bench->add_option("--task", b.task, "mc or rmf")->capture_default_str();
  bench->add_option("--in", b.in, "load observations instead of generating");
  bench->add_option("--truth", b.truth, "factored ground truth (json) for --in");
  bench->add_flag("--one-based", b.one_based, "input indices start at 1");
  bench->add_option("--m", b.m, "rows")->capture_default_str();
  bench->add_option("--n", b.n, "columns")->capture_default_str();
  bench->add_option("--r", b.r, "rank")->capture_default_str();
  bench->add_option("--s", b.s, "revealed entries / outliers; overrides --frac");
  bench->add_option("--frac", b.frac, "fraction of cells for --s")->capture_default_str();
  bench->add_option("--sigma", b.sigma, "noise std")->capture_default_str();
  bench->add_option("--method", b.methods,
                    "base|part|proj|proj-ens|rp|rp-ens|nys|nys-ens (repeat or comma list)")
      ->delimiter(',')
      ->capture_default_str();
  bench->add_option("--t", b.t, "column groups / projection draws")->capture_default_str();
  bench->add_option("--l-frac", b.l_frac, "sampled column fraction")->capture_default_str();
  bench->add_option("--d-frac", b.d_frac, "sampled row fraction")->capture_default_str();
  bench->add_option("--p", b.p, "projection oversampling")->capture_default_str();
  bench->add_option("--q", b.q, "power iterations")->capture_default_str();
  bench->add_option("--workers", b.workers, "parallel block solves")->capture_default_str();
  bench->add_option("--seeds", b.seeds, "seed list (repeat or comma list)")
      ->delimiter(',')
      ->capture_default_str();
  bench->add_option("--lambda", b.lambda, "rmf outlier weight; 0 = default");
  bench->add_option("--max-iters", b.max_iters, "iteration cap")->capture_default_str();
  bench->add_option("--rel-tol", b.rel_tol, "relative-change stop")->capture_default_str();
  bench->add_option("--out", b.out, "csv path (default stdout)");
  bench->add_option("--json", b.json_out, "also write a json mirror");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return run_gen(g);
    if (solve->parsed()) return run_solve(s);
    if (dsub->parsed()) return run_dfc(d);
    if (diag->parsed()) return run_diag(di);
    if (bench->parsed()) return run_bench(b);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
