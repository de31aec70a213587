#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dfc/dfc.hpp"
#include "dfc/matrix_io.hpp"
#include "dfc/simgen.hpp"

namespace dfc {

enum class Method { Base, Part, Proj, ProjEns, Rp, RpEns, Nys, NysEns };

inline std::string method_label(Method m) {
  switch (m) {
    case Method::Base: return "base";
    case Method::Part: return "part";
    case Method::Proj: return "proj";
    case Method::ProjEns: return "proj-ens";
    case Method::Rp: return "rp";
    case Method::RpEns: return "rp-ens";
    case Method::Nys: return "nys";
    case Method::NysEns: return "nys-ens";
  }
  throw std::logic_error("method_label: unknown method");
}

inline Method parse_method(const std::string& s) {
  if (s == "base") return Method::Base;
  if (s == "part") return Method::Part;
  if (s == "proj") return Method::Proj;
  if (s == "proj-ens") return Method::ProjEns;
  if (s == "rp") return Method::Rp;
  if (s == "rp-ens") return Method::RpEns;
  if (s == "nys") return Method::Nys;
  if (s == "nys-ens") return Method::NysEns;
  throw std::invalid_argument("unknown method '" + s + "'");
}

struct ExperimentSpec {
  Task task = Task::MC;
  Index m = 0, n = 0, r = 0;
  Index s = 0;          // revealed entries (MC) or outlier count (RMF)
  double sigma = 0.1;
  std::string input_path;  // when set, load observations instead of generating
  std::string truth_path;  // optional factored ground truth for loaded inputs
  bool one_based = false;
  std::vector<Method> methods;
  Index t = 4;
  double l_frac = 0.1, d_frac = 0.1;
  RpParams rp;
  int workers = 1;
  std::vector<std::uint64_t> seeds;
  ApgConfig solver_cfg;
  double lambda = 0.0;
};

struct ResultRow {
  std::string method;
  std::int64_t seed = 0;
  double rmse = 0.0;
  double ms_divide = 0.0, ms_factor = 0.0, ms_combine = 0.0, ms_total = 0.0;
  Index rank = 0;
  std::string config_echo;
};

// Root mean square deviation over all cells, or over a mask of cells.
inline double rmse(const LowRankEstimate& truth, const LowRankEstimate& est) {
  if (truth.rows() != est.rows() || truth.cols() != est.cols())
    throw std::invalid_argument("rmse: dimension mismatch");
  const double cells = static_cast<double>(truth.rows()) * static_cast<double>(truth.cols());
  return detail::factored_diff_norm(truth, est) / std::sqrt(cells);
}

inline double rmse(const LowRankEstimate& truth, const LowRankEstimate& est,
                   const std::vector<std::pair<Index, Index>>& mask) {
  if (truth.rows() != est.rows() || truth.cols() != est.cols())
    throw std::invalid_argument("rmse: dimension mismatch");
  if (mask.empty()) throw std::invalid_argument("rmse: empty mask");
  double acc = 0.0;
  for (const auto& [i, j] : mask) {
    if (i < 0 || i >= truth.rows() || j < 0 || j >= truth.cols())
      throw std::out_of_range("rmse: mask cell out of range");
    const double tv = truth.rank_bound() ? truth.left().row(i).dot(truth.right().row(j)) : 0.0;
    const double ev = est.rank_bound() ? est.left().row(i).dot(est.right().row(j)) : 0.0;
    acc += (tv - ev) * (tv - ev);
  }
  return std::sqrt(acc / static_cast<double>(mask.size()));
}

namespace detail {

// The baseline that stops after the F step: block estimates are placed back
// at their original columns with no recombination.
inline LowRankEstimate assemble_blocks(const std::vector<LowRankEstimate>& ests,
                                       const PartitionPlan& plan, Index m) {
  const Index n = plan.total_cols();
  Index total_k = 0;
  for (const auto& e : ests) total_k += e.rank_bound();
  if (total_k == 0) return LowRankEstimate::zero(m, n);
  DenseMatrix left(m, total_k);
  DenseMatrix right = DenseMatrix::Zero(n, total_k);
  Index at = 0;
  for (std::size_t g = 0; g < ests.size(); ++g) {
    const Index k = ests[g].rank_bound();
    if (k == 0) continue;
    left.middleCols(at, k) = ests[g].left();
    const auto& idx = plan.group(g);
    for (std::size_t p = 0; p < idx.size(); ++p)
      right.row(idx[p]).segment(at, k) = ests[g].right().row(static_cast<Index>(p));
    at += k;
  }
  if (total_k > std::min(m, n)) return svd_of_product(left, right).to_estimate();
  return LowRankEstimate(std::move(left), std::move(right));
}

inline void validate_spec(const ExperimentSpec& spec) {
  if (spec.seeds.empty()) throw std::invalid_argument("ExperimentSpec: seeds must be nonempty");
  if (spec.methods.empty()) throw std::invalid_argument("ExperimentSpec: methods must be nonempty");
  if (!(spec.l_frac > 0 && spec.l_frac <= 1) || !(spec.d_frac > 0 && spec.d_frac <= 1))
    throw std::invalid_argument("ExperimentSpec: sampling fractions must be in (0,1]");
  if (spec.t < 1) throw std::invalid_argument("ExperimentSpec: t must be >= 1");
  if (spec.workers < 1) throw std::invalid_argument("ExperimentSpec: workers must be >= 1");
  if (spec.input_path.empty()) {
    if (spec.m < 1 || spec.n < 1 || spec.r < 1 || spec.s < 1)
      throw std::invalid_argument("ExperimentSpec: generated instances need m, n, r, s");
  }
}

inline std::string config_echo(const ExperimentSpec& spec) {
  std::ostringstream os;
  os << "task=" << (spec.task == Task::MC ? "mc" : "rmf");
  if (spec.input_path.empty())
    os << ";m=" << spec.m << ";n=" << spec.n << ";r=" << spec.r << ";s=" << spec.s
       << ";sigma=" << spec.sigma;
  else
    os << ";in=" << spec.input_path;
  os << ";t=" << spec.t << ";l_frac=" << spec.l_frac << ";d_frac=" << spec.d_frac
     << ";p=" << spec.rp.p << ";q=" << spec.rp.q << ";workers=" << spec.workers;
  return os.str();
}

}  // namespace detail

inline std::vector<ResultRow> run_experiment(const ExperimentSpec& spec) {
  detail::validate_spec(spec);
  const std::string echo = detail::config_echo(spec);

  std::optional<ObservedMatrix> loaded;
  std::optional<LowRankEstimate> loaded_truth;
  if (!spec.input_path.empty()) {
    std::ifstream in(spec.input_path);
    if (!in) throw std::runtime_error("cannot open " + spec.input_path);
    loaded = load_triplets(in, spec.one_based);
    if (!spec.truth_path.empty()) {
      std::ifstream tin(spec.truth_path);
      if (!tin) throw std::runtime_error("cannot open " + spec.truth_path);
      nlohmann::json j;
      tin >> j;
      loaded_truth = estimate_from_json(j.contains("L0") ? j.at("L0") : j);
    }
  }

  std::vector<ResultRow> rows;
  for (Method method : spec.methods) {
    for (std::uint64_t seed : spec.seeds) {
      // Instance (stream 0 on the seed; orchestrator streams are disjoint).
      std::optional<McInstance> mc;
      std::optional<RmfInstance> rmf;
      std::optional<ObservedMatrix> obs;
      std::optional<LowRankEstimate> truth;
      if (loaded) {
        obs = loaded;
        truth = loaded_truth;
      } else {
        SeededRng rng(seed, 0);
        if (spec.task == Task::MC) {
          mc = gen_mc_instance(spec.m, spec.n, spec.r, spec.s, spec.sigma, rng);
          obs = mc->obs;
          truth = mc->L0;
        } else {
          rmf = gen_rmf_instance(spec.m, spec.n, spec.r, spec.s, spec.sigma, rng);
          truth = rmf->L0;
          // observation form of the dense matrix for the orchestrator
          std::vector<Observation> all;
          all.reserve(static_cast<std::size_t>(spec.m * spec.n));
          for (Index j = 0; j < spec.n; ++j)
            for (Index i = 0; i < spec.m; ++i) all.push_back({i, j, rmf->M(i, j)});
          obs = ObservedMatrix(spec.m, spec.n, std::move(all));
        }
      }

      ResultRow row;
      row.method = method_label(method);
      row.seed = static_cast<std::int64_t>(seed);
      row.config_echo = echo;

      LowRankEstimate est = LowRankEstimate::zero(obs->rows(), obs->cols());
      if (method == Method::Base) {
        if (spec.task == Task::MC) {
          auto [L, rep] = apg_mc(*obs, spec.solver_cfg);
          est = std::move(L);
          row.ms_factor = rep.wall_ms;
          row.ms_total = rep.wall_ms;
          row.rank = rep.rank;
        } else {
          const DenseMatrix M = rmf ? rmf->M : densify(*obs);
          const double lam =
              spec.lambda > 0 ? spec.lambda : default_rmf_lambda(M.rows(), M.cols());
          auto [L, S, rep] = apg_rmf(M, lam, spec.solver_cfg);
          est = std::move(L);
          row.ms_factor = rep.wall_ms;
          row.ms_total = rep.wall_ms;
          row.rank = rep.rank;
        }
      } else if (method == Method::Part) {
        detail::PhaseClock total, phase;
        SeededRng prng(seed, streams::partition);
        PartitionPlan plan = partition_columns(obs->cols(), std::min(spec.t, obs->cols()), prng);
        std::vector<ObservedMatrix> blocks;
        for (std::size_t g = 0; g < plan.group_count(); ++g)
          blocks.push_back(extract_columns(*obs, plan.group(g)));
        row.ms_divide = phase.lap();
        const BaseSolver solver = make_base_solver(spec.task, spec.solver_cfg, spec.lambda);
        std::vector<LowRankEstimate> ests;
        std::vector<SolveReport> reports;
        detail::solve_blocks(blocks, solver, spec.workers, ests, reports);
        row.ms_factor = phase.lap();
        est = detail::assemble_blocks(ests, plan, obs->rows());
        row.ms_combine = phase.lap();
        row.ms_total = total.lap();
        row.rank = est.rank_bound();
      } else {
        DfcConfig cfg;
        cfg.ensemble = (method == Method::ProjEns || method == Method::RpEns ||
                        method == Method::NysEns);
        cfg.variant = (method == Method::Proj || method == Method::ProjEns) ? DfcVariant::Proj
                      : (method == Method::Rp || method == Method::RpEns)   ? DfcVariant::Rp
                                                                            : DfcVariant::Nys;
        cfg.t = std::min(spec.t, obs->cols());
        cfg.l = std::max<Index>(1, static_cast<Index>(std::llround(spec.l_frac * static_cast<double>(obs->cols()))));
        cfg.d = std::max<Index>(1, static_cast<Index>(std::llround(spec.d_frac * static_cast<double>(obs->rows()))));
        cfg.rp = spec.rp;
        cfg.seed = seed;
        cfg.solver_cfg = spec.solver_cfg;
        cfg.task = spec.task;
        cfg.lambda = spec.lambda;
        cfg.workers = spec.workers;
        auto [L, rep] = dfc_run(*obs, cfg);
        est = std::move(L);
        row.ms_divide = rep.divide_ms;
        row.ms_factor = rep.factor_ms;
        row.ms_combine = rep.combine_ms;
        row.ms_total = rep.total_ms;
        row.rank = est.rank_bound();
      }

      if (truth) {
        row.rmse = rmse(*truth, est);
      } else {
        // no ground truth available: report RMSE over the observed cells
        std::vector<std::pair<Index, Index>> cells;
        cells.reserve(obs->entries().size());
        double acc = 0.0;
        for (const auto& e : obs->entries()) {
          const double ev =
              est.rank_bound() ? est.left().row(e.row).dot(est.right().row(e.col)) : 0.0;
          acc += (e.value - ev) * (e.value - ev);
        }
        row.rmse = std::sqrt(acc / static_cast<double>(obs->count()));
      }
      rows.push_back(std::move(row));
    }
  }

  std::sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
    return a.method != b.method ? a.method < b.method : a.seed < b.seed;
  });

  // mean/std summary per method, appended after the per-seed rows
  std::vector<ResultRow> summary;
  for (Method method : spec.methods) {
    const std::string label = method_label(method);
    std::vector<const ResultRow*> group;
    for (const auto& r : rows)
      if (r.method == label) group.push_back(&r);
    if (group.empty()) continue;
    const double cnt = static_cast<double>(group.size());
    auto mean_of = [&](auto get) {
      double acc = 0.0;
      for (const auto* r : group) acc += get(*r);
      return acc / cnt;
    };
    auto std_of = [&](auto get, double mean) {
      if (group.size() < 2) return 0.0;
      double acc = 0.0;
      for (const auto* r : group) acc += (get(*r) - mean) * (get(*r) - mean);
      return std::sqrt(acc / (cnt - 1.0));
    };
    ResultRow mean_row, std_row;
    mean_row.method = label + "_mean";
    std_row.method = label + "_std";
    mean_row.seed = std_row.seed = static_cast<std::int64_t>(group.size());
    mean_row.config_echo = std_row.config_echo = echo;
#define DFC_SUMMARIZE(field)                                              \
  mean_row.field = mean_of([](const ResultRow& r) { return r.field; });   \
  std_row.field = std_of([](const ResultRow& r) { return r.field; }, mean_row.field)
    DFC_SUMMARIZE(rmse);
    DFC_SUMMARIZE(ms_divide);
    DFC_SUMMARIZE(ms_factor);
    DFC_SUMMARIZE(ms_combine);
    DFC_SUMMARIZE(ms_total);
#undef DFC_SUMMARIZE
    mean_row.rank = static_cast<Index>(
        std::llround(mean_of([](const ResultRow& r) { return static_cast<double>(r.rank); })));
    std_row.rank = 0;
    summary.push_back(std::move(mean_row));
    summary.push_back(std::move(std_row));
  }
  std::sort(summary.begin(), summary.end(), [](const ResultRow& a, const ResultRow& b) {
    return a.method < b.method;
  });
  rows.insert(rows.end(), summary.begin(), summary.end());
  return rows;
}

inline void write_csv(std::ostream& out, const std::vector<ResultRow>& rows) {
  out << "method,seed,rmse,ms_divide,ms_factor,ms_combine,ms_total,rank\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.12g", r.rmse);
    out << r.method << "," << r.seed << "," << buf;
    for (double v : {r.ms_divide, r.ms_factor, r.ms_combine, r.ms_total}) {
      std::snprintf(buf, sizeof buf, "%.6g", v);
      out << "," << buf;
    }
    out << "," << r.rank << "\n";
  }
}

inline nlohmann::json results_to_json(const ExperimentSpec& spec,
                                      const std::vector<ResultRow>& rows) {
  nlohmann::json jrows = nlohmann::json::array();
  for (const auto& r : rows) {
    jrows.push_back({{"method", r.method},
                     {"seed", r.seed},
                     {"rmse", r.rmse},
                     {"ms_divide", r.ms_divide},
                     {"ms_factor", r.ms_factor},
                     {"ms_combine", r.ms_combine},
                     {"ms_total", r.ms_total},
                     {"rank", r.rank},
                     {"config", r.config_echo}});
  }
  nlohmann::json jm = nlohmann::json::array();
  for (Method m : spec.methods) jm.push_back(method_label(m));
  return nlohmann::json{{"config",
                         {{"task", spec.task == Task::MC ? "mc" : "rmf"},
                          {"m", spec.m},
                          {"n", spec.n},
                          {"r", spec.r},
                          {"s", spec.s},
                          {"sigma", spec.sigma},
                          {"input", spec.input_path},
                          {"methods", jm},
                          {"t", spec.t},
                          {"l_frac", spec.l_frac},
                          {"d_frac", spec.d_frac},
                          {"p", spec.rp.p},
                          {"q", spec.rp.q},
                          {"workers", spec.workers},
                          {"seeds", spec.seeds}}},
                        {"rows", jrows}};
}

}  // namespace dfc
