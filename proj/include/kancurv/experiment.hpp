#pragma once

// Config-driven experiment runner: single runs, lambda x seed sweeps, the
// Feynman benchmark table, bound checks, and CSV/JSON artifact emission.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "kancurv/curvature.hpp"
#include "kancurv/optim.hpp"
#include "kancurv/targets.hpp"

namespace kancurv {

struct ExperimentConfig {
  std::string name = "experiment";
  std::string target;
  std::vector<int> widths;
  int grid_size = 10;
  double coeff_init_std = 0.1;
  BasisKind basis = BasisKind::BSplineCubic;
  PenaltyConfig penalty;
  std::vector<double> lambdas{0.0};
  std::vector<std::uint64_t> seeds{0};
  TrainConfig optimizer;
  int n_train = 1024;
  int n_test = 256;
  std::string output_dir = "out";
  int jobs = 1;
  bool bound_check = false;
  // Feynman mode: equations and the penalty conditions compared per row.
  std::vector<std::string> equations;
  std::vector<std::string> conditions;

  void validate() const {
    if (lambdas.empty()) throw ConfigError("config: lambdas must be non-empty");
    if (seeds.empty()) throw ConfigError("config: seeds must be non-empty");
    if (widths.size() < 2) throw ConfigError("config: widths needs >= 2 entries");
    if (!target.empty() && find_target(target).arity != widths.front())
      throw ConfigError("config: widths[0] must equal target arity");
    penalty.validate();
    optimizer.validate();
  }
};

struct RunRecord {
  std::string id;
  std::string target;
  std::string penalty_kind;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  std::vector<int> widths;
  int grid_size = 0;
  std::string basis;
  double train_rmse = 0.0;
  double test_rmse = 0.0;
  std::optional<double> r2;
  double total_curvature = 0.0;
  bool aborted = false;
  int abort_epoch = -1;
  double wall_sec = 0.0;
  TrainLog log;
  std::optional<BoundDiagnostics> bound;
};

namespace detail {

inline std::string fmt_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string penalty_kind_name(PenaltyKind k) {
  switch (k) {
    case PenaltyKind::None: return "none";
    case PenaltyKind::Kan: return "kan";
    case PenaltyKind::FirstDiff: return "first-diff";
    case PenaltyKind::Curvature: return "curvature";
    case PenaltyKind::WeightedCurvature: return "weighted-curvature";
  }
  return "?";
}

inline PenaltyKind penalty_kind_from_name(const std::string& s) {
  if (s == "none") return PenaltyKind::None;
  if (s == "kan") return PenaltyKind::Kan;
  if (s == "first-diff") return PenaltyKind::FirstDiff;
  if (s == "curvature") return PenaltyKind::Curvature;
  if (s == "weighted-curvature") return PenaltyKind::WeightedCurvature;
  throw ConfigError("unknown penalty kind: " + s);
}

inline std::string widths_str(const std::vector<int>& w) {
  std::string s;
  for (size_t i = 0; i < w.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(w[i]);
  }
  return s;
}

// Lower median (exact order statistic, no averaging for even counts).
inline double lower_median(std::vector<double> v) {
  if (v.empty()) throw ShapeError("median of empty set");
  std::sort(v.begin(), v.end());
  return v[(v.size() - 1) / 2];
}

inline std::filesystem::path resolve_output_dir(const std::string& dir) {
  std::filesystem::path p(dir);
  if (const char* root = std::getenv("KANCURV_OUTPUT_ROOT");
      root && p.is_relative())
    p = std::filesystem::path(root) / p;
  return p;
}

}  // namespace detail

// --- config (de)serialization ----------------------------------------------

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.name = j.value("name", c.name);
  c.target = j.value("target", c.target);
  c.widths = j.value("widths", c.widths);
  c.grid_size = j.value("grid_size", c.grid_size);
  c.coeff_init_std = j.value("coeff_init_std", c.coeff_init_std);
  const std::string basis = j.value("basis", std::string("bspline"));
  if (basis == "bspline")
    c.basis = BasisKind::BSplineCubic;
  else if (basis == "rbf")
    c.basis = BasisKind::GaussianRbf;
  else
    throw ConfigError("config: unknown basis " + basis);
  if (j.contains("penalty")) {
    const auto& jp = j.at("penalty");
    c.penalty.kind =
        detail::penalty_kind_from_name(jp.value("kind", std::string("none")));
    c.penalty.mu1 = jp.value("mu1", c.penalty.mu1);
    c.penalty.mu2 = jp.value("mu2", c.penalty.mu2);
    c.penalty.weight_refresh_epochs =
        jp.value("weight_refresh_epochs", c.penalty.weight_refresh_epochs);
  }
  c.lambdas = j.value("lambdas", c.lambdas);
  c.seeds = j.value("seeds", c.seeds);
  if (j.contains("optimizer")) {
    const auto& jo = j.at("optimizer");
    const std::string name = jo.value("name", std::string("adam"));
    if (name == "adam")
      c.optimizer.optimizer = OptimizerKind::Adam;
    else if (name == "lbfgs")
      c.optimizer.optimizer = OptimizerKind::Lbfgs;
    else
      throw ConfigError("config: unknown optimizer " + name);
    auto& o = c.optimizer;
    o.epochs = jo.value("epochs", o.epochs);
    o.warmup_epochs = jo.value("warmup_epochs", o.warmup_epochs);
    o.batch_size = jo.value("batch_size", o.batch_size);
    o.learning_rate = jo.value("learning_rate",
                               name == "lbfgs" ? 1.0 : o.learning_rate);
    o.history_size = jo.value("history_size", o.history_size);
    o.max_inner_iter = jo.value("max_inner_iter", o.max_inner_iter);
    o.tolerance_grad = jo.value("tolerance_grad", o.tolerance_grad);
    o.tolerance_change = jo.value("tolerance_change", o.tolerance_change);
    o.calibrate_ranges = jo.value("calibrate_ranges", o.calibrate_ranges);
  }
  c.n_train = j.value("n_train", c.n_train);
  c.n_test = j.value("n_test", c.n_test);
  c.output_dir = j.value("output_dir", c.output_dir);
  c.jobs = j.value("jobs", c.jobs);
  c.bound_check = j.value("bound_check", c.bound_check);
  c.equations = j.value("equations", c.equations);
  c.conditions = j.value("conditions", c.conditions);
  return c;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["name"] = c.name;
  j["target"] = c.target;
  j["widths"] = c.widths;
  j["grid_size"] = c.grid_size;
  j["coeff_init_std"] = c.coeff_init_std;
  j["basis"] = c.basis == BasisKind::BSplineCubic ? "bspline" : "rbf";
  j["penalty"] = {{"kind", detail::penalty_kind_name(c.penalty.kind)},
                  {"mu1", c.penalty.mu1},
                  {"mu2", c.penalty.mu2},
                  {"weight_refresh_epochs", c.penalty.weight_refresh_epochs}};
  j["lambdas"] = c.lambdas;
  j["seeds"] = c.seeds;
  j["optimizer"] = {
      {"name", c.optimizer.optimizer == OptimizerKind::Adam ? "adam" : "lbfgs"},
      {"epochs", c.optimizer.epochs},
      {"warmup_epochs", c.optimizer.warmup_epochs},
      {"batch_size", c.optimizer.batch_size},
      {"learning_rate", c.optimizer.learning_rate},
      {"history_size", c.optimizer.history_size},
      {"max_inner_iter", c.optimizer.max_inner_iter},
      {"tolerance_grad", c.optimizer.tolerance_grad},
      {"tolerance_change", c.optimizer.tolerance_change},
      {"calibrate_ranges", c.optimizer.calibrate_ranges}};
  j["n_train"] = c.n_train;
  j["n_test"] = c.n_test;
  j["output_dir"] = c.output_dir;
  j["jobs"] = c.jobs;
  j["bound_check"] = c.bound_check;
  j["equations"] = c.equations;
  j["conditions"] = c.conditions;
  return j;
}

// Named presets matching the paper-style experiment layouts.
inline std::optional<ExperimentConfig> preset(const std::string& name) {
  ExperimentConfig c;
  c.name = name;
  if (name == "fig1") {
    c.target = "sin_x_plus_y2";
    c.widths = {2, 2, 1, 1};
    c.grid_size = 10;
    c.penalty.kind = PenaltyKind::Curvature;
    c.lambdas = {0.0, 1e-4};
    c.seeds = {0};
    c.optimizer.batch_size = 64;
    c.output_dir = "out/fig1";
    return c;
  }
  if (name == "fig2") {
    c.target = "exp_sin_pix_plus_y2";
    c.widths = {2, 5, 1};
    c.grid_size = 10;
    c.penalty.kind = PenaltyKind::Curvature;
    c.lambdas = {0.0, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0};
    c.seeds = {0, 1, 2};
    c.output_dir = "out/fig2";
    return c;
  }
  if (name == "fig3") {
    c.target = "exp_sin_pix_plus_y2";
    c.widths = {2, 1, 1};
    c.grid_size = 200;
    c.penalty.kind = PenaltyKind::Curvature;
    c.lambdas = {1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0};
    c.seeds = {0, 1, 2};
    c.output_dir = "out/fig3";
    return c;
  }
  if (name == "fig4") {
    c.target = "exp_sin_pix_plus_y2";
    c.widths = {2, 5, 1};
    c.grid_size = 200;
    c.penalty.kind = PenaltyKind::Curvature;
    c.lambdas = {0.0, 1e-2};
    c.seeds = {0, 1, 2};
    c.optimizer.optimizer = OptimizerKind::Lbfgs;
    c.optimizer.epochs = 500;
    c.optimizer.warmup_epochs = 0;
    c.optimizer.learning_rate = 1.0;
    c.output_dir = "out/fig4";
    return c;
  }
  if (name == "fig5") {
    c.target = "exp_sin_pix_plus_y2";
    c.widths = {2, 5, 1};
    c.grid_size = 200;
    c.penalty.kind = PenaltyKind::WeightedCurvature;
    c.lambdas = {1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0};
    c.seeds = {0, 1, 2, 3, 4};
    // Path weights are only informative while the edges are smooth: start
    // near the SiLU residual (init noise scaled down with the grid size)
    // and apply the penalty from the first epoch, before minibatch Adam
    // can roughen the fine grid and blow the weight spread to ~1e4.
    c.coeff_init_std = 0.1 / c.grid_size;
    c.optimizer.warmup_epochs = 0;
    c.output_dir = "out/fig5";
    return c;
  }
  if (name == "table1") {
    c.equations = {"I.6.20", "I.6.20b", "I.9.18",   "I.12.11", "I.16.6",
                   "I.18.4", "I.26.2",  "I.29.16",  "I.30.3",  "I.50.26",
                   "II.11.27", "II.35.18", "III.10.19", "III.17.37"};
    c.conditions = {"none", "kan", "curvature"};
    c.grid_size = 10;
    c.lambdas = {1e-4};
    c.seeds = {0, 1, 2, 3, 4};
    c.widths = {0, 0, 1};  // per-equation [d, d, 1], filled at run time
    c.output_dir = "out/table1";
    return c;
  }
  if (name == "appB") {
    c.target = "sin_x_plus_y2";
    c.widths = {2, 2, 1, 1};
    c.grid_size = 64;
    c.basis = BasisKind::GaussianRbf;
    c.penalty.kind = PenaltyKind::Curvature;
    c.lambdas = {0.0, 1e-3};
    c.seeds = {0, 1, 2};
    c.optimizer.batch_size = 64;
    // fixed grids and penalty-from-the-start: warmup lets the high-G RBF
    // net build extreme curvature that traps later penalized training
    c.optimizer.calibrate_ranges = false;
    c.optimizer.warmup_epochs = 0;
    c.output_dir = "out/appB";
    return c;
  }
  return std::nullopt;
}

// Reads a config file; bare preset names resolve to built-in presets.
inline ExperimentConfig load_config(const std::string& path_or_preset) {
  if (!std::filesystem::exists(path_or_preset)) {
    if (auto p = preset(path_or_preset)) return *p;
    throw ConfigError("no such config file or preset: " + path_or_preset);
  }
  std::ifstream in(path_or_preset);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return config_from_json(j);
}

// --- runs -------------------------------------------------------------------

namespace detail {

// Per-run RNG streams derived from the run seed.
inline std::uint64_t derive_seed(std::uint64_t seed, int stream) {
  return seed * 1000003ULL + static_cast<std::uint64_t>(stream) + 1;
}

inline std::string run_id(const std::string& target,
                          const std::string& penalty, double lambda,
                          std::uint64_t seed) {
  std::ostringstream os;
  os << target << "_" << penalty << "_lam" << fmt_g17(lambda) << "_seed"
     << seed;
  return os.str();
}

// Dense activation tabulation for external plotting, one row per (edge, z).
inline void write_activations(const KanNetwork& net, const Eigen::MatrixXd& X,
                              const std::filesystem::path& path,
                              int points = 257) {
  const int L = net.depth();
  std::vector<Eigen::VectorXd> zmin(L), zmax(L);
  for (int l = 0; l < L; ++l) {
    zmin[l] = Eigen::VectorXd::Constant(net.widths[l], 1e300);
    zmax[l] = Eigen::VectorXd::Constant(net.widths[l], -1e300);
  }
  ForwardTrace tr;
  for (int s = 0; s < X.rows(); ++s) {
    net.forward_one(X.row(s).transpose(), tr);
    for (int l = 0; l < L; ++l) {
      zmin[l] = zmin[l].cwiseMin(tr.z[l]);
      zmax[l] = zmax[l].cwiseMax(tr.z[l]);
    }
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "layer,out_node,in_node,z,phi,dphi,d2phi,op_lo,op_hi\n";
  for (int l = 0; l < L; ++l)
    for (int c = 0; c < net.widths[l + 1]; ++c)
      for (int b = 0; b < net.widths[l]; ++b) {
        const EdgeActivation& e = net.edge(l, c, b);
        for (int i = 0; i < points; ++i) {
          const double z =
              e.grid.lo + (e.grid.hi - e.grid.lo) * i / (points - 1.0);
          out << l << ',' << c << ',' << b << ',' << fmt_g17(z) << ','
              << fmt_g17(edge_eval(e, z, 0)) << ','
              << fmt_g17(edge_eval(e, z, 1)) << ','
              << fmt_g17(edge_eval(e, z, 2)) << ',' << fmt_g17(zmin[l][b])
              << ',' << fmt_g17(zmax[l][b]) << '\n';
        }
      }
}

}  // namespace detail

struct RunContext {
  std::filesystem::path out_dir;  // empty: no per-run files
  bool write_checkpoints = true;
  bool write_activations = true;
};

inline RunRecord run_single(const ExperimentConfig& cfg, double lambda,
                            std::uint64_t seed,
                            const RunContext* ctx = nullptr) {
  const TargetSpec& target = find_target(cfg.target);
  const Dataset dtr = sample(target, cfg.n_train, detail::derive_seed(seed, 1));
  const Dataset dte = sample(target, cfg.n_test, detail::derive_seed(seed, 2));
  KanNetwork net = KanNetwork::create(cfg.widths, cfg.grid_size, cfg.basis,
                                      target.domain,
                                      detail::derive_seed(seed, 3),
                                      cfg.coeff_init_std);
  PenaltyConfig pen = cfg.penalty;
  pen.lambda = lambda;
  if (lambda == 0.0) pen.kind = PenaltyKind::None;
  TrainConfig tc = cfg.optimizer;
  tc.seed = detail::derive_seed(seed, 4);

  RunRecord rec;
  rec.id = detail::run_id(cfg.target, detail::penalty_kind_name(pen.kind),
                          lambda, seed);
  rec.target = cfg.target;
  rec.penalty_kind = detail::penalty_kind_name(pen.kind);
  rec.lambda = lambda;
  rec.seed = seed;
  rec.widths = cfg.widths;
  rec.grid_size = cfg.grid_size;
  rec.basis = cfg.basis == BasisKind::BSplineCubic ? "bspline" : "rbf";

  rec.log = train(net, dtr.inputs, dtr.targets, dte.inputs, dte.targets, pen,
                  tc);
  rec.aborted = rec.log.aborted;
  rec.abort_epoch = rec.log.abort_epoch;
  if (!rec.log.epochs.empty()) rec.wall_sec = rec.log.epochs.back().wall_sec;

  if (!rec.aborted) {
    const EvalResult tr_eval = evaluate(net, dtr.inputs, dtr.targets);
    const EvalResult te_eval = evaluate(net, dte.inputs, dte.targets);
    rec.train_rmse = tr_eval.rmse;
    rec.test_rmse = te_eval.rmse;
    rec.r2 = te_eval.r2;
    rec.total_curvature = total_edge_curvature(net).total;
    if (cfg.bound_check && cfg.basis == BasisKind::BSplineCubic)
      rec.bound = verify_bound(net, dte.inputs);
  } else {
    rec.train_rmse = rec.test_rmse = std::nan("");
    rec.total_curvature = std::nan("");
  }

  if (ctx && !ctx->out_dir.empty() && !rec.aborted) {
    std::filesystem::create_directories(ctx->out_dir / "checkpoints");
    if (ctx->write_checkpoints) {
      std::ofstream out(ctx->out_dir / "checkpoints" / (rec.id + ".json"));
      out << network_to_json(net).dump(1) << '\n';
    }
    if (ctx->write_activations) {
      std::filesystem::create_directories(ctx->out_dir / "activations");
      detail::write_activations(
          net, dtr.inputs, ctx->out_dir / "activations" / (rec.id + ".csv"));
    }
  }
  return rec;
}

// Runs the full lambda x seed grid; cells may execute in parallel (--jobs),
// aggregation happens after a join barrier.
inline std::vector<RunRecord> run_sweep(const ExperimentConfig& cfg,
                                        const RunContext* ctx = nullptr) {
  cfg.validate();
  std::vector<std::pair<double, std::uint64_t>> cells;
  for (double lam : cfg.lambdas)
    for (std::uint64_t seed : cfg.seeds) cells.emplace_back(lam, seed);
  std::vector<RunRecord> records(cells.size());
  if (cfg.jobs <= 1) {
    for (size_t i = 0; i < cells.size(); ++i)
      records[i] = run_single(cfg, cells[i].first, cells[i].second, ctx);
  } else {
    std::vector<std::future<void>> futs;
    std::atomic<size_t> next{0};
    for (int j = 0; j < cfg.jobs; ++j)
      futs.push_back(std::async(std::launch::async, [&] {
        for (size_t i = next.fetch_add(1); i < cells.size();
             i = next.fetch_add(1))
          records[i] = run_single(cfg, cells[i].first, cells[i].second, ctx);
      }));
    for (auto& f : futs) f.get();
  }
  return records;
}

// --- aggregation ------------------------------------------------------------

struct LambdaSummary {
  double lambda = 0.0;
  double median_test_rmse = 0.0;
  double median_curvature = 0.0;
  int n_runs = 0;
  int n_aborted = 0;
};

inline std::vector<LambdaSummary> summarize_by_lambda(
    const std::vector<RunRecord>& records) {
  std::map<double, std::vector<const RunRecord*>> by_lambda;
  for (const auto& r : records) by_lambda[r.lambda].push_back(&r);
  std::vector<LambdaSummary> out;
  for (const auto& [lam, rs] : by_lambda) {
    LambdaSummary s;
    s.lambda = lam;
    s.n_runs = static_cast<int>(rs.size());
    std::vector<double> rmse, curv;
    for (const auto* r : rs) {
      if (r->aborted) {
        ++s.n_aborted;
        continue;
      }
      rmse.push_back(r->test_rmse);
      curv.push_back(r->total_curvature);
    }
    if (!rmse.empty()) {
      s.median_test_rmse = detail::lower_median(rmse);
      s.median_curvature = detail::lower_median(curv);
    } else {
      s.median_test_rmse = s.median_curvature =
          std::numeric_limits<double>::infinity();
    }
    out.push_back(s);
  }
  return out;
}

// lambda* minimizing the geometric mean of median test RMSE across groups
// (targets or equations). Records must carry a non-zero lambda to compete.
inline double select_lambda_star(
    const std::map<std::string, std::vector<RunRecord>>& by_group) {
  std::map<double, std::vector<double>> medians_per_lambda;
  for (const auto& [group, records] : by_group)
    for (const auto& s : summarize_by_lambda(records))
      if (s.lambda > 0.0) medians_per_lambda[s.lambda].push_back(
          s.median_test_rmse);
  if (medians_per_lambda.empty())
    throw ConfigError("select_lambda_star: no penalized runs");
  double best_lambda = 0.0;
  double best_score = std::numeric_limits<double>::infinity();
  for (const auto& [lam, meds] : medians_per_lambda) {
    double logsum = 0.0;
    for (double m : meds) logsum += std::log(std::max(m, 1e-300));
    const double score = std::exp(logsum / meds.size());
    if (score < best_score) {
      best_score = score;
      best_lambda = lam;
    }
  }
  return best_lambda;
}

// Lambda window where the penalized median RMSE stays within `factor` of the
// unpenalized baseline (the lambda = 0 rows).
inline std::vector<double> rmse_window(const std::vector<RunRecord>& records,
                                       double factor = 2.0) {
  const auto summaries = summarize_by_lambda(records);
  double baseline = std::numeric_limits<double>::quiet_NaN();
  for (const auto& s : summaries)
    if (s.lambda == 0.0) baseline = s.median_test_rmse;
  std::vector<double> window;
  if (!std::isfinite(baseline)) return window;
  for (const auto& s : summaries)
    if (s.lambda > 0.0 && s.median_test_rmse <= factor * baseline)
      window.push_back(s.lambda);
  return window;
}

// --- Feynman table ----------------------------------------------------------

struct FeynmanRow {
  std::string equation;
  std::string formula;
  // keyed by condition name
  std::map<std::string, double> median_rmse;
  std::map<std::string, double> median_curvature;
  std::string rmse_winner;
  std::map<std::string, bool> rmse_within_2x;
  std::string curvature_winner;
};

struct FeynmanTable {
  std::vector<FeynmanRow> rows;
  std::map<std::string, double> lambda_star;  // per penalized condition
  std::vector<RunRecord> records;
};

inline FeynmanTable run_feynman(const ExperimentConfig& cfg,
                                const RunContext* ctx = nullptr) {
  if (cfg.equations.empty())
    throw ConfigError("run_feynman: config lists no equations");
  if (cfg.conditions.empty())
    throw ConfigError("run_feynman: config lists no penalty conditions");
  FeynmanTable table;
  // Group records per (condition, equation).
  std::map<std::string, std::map<std::string, std::vector<RunRecord>>> all;
  for (const auto& cond : cfg.conditions) {
    for (const auto& eq : cfg.equations) {
      const TargetSpec& t = find_target(eq);
      ExperimentConfig sub = cfg;
      sub.target = eq;
      sub.widths = {t.arity, t.arity, 1};
      sub.penalty.kind = detail::penalty_kind_from_name(cond);
      sub.lambdas = cond == "none" ? std::vector<double>{0.0} : cfg.lambdas;
      auto records = run_sweep(sub, ctx);
      auto& bucket = all[cond][eq];
      bucket.insert(bucket.end(), records.begin(), records.end());
      table.records.insert(table.records.end(), records.begin(),
                           records.end());
    }
    if (cond != "none")
      table.lambda_star[cond] =
          cfg.lambdas.size() > 1 ? select_lambda_star(all[cond])
                                 : cfg.lambdas.front();
  }
  for (const auto& eq : cfg.equations) {
    FeynmanRow row;
    row.equation = eq;
    row.formula = find_target(eq).formula;
    for (const auto& cond : cfg.conditions) {
      const double lam = cond == "none" ? 0.0 : table.lambda_star[cond];
      for (const auto& s : summarize_by_lambda(all[cond][eq]))
        if (s.lambda == lam) {
          row.median_rmse[cond] = s.median_test_rmse;
          row.median_curvature[cond] = s.median_curvature;
        }
    }
    double best_rmse = std::numeric_limits<double>::infinity();
    double best_curv = std::numeric_limits<double>::infinity();
    for (const auto& [cond, v] : row.median_rmse)
      if (v < best_rmse) {
        best_rmse = v;
        row.rmse_winner = cond;
      }
    for (const auto& [cond, v] : row.median_curvature)
      if (v < best_curv) {
        best_curv = v;
        row.curvature_winner = cond;
      }
    for (const auto& [cond, v] : row.median_rmse)
      row.rmse_within_2x[cond] = v <= 2.0 * best_rmse;
    table.rows.push_back(row);
  }
  return table;
}

// --- report files -----------------------------------------------------------

inline void write_runs_csv(const std::vector<RunRecord>& records,
                           const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "id,target,penalty,lambda,seed,widths,grid_size,basis,train_rmse,"
         "test_rmse,r2,total_curvature,aborted,abort_epoch,wall_sec\n";
  for (const auto& r : records) {
    out << r.id << ',' << r.target << ',' << r.penalty_kind << ','
        << detail::fmt_g17(r.lambda) << ',' << r.seed << ','
        << detail::widths_str(r.widths) << ',' << r.grid_size << ','
        << r.basis << ',' << detail::fmt_g17(r.train_rmse) << ','
        << detail::fmt_g17(r.test_rmse) << ','
        << (r.r2 ? detail::fmt_g17(*r.r2) : std::string()) << ','
        << detail::fmt_g17(r.total_curvature) << ',' << (r.aborted ? 1 : 0)
        << ',' << r.abort_epoch << ',' << detail::fmt_g17(r.wall_sec) << '\n';
  }
}

inline std::vector<RunRecord> parse_runs_csv(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);  // header
  std::vector<RunRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) f.push_back(tok);
    while (f.size() < 15) f.push_back("");
    RunRecord r;
    r.id = f[0];
    r.target = f[1];
    r.penalty_kind = f[2];
    r.lambda = std::stod(f[3]);
    r.seed = std::stoull(f[4]);
    {
      std::stringstream ws(f[5]);
      std::string w;
      while (std::getline(ws, w, 'x')) r.widths.push_back(std::stoi(w));
    }
    r.grid_size = std::stoi(f[6]);
    r.basis = f[7];
    r.train_rmse = std::stod(f[8]);
    r.test_rmse = std::stod(f[9]);
    if (!f[10].empty()) r.r2 = std::stod(f[10]);
    r.total_curvature = std::stod(f[11]);
    r.aborted = f[12] == "1";
    r.abort_epoch = std::stoi(f[13]);
    r.wall_sec = std::stod(f[14]);
    out.push_back(std::move(r));
  }
  return out;
}

inline nlohmann::json bound_to_json(const BoundDiagnostics& d) {
  nlohmann::json j;
  j["kappa"] = d.kappa;
  j["density_bound"] = d.density_bound;
  j["min_omega"] = d.min_omega;
  j["max_h"] = d.max_h;
  j["num_edges"] = d.num_edges;
  j["grid_size"] = d.grid_size;
  j["k_lambda"] = d.k_lambda;
  j["penalty_value"] = d.penalty_value;
  j["composition_curvature"] = d.composition_value;
  j["ratio"] = std::isfinite(d.ratio) ? nlohmann::json(d.ratio)
                                      : nlohmann::json("inf");
  j["a1_measured"] = d.a1_measured;
  j["a2_holds"] = d.a2_holds;
  j["a3_holds"] = d.a3_holds;
  j["zero_wbar_edges"] = d.zero_wbar_edges;
  j["wbar"] = std::vector<double>(d.wbar.data(), d.wbar.data() + d.wbar.size());
  j["gamma"] = std::vector<double>(d.gamma.data(),
                                   d.gamma.data() + d.gamma.size());
  j["chain"] = std::vector<double>(d.chain, d.chain + 6);
  return j;
}

// Writes runs.csv, summary.json, and per-run trajectory files. Deterministic
// content given identical records; wall-clock stays out of summary.json.
inline void report(const std::vector<RunRecord>& records,
                   const std::filesystem::path& dir,
                   const FeynmanTable* table = nullptr) {
  if (records.empty()) throw ConfigError("report: no records");
  std::filesystem::create_directories(dir);
  write_runs_csv(records, dir / "runs.csv");

  std::filesystem::create_directories(dir / "curves");
  for (const auto& r : records) {
    if (r.log.epochs.empty()) continue;
    std::ofstream out(dir / "curves" / (r.id + ".csv"));
    out << "epoch,train_rmse,test_rmse,penalty_value\n";
    for (size_t i = 0; i < r.log.epochs.size(); ++i) {
      const auto& e = r.log.epochs[i];
      out << (i + 1) << ',' << detail::fmt_g17(e.train_rmse) << ','
          << detail::fmt_g17(e.test_rmse) << ','
          << detail::fmt_g17(e.penalty_value) << '\n';
    }
  }

  nlohmann::json summary;
  summary["n_runs"] = records.size();
  {
    nlohmann::json per_lambda = nlohmann::json::array();
    for (const auto& s : summarize_by_lambda(records)) {
      per_lambda.push_back({{"lambda", s.lambda},
                            {"median_test_rmse", s.median_test_rmse},
                            {"median_curvature", s.median_curvature},
                            {"n_runs", s.n_runs},
                            {"n_aborted", s.n_aborted}});
    }
    summary["per_lambda"] = per_lambda;
  }
  const auto window = rmse_window(records);
  if (!window.empty() || std::any_of(records.begin(), records.end(),
                                     [](const RunRecord& r) {
                                       return r.lambda == 0.0;
                                     }))
    summary["rmse_window_2x"] = window;
  for (const auto& r : records)
    if (r.bound) {
      summary["bound_checks"][r.id] = bound_to_json(*r.bound);
    }
  if (table) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : table->rows) {
      nlohmann::json jr;
      jr["equation"] = row.equation;
      jr["formula"] = row.formula;
      jr["median_rmse"] = row.median_rmse;
      jr["median_curvature"] = row.median_curvature;
      jr["rmse_winner"] = row.rmse_winner;
      jr["rmse_within_2x"] = row.rmse_within_2x;
      jr["curvature_winner"] = row.curvature_winner;
      rows.push_back(jr);
    }
    summary["feynman"] = {{"rows", rows},
                          {"lambda_star", table->lambda_star}};
  }
  std::ofstream out(dir / "summary.json");
  if (!out) throw IoError("cannot write summary.json");
  out << summary.dump(1) << '\n';
}

}  // namespace kancurv
