// Command-line experiment runner. Subcommands:
//   train <config>                one run (first lambda, first seed)
//   sweep <config>                full lambda x seed grid
//   feynman <config>              per-equation benchmark table
//   bound-check <ckpt> <config>   curvature-bound diagnostics for a checkpoint
//   report <dir>                  rebuild summary.json from runs.csv
// Output paths respect the KANCURV_OUTPUT_ROOT environment variable.
// Exit codes: 0 success, 1 config error, 2 numerical abort.

#include <CLI11.hpp>
#include <iostream>

#include "kancurv/experiment.hpp"

namespace {

using namespace kancurv;

RunContext make_context(const ExperimentConfig& cfg) {
  RunContext ctx;
  ctx.out_dir = detail::resolve_output_dir(cfg.output_dir);
  return ctx;
}

int cmd_train(const std::string& config_path) {
  ExperimentConfig cfg = load_config(config_path);
  cfg.validate();
  const RunContext ctx = make_context(cfg);
  const RunRecord rec =
      run_single(cfg, cfg.lambdas.front(), cfg.seeds.front(), &ctx);
  report({rec}, ctx.out_dir);
  std::cout << rec.id << ": test_rmse=" << rec.test_rmse
            << " curvature=" << rec.total_curvature
            << (rec.aborted ? " (aborted)" : "") << "\n";
  return rec.aborted ? 2 : 0;
}

int cmd_sweep(const std::string& config_path, int jobs) {
  ExperimentConfig cfg = load_config(config_path);
  if (jobs > 0) cfg.jobs = jobs;
  cfg.validate();
  const RunContext ctx = make_context(cfg);
  const auto records = run_sweep(cfg, &ctx);
  report(records, ctx.out_dir);
  for (const auto& s : summarize_by_lambda(records))
    std::cout << "lambda=" << s.lambda
              << " median_test_rmse=" << s.median_test_rmse
              << " median_curvature=" << s.median_curvature
              << " aborted=" << s.n_aborted << "/" << s.n_runs << "\n";
  return 0;
}

int cmd_feynman(const std::string& config_path, int jobs) {
  ExperimentConfig cfg = load_config(config_path);
  if (jobs > 0) cfg.jobs = jobs;
  const RunContext ctx = make_context(cfg);
  const FeynmanTable table = run_feynman(cfg, &ctx);
  report(table.records, ctx.out_dir, &table);
  for (const auto& row : table.rows) {
    std::cout << row.equation << ":";
    for (const auto& [cond, rmse] : row.median_rmse)
      std::cout << " " << cond << "=" << rmse;
    std::cout << " rmse_winner=" << row.rmse_winner
              << " curvature_winner=" << row.curvature_winner << "\n";
  }
  return 0;
}

int cmd_bound_check(const std::string& ckpt_path,
                    const std::string& config_path) {
  std::ifstream in(ckpt_path);
  if (!in) throw IoError("cannot read checkpoint: " + ckpt_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint parse error: ") + e.what());
  }
  const KanNetwork net = network_from_json(j);
  const ExperimentConfig cfg = load_config(config_path);
  const TargetSpec& target = find_target(cfg.target);
  const Dataset d = sample(target, cfg.n_test,
                           detail::derive_seed(cfg.seeds.front(), 2));
  const BoundDiagnostics diag = verify_bound(net, d.inputs);
  std::cout << bound_to_json(diag).dump(1) << "\n";
  return 0;
}

int cmd_report(const std::string& dir) {
  const std::filesystem::path p = detail::resolve_output_dir(dir);
  const auto records = parse_runs_csv(p / "runs.csv");
  nlohmann::json summary;
  summary["n_runs"] = records.size();
  nlohmann::json per_lambda = nlohmann::json::array();
  for (const auto& s : summarize_by_lambda(records))
    per_lambda.push_back({{"lambda", s.lambda},
                          {"median_test_rmse", s.median_test_rmse},
                          {"median_curvature", s.median_curvature},
                          {"n_runs", s.n_runs},
                          {"n_aborted", s.n_aborted}});
  summary["per_lambda"] = per_lambda;
  const auto window = rmse_window(records);
  summary["rmse_window_2x"] = window;
  std::ofstream out(p / "summary.json");
  if (!out) throw IoError("cannot write summary.json in " + p.string());
  out << summary.dump(1) << "\n";
  std::cout << "wrote " << (p / "summary.json").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spline-network curvature-regularization experiment runner"};
  app.require_subcommand(1);

  std::string config_path, ckpt_path, dir;
  int jobs = 0;

  auto* train = app.add_subcommand("train", "run a single training job");
  train->add_option("config", config_path, "config file or preset name")
      ->required();

  auto* sweep = app.add_subcommand("sweep", "run a lambda x seed sweep");
  sweep->add_option("config", config_path, "config file or preset name")
      ->required();
  sweep->add_option("--jobs", jobs, "parallel sweep cells (default 1)");

  auto* feynman =
      app.add_subcommand("feynman", "run the equation benchmark table");
  feynman->add_option("config", config_path, "config file or preset name")
      ->required();
  feynman->add_option("--jobs", jobs, "parallel sweep cells (default 1)");

  auto* bound = app.add_subcommand(
      "bound-check", "curvature bound diagnostics for a checkpoint");
  bound->add_option("checkpoint", ckpt_path, "checkpoint JSON")->required();
  bound->add_option("config", config_path, "config file or preset name")
      ->required();

  auto* rep = app.add_subcommand("report", "rebuild summary from runs.csv");
  rep->add_option("dir", dir, "output directory with runs.csv")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(config_path);
    if (sweep->parsed()) return cmd_sweep(config_path, jobs);
    if (feynman->parsed()) return cmd_feynman(config_path, jobs);
    if (bound->parsed()) return cmd_bound_check(ckpt_path, config_path);
    if (rep->parsed()) return cmd_report(dir);
  } catch (const kancurv::NumericError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
