#include <catch2/catch_amalgamated.hpp>
#include <fstream>

#include "kancurv/experiment.hpp"
#include "oracles.hpp"

using namespace kancurv;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.name = "tiny";
  cfg.target = "sin_x_plus_y2";
  cfg.widths = {2, 2, 1};
  cfg.grid_size = 5;
  cfg.penalty.kind = PenaltyKind::Curvature;
  cfg.lambdas = {1e-3};
  cfg.seeds = {0};
  cfg.optimizer.epochs = 3;
  cfg.optimizer.warmup_epochs = 1;
  cfg.optimizer.batch_size = 64;
  cfg.optimizer.calibrate_ranges = false;
  cfg.n_train = 64;
  cfg.n_test = 32;
  return cfg;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  REQUIRE(in);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("config json round trip and validation") {
  const ExperimentConfig cfg = tiny_config();
  const ExperimentConfig back = config_from_json(config_to_json(cfg));
  CHECK(back.target == cfg.target);
  CHECK(back.widths == cfg.widths);
  CHECK(back.lambdas == cfg.lambdas);
  CHECK(back.penalty.kind == cfg.penalty.kind);
  CHECK(back.optimizer.epochs == cfg.optimizer.epochs);

  ExperimentConfig bad = cfg;
  bad.target = "no_such_target";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.lambdas.clear();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.widths = {3, 2, 1};  // arity mismatch
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("presets exist for every figure and table") {
  for (const char* name :
       {"fig1", "fig2", "fig3", "fig4", "fig5", "table1", "appB"}) {
    const auto p = preset(name);
    REQUIRE(p.has_value());
    CHECK_FALSE(p->lambdas.empty());
    CHECK_FALSE(p->seeds.empty());
  }
  CHECK_FALSE(preset("fig99").has_value());
  CHECK_THROWS_AS(load_config("fig99"), ConfigError);
}

TEST_CASE("sweep with one cell equals run_single") {
  const ExperimentConfig cfg = tiny_config();
  const RunRecord single = run_single(cfg, cfg.lambdas[0], cfg.seeds[0]);
  const auto swept = run_sweep(cfg);
  REQUIRE(swept.size() == 1);
  CHECK(swept[0].id == single.id);
  CHECK(swept[0].test_rmse == single.test_rmse);
  CHECK(swept[0].train_rmse == single.train_rmse);
  CHECK(swept[0].total_curvature == single.total_curvature);
}

TEST_CASE("lambda star selection picks the geometric-mean minimum") {
  auto rec = [](const std::string& target, double lambda, std::uint64_t seed,
                double rmse) {
    RunRecord r;
    r.target = target;
    r.lambda = lambda;
    r.seed = seed;
    r.test_rmse = rmse;
    r.total_curvature = 1.0;
    return r;
  };
  std::map<std::string, std::vector<RunRecord>> groups;
  // lambda=0.1: medians 0.1 and 0.4 -> geomean 0.2
  // lambda=1.0: medians 0.3 and 0.1 -> geomean ~0.173 (winner)
  groups["a"] = {rec("a", 0.1, 0, 0.1), rec("a", 1.0, 0, 0.3)};
  groups["b"] = {rec("b", 0.1, 0, 0.4), rec("b", 1.0, 0, 0.1)};
  CHECK(select_lambda_star(groups) == 1.0);
}

TEST_CASE("rmse window against the unpenalized baseline") {
  auto rec = [](double lambda, double rmse) {
    RunRecord r;
    r.target = "t";
    r.lambda = lambda;
    r.test_rmse = rmse;
    r.total_curvature = 1.0;
    return r;
  };
  const std::vector<RunRecord> records = {rec(0.0, 0.01), rec(1e-3, 0.015),
                                          rec(1e-2, 0.019), rec(1e-1, 0.3)};
  const auto window = rmse_window(records);
  REQUIRE(window.size() == 2);
  CHECK(window[0] == 1e-3);
  CHECK(window[1] == 1e-2);
}

TEST_CASE("report writes artifacts and runs.csv round-trips") {
  const ExperimentConfig cfg = tiny_config();
  const auto records = run_sweep(cfg);
  const std::filesystem::path dir =
      std::filesystem::temp_directory_path() / "kancurv_test_report";
  std::filesystem::remove_all(dir);
  report(records, dir);
  CHECK(std::filesystem::exists(dir / "runs.csv"));
  CHECK(std::filesystem::exists(dir / "summary.json"));
  CHECK(std::filesystem::exists(dir / "curves" / (records[0].id + ".csv")));

  const auto parsed = parse_runs_csv(dir / "runs.csv");
  REQUIRE(parsed.size() == records.size());
  for (size_t i = 0; i < parsed.size(); ++i) {
    CHECK(parsed[i].id == records[i].id);
    CHECK(parsed[i].target == records[i].target);
    CHECK(parsed[i].penalty_kind == records[i].penalty_kind);
    CHECK(parsed[i].lambda == records[i].lambda);     // 17 sig digits
    CHECK(parsed[i].seed == records[i].seed);
    CHECK(parsed[i].widths == records[i].widths);
    CHECK(parsed[i].train_rmse == records[i].train_rmse);
    CHECK(parsed[i].test_rmse == records[i].test_rmse);
    CHECK(parsed[i].r2.has_value() == records[i].r2.has_value());
    if (parsed[i].r2) CHECK(*parsed[i].r2 == *records[i].r2);
    CHECK(parsed[i].total_curvature == records[i].total_curvature);
    CHECK(parsed[i].aborted == records[i].aborted);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("report tolerates empty trajectories") {
  RunRecord r;
  r.id = "hand_made";
  r.target = "t";
  r.lambda = 0.0;
  r.test_rmse = 0.5;
  r.total_curvature = 1.0;
  r.widths = {1, 1};
  const std::filesystem::path dir =
      std::filesystem::temp_directory_path() / "kancurv_test_empty";
  std::filesystem::remove_all(dir);
  report({r}, dir);
  CHECK(std::filesystem::exists(dir / "summary.json"));
  CHECK_FALSE(std::filesystem::exists(dir / "curves" / "hand_made.csv"));
  CHECK_THROWS_AS(report({}, dir), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("summary is byte-identical across repeated runs") {
  const ExperimentConfig cfg = tiny_config();
  const std::filesystem::path d1 =
      std::filesystem::temp_directory_path() / "kancurv_det1";
  const std::filesystem::path d2 =
      std::filesystem::temp_directory_path() / "kancurv_det2";
  std::filesystem::remove_all(d1);
  std::filesystem::remove_all(d2);
  report(run_sweep(cfg), d1);
  report(run_sweep(cfg), d2);
  CHECK(slurp(d1 / "summary.json") == slurp(d2 / "summary.json"));
  std::filesystem::remove_all(d1);
  std::filesystem::remove_all(d2);
}

TEST_CASE("activation tabulation reports flat curvature for an affine edge") {
  KanNetwork net = oracles::random_net({1, 1}, 6, 1);
  EdgeActivation& e = net.edge(0, 0, 0);
  e.w_b = 0.0;
  for (int i = 0; i < e.coeffs.size(); ++i) e.coeffs[i] = 0.2 + 0.1 * i;
  Eigen::MatrixXd X(8, 1);
  for (int i = 0; i < 8; ++i) X(i, 0) = -1.5 + 3.0 * i / 7.0;
  const std::filesystem::path path =
      std::filesystem::temp_directory_path() / "kancurv_act.csv";
  detail::write_activations(net, X, path, 65);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);  // header
  int rows = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string tok;
    std::vector<std::string> f;
    while (std::getline(ss, tok, ',')) f.push_back(tok);
    REQUIRE(f.size() == 9);
    const double z = std::stod(f[3]);
    // interior only; the spline support tapers at the boundary knots
    if (z > e.grid.lo + 1e-9 && z < e.grid.hi - 1e-9)
      CHECK(std::abs(std::stod(f[6])) < 1e-10);  // d2phi column
    ++rows;
  }
  CHECK(rows == 65);
  std::filesystem::remove_all(path);
}

TEST_CASE("environment variable overrides the output root") {
  setenv("KANCURV_OUTPUT_ROOT", "/tmp/kancurv_root", 1);
  CHECK(detail::resolve_output_dir("out/x") ==
        std::filesystem::path("/tmp/kancurv_root/out/x"));
  CHECK(detail::resolve_output_dir("/abs/out") ==
        std::filesystem::path("/abs/out"));
  unsetenv("KANCURV_OUTPUT_ROOT");
  CHECK(detail::resolve_output_dir("out/x") ==
        std::filesystem::path("out/x"));
}
