// Scenario runner: spvs run | check | solve_once
//
// Exit status: 0 on success, 1 when the closed-loop run aborts, 2 on invalid
// configuration or arguments.

#include "spvs/config.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<unsigned long long> seed;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config, "Scenario file (YAML)")->required();
  cmd->add_option("--set", a.overrides, "Override a field, e.g. ttc.enabled=false (repeatable)");
  cmd->add_option("--seed", a.seed, "Random seed for the detector noise");
}

spvs::ScenarioConfig load(const CommonArgs& a) {
  spvs::ScenarioConfig cfg = spvs::load_config(a.config, a.overrides);
  if (a.seed) cfg.scenario.seed = *a.seed;
  return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

int run(const CommonArgs& a, const std::string& out_flag) {
  const spvs::ScenarioConfig cfg = load(a);
  const fs::path dir = !out_flag.empty() ? fs::path(out_flag)
                       : !cfg.output_dir.empty() ? fs::path(cfg.output_dir)
                                                 : fs::path("out") / cfg.scenario.name;
  const spvs::ScenarioLog log = spvs::run_scenario(cfg.scenario);
  fs::create_directories(dir);
  std::ostringstream csv, reports, summary;
  spvs::write_log_csv(csv, log);
  spvs::write_solve_reports_csv(reports, log);
  summary << "scenario: " << cfg.scenario.name << '\n' << "seed: " << cfg.scenario.seed << '\n';
  if (!log.rows.empty()) spvs::write_metrics(summary, spvs::metrics(log), log);
  write_file(dir / "log.csv", csv.str());
  write_file(dir / "solve_reports.csv", reports.str());
  write_file(dir / "metrics.yaml", summary.str());
  write_file(dir / "config.yaml", spvs::serialize_config(cfg));
  std::cout << summary.str() << "output: " << dir.string() << '\n';
  if (log.aborted) {
    std::cerr << "run aborted: " << log.abort_reason << '\n';
    return 1;
  }
  return 0;
}

int check(const CommonArgs& a) {
  load(a);
  std::cout << "ok\n";
  return 0;
}

int solve_once(const CommonArgs& a, const std::string& state_literal, const std::string& out_flag) {
  const spvs::ScenarioConfig cfg = load(a);
  const spvs::Scenario& sc = cfg.scenario;
  const spvs::ServoState x =
      state_literal.empty()
          ? spvs::true_servo_state(sc.initial, spvs::target_position(sc.track, 0.0), sc.problem.rig)
          : spvs::parse_state_literal(state_literal, sc.problem.refs.r_star);
  const spvs::RecedingResult res = spvs::solve_receding(sc.problem, x, std::nullopt, sc.solver);
  const spvs::SolveReport& r = res.report;
  std::cout << "iterations: " << r.iterations << '\n'
            << "qp_status: " << spvs::to_string(r.qp_status) << '\n'
            << "max_gap: " << r.max_gap << '\n'
            << "max_violation: " << r.max_violation << '\n'
            << "objective: " << r.objective << '\n'
            << "wall_ms: " << r.wall_ms << '\n'
            << "u0: [" << res.u0.c << ", " << res.u0.omega_b.x() << ", " << res.u0.omega_b.y() << ", "
            << res.u0.omega_b.z() << "]\n";
  std::ostringstream csv;
  spvs::write_trajectory_csv(csv, res.trajectory, sc.problem);
  if (out_flag.empty()) {
    std::cout << csv.str();
  } else {
    fs::create_directories(fs::path(out_flag));
    write_file(fs::path(out_flag) / "trajectory.csv", csv.str());
  }
  return r.qp_status == spvs::QpStatus::optimal ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spherical image-based visual servoing with NMPC: scenario runner"};
  app.require_subcommand(1);

  CommonArgs run_args, check_args, solve_args;
  std::string run_out, solve_out, state;

  auto* run_cmd = app.add_subcommand("run", "Run a closed-loop scenario and write log.csv, solve_reports.csv, metrics.yaml");
  add_common(run_cmd, run_args);
  run_cmd->add_option("--out", run_out, "Output directory");

  auto* check_cmd = app.add_subcommand("check", "Validate a scenario file");
  add_common(check_cmd, check_args);

  auto* solve_cmd = app.add_subcommand("solve_once", "One receding-horizon solve; prints the report and trajectory");
  add_common(solve_cmd, solve_args);
  solve_cmd->add_option("--state", state, "State literal, e.g. \"{v: [0,0,0], rho: [0,0,1], r: 5}\"");
  solve_cmd->add_option("--out", solve_out, "Write trajectory.csv here instead of printing it");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*run_cmd) return run(run_args, run_out);
    if (*check_cmd) return check(check_args);
    if (*solve_cmd) return solve_once(solve_args, state, solve_out);
  } catch (const spvs::ConfigError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
