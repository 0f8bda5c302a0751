// Command-line front end: run experiments, verify the theorem battery, emit
// reports and Pareto fronts.
#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>

#include <fmt/core.h>

#include "CLI11.hpp"
#include "cdistill/cdistill.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kRunFailure = 2;
constexpr int kVerifyFailure = 3;

int cmd_run(const std::string& config_path, const std::string& out, bool force, const std::optional<std::uint64_t>& seed) {
  using namespace cdistill;
  ExperimentConfig cfg = load_experiment(config_path);
  if (seed) cfg.seeds = {*seed};
  const auto cells = cfg.cells();
  fmt::print("{}: {} runs ({} methods x {} seeds)\n", cfg.name, cells.size(), cells.size() / cfg.seeds.size(),
             cfg.seeds.size());
  const ExperimentResult res = run_experiment(cfg, out, force);
  for (const auto& r : res.rows)
    fmt::print("  {:<20} seed {:<3} success {:.4f}  kl {:.4f}  cs {:.4f}\n", r.method, r.seed, r.task_success_rate,
               r.mean_kl, r.constraint_satisfaction);
  if (res.partial()) {
    for (const auto& f : res.failures) fmt::print(stderr, "failed: {}\n", f);
    fmt::print(stderr, "{} of {} runs failed; metrics.csv is partial\n", res.failures.size(), cells.size());
    return kRunFailure;
  }
  return kOk;
}

int cmd_verify(std::size_t instances, std::uint64_t seed, const std::string& out) {
  using namespace cdistill;
  const auto reports = run_theorem_battery(instances, RunSeed{seed});
  bool ok = true;
  for (const auto& r : reports) {
    fmt::print("{} {:<32} instances {:<5} max deviation {:.3g} (tol {:.0e}){}{}\n", r.passed ? "PASS" : "FAIL", r.id,
               r.instances, r.max_deviation, r.tolerance, r.note.empty() ? "" : "  ", r.note);
    ok = ok && r.passed;
  }
  if (!out.empty()) write_file_atomic(std::filesystem::path(out) / kTheoremReportsName, theorem_reports_csv(reports));
  return ok ? kOk : kVerifyFailure;
}

int cmd_report(const std::string& dir) {
  using namespace cdistill;
  const ReportSummary s = emit_reports(dir);
  for (std::size_t i = 0; i < s.means.size(); ++i) {
    const auto& r = s.means[i];
    fmt::print("{} {:<20} success {:.4f}  kl {:.4f}  cs {:.4f}  violation {:.4f}\n", s.front[i] ? "*" : " ", r.method,
               r.task_success_rate, r.mean_kl, r.constraint_satisfaction, r.violation_probability);
  }
  for (const auto& t : s.theorems)
    fmt::print("{} {} (max deviation {:.3g})\n", t.passed ? "PASS" : "FAIL", t.id, t.max_deviation);
  if (!s.gaps.empty()) {
    for (const auto& g : s.gaps) fmt::print(stderr, "missing: {}\n", g);
    return kRunFailure;
  }
  return kOk;
}

int cmd_pareto(const std::string& dir, const std::string& x, const std::string& y, bool per_seed) {
  using namespace cdistill;
  const auto path = std::filesystem::path(dir) / "metrics.csv";
  auto rows = parse_metrics_csv(read_file(path), path.string());
  if (!per_seed) rows = mean_by_method(rows);
  const auto front = pareto_front(rows, x, y, larger_is_better(x), larger_is_better(y));
  fmt::print("method,seed,{},{},on_front\n", x, y);
  for (std::size_t i = 0; i < rows.size(); ++i)
    fmt::print("{},{},{},{},{}\n", rows[i].method, per_seed ? std::to_string(rows[i].seed) : std::string("mean"),
               rows[i].metric(x), rows[i].metric(y), front[i] ? 1 : 0);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Constrained on-policy distillation toolkit"};
  app.require_subcommand(1);

  std::string config, out, dir, x = "task_success_rate", y = "constraint_satisfaction";
  bool force = false, per_seed = false;
  std::uint64_t seed = 0;
  std::size_t instances = 100;

  auto* run = app.add_subcommand("run", "train and evaluate every (method, seed) in a config");
  run->add_option("config", config, "experiment config file")->required();
  run->add_option("--out", out, "output directory (overrides output_dir)");
  run->add_flag("--force", force, "overwrite a non-empty output directory");
  auto* run_seed = run->add_option("--seed", seed, "run only this seed");

  auto* verify = app.add_subcommand("verify", "run the theorem battery on random instances");
  verify->add_option("--instances", instances, "random instances per check")->check(CLI::PositiveNumber);
  verify->add_option("--seed", seed, "battery seed");
  verify->add_option("--out", out, "directory to write theorem_reports.csv into");

  auto* report = app.add_subcommand("report", "write pareto.csv, pareto.svg and theorems.csv for a run directory");
  report->add_option("dir", dir, "run directory")->required();

  auto* pareto = app.add_subcommand("pareto", "print the non-dominated methods of a run directory");
  pareto->add_option("dir", dir, "run directory")->required();
  pareto->add_option("--x", x, "first metric")->check(CLI::IsMember(cdistill::metric_names()));
  pareto->add_option("--y", y, "second metric")->check(CLI::IsMember(cdistill::metric_names()));
  pareto->add_flag("--per-seed", per_seed, "one point per (method, seed) instead of per method");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*run) return cmd_run(config, out, force, *run_seed ? std::optional<std::uint64_t>(seed) : std::nullopt);
    if (*verify) return cmd_verify(instances, seed, out);
    if (*report) return cmd_report(dir);
    if (*pareto) return cmd_pareto(dir, x, y, per_seed);
  } catch (const cdistill::ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kUsage;
  } catch (const cdistill::InputError& e) {
    fmt::print(stderr, "input error: {}\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kRunFailure;
  }
  return kUsage;
}
