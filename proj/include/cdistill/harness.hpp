#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "cdistill/binary_io.hpp"
#include "cdistill/errors.hpp"
#include "cdistill/evaluation.hpp"
#include "cdistill/kv_config.hpp"
#include "cdistill/parallel.hpp"
#include "cdistill/solvers.hpp"
#include "cdistill/tasks.hpp"
#include "cdistill/verification.hpp"

namespace cdistill {

/// A run or report that could not complete; the CLI maps it to exit code 2.
struct RunFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {"task_success_rate", "mean_kl", "constraint_satisfaction",
                                                 "violation_probability"};
  return names;
}

/// Larger-is-better unless the metric is a cost.
inline bool larger_is_better(const std::string& metric) {
  if (metric == "task_success_rate" || metric == "constraint_satisfaction") return true;
  if (metric == "mean_kl" || metric == "violation_probability") return false;
  throw ConfigError(fmt::format("unknown metric '{}'", metric));
}

/// One method as listed in the config, with its budget overrides.
struct MethodSetting {
  Method method = Method::unaugmented;
  ConstrainedRewardSpec spec;
};

/// One (objective, seed) training job.
struct RunCell {
  std::string label;  // objective_label of the spec
  std::uint64_t seed = 0;
  TrainConfig train;
};

struct ExperimentConfig {
  std::string name = "experiment";
  Task task;
  std::vector<MethodSetting> methods;
  std::vector<double> lambda_grid = {0.001, 0.01, 0.1, 1.0, 10.0};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  TrainConfig train;
  EvalOptions eval;
  std::filesystem::path output_dir;
  std::size_t jobs = 1;
  std::string pareto_x = "task_success_rate";
  std::string pareto_y = "constraint_satisfaction";
  bool x_larger_better = true;
  bool y_larger_better = true;
  std::string text;  // the config file verbatim
  std::filesystem::path base_dir;  // relative paths resolve here

  /// Methods in file order, lagrangian expanded over the lambda grid, crossed
  /// with the seeds (seed-major inside each method).
  std::vector<RunCell> cells() const {
    std::vector<RunCell> out;
    for (const MethodSetting& ms : methods) {
      std::vector<ConstrainedRewardSpec> specs;
      if (ms.method == Method::lagrangian) {
        for (double lambda : lambda_grid) {
          ConstrainedRewardSpec s = ms.spec;
          s.lambda = lambda;
          specs.push_back(s);
        }
      } else {
        specs.push_back(ms.spec);
      }
      for (const auto& spec : specs)
        for (std::uint64_t seed : seeds) {
          RunCell c;
          c.train = train;
          c.train.spec = spec;
          c.train.seed = RunSeed{seed};
          c.seed = seed;
          c.label = objective_label(spec);
          out.push_back(std::move(c));
        }
    }
    return out;
  }
};

namespace detail {

inline TensionParams tension_params(const KvConfig& cfg) {
  TensionParams p;
  p.questions = cfg.get_uint("tension.questions", p.questions);
  p.hard_questions = cfg.get_uint("tension.hard_questions", p.hard_questions);
  p.chain_length = cfg.get_uint("tension.chain_length", p.chain_length);
  p.easy_advance = cfg.get_double("tension.easy_advance", p.easy_advance);
  p.hard_advance = cfg.get_double("tension.hard_advance", p.hard_advance);
  p.shortcut_share = cfg.get_double("tension.shortcut_share", p.shortcut_share);
  p.answer_confidence = cfg.get_double("tension.answer_confidence", p.answer_confidence);
  p.shortcut_reach = cfg.get_uint("tension.shortcut_reach", p.shortcut_reach);
  p.horizon = cfg.get_uint("tension.horizon", p.horizon);
  p.teacher_floor = cfg.get_double("teacher_floor", p.teacher_floor);
  return p;
}

inline Task config_task(const KvConfig& cfg, const std::filesystem::path& base_dir) {
  const std::string kind = cfg.get_string("task");
  try {
    if (kind == "tension") return tension_task(tension_params(cfg));
    if (kind == "chain")
      return chain_task(cfg.get_uint("chain.length", 3), cfg.get_uint("chain.horizon", 8),
                        cfg.get_double("chain.p_correct", 0.9), cfg.get_double("teacher_floor", kDefaultFloor));
    if (kind == "trivial") return trivial_task(cfg.get_double("teacher_floor", kDefaultFloor));
    if (kind == "file") {
      std::filesystem::path p = cfg.get_string("task_file");
      if (p.is_relative()) p = base_dir / p;
      return load_task(p.string());
    }
  } catch (const InputError& e) {
    cfg.fail("task", e.what());
  }
  cfg.fail("task", fmt::format("unknown task '{}' (tension, chain, trivial or file)", kind));
}

inline ConstrainedRewardSpec spec_overrides(const KvConfig& cfg, const std::string& prefix,
                                            ConstrainedRewardSpec s) {
  s.d = cfg.get_double(prefix + "d", s.d);
  s.n = cfg.get_double(prefix + "n", s.n);
  s.epsilon = cfg.get_double(prefix + "epsilon", s.epsilon);
  s.gamma = cfg.get_double(prefix + "gamma", s.gamma);
  if (cfg.has(prefix + "cost_kind")) s.cost_kind = parse_divergence_kind(cfg.get_string(prefix + "cost_kind"));
  if (cfg.has(prefix + "phi_kind")) s.phi_kind = parse_divergence_kind(cfg.get_string(prefix + "phi_kind"));
  return s;
}

inline bool parse_orientation(const KvConfig& cfg, const std::string& key, bool fallback) {
  if (!cfg.has(key)) return fallback;
  const std::string v = cfg.get_string(key);
  if (v == "max") return true;
  if (v == "min") return false;
  cfg.fail(key, "expects 'max' or 'min'");
}

}  // namespace detail

/// Parses and validates an experiment file. Every key must be known.
inline ExperimentConfig parse_experiment(const KvConfig& cfg, const std::string& text,
                                         const std::filesystem::path& base_dir = ".") {
  if (cfg.get_uint("schema_version") != 1) cfg.fail("schema_version", "only schema_version 1 is supported");
  ExperimentConfig e;
  e.text = text;
  e.base_dir = std::filesystem::absolute(base_dir);
  e.name = cfg.get_string("name", e.name);
  e.task = detail::config_task(cfg, base_dir);

  const ConstrainedRewardSpec base = detail::spec_overrides(cfg, "", ConstrainedRewardSpec{});
  for (const std::string& m : cfg.get_list("methods")) {
    MethodSetting ms;
    try {
      ms.method = parse_method(m);
    } catch (const ConfigError& err) {
      cfg.fail("methods", err.what());
    }
    ms.spec = detail::spec_overrides(cfg, m + ".", base);
    ms.spec.mode = ms.method;
    for (const auto& other : e.methods)
      if (other.method == ms.method) cfg.fail("methods", fmt::format("method '{}' listed twice", m));
    e.methods.push_back(ms);
  }
  if (e.methods.empty()) cfg.fail("methods", "at least one method is required");
  if (cfg.has("lambda_grid")) e.lambda_grid = cfg.get_double_list("lambda_grid");
  if (e.lambda_grid.empty()) cfg.fail("lambda_grid", "must not be empty");
  if (cfg.has("seeds")) e.seeds = cfg.get_uint_list("seeds");
  if (e.seeds.empty()) cfg.fail("seeds", "must not be empty");
  if (std::set<std::uint64_t>(e.seeds.begin(), e.seeds.end()).size() != e.seeds.size())
    cfg.fail("seeds", "seeds must be distinct");

  TrainConfig& t = e.train;
  t.groups_per_batch = cfg.get_uint("train.groups_per_batch", t.groups_per_batch);
  t.rollouts_per_group = cfg.get_uint("train.rollouts_per_group", t.rollouts_per_group);
  t.batches_per_epoch = cfg.get_uint("train.batches_per_epoch", t.batches_per_epoch);
  t.epochs = cfg.get_uint("train.epochs", t.epochs);
  t.warm_start_epochs = cfg.get_uint("train.warm_start_epochs", t.warm_start_epochs);
  t.init_scale = cfg.get_double("train.init_scale", t.init_scale);
  t.student_floor = cfg.get_double("train.student_floor", t.student_floor);
  t.threads = cfg.get_uint("train.threads", t.threads);
  if (cfg.has("optimizer.kind")) t.optimizer.kind = parse_optimizer_kind(cfg.get_string("optimizer.kind"));
  t.optimizer.learning_rate = cfg.get_double("optimizer.learning_rate", t.optimizer.learning_rate);
  t.optimizer.beta1 = cfg.get_double("optimizer.beta1", t.optimizer.beta1);
  t.optimizer.beta2 = cfg.get_double("optimizer.beta2", t.optimizer.beta2);
  t.optimizer.eps = cfg.get_double("optimizer.eps", t.optimizer.eps);
  t.optimizer.weight_decay = cfg.get_double("optimizer.weight_decay", t.optimizer.weight_decay);
  if (cfg.has("advantage.baseline"))
    t.advantage.baseline = parse_baseline_mode(cfg.get_string("advantage.baseline"));
  t.advantage.normalize_std = cfg.get_bool("advantage.normalize_std", t.advantage.normalize_std);

  e.eval.exact_leaf_limit = cfg.get_uint("eval.exact_leaf_limit", e.eval.exact_leaf_limit);
  e.eval.episodes = cfg.get_uint("eval.episodes", e.eval.episodes);
  if (e.eval.episodes == 0) cfg.fail("eval.episodes", "must be positive");
  e.output_dir = cfg.get_string("output_dir", "");
  if (!e.output_dir.empty() && e.output_dir.is_relative()) e.output_dir = base_dir / e.output_dir;
  e.jobs = std::max<std::uint64_t>(1, cfg.get_uint("jobs", 1));

  e.pareto_x = cfg.get_string("pareto.x", e.pareto_x);
  e.pareto_y = cfg.get_string("pareto.y", e.pareto_y);
  for (const auto& [key, metric] : {std::pair<std::string, std::string>{"pareto.x", e.pareto_x}, {"pareto.y", e.pareto_y}})
    if (std::find(metric_names().begin(), metric_names().end(), metric) == metric_names().end())
      cfg.fail(key, fmt::format("unknown metric '{}'", metric));
  e.x_larger_better = detail::parse_orientation(cfg, "pareto.x_orientation", larger_is_better(e.pareto_x));
  e.y_larger_better = detail::parse_orientation(cfg, "pareto.y_orientation", larger_is_better(e.pareto_y));
  cfg.reject_unknown();

  for (const RunCell& c : e.cells()) {
    try {
      c.train.validate();
    } catch (const ConfigError& err) {
      throw ConfigError(fmt::format("{}: method {}: {}", cfg.source(), c.label, err.what()));
    }
  }
  return e;
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
  const std::string text = [&] {
    try {
      return read_file(path);
    } catch (const IoError& e) {
      throw ConfigError(e.what());
    }
  }();
  return parse_experiment(KvConfig::parse(text, path.string()), text, path.parent_path());
}

/// Final evaluation of one (method, seed) run plus its training curve.
struct MetricsRecord {
  std::string method;
  std::uint64_t seed = 0;
  double task_success_rate = 0.0;
  double mean_kl = 0.0;
  double constraint_satisfaction = 0.0;
  double violation_probability = 0.0;
  std::vector<EpochMetrics> curve;

  double metric(const std::string& name) const {
    if (name == "task_success_rate") return task_success_rate;
    if (name == "mean_kl") return mean_kl;
    if (name == "constraint_satisfaction") return constraint_satisfaction;
    if (name == "violation_probability") return violation_probability;
    throw ConfigError(fmt::format("unknown metric '{}'", name));
  }
};

inline constexpr const char* kMetricsHeader =
    "method,seed,task_success_rate,mean_kl,constraint_satisfaction,violation_probability";

/// Shortest round-trip decimal, so equal doubles print equal bytes.
inline std::string metrics_csv(const std::vector<MetricsRecord>& rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows)
    out += fmt::format("{},{},{},{},{},{}\n", r.method, r.seed, r.task_success_rate, r.mean_kl,
                       r.constraint_satisfaction, r.violation_probability);
  return out;
}

inline std::vector<MetricsRecord> parse_metrics_csv(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader)
    throw RunFailure(fmt::format("{}: unexpected header", source));
  std::vector<MetricsRecord> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 6) throw RunFailure(fmt::format("{}:{}: expected 6 fields", source, line_no));
    try {
      MetricsRecord r;
      r.method = f[0];
      r.seed = std::stoull(f[1]);
      r.task_success_rate = std::stod(f[2]);
      r.mean_kl = std::stod(f[3]);
      r.constraint_satisfaction = std::stod(f[4]);
      r.violation_probability = std::stod(f[5]);
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw RunFailure(fmt::format("{}:{}: malformed number", source, line_no));
    }
  }
  return rows;
}

/// File-name-safe form of a method label: "lagrangian(0.1)" -> "lagrangian-0.1".
inline std::string cell_slug(const std::string& label, std::uint64_t seed) {
  std::string s;
  for (char c : label) {
    if (c == '(') s.push_back('-');
    else if (c != ')') s.push_back(c);
  }
  return fmt::format("{}_seed{}", s, seed);
}

/// Trains and evaluates one cell, streaming the epoch log and the latest
/// checkpoint into `dir`.
inline MetricsRecord run_cell(const ExperimentConfig& cfg, const RunCell& cell, const std::filesystem::path& dir) {
  const std::string slug = cell_slug(cell.label, cell.seed);
  const auto log_path = dir / "logs" / (slug + ".jsonl");
  const auto ckpt_path = dir / "checkpoints" / (slug + ".ckpt");
  std::string log;
  const TrainResult res = train(cfg.task, cell.train, [&](const EpochMetrics& m, const Checkpoint& c) {
    log += to_json_line(m) + "\n";
    write_file_atomic(log_path, log);
    save_checkpoint(ckpt_path, c);
  });
  save_policy(dir / "policies" / (slug + ".pol"), res.policy);
  EvalOptions eo = cfg.eval;
  eo.seed = RunSeed{cell.seed};
  const PolicyEvaluation ev = evaluate_policy(cfg.task.mdp, res.policy, cfg.task.teacher, cell.train.spec, eo);
  MetricsRecord r;
  r.method = cell.label;
  r.seed = cell.seed;
  r.task_success_rate = ev.task_success_rate;
  r.mean_kl = ev.mean_kl;
  r.constraint_satisfaction = ev.constraint_satisfaction;
  r.violation_probability = ev.violation_probability;
  r.curve = res.metrics;
  return r;
}

struct ExperimentResult {
  std::vector<MetricsRecord> rows;  // completed cells, in cell order
  std::vector<std::string> failures;
  bool partial() const noexcept { return !failures.empty(); }
};

inline const char* const kConfigCopyName = "experiment.cfg";
inline const char* const kFailuresName = "FAILED";
inline const char* const kConfigDirName = "experiment.dir";
/// Raw per-check rows as written by `verify --out`.
inline const char* const kTheoremReportsName = "theorem_reports.csv";

/// Runs every cell and writes metrics.csv, logs/, checkpoints/ and policies/
/// under `out`. Refuses a non-empty directory unless `force`, in which case
/// earlier artifacts are removed first. Failed cells are left out of
/// metrics.csv and listed in FAILED.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, std::filesystem::path out, bool force) {
  namespace fs = std::filesystem;
  if (out.empty()) out = cfg.output_dir;
  if (out.empty()) throw ConfigError("no output directory (set output_dir or pass --out)");
  if (fs::exists(out) && !fs::is_directory(out)) throw ConfigError(fmt::format("'{}' is not a directory", out.string()));
  if (fs::exists(out) && !fs::is_empty(out)) {
    if (!force)
      throw ConfigError(fmt::format("output directory '{}' is not empty; pass --force to overwrite", out.string()));
    for (const char* name : {"metrics.csv", "pareto.csv", "theorems.csv", "pareto.svg", kConfigCopyName,
                             kConfigDirName, kTheoremReportsName, kFailuresName, "logs", "checkpoints", "policies"})
      fs::remove_all(out / name);
  }
  fs::create_directories(out);
  write_file_atomic(out / kConfigCopyName, cfg.text);
  write_file_atomic(out / kConfigDirName, cfg.base_dir.string() + "\n");

  const std::vector<RunCell> cells = cfg.cells();
  std::vector<std::optional<MetricsRecord>> done(cells.size());
  std::vector<std::string> errors(cells.size());
  parallel_for(cells.size(), cfg.jobs, [&](std::size_t i) {
    try {
      done[i] = run_cell(cfg, cells[i], out);
    } catch (const std::exception& e) {
      errors[i] = fmt::format("{} seed {}: {}", cells[i].label, cells[i].seed, e.what());
    }
  });
  ExperimentResult res;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (done[i]) res.rows.push_back(std::move(*done[i]));
    if (!errors[i].empty()) res.failures.push_back(errors[i]);
  }
  write_file_atomic(out / "metrics.csv", metrics_csv(res.rows));
  if (res.partial()) {
    std::string text;
    for (const auto& f : res.failures) text += f + "\n";
    write_file_atomic(out / kFailuresName, text);
  }
  return res;
}

/// Flags rows no other row dominates (at least as good on both metrics and
/// strictly better on one). Output order follows the input.
inline std::vector<bool> pareto_front(const std::vector<MetricsRecord>& rows, const std::string& x,
                                      const std::string& y, bool x_larger_better = true, bool y_larger_better = true) {
  auto val = [&](const MetricsRecord& r, const std::string& m, bool larger) {
    const double v = r.metric(m);
    return larger ? v : -v;
  };
  std::vector<bool> front(rows.size(), true);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double xi = val(rows[i], x, x_larger_better);
    const double yi = val(rows[i], y, y_larger_better);
    for (std::size_t j = 0; j < rows.size() && front[i]; ++j) {
      if (j == i) continue;
      const double xj = val(rows[j], x, x_larger_better);
      const double yj = val(rows[j], y, y_larger_better);
      if (xj >= xi && yj >= yi && (xj > xi || yj > yi)) front[i] = false;
    }
  }
  return front;
}

/// Seed-averaged row per method, methods in first-appearance order.
inline std::vector<MetricsRecord> mean_by_method(const std::vector<MetricsRecord>& rows) {
  std::vector<MetricsRecord> out;
  std::vector<std::size_t> counts;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const MetricsRecord& o) { return o.method == r.method; });
    if (it == out.end()) {
      MetricsRecord m;
      m.method = r.method;
      out.push_back(m);
      counts.push_back(0);
      it = out.end() - 1;
    }
    const std::size_t k = static_cast<std::size_t>(it - out.begin());
    it->task_success_rate += r.task_success_rate;
    it->mean_kl += r.mean_kl;
    it->constraint_satisfaction += r.constraint_satisfaction;
    it->violation_probability += r.violation_probability;
    ++counts[k];
  }
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double n = static_cast<double>(counts[k]);
    out[k].task_success_rate /= n;
    out[k].mean_kl /= n;
    out[k].constraint_satisfaction /= n;
    out[k].violation_probability /= n;
  }
  return out;
}

/// Seed-averaged rows with their front flags.
inline std::string pareto_csv(const std::vector<MetricsRecord>& means, const std::vector<bool>& front) {
  std::string out = "method,task_success_rate,mean_kl,constraint_satisfaction,violation_probability,on_front\n";
  for (std::size_t i = 0; i < means.size(); ++i) {
    const auto& r = means[i];
    out += fmt::format("{},{},{},{},{},{}\n", r.method, r.task_success_rate, r.mean_kl, r.constraint_satisfaction,
                       r.violation_probability, front[i] ? 1 : 0);
  }
  return out;
}

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '&': o += "&amp;"; break;
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '"': o += "&quot;"; break;
      default: o.push_back(c);
    }
  }
  return o;
}

}  // namespace detail

/// Scatter of (x, y) with one circle per row; front members red, others grey.
inline std::string scatter_svg(const std::vector<MetricsRecord>& rows, const std::vector<bool>& front,
                               const std::string& x, const std::string& y, const std::string& title) {
  constexpr double W = 640, H = 480, L = 70, R = 20, T = 40, B = 60;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  for (const auto& r : rows) {
    x1 = std::max(x1, r.metric(x));
    y1 = std::max(y1, r.metric(y));
  }
  auto px = [&](double v) { return L + (v - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double v) { return H - B - (v - y0) / (y1 - y0) * (H - T - B); };
  std::string s = fmt::format(
      "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\">\n"
      "<rect width=\"{0}\" height=\"{1}\" fill=\"white\"/>\n"
      "<text x=\"{2}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{3}</text>\n",
      W, H, W / 2, detail::xml_escape(title));
  s += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n", L, H - B, W - R, H - B);
  s += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n", L, T, L, H - B);
  for (int k = 0; k <= 4; ++k) {
    const double vx = x0 + (x1 - x0) * k / 4.0;
    const double vy = y0 + (y1 - y0) * k / 4.0;
    s += fmt::format("<text x=\"{:.1f}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" "
                     "text-anchor=\"middle\">{:.2f}</text>\n",
                     px(vx), H - B + 16, vx);
    s += fmt::format("<text x=\"{}\" y=\"{:.1f}\" font-family=\"sans-serif\" font-size=\"11\" "
                     "text-anchor=\"end\">{:.2f}</text>\n",
                     L - 6, py(vy) + 4, vy);
  }
  s += fmt::format("<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n",
                   (L + W - R) / 2, H - 16, x);
  s += fmt::format("<text x=\"18\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" "
                   "transform=\"rotate(-90 18 {})\">{}</text>\n",
                   (T + H - B) / 2, (T + H - B) / 2, y);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    s += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"5\" fill=\"{}\"><title>{} ({:.4f}, {:.4f})</title></circle>\n",
                     px(r.metric(x)), py(r.metric(y)), front[i] ? "#d62728" : "#7f7f7f",
                     detail::xml_escape(r.method), r.metric(x), r.metric(y));
  }
  s += "</svg>\n";
  return s;
}

inline std::string theorem_reports_csv(const std::vector<TheoremReport>& reports) {
  std::string out = "id,instances,max_deviation,tolerance,passed,seed,note\n";
  for (const auto& r : reports) {
    std::string note = r.note;
    std::replace(note.begin(), note.end(), ',', ';');
    out += fmt::format("{},{},{},{},{},{},{}\n", r.id, r.instances, r.max_deviation, r.tolerance, r.passed ? 1 : 0,
                       r.seed, note);
  }
  return out;
}

inline std::vector<TheoremReport> parse_theorem_reports(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  std::vector<TheoremReport> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() < 6) throw RunFailure("malformed theorem report row: " + line);
    try {
      out.push_back({f[0], std::stoull(f[1]), std::stod(f[2]), std::stod(f[3]), f[4] == "1", std::stoull(f[5]),
                     f.size() > 6 ? f[6] : ""});
    } catch (const std::logic_error&) {
      throw RunFailure("malformed theorem report row: " + line);
    }
  }
  return out;
}

/// One row per check id: summed instances, worst deviation, all passed.
inline std::vector<TheoremReport> summarize_theorems(const std::vector<TheoremReport>& reports) {
  std::vector<TheoremReport> out;
  for (const auto& r : reports) {
    auto it = std::find_if(out.begin(), out.end(), [&](const TheoremReport& o) { return o.id == r.id; });
    if (it == out.end()) {
      out.push_back(r);
      out.back().note.clear();
      continue;
    }
    it->instances += r.instances;
    it->max_deviation = std::max(it->max_deviation, r.max_deviation);
    it->tolerance = std::max(it->tolerance, r.tolerance);
    it->passed = it->passed && r.passed;
  }
  return out;
}

/// Runs in a report directory that the config expected but metrics.csv lacks.
inline std::vector<std::string> find_gaps(const ExperimentConfig& cfg, const std::vector<MetricsRecord>& rows) {
  std::set<std::pair<std::string, std::uint64_t>> have;
  for (const auto& r : rows) have.insert({r.method, r.seed});
  std::vector<std::string> gaps;
  for (const RunCell& c : cfg.cells())
    if (!have.count({c.label, c.seed})) gaps.push_back(fmt::format("{} seed {}", c.label, c.seed));
  return gaps;
}

struct ReportSummary {
  std::vector<MetricsRecord> means;
  std::vector<bool> front;
  std::vector<std::string> gaps;
  std::vector<TheoremReport> theorems;
};

/// Writes pareto.csv, pareto.svg and theorems.csv from a finished run
/// directory. Missing cells are returned as gaps.
inline ReportSummary emit_reports(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_regular_file(dir / "metrics.csv"))
    throw RunFailure(fmt::format("'{}' has no metrics.csv", dir.string()));
  const auto rows = parse_metrics_csv(read_file(dir / "metrics.csv"), (dir / "metrics.csv").string());
  ReportSummary s;
  ExperimentConfig cfg;
  if (fs::is_regular_file(dir / kConfigCopyName)) {
    const std::string text = read_file(dir / kConfigCopyName);
    std::filesystem::path base = dir;
    if (fs::is_regular_file(dir / kConfigDirName)) {
      std::string b = read_file(dir / kConfigDirName);
      while (!b.empty() && (b.back() == '\n' || b.back() == '\r')) b.pop_back();
      base = b;
    }
    cfg = parse_experiment(KvConfig::parse(text, (dir / kConfigCopyName).string()), text, base);
    s.gaps = find_gaps(cfg, rows);
  } else {
    s.gaps.push_back(fmt::format("no {} in '{}'", kConfigCopyName, dir.string()));
  }
  s.means = mean_by_method(rows);
  s.front = pareto_front(s.means, cfg.pareto_x, cfg.pareto_y, cfg.x_larger_better, cfg.y_larger_better);
  write_file_atomic(dir / "pareto.csv", pareto_csv(s.means, s.front));
  write_file_atomic(dir / "pareto.svg",
                    scatter_svg(s.means, s.front, cfg.pareto_x, cfg.pareto_y, cfg.name + ": seed-averaged methods"));
  if (fs::is_regular_file(dir / kTheoremReportsName))
    s.theorems = summarize_theorems(parse_theorem_reports(read_file(dir / kTheoremReportsName)));
  write_file_atomic(dir / "theorems.csv", theorem_reports_csv(s.theorems));
  return s;
}

/// The verification battery at its default sizes.
inline std::vector<TheoremReport> run_theorem_battery(std::size_t instances, RunSeed seed, std::size_t threads = 1) {
  std::vector<TheoremReport> out;
  out.push_back(check_return_equivalence(instances, seed, threads));
  out.push_back(check_monotone_in_n(default_policy_set(50, seed), {1, 5, 20, 100, 1000}, seed, threads).report);
  out.push_back(check_bellman_residual(instances, seed, threads));
  const Task t = tension_task();
  const AssumptionResult a = check_assumptions(t.mdp, t.teacher, ConstrainedRewardSpec{}, 100, seed);
  out.push_back(a.finite_discrepancy);
  out.push_back(a.feasible_policy);
  // negative control: no floor and disjoint supports must trip the probe
  {
    const TokenMdp m = trivial_task().mdp;
    Table mu(m.num_states, m.vocab_size, 0.0);
    for (StateId s = 0; s < m.num_states; ++s) mu(s, 1) = 1.0;
    AssumptionResult neg =
        check_assumptions(m, TeacherPolicy::from_probs(mu, 0.0), ConstrainedRewardSpec{}, 10, seed, 0.0);
    TheoremReport r = neg.finite_discrepancy;
    r.id = "assumption-negative-control";
    r.passed = !neg.finite_discrepancy.passed;
    r.note = r.passed ? "unfloored disjoint supports flagged" : "unfloored disjoint supports not flagged";
    out.push_back(r);
  }
  return out;
}

}  // namespace cdistill
