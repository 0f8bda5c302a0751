// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails.

#include <chrono>
#include <cstdio>
#include <filesystem>

#include <fmt/core.h>

#include "cdistill/cdistill.hpp"
#include "oracles.hpp"

using namespace cdistill;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = CDISTILL_SOURCE_DIR;

// Pinned tolerances.
constexpr double kEquivalenceTol = 1e-12;
constexpr double kKlGradTol = 1e-6;
constexpr double kObjectiveGradTol = 1e-4;
constexpr double kStandardErrors = 3.0;
constexpr std::size_t kUnbiasedBatches = 100'000;
constexpr double kViolationCeiling = 0.05;
constexpr double kCsFloor = 0.90;
constexpr double kSuccessGap = 0.05;

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Outcome& o, double seconds) {
  std::printf("criterion %d %s: %s (%s; %.1fs)\n", id, name.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str(),
              seconds);
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

template <class F>
void run(int id, const std::string& name, F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = f();
  } catch (const std::exception& e) {
    o = {false, fmt::format("exception: {}", e.what())};
  }
  report(id, name, o, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

Outcome equivalence() {
  const TheoremReport r = check_return_equivalence(100, RunSeed{1});
  return {r.passed && r.max_deviation <= kEquivalenceTol,
          fmt::format("{} instances, max |diff| {:.3g}", r.instances, r.max_deviation)};
}

Outcome monotone() {
  const MonotoneResult m = check_monotone_in_n(default_policy_set(50, RunSeed{1}), {1, 5, 20, 100, 1000}, RunSeed{1});
  return {m.report.passed, fmt::format("50 policies, largest rise {:.3g}, stabilization gap {:.3g} over {} feasible",
                                       m.report.max_deviation, m.stabilization_gap, m.penalty_free)};
}

Outcome gradients() {
  Rng rng(derive_stream(RunSeed{1}, {0xAC3}));
  double worst_kl = 0.0;
  for (int k = 0; k < 50; ++k) {
    const std::size_t V = 2 + rng.below(3);
    const SoftmaxPolicy p = SoftmaxPolicy::random(3, V, 2.0, rng);
    const TeacherPolicy mu = TeacherPolicy::from_policy(SoftmaxPolicy::random(3, V, 2.0, rng));
    const StateId s = rng.below(3);
    const Table fd = oracle::central_difference(p.logits(), [&](const Table& th) {
      return oracle::kl(oracle::probs(th, s, p.floor()), oracle::row(mu.probs(), s));
    });
    worst_kl = std::max(worst_kl, oracle::rel_error(kl_score_gradient(p, mu, s), fd));
  }
  double worst_j = 0.0;
  for (int k = 0; k < 50;) {
    const Task t = random_task(rng);
    const SoftmaxPolicy p = SoftmaxPolicy::random(t.mdp.num_states, t.mdp.vocab_size, 1.5, rng);
    ConstrainedRewardSpec spec;
    spec.n = 5.0;
    spec.d = 0.2 + rng.uniform();
    if (boundary_margin(t.mdp, p, t.teacher, spec) <= 10 * spec.epsilon) continue;
    const Table fd = oracle::central_difference(p.logits(), [&](const Table& th) {
      return oracle::objective(t.mdp, th, p.floor(), t.teacher.probs(), spec);
    });
    worst_j = std::max(worst_j, oracle::rel_error(exact_gradient(t.mdp, p, t.teacher, spec), fd, 1e-6));
    ++k;
  }
  return {worst_kl <= kKlGradTol && worst_j <= kObjectiveGradTol,
          fmt::format("50 + 50 points, KL score rel err {:.3g}, J_n rel err {:.3g}", worst_kl, worst_j)};
}

Outcome unbiased() {
  const Task t = chain_task(3);
  Rng rng(derive_stream(RunSeed{1}, {0xAC4}));
  ConstrainedRewardSpec spec;
  spec.d = 0.3;
  // a student that violates often, away from every kink
  SoftmaxPolicy p;
  double pv = 0.0;
  do {
    p = SoftmaxPolicy::random(t.mdp.num_states, t.mdp.vocab_size, 1.0, rng);
    pv = violation_probability(t.mdp, p, t.teacher, spec);
  } while (pv < 0.2 || boundary_margin(t.mdp, p, t.teacher, spec) <= 10 * spec.epsilon);
  const Table exact = exact_gradient(t.mdp, p, t.teacher, spec);
  const StateCosts costs = StateCosts::compute(p, t.teacher, spec);
  const std::size_t n = exact.size();
  std::vector<double> sum(n, 0.0), sq(n, 0.0);
  for (std::size_t b = 0; b < kUnbiasedBatches; ++b) {
    const auto groups = shape_groups(sample_groups(t.mdp, costs, 8, 8, derive_stream(RunSeed{1}, {0xAC4, b})), spec);
    const Table g = total_gradient(p, t.teacher, groups, spec, {BaselineMode::leave_one_out}).table;
    for (std::size_t i = 0; i < n; ++i) {
      sum[i] += g.data()[i];
      sq[i] += g.data()[i] * g.data()[i];
    }
  }
  double worst = 0.0;
  std::size_t outside = 0;
  const double B = static_cast<double>(kUnbiasedBatches);
  for (std::size_t i = 0; i < n; ++i) {
    const double mean = sum[i] / B;
    const double se = std::sqrt(std::max(sq[i] / B - mean * mean, 0.0) / B);
    const double dev = std::abs(mean - exact.data()[i]);
    if (se > 0.0) worst = std::max(worst, dev / se);
    if (dev > kStandardErrors * se + 1e-12) ++outside;
  }
  return {outside == 0, fmt::format("10^5 batches of 64, violation prob {:.3f}, worst |bias| {:.2f} SE over {} coords",
                                    pv, worst, n)};
}

Outcome trend(const ExperimentConfig& suite) {
  const std::vector<double> grid = {1, 5, 20};
  const MethodSetting* un = nullptr;
  for (const auto& m : suite.methods)
    if (m.method == Method::unaugmented) un = &m;
  if (!un) throw ConfigError("suite has no unaugmented method");
  std::vector<double> viol;
  for (double n : grid) {
    double v = 0.0;
    for (std::uint64_t seed : suite.seeds) {
      TrainConfig c = suite.train;
      c.spec = un->spec;
      c.spec.n = n;
      c.seed = RunSeed{seed};
      v += violation_probability(suite.task.mdp, train(suite.task, c).policy, suite.task.teacher, c.spec);
    }
    viol.push_back(v / static_cast<double>(suite.seeds.size()));
  }
  const TheoremReport r = check_constraint_trend(grid, viol, kViolationCeiling);
  return {r.passed, fmt::format("seed-mean exact violation {}", r.note)};
}

const MetricsRecord& find(const std::vector<MetricsRecord>& means, const std::string& m) {
  for (const auto& r : means)
    if (r.method == m) return r;
  throw RunFailure("no rows for " + m);
}

Outcome ordering(const std::vector<MetricsRecord>& means) {
  const MetricsRecord& un = find(means, "unaugmented");
  const MetricsRecord& ro = find(means, "reward-only");
  const bool ok = un.constraint_satisfaction >= kCsFloor &&
                  std::abs(un.task_success_rate - ro.task_success_rate) <= kSuccessGap &&
                  ro.constraint_satisfaction < un.constraint_satisfaction;
  return {ok, fmt::format("unaugmented success {:.4f} CS {:.4f}; reward-only success {:.4f} CS {:.4f}",
                          un.task_success_rate, un.constraint_satisfaction, ro.task_success_rate,
                          ro.constraint_satisfaction)};
}

Outcome pareto(const std::vector<MetricsRecord>& means) {
  const auto front = pareto_front(means, "task_success_rate", "constraint_satisfaction");
  std::string on;
  bool un = false;
  for (std::size_t i = 0; i < means.size(); ++i)
    if (front[i]) {
      on += (on.empty() ? "" : ", ") + means[i].method;
      un = un || means[i].method == "unaugmented";
    }
  return {un, "front: " + on};
}

Outcome lambda_zero(const ExperimentConfig& suite) {
  for (std::uint64_t seed : suite.seeds) {
    TrainConfig a = suite.train;
    a.seed = RunSeed{seed};
    a.spec.mode = Method::reward_only;
    TrainConfig b = a;
    b.spec.mode = Method::lagrangian;
    b.spec.lambda = 0.0;
    const auto la = train(suite.task, a).metrics;
    const auto lb = train(suite.task, b).metrics;
    std::string ja, jb;
    for (const auto& m : la) ja += to_json_line(m) + "\n";
    for (const auto& m : lb) jb += to_json_line(m) + "\n";
    if (ja != jb) return {false, fmt::format("logs differ at seed {}", seed)};
  }
  return {true, fmt::format("{} seeds, identical logs", suite.seeds.size())};
}

}  // namespace

int main() {
  const ExperimentConfig suite = load_experiment(kSource / "configs" / "tension_suite.cfg");
  const fs::path scratch = fs::temp_directory_path() / "cdistill_acceptance";
  fs::remove_all(scratch);

  run(1, "saute/unaugmented equivalence", equivalence);
  run(2, "monotone in n", monotone);
  run(3, "gradient correctness", gradients);
  run(4, "estimator unbiasedness", unbiased);
  run(5, "violation trend over n", [&] { return trend(suite); });

  std::vector<MetricsRecord> means;
  std::string first_csv;
  const auto t0 = std::chrono::steady_clock::now();
  Outcome suite_ok{true, ""};
  try {
    const ExperimentResult r = run_experiment(suite, scratch / "a", false);
    if (r.partial()) suite_ok = {false, fmt::format("{} cells failed", r.failures.size())};
    means = mean_by_method(r.rows);
    first_csv = read_file(scratch / "a" / "metrics.csv");
  } catch (const std::exception& e) {
    suite_ok = {false, e.what()};
  }
  const double suite_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("tension suite: %zu methods x %zu seeds in %.1fs\n", means.size(), suite.seeds.size(), suite_seconds);
  for (const auto& m : means)
    std::printf("  %-18s success %.4f  CS %.4f  mean KL %.4f\n", m.method.c_str(), m.task_success_rate,
                m.constraint_satisfaction, m.mean_kl);

  run(6, "method ordering", [&] { return suite_ok.pass ? ordering(means) : suite_ok; });
  run(7, "pareto membership", [&] { return suite_ok.pass ? pareto(means) : suite_ok; });
  run(8, "lambda = 0 reduction", [&] { return lambda_zero(suite); });
  run(9, "pipeline determinism", [&]() -> Outcome {
    run_experiment(suite, scratch / "b", false);
    const bool same = !first_csv.empty() && read_file(scratch / "b" / "metrics.csv") == first_csv;
    return {same, same ? "metrics.csv byte-identical across two runs" : "metrics.csv differs"};
  });

  fs::remove_all(scratch);
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
