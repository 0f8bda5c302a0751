#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "cdistill/divergence.hpp"
#include "cdistill/errors.hpp"
#include "cdistill/parallel.hpp"
#include "cdistill/policy.hpp"
#include "cdistill/reward_shaping.hpp"
#include "cdistill/rng.hpp"
#include "cdistill/rollout.hpp"
#include "cdistill/solvers.hpp"
#include "cdistill/tasks.hpp"

namespace cdistill {

/// Outcome of one property check over a batch of instances.
struct TheoremReport {
  std::string id;
  std::size_t instances = 0;
  double max_deviation = 0.0;
  double tolerance = 0.0;
  bool passed = true;
  std::uint64_t seed = 0;
  std::string note;
};

inline constexpr std::uint64_t kVerifyStreamTag = 0x5E1F;

namespace detail {

/// Exact expected discounted shaped return under `spec`.
inline double exact_value(const TokenMdp& mdp, const StateCosts& costs, const ConstrainedRewardSpec& spec) {
  double v = 0.0;
  for_each_trajectory(mdp, costs, [&](const Trajectory& t, double p) {
    v += p * discounted_return(shape_rewards(t, spec), spec.gamma);
  });
  return v;
}

inline Trajectory without_phi(Trajectory t) {
  for (Step& s : t.steps) s.phi = 0.0;
  return t;
}

/// Budget that some but not all trajectories exceed: a random point between
/// the smallest and largest total cost.
inline double splitting_budget(const TokenMdp& mdp, const StateCosts& costs, Rng& rng) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  for_each_trajectory(mdp, costs, [&](const Trajectory& t, double) {
    lo = std::min(lo, t.total_cost());
    hi = std::max(hi, t.total_cost());
  });
  const double d = lo + (hi - lo) * (0.1 + 0.8 * rng.uniform());
  return d > 0.0 ? d : 1e-6;
}

}  // namespace detail

/// Trajectory-wise equality of the augmented-state and un-augmented shaped
/// returns with the phi refinement zeroed, over random small instances. Three
/// budgets per instance: one that splits the trajectories, one no trajectory
/// can meet past its first step, and an infinite one.
inline TheoremReport check_return_equivalence(std::size_t instances, RunSeed seed, std::size_t threads = 1) {
  constexpr double tol = 1e-12;
  std::vector<double> dev(instances, 0.0);
  parallel_for(instances, threads, [&](std::size_t i) {
    Rng rng(derive_stream(seed, {kVerifyStreamTag, 1, i}));
    const Task task = random_task(rng);
    const SoftmaxPolicy student = SoftmaxPolicy::random(task.mdp.num_states, task.mdp.vocab_size, 1.5, rng);
    ConstrainedRewardSpec spec;
    spec.n = 1.0 + 50.0 * rng.uniform();
    spec.gamma = rng.uniform() < 0.5 ? 1.0 : 0.5 + 0.5 * rng.uniform();
    const StateCosts costs = StateCosts::compute(student, task.teacher, spec);
    for (double d : {detail::splitting_budget(task.mdp, costs, rng), 1e-300,
                     std::numeric_limits<double>::infinity()}) {
      spec.d = d;
      for_each_trajectory(task.mdp, costs, [&](const Trajectory& t, double) {
        const Trajectory flat = detail::without_phi(t);
        const double a = discounted_return(saute_reward(flat, spec), spec.gamma);
        const double b = discounted_return(unaug_reward(flat, spec), spec.gamma);
        dev[i] = std::max(dev[i], std::abs(a - b));
      });
    }
  });
  TheoremReport r{"return-equivalence", instances, 0.0, tol, true, seed.value, ""};
  for (double x : dev) r.max_deviation = std::max(r.max_deviation, x);
  r.passed = r.max_deviation <= tol;
  return r;
}

/// A student, the task it acts in and the budget it is judged against.
struct PolicyCase {
  Task task;
  SoftmaxPolicy student;
  ConstrainedRewardSpec spec;
  std::string origin;  // "random", "teacher-copy" or "trained"
};

/// Mixed policy set on random small instances: random students, exact teacher
/// copies and briefly trained students, cycling in that order.
inline std::vector<PolicyCase> default_policy_set(std::size_t count, RunSeed seed) {
  std::vector<PolicyCase> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_stream(seed, {kVerifyStreamTag, 2, i}));
    PolicyCase c;
    c.task = random_task(rng);
    const TokenMdp& m = c.task.mdp;
    switch (i % 3) {
      case 0:
        c.student = SoftmaxPolicy::random(m.num_states, m.vocab_size, 1.5, rng);
        c.origin = "random";
        break;
      case 1:
        c.student = c.task.teacher.as_student();
        c.origin = "teacher-copy";
        break;
      default: {
        TrainConfig cfg;
        cfg.spec.d = 0.3;
        cfg.spec.n = 5.0;
        cfg.groups_per_batch = 4;
        cfg.rollouts_per_group = 4;
        cfg.batches_per_epoch = 4;
        cfg.epochs = 5;
        cfg.warm_start_epochs = 1;
        cfg.seed = RunSeed{derive_stream(seed, {kVerifyStreamTag, 3, i})};
        c.student = train(c.task, cfg).policy;
        c.origin = "trained";
      }
    }
    c.spec.mode = Method::unaugmented;
    const StateCosts costs = StateCosts::compute(c.student, c.task.teacher, c.spec);
    c.spec.d = c.origin == "teacher-copy" ? 0.05 : detail::splitting_budget(m, costs, rng);
    out.push_back(std::move(c));
  }
  return out;
}

/// Probability that the un-augmented reward hits its penalty branch at least
/// once; zero means the value cannot depend on n.
inline double penalty_probability(const TokenMdp& mdp, const StateCosts& costs, const ConstrainedRewardSpec& spec) {
  double p_pen = 0.0;
  for_each_trajectory(mdp, costs, [&](const Trajectory& t, double p) {
    BudgetLedger ledger(spec.d);
    for (const Step& st : t.steps) {
      if (!feasible_at(ledger)) {
        p_pen += p;
        return;
      }
      ledger.charge(st.cost);
    }
  });
  return p_pen;
}

struct MonotoneResult {
  TheoremReport report;
  /// values[policy][k] for n_grid[k]
  std::vector<std::vector<double>> values;
  /// worst |V(n_{K-2}) - V(n_{K-1})| among penalty-free policies
  double stabilization_gap = 0.0;
  std::size_t penalty_free = 0;
};

/// Exact un-augmented values over an ascending n grid. Every policy's value
/// must be non-increasing in n (slack 1e-12); penalty-free policies must not
/// move between the last two grid points (1e-9).
inline MonotoneResult check_monotone_in_n(const std::vector<PolicyCase>& policies, const std::vector<double>& n_grid,
                                          RunSeed seed, std::size_t threads = 1) {
  constexpr double slack = 1e-12;
  constexpr double stab_tol = 1e-9;
  if (n_grid.empty() || !std::is_sorted(n_grid.begin(), n_grid.end()))
    throw ConfigError("n grid must be non-empty and ascending");
  MonotoneResult res;
  res.values.assign(policies.size(), std::vector<double>(n_grid.size(), 0.0));
  std::vector<double> p_pen(policies.size(), 0.0);
  parallel_for(policies.size(), threads, [&](std::size_t i) {
    const PolicyCase& c = policies[i];
    ConstrainedRewardSpec spec = c.spec;
    spec.mode = Method::unaugmented;
    const StateCosts costs = StateCosts::compute(c.student, c.task.teacher, spec);
    p_pen[i] = penalty_probability(c.task.mdp, costs, spec);
    for (std::size_t k = 0; k < n_grid.size(); ++k) {
      spec.n = n_grid[k];
      res.values[i][k] = detail::exact_value(c.task.mdp, costs, spec);
    }
  });
  double worst_rise = 0.0;
  for (std::size_t i = 0; i < policies.size(); ++i) {
    for (std::size_t k = 1; k < n_grid.size(); ++k)
      worst_rise = std::max(worst_rise, res.values[i][k] - res.values[i][k - 1]);
    if (p_pen[i] == 0.0 && n_grid.size() >= 2) {
      ++res.penalty_free;
      const auto& v = res.values[i];
      res.stabilization_gap = std::max(res.stabilization_gap, std::abs(v[v.size() - 2] - v.back()));
    }
  }
  // the maximum over the set inherits the ordering
  for (std::size_t k = 1; k < n_grid.size(); ++k) {
    double best_prev = -std::numeric_limits<double>::infinity();
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& v : res.values) {
      best_prev = std::max(best_prev, v[k - 1]);
      best = std::max(best, v[k]);
    }
    worst_rise = std::max(worst_rise, best - best_prev);
  }
  TheoremReport& r = res.report;
  r.id = "monotone-in-n";
  r.instances = policies.size();
  r.max_deviation = std::max(0.0, worst_rise);
  r.tolerance = slack;
  r.seed = seed.value;
  r.passed = worst_rise <= slack && res.stabilization_gap <= stab_tol;
  r.note = fmt::format("{} penalty-free policies, stabilization gap {:.3g} (tol {:.0e})", res.penalty_free,
                       res.stabilization_gap, stab_tol);
  return res;
}

/// Bellman residual of the frozen-cost un-augmented model: the value from a
/// backward recursion over (state, step, spent budget) against the forward
/// enumeration, on random instances.
inline TheoremReport check_bellman_residual(std::size_t instances, RunSeed seed, std::size_t threads = 1) {
  constexpr double tol = 1e-10;
  std::vector<double> dev(instances, 0.0);
  parallel_for(instances, threads, [&](std::size_t i) {
    Rng rng(derive_stream(seed, {kVerifyStreamTag, 4, i}));
    const Task task = random_task(rng);
    const TokenMdp& m = task.mdp;
    const SoftmaxPolicy student = SoftmaxPolicy::random(m.num_states, m.vocab_size, 1.5, rng);
    ConstrainedRewardSpec spec;
    spec.n = 10.0;
    spec.gamma = 0.5 + 0.5 * rng.uniform();
    const StateCosts costs = StateCosts::compute(student, task.teacher, spec);
    spec.d = detail::splitting_budget(m, costs, rng);
    auto backup = [&](auto& self, StateId s, std::size_t t, double spent) -> double {
      double v = 0.0;
      const bool feasible = spec.d - spent >= 0.0;
      for (TokenId a = 0; a < m.vocab_size; ++a) {
        const StateId next = m.next(s, a);
        const double r = feasible ? (m.is_terminal(next) ? m.task_reward[next] : 0.0) : -(spec.n + costs.phi[s]);
        const bool stop = m.is_terminal(next) || t + 1 == m.horizon;
        v += costs.probs(s, a) * (r + (stop ? 0.0 : spec.gamma * self(self, next, t + 1, spent + costs.cost[s])));
      }
      return v;
    };
    double v_back = 0.0;
    for (StateId s0 : m.initial_states) v_back += backup(backup, s0, 0, 0.0);
    v_back /= static_cast<double>(m.initial_states.size());
    dev[i] = std::abs(v_back - detail::exact_value(m, costs, spec));
  });
  TheoremReport r{"bellman-residual", instances, 0.0, tol, true, seed.value, ""};
  for (double x : dev) r.max_deviation = std::max(r.max_deviation, x);
  r.passed = r.max_deviation <= tol;
  return r;
}

/// Exact probability that an episode's total cost exceeds d.
inline double violation_probability(const TokenMdp& mdp, const SoftmaxPolicy& student, const TeacherPolicy& teacher,
                                    const ConstrainedRewardSpec& spec, std::size_t cap = kDefaultEnumerationCap) {
  check_compatible(mdp, student, teacher);
  const StateCosts costs = StateCosts::compute(student, teacher, spec);
  double v = 0.0;
  for_each_trajectory(
      mdp, costs, [&](const Trajectory& t, double p) {
        if (t.total_cost() > spec.d) v += p;
      },
      cap);
  return v;
}

struct ConstraintCheck {
  double violation_probability = 0.0;
  TheoremReport report;
};

/// Exact violation probability of one trained policy against `threshold`.
inline ConstraintCheck check_constraint_satisfaction(const SoftmaxPolicy& student, const TokenMdp& mdp,
                                                     const TeacherPolicy& teacher, const ConstrainedRewardSpec& spec,
                                                     double threshold = 0.05) {
  ConstraintCheck c;
  c.violation_probability = violation_probability(mdp, student, teacher, spec);
  c.report = {"constraint-satisfaction", 1, c.violation_probability, threshold,
              c.violation_probability <= threshold, 0, fmt::format("d = {}", spec.d)};
  return c;
}

/// Violation probabilities of policies trained at increasing n must not rise,
/// and the last must be at most `threshold`.
inline TheoremReport check_constraint_trend(const std::vector<double>& n_grid, const std::vector<double>& violations,
                                           double threshold, std::uint64_t seed = 0) {
  if (n_grid.size() != violations.size() || violations.empty())
    throw InputError("constraint trend needs one violation probability per n");
  TheoremReport r{"constraint-trend", violations.size(), 0.0, threshold, true, seed, ""};
  double rise = 0.0;
  for (std::size_t k = 1; k < violations.size(); ++k) rise = std::max(rise, violations[k] - violations[k - 1]);
  r.max_deviation = violations.back();
  r.passed = rise <= 0.0 && violations.back() <= threshold;
  std::string seq;
  for (std::size_t k = 0; k < violations.size(); ++k)
    seq += fmt::format("{}n={}: {:.4f}", k ? ", " : "", n_grid[k], violations[k]);
  r.note = fmt::format("{}; largest rise {:.4g}", seq, rise);
  return r;
}

struct AssumptionResult {
  TheoremReport finite_discrepancy;
  TheoremReport feasible_policy;
  /// "teacher-copy", "deterministic" or "" when no certificate was found
  std::string certificate;
};

/// Finite-discrepancy probe: phi and its gradient at `samples` random
/// parameter draws must be finite and phi must respect ln(1/q_min). Feasible
/// policy probe: a teacher copy, else some deterministic policy, must keep
/// every trajectory within d.
inline AssumptionResult check_assumptions(const TokenMdp& mdp, const TeacherPolicy& teacher,
                                          const ConstrainedRewardSpec& spec, std::size_t samples, RunSeed seed,
                                          double student_floor = kDefaultFloor) {
  mdp.validate();
  AssumptionResult out;
  const double bound = reverse_kl_bound(teacher);
  bool finite = true;
  double worst_excess = 0.0;
  double worst_phi = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    Rng rng(derive_stream(seed, {kVerifyStreamTag, 5, i}));
    const SoftmaxPolicy student = SoftmaxPolicy::random(mdp.num_states, mdp.vocab_size, 8.0, rng, student_floor);
    for (StateId s = 0; s < mdp.num_states; ++s) {
      const double v = phi(student, teacher, s, spec.phi_kind);
      const Table g = divergence_gradient(student, teacher, s, spec.phi_kind);
      if (!std::isfinite(v) || !g.all_finite()) finite = false;
      if (std::isfinite(v)) worst_phi = std::max(worst_phi, v);
      if (spec.phi_kind == DivergenceKind::reverse_kl && std::isfinite(v))
        worst_excess = std::max(worst_excess, v - bound);
    }
  }
  TheoremReport& a1 = out.finite_discrepancy;
  a1.id = "assumption-finite-discrepancy";
  a1.instances = samples;
  a1.max_deviation = std::max(0.0, worst_excess);
  a1.tolerance = 1e-12;
  a1.seed = seed.value;
  a1.passed = finite && worst_excess <= 1e-12;
  a1.note = finite ? fmt::format("max phi {:.6g}, bound ln(1/q_min) = {:.6g}", worst_phi, bound)
                   : std::string("non-finite discrepancy or gradient");

  auto always_feasible = [&](const SoftmaxPolicy& p) {
    return violation_probability(mdp, p, teacher, spec) == 0.0;
  };
  TheoremReport& a2 = out.feasible_policy;
  a2.id = "assumption-feasible-policy";
  a2.seed = seed.value;
  if (always_feasible(teacher.as_student())) {
    out.certificate = "teacher-copy";
    a2.instances = 1;
  } else {
    // deterministic policies, one token per state, while the count stays small
    const double count = std::pow(static_cast<double>(mdp.vocab_size), static_cast<double>(mdp.num_states));
    if (count <= 4096.0) {
      std::vector<TokenId> choice(mdp.num_states, 0);
      for (std::size_t k = 0; k < static_cast<std::size_t>(count) && out.certificate.empty(); ++k) {
        Table logits(mdp.num_states, mdp.vocab_size, -std::numeric_limits<double>::infinity());
        for (StateId s = 0; s < mdp.num_states; ++s) logits(s, choice[s]) = 0.0;
        ++a2.instances;
        if (always_feasible(SoftmaxPolicy(std::move(logits), 0.0))) out.certificate = "deterministic";
        for (StateId s = 0; s < mdp.num_states && ++choice[s] == mdp.vocab_size; ++s) choice[s] = 0;
      }
    }
  }
  a2.passed = !out.certificate.empty();
  a2.note = a2.passed ? "certificate: " + out.certificate : std::string("no feasible policy found");
  return out;
}

}  // namespace cdistill
