#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string_view>
#include <vector>

#include <fmt/core.h>

#include "cdistill/divergence.hpp"
#include "cdistill/errors.hpp"
#include "cdistill/parallel.hpp"
#include "cdistill/policy.hpp"
#include "cdistill/reward_shaping.hpp"
#include "cdistill/rollout.hpp"
#include "cdistill/table.hpp"
#include "cdistill/trajectory.hpp"

namespace cdistill {

struct GradientEstimate {
  Table table;
  Table term_I;
  Table term_II;
  std::size_t num_trajectories = 0;
};

enum class BaselineMode { none, group, leave_one_out };

inline std::string_view to_string(BaselineMode b) noexcept {
  switch (b) {
    case BaselineMode::none: return "none";
    case BaselineMode::group: return "group";
    case BaselineMode::leave_one_out: return "leave-one-out";
  }
  return "?";
}

inline BaselineMode parse_baseline_mode(std::string_view s) {
  for (BaselineMode b : {BaselineMode::none, BaselineMode::group, BaselineMode::leave_one_out})
    if (s == to_string(b)) return b;
  throw ConfigError(fmt::format("unknown baseline mode '{}'", s));
}

struct AdvantageOptions {
  BaselineMode baseline = BaselineMode::group;
  /// Divide centred credits by (group std of returns + 1e-4).
  bool normalize_std = false;
};

struct ShapedTrajectory {
  Trajectory trajectory;
  std::vector<double> rewards;
};

using ShapedGroup = std::vector<ShapedTrajectory>;

inline std::vector<ShapedGroup> shape_groups(const std::vector<TrajectoryGroup>& groups,
                                             const ConstrainedRewardSpec& spec) {
  std::vector<ShapedGroup> out;
  out.reserve(groups.size());
  for (const TrajectoryGroup& g : groups) {
    ShapedGroup sg;
    sg.reserve(g.size());
    for (const Trajectory& t : g) sg.push_back({t, shape_rewards(t, spec)});
    out.push_back(std::move(sg));
  }
  return out;
}

/// Softmax table plus the floor, enough to evaluate grad log pi without
/// recomputing exponentials per step.
class ScoreTable {
 public:
  explicit ScoreTable(const SoftmaxPolicy& policy) : sigma_(policy.num_states(), policy.vocab_size()), floor_(policy.floor()) {
    for (std::size_t s = 0; s < policy.num_states(); ++s) policy.softmax(s, sigma_.row(s));
  }

  /// acc[s, :] += weight * d log pi(token | s) / d logits[s, :]
  void accumulate(StateId s, TokenId token, double weight, Table& acc) const noexcept {
    const auto sig = sigma_.row(s);
    const double st = sig[token];
    const double scale = weight * (floor_ > 0.0 ? st / (st + floor_) : 1.0);
    auto row = acc.row(s);
    for (std::size_t b = 0; b < row.size(); ++b) row[b] -= scale * sig[b];
    row[token] += scale;
  }

 private:
  Table sigma_;
  double floor_;
};

/// Row s holds the gradient of D(student(.|s) || teacher(.|s)) w.r.t. logits row s.
inline Table divergence_gradient_rows(const SoftmaxPolicy& student, const TeacherPolicy& teacher,
                                      DivergenceKind kind) {
  Table g(student.num_states(), student.vocab_size());
  for (std::size_t s = 0; s < student.num_states(); ++s) accumulate_divergence_gradient(student, teacher, s, kind, 1.0, g);
  return g;
}

/// Per-step credit: immediate reward for per-step credit modes, otherwise
/// the return-to-go sum_{u>=t} gamma^{u-t} r_u.
inline std::vector<double> step_credits(const std::vector<double>& rewards, const ConstrainedRewardSpec& spec) {
  if (spec.immediate_credit()) return rewards;
  std::vector<double> c(rewards.size());
  double g = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    g = rewards[t] + spec.gamma * g;
    c[t] = g;
  }
  return c;
}

/// Weight on the divergence gradient at each step of the explicit-dependence
/// term, and which divergence it differentiates.
///   unaugmented: -gamma^t on steps whose remaining budget d - sum_{u<t} C <= epsilon
///   lagrangian:  -lambda gamma^t
///   kl modes:    -gamma^t
///   otherwise the shaped reward does not depend on theta directly.
inline std::vector<double> explicit_step_weights(const Trajectory& traj, const ConstrainedRewardSpec& spec) {
  std::vector<double> w(traj.steps.size(), 0.0);
  double discount = 1.0;
  switch (spec.mode) {
    case Method::unaugmented: {
      BudgetLedger ledger(spec.d);
      for (std::size_t t = 0; t < traj.steps.size(); ++t) {
        if (ledger.remaining() <= spec.epsilon) w[t] = -discount;
        ledger.charge(traj.steps[t].cost);
        discount *= spec.gamma;
      }
      break;
    }
    case Method::lagrangian:
      if (spec.lambda == 0.0) break;
      for (double& x : w) {
        x = -spec.lambda * discount;
        discount *= spec.gamma;
      }
      break;
    case Method::kl_only:
    case Method::kl_long_horizon:
      for (double& x : w) {
        x = -discount;
        discount *= spec.gamma;
      }
      break;
    case Method::saute:
    case Method::reward_only: break;
  }
  return w;
}

inline DivergenceKind explicit_kind(const ConstrainedRewardSpec& spec) noexcept {
  return spec.mode == Method::unaugmented ? spec.phi_kind : spec.cost_kind;
}

namespace detail {

inline void check_baseline(const std::vector<ShapedGroup>& groups, const AdvantageOptions& opt) {
  if (opt.baseline == BaselineMode::none) return;
  for (const ShapedGroup& g : groups)
    if (g.size() < 2)
      throw ConfigError(fmt::format("{} baseline needs groups of at least 2 rollouts (got {})", to_string(opt.baseline),
                                    g.size()));
}

inline std::size_t count(const std::vector<ShapedGroup>& groups) {
  std::size_t n = 0;
  for (const ShapedGroup& g : groups) n += g.size();
  return n;
}

/// Unnormalized term-I sum over one group.
inline void group_term_I(const ShapedGroup& group, const ScoreTable& score, const ConstrainedRewardSpec& spec,
                         const AdvantageOptions& opt, Table& acc) {
  const std::size_t G = group.size();
  const bool use_baseline = opt.baseline != BaselineMode::none && !spec.immediate_credit();
  std::vector<double> returns(G);
  double sum = 0.0;
  for (std::size_t i = 0; i < G; ++i) {
    returns[i] = discounted_return(group[i].rewards, spec.gamma);
    sum += returns[i];
  }
  double scale = 1.0;
  if (use_baseline && opt.normalize_std) {
    const double mean = sum / static_cast<double>(G);
    double var = 0.0;
    for (double r : returns) var += (r - mean) * (r - mean);
    scale = 1.0 / (std::sqrt(var / static_cast<double>(G)) + 1e-4);
  }
  for (std::size_t i = 0; i < G; ++i) {
    double b = 0.0;
    if (use_baseline)
      b = opt.baseline == BaselineMode::group ? sum / static_cast<double>(G)
                                              : (sum - returns[i]) / static_cast<double>(G - 1);
    const auto credits = step_credits(group[i].rewards, spec);
    const auto& steps = group[i].trajectory.steps;
    for (std::size_t t = 0; t < steps.size(); ++t)
      score.accumulate(steps[t].state, steps[t].token, scale * (credits[t] - b), acc);
  }
}

inline void trajectory_term_II(const Trajectory& traj, const Table& dgrad, const ConstrainedRewardSpec& spec,
                               double weight, Table& acc) {
  const auto w = explicit_step_weights(traj, spec);
  for (std::size_t t = 0; t < w.size(); ++t) {
    if (w[t] == 0.0) continue;
    const StateId s = traj.steps[t].state;
    auto row = acc.row(s);
    const auto g = dgrad.row(s);
    for (std::size_t b = 0; b < row.size(); ++b) row[b] += weight * w[t] * g[b];
  }
}

}  // namespace detail

/// Likelihood-ratio part: sum_t grad log pi(a_t|s_t) (credit_t - baseline),
/// averaged over all trajectories. The baseline is a function of the group's
/// shaped returns; it is skipped for per-step credit.
inline Table likelihood_ratio_term(const SoftmaxPolicy& student, const std::vector<ShapedGroup>& groups,
                                   const ConstrainedRewardSpec& spec, const AdvantageOptions& opt = {},
                                   std::size_t threads = 1) {
  detail::check_baseline(groups, opt);
  const ScoreTable score(student);
  std::vector<Table> partial(groups.size(), Table(student.num_states(), student.vocab_size()));
  parallel_for(groups.size(), threads,
               [&](std::size_t g) { detail::group_term_I(groups[g], score, spec, opt, partial[g]); });
  Table acc(student.num_states(), student.vocab_size());
  for (const Table& p : partial) acc += p;
  const std::size_t n = detail::count(groups);
  if (n > 0) acc *= 1.0 / static_cast<double>(n);
  return acc;
}

/// Explicit-dependence part: the direct derivative of the shaped rewards
/// through the divergence, averaged over all trajectories.
inline Table explicit_dependence_term(const SoftmaxPolicy& student, const TeacherPolicy& teacher,
                                      const std::vector<ShapedGroup>& groups, const ConstrainedRewardSpec& spec) {
  Table acc(student.num_states(), student.vocab_size());
  const std::size_t n = detail::count(groups);
  if (n == 0) return acc;
  const Table dgrad = divergence_gradient_rows(student, teacher, explicit_kind(spec));
  for (const ShapedGroup& g : groups)
    for (const ShapedTrajectory& st : g) detail::trajectory_term_II(st.trajectory, dgrad, spec, 1.0, acc);
  acc *= 1.0 / static_cast<double>(n);
  return acc;
}

inline GradientEstimate total_gradient(const SoftmaxPolicy& student, const TeacherPolicy& teacher,
                                       const std::vector<ShapedGroup>& groups, const ConstrainedRewardSpec& spec,
                                       const AdvantageOptions& opt = {}, std::size_t threads = 1) {
  GradientEstimate e;
  e.term_I = likelihood_ratio_term(student, groups, spec, opt, threads);
  e.term_II = explicit_dependence_term(student, teacher, groups, spec);
  e.table = e.term_I + e.term_II;
  e.num_trajectories = detail::count(groups);
  return e;
}

/// Expectation of the estimator without a baseline, by enumeration. With
/// return-to-go credit and gamma = 1 this is the gradient of the shaped
/// objective with the indicator set held fixed.
inline GradientEstimate exact_gradient_split(const TokenMdp& mdp, const SoftmaxPolicy& student,
                                             const TeacherPolicy& teacher, const ConstrainedRewardSpec& spec,
                                             std::size_t cap = kDefaultEnumerationCap) {
  check_compatible(mdp, student, teacher);
  const StateCosts costs = StateCosts::compute(student, teacher, spec);
  const ScoreTable score(student);
  const Table dgrad = divergence_gradient_rows(student, teacher, explicit_kind(spec));
  GradientEstimate e;
  e.term_I = Table(student.num_states(), student.vocab_size());
  e.term_II = e.term_I;
  for_each_trajectory(
      mdp, costs,
      [&](const Trajectory& traj, double p) {
        const auto credits = step_credits(shape_rewards(traj, spec), spec);
        for (std::size_t t = 0; t < traj.steps.size(); ++t)
          score.accumulate(traj.steps[t].state, traj.steps[t].token, p * credits[t], e.term_I);
        detail::trajectory_term_II(traj, dgrad, spec, p, e.term_II);
        ++e.num_trajectories;
      },
      cap);
  e.table = e.term_I + e.term_II;
  return e;
}

inline Table exact_gradient(const TokenMdp& mdp, const SoftmaxPolicy& student, const TeacherPolicy& teacher,
                            const ConstrainedRewardSpec& spec, std::size_t cap = kDefaultEnumerationCap) {
  return exact_gradient_split(mdp, student, teacher, spec, cap).table;
}

/// J_n = E[sum_t gamma^t r_t] under the shaped rewards, by enumeration.
inline double exact_objective(const TokenMdp& mdp, const SoftmaxPolicy& student, const TeacherPolicy& teacher,
                              const ConstrainedRewardSpec& spec, std::size_t cap = kDefaultEnumerationCap) {
  check_compatible(mdp, student, teacher);
  const StateCosts costs = StateCosts::compute(student, teacher, spec);
  double j = 0.0;
  for_each_trajectory(
      mdp, costs,
      [&](const Trajectory& traj, double p) { j += p * discounted_return(shape_rewards(traj, spec), spec.gamma); },
      cap);
  return j;
}

/// Smallest |d - sum_{u<t} C - epsilon| and |d - sum_{u<t} C| over all
/// reachable prefixes: how far theta sits from a kink of the shaped objective.
inline double boundary_margin(const TokenMdp& mdp, const SoftmaxPolicy& student, const TeacherPolicy& teacher,
                              const ConstrainedRewardSpec& spec, std::size_t cap = kDefaultEnumerationCap) {
  check_compatible(mdp, student, teacher);
  const StateCosts costs = StateCosts::compute(student, teacher, spec);
  double margin = std::numeric_limits<double>::infinity();
  for_each_trajectory(
      mdp, costs,
      [&](const Trajectory& traj, double) {
        double remaining = spec.d;
        for (const Step& st : traj.steps) {
          margin = std::min({margin, std::abs(remaining), std::abs(remaining - spec.epsilon)});
          remaining -= st.cost;
        }
      },
      cap);
  return margin;
}

}  // namespace cdistill
