#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <fmt/core.h>

#include "cdistill/divergence.hpp"
#include "cdistill/errors.hpp"
#include "cdistill/parallel.hpp"
#include "cdistill/policy.hpp"
#include "cdistill/reward_shaping.hpp"
#include "cdistill/rng.hpp"
#include "cdistill/table.hpp"
#include "cdistill/token_mdp.hpp"
#include "cdistill/trajectory.hpp"

namespace cdistill {

inline constexpr std::size_t kDefaultEnumerationCap = 1'000'000;

/// Per-state cost and discrepancy for a frozen (student, teacher) pair plus the
/// student's action probabilities. Costs depend only on the state, so one
/// cache serves a whole batch of rollouts.
struct StateCosts {
  Table probs;
  std::vector<double> cost;
  std::vector<double> phi;

  static StateCosts compute(const SoftmaxPolicy& student, const TeacherPolicy& teacher,
                            const ConstrainedRewardSpec& spec) {
    StateCosts c;
    c.probs = student.probs_table();
    const std::size_t S = student.num_states();
    c.cost.resize(S);
    c.phi.resize(S);
    for (std::size_t s = 0; s < S; ++s) {
      c.cost[s] = divergence(c.probs.row(s), teacher.action_probs(s), spec.cost_kind);
      c.phi[s] = spec.phi_kind == spec.cost_kind ? c.cost[s]
                                                 : divergence(c.probs.row(s), teacher.action_probs(s), spec.phi_kind);
    }
    return c;
  }
};

inline Step make_step(const TokenMdp& mdp, const StateCosts& costs, StateId s, TokenId a) {
  const StateId next = mdp.next(s, a);
  return {s, a, mdp.is_terminal(next) ? mdp.task_reward[next] : 0.0, costs.cost[s], costs.phi[s]};
}

/// Samples one episode under the student from `start`.
inline Trajectory rollout_from(const TokenMdp& mdp, const StateCosts& costs, StateId start, Rng& rng) {
  Trajectory traj;
  traj.start = start;
  traj.steps.reserve(mdp.horizon);
  StateId s = start;
  for (std::size_t t = 0; t < mdp.horizon; ++t) {
    const TokenId a = rng.categorical(costs.probs.row(s));
    traj.steps.push_back(make_step(mdp, costs, s, a));
    s = mdp.next(s, a);
    if (mdp.is_terminal(s)) {
      traj.terminated = true;
      return traj;
    }
  }
  traj.truncated = true;
  return traj;
}

/// Samples one episode; the start is drawn uniformly from the initial states.
inline Trajectory rollout(const TokenMdp& mdp, const SoftmaxPolicy& student, const TeacherPolicy& teacher,
                          const ConstrainedRewardSpec& spec, Rng& rng) {
  check_compatible(mdp, student, teacher);
  const StateCosts costs = StateCosts::compute(student, teacher, spec);
  const StateId start = mdp.initial_states[rng.below(mdp.initial_states.size())];
  return rollout_from(mdp, costs, start, rng);
}

using TrajectoryGroup = std::vector<Trajectory>;

/// Samples `groups` groups of `per_group` rollouts. Group g starts from
/// initial state (first_group + g) mod k, so consecutive batches cycle through
/// the questions; rollout (g, r) uses its own stream derived from `stream_id`.
inline std::vector<TrajectoryGroup> sample_groups(const TokenMdp& mdp, const StateCosts& costs, std::size_t groups,
                                                  std::size_t per_group, std::uint64_t stream_id,
                                                  std::size_t first_group = 0, std::size_t threads = 1) {
  std::vector<TrajectoryGroup> out(groups, TrajectoryGroup(per_group));
  const std::size_t k = mdp.initial_states.size();
  parallel_for(groups * per_group, threads, [&](std::size_t i) {
    const std::size_t g = i / per_group;
    const std::size_t r = i % per_group;
    Rng rng(derive_stream(RunSeed{stream_id}, {g, r}));
    out[g][r] = rollout_from(mdp, costs, mdp.initial_states[(first_group + g) % k], rng);
  });
  return out;
}

struct WeightedTrajectory {
  Trajectory trajectory;
  double probability = 0.0;
};

namespace detail {

template <class Visit>
void enumerate_from(const TokenMdp& mdp, const StateCosts& costs, StateId s, double prob, Trajectory& prefix,
                    std::size_t& leaves, std::size_t cap, Visit& visit) {
  for (TokenId a = 0; a < mdp.vocab_size; ++a) {
    const double p = prob * costs.probs(s, a);
    prefix.steps.push_back(make_step(mdp, costs, s, a));
    const StateId next = mdp.next(s, a);
    const bool done = mdp.is_terminal(next);
    if (done || prefix.steps.size() == mdp.horizon) {
      if (++leaves > cap) throw SizeError(fmt::format("trajectory enumeration exceeds the cap of {} leaves", cap));
      prefix.terminated = done;
      prefix.truncated = !done;
      visit(static_cast<const Trajectory&>(prefix), p);
    } else {
      enumerate_from(mdp, costs, next, p, prefix, leaves, cap, visit);
    }
    prefix.steps.pop_back();
  }
}

}  // namespace detail

/// Calls visit(trajectory, probability) for every trajectory from every
/// initial state, starts weighted uniformly. The trajectory reference is only
/// valid during the call.
template <class Visit>
void for_each_trajectory(const TokenMdp& mdp, const StateCosts& costs, Visit&& visit,
                         std::size_t cap = kDefaultEnumerationCap) {
  std::size_t leaves = 0;
  const double weight = 1.0 / static_cast<double>(mdp.initial_states.size());
  for (StateId start : mdp.initial_states) {
    Trajectory prefix;
    prefix.start = start;
    prefix.steps.reserve(mdp.horizon);
    detail::enumerate_from(mdp, costs, start, weight, prefix, leaves, cap, visit);
  }
}

/// Every trajectory with its exact probability under the student.
/// Probabilities sum to 1 up to rounding.
inline std::vector<WeightedTrajectory> enumerate_trajectories(const TokenMdp& mdp, const StateCosts& costs,
                                                              std::size_t cap = kDefaultEnumerationCap) {
  std::vector<WeightedTrajectory> out;
  for_each_trajectory(
      mdp, costs, [&](const Trajectory& t, double p) { out.push_back({t, p}); }, cap);
  return out;
}

inline std::vector<WeightedTrajectory> enumerate_trajectories(const TokenMdp& mdp, const SoftmaxPolicy& student,
                                                              const TeacherPolicy& teacher,
                                                              const ConstrainedRewardSpec& spec,
                                                              std::size_t cap = kDefaultEnumerationCap) {
  check_compatible(mdp, student, teacher);
  return enumerate_trajectories(mdp, StateCosts::compute(student, teacher, spec), cap);
}

/// Number of leaves enumeration would visit, counted without materializing
/// trajectories; stops counting once `cap` is passed.
inline std::size_t count_leaves(const TokenMdp& mdp, std::size_t cap = kDefaultEnumerationCap) {
  // leaves(s, depth) with memoization over (state, remaining depth)
  const std::size_t H = mdp.horizon;
  std::vector<std::size_t> memo(mdp.num_states * (H + 1), 0);
  std::vector<bool> done(memo.size(), false);
  auto sat_add = [cap](std::size_t a, std::size_t b) { return a + b > cap ? cap + 1 : a + b; };
  auto rec = [&](auto& self, StateId s, std::size_t left) -> std::size_t {
    const std::size_t key = s * (H + 1) + left;
    if (done[key]) return memo[key];
    std::size_t total = 0;
    for (TokenId a = 0; a < mdp.vocab_size; ++a) {
      const StateId n = mdp.next(s, a);
      total = sat_add(total, (mdp.is_terminal(n) || left == 1) ? 1 : self(self, n, left - 1));
    }
    done[key] = true;
    memo[key] = total;
    return total;
  };
  std::size_t total = 0;
  for (StateId s : mdp.initial_states) total = sat_add(total, rec(rec, s, H));
  return total;
}

}  // namespace cdistill
