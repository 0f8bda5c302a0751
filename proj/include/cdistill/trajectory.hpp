#pragma once

#include <cstddef>
#include <vector>

#include "cdistill/token_mdp.hpp"

namespace cdistill {

/// One decision: the state the token was emitted from, the task reward the
/// transition paid, and the divergence cost / discrepancy of that state.
struct Step {
  StateId state = 0;
  TokenId token = 0;
  double task_reward = 0.0;
  double cost = 0.0;
  double phi = 0.0;
  friend bool operator==(const Step&, const Step&) = default;
};

struct Trajectory {
  StateId start = 0;
  std::vector<Step> steps;
  bool terminated = false;
  bool truncated = false;

  std::size_t length() const noexcept { return steps.size(); }

  double total_cost() const noexcept {
    double c = 0.0;
    for (const Step& s : steps) c += s.cost;
    return c;
  }

  double task_return() const noexcept {
    double r = 0.0;
    for (const Step& s : steps) r += s.task_reward;
    return r;
  }

  bool succeeded() const noexcept { return !steps.empty() && steps.back().task_reward > 0.0; }

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

}  // namespace cdistill
