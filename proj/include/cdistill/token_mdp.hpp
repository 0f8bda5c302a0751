#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "cdistill/errors.hpp"

namespace cdistill {

using StateId = std::size_t;
using TokenId = std::size_t;

/// Finite episodic environment whose actions are tokens. Transitions are
/// deterministic; the task reward is binary and paid on entering a terminal
/// state. Episodes longer than `horizon` steps are truncated with reward 0.
struct TokenMdp {
  std::size_t num_states = 0;
  std::size_t vocab_size = 0;
  std::vector<StateId> transition;      // num_states * vocab_size, row-major
  std::vector<StateId> initial_states;  // uniform start distribution ("questions")
  std::vector<bool> terminal;           // per state
  std::vector<double> task_reward;      // per state, nonzero only on terminal states
  std::size_t horizon = 8;
  std::vector<std::string> token_names;  // optional, vocab_size entries when present

  StateId next(StateId s, TokenId a) const noexcept { return transition[s * vocab_size + a]; }
  bool is_terminal(StateId s) const noexcept { return terminal[s]; }

  /// Throws InputError on any broken invariant.
  void validate() const {
    if (num_states == 0 || vocab_size == 0) throw InputError("TokenMdp: num_states and vocab_size must be positive");
    if (horizon == 0) throw InputError("TokenMdp: horizon must be positive");
    if (transition.size() != num_states * vocab_size)
      throw InputError(fmt::format("TokenMdp: transition table has {} entries, expected {}", transition.size(),
                                   num_states * vocab_size));
    if (terminal.size() != num_states || task_reward.size() != num_states)
      throw InputError("TokenMdp: terminal/task_reward must have one entry per state");
    for (StateId next_state : transition)
      if (next_state >= num_states) throw InputError(fmt::format("TokenMdp: transition to unknown state {}", next_state));
    if (initial_states.empty()) throw InputError("TokenMdp: at least one initial state is required");
    for (StateId s : initial_states) {
      if (s >= num_states) throw InputError(fmt::format("TokenMdp: initial state {} out of range", s));
      if (terminal[s]) throw InputError(fmt::format("TokenMdp: initial state {} is terminal", s));
    }
    for (std::size_t s = 0; s < num_states; ++s) {
      const double r = task_reward[s];
      if (r != 0.0 && r != 1.0) throw InputError(fmt::format("TokenMdp: task reward of state {} is not binary", s));
      if (r != 0.0 && !terminal[s]) throw InputError(fmt::format("TokenMdp: non-terminal state {} carries reward", s));
    }
    if (!token_names.empty() && token_names.size() != vocab_size)
      throw InputError("TokenMdp: token_names must name every token");
  }

  void check_state(StateId s) const {
    if (s >= num_states) throw InputError(fmt::format("state {} out of range [0, {})", s, num_states));
  }
  void check_token(TokenId a) const {
    if (a >= vocab_size) throw InputError(fmt::format("token {} out of range [0, {})", a, vocab_size));
  }

  TokenId token(std::string_view name) const {
    for (std::size_t i = 0; i < token_names.size(); ++i)
      if (token_names[i] == name) return i;
    throw InputError(fmt::format("unknown token name '{}'", name));
  }
};

struct StepResult {
  StateId next_state;
  double task_reward;
  bool terminal;
  friend bool operator==(const StepResult&, const StepResult&) = default;
};

inline StepResult step(const TokenMdp& mdp, StateId state, TokenId token) {
  mdp.check_state(state);
  mdp.check_token(token);
  const StateId next = mdp.next(state, token);
  const bool done = mdp.is_terminal(next);
  return {next, done ? mdp.task_reward[next] : 0.0, done};
}

}  // namespace cdistill
