#pragma once

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "cdistill/errors.hpp"
#include "cdistill/kv_config.hpp"
#include "cdistill/policy.hpp"
#include "cdistill/rng.hpp"
#include "cdistill/table.hpp"
#include "cdistill/token_mdp.hpp"

namespace cdistill {

/// An environment together with the teacher distilled on it.
struct Task {
  std::string name;
  TokenMdp mdp;
  TeacherPolicy teacher;
};

namespace detail {

inline void set_row(Table& t, StateId s, std::initializer_list<double> values) {
  std::size_t a = 0;
  for (double v : values) t(s, a++) = v;
}

inline void fill_uniform(Table& t, StateId s) {
  for (double& x : t.row(s)) x = 1.0 / static_cast<double>(t.cols());
}

}  // namespace detail

/// Chain of `length` states with tokens {advance, goal, wrong}. From state i <
/// length-1, advance moves to i+1; the last chain state is the pre-goal state
/// where only `goal` pays. Every other token ends in the sink.
/// The teacher puts `p_correct` on the right token and splits the rest.
inline Task chain_task(std::size_t length = 3, std::size_t horizon = 8, double p_correct = 0.9,
                       double teacher_floor = kDefaultFloor) {
  if (length == 0) throw InputError("chain length must be positive");
  const StateId goal = length;
  const StateId sink = length + 1;
  Task task;
  task.name = fmt::format("chain-{}", length);
  TokenMdp& m = task.mdp;
  m.num_states = length + 2;
  m.vocab_size = 3;
  m.horizon = horizon;
  m.token_names = {"advance", "goal", "wrong"};
  m.transition.assign(m.num_states * m.vocab_size, sink);
  m.terminal.assign(m.num_states, false);
  m.task_reward.assign(m.num_states, 0.0);
  m.terminal[goal] = m.terminal[sink] = true;
  m.task_reward[goal] = 1.0;
  m.initial_states = {0};
  Table probs(m.num_states, m.vocab_size);
  const double rest = (1.0 - p_correct) / 2.0;
  for (StateId s = 0; s < length; ++s) {
    if (s + 1 < length) {
      m.transition[s * 3 + 0] = s + 1;
      detail::set_row(probs, s, {p_correct, rest, rest});
    } else {
      m.transition[s * 3 + 1] = goal;
      detail::set_row(probs, s, {rest, p_correct, rest});
    }
  }
  for (StateId s : {goal, sink}) {
    for (TokenId a = 0; a < 3; ++a) m.transition[s * 3 + a] = s;
    detail::fill_uniform(probs, s);
  }
  m.validate();
  task.teacher = TeacherPolicy::from_probs(std::move(probs), teacher_floor);
  return task;
}

/// One decision: `goal` pays 1, `wrong` pays 0. The teacher is task-optimal
/// (all mass on `goal` before flooring).
inline Task trivial_task(double teacher_floor = kDefaultFloor) {
  Task task;
  task.name = "trivial";
  TokenMdp& m = task.mdp;
  m.num_states = 3;  // start, goal, sink
  m.vocab_size = 2;
  m.horizon = 1;
  m.token_names = {"goal", "wrong"};
  m.transition = {1, 2, 1, 1, 2, 2};
  m.terminal = {false, true, true};
  m.task_reward = {0.0, 1.0, 0.0};
  m.initial_states = {0};
  m.validate();
  Table probs(3, 2, 0.5);
  detail::set_row(probs, 0, {1.0, 0.0});
  task.teacher = TeacherPolicy::from_probs(std::move(probs), teacher_floor);
  return task;
}

struct TensionParams {
  std::size_t questions = 8;
  std::size_t hard_questions = 1;  // the last ones
  std::size_t chain_length = 3;
  double easy_advance = 0.92;
  double hard_advance = 0.72;
  double shortcut_share = 1.0 / 3.0;  // of the teacher's non-advance mass
  double answer_confidence = 0.999;   // teacher mass on the correct answer at A
  std::size_t shortcut_reach = 3;     // shortcut jumps to A from the last this-many chain states
  std::size_t horizon = 8;
  double teacher_floor = kDefaultFloor;
};

/// Chain-with-distractors. Each question is a chain c_0..c_{L-1} over tokens
/// {advance, shortcut, wrong_a, wrong_b}: advance walks the chain and leaves
/// the last chain state into the shared answer state A; shortcut jumps to A
/// from anywhere in the chain; at A only `advance` (read: emit the answer)
/// reaches the goal. A wrong token at c_i derails into a shared chain
/// r_{i+1}..r_L that fails after as many steps as finishing the question
/// would have taken, so giving up early never shortens an episode.
///
/// The shortcut reaches the goal in fewer steps, so reward alone favours it,
/// but the teacher rarely uses it. On easy questions committing to `advance`
/// fits the default budget; on hard questions it does not, so the student has
/// to keep part of the teacher's uncertainty and give up some success.
inline Task tension_task(const TensionParams& p = {}) {
  if (p.questions == 0 || p.chain_length == 0) throw InputError("tension task needs questions and chain states");
  if (p.hard_questions > p.questions) throw InputError("more hard questions than questions");
  const std::size_t L = p.chain_length;
  const StateId derail = p.questions * L;  // r_1 .. r_L
  const StateId answer = derail + L;
  const StateId goal = answer + 1;
  const StateId sink = answer + 2;
  Task task;
  task.name = "tension";
  TokenMdp& m = task.mdp;
  m.num_states = answer + 3;
  m.vocab_size = 4;
  m.horizon = std::max(p.horizon, L + 1);
  m.token_names = {"advance", "shortcut", "wrong_a", "wrong_b"};
  m.transition.assign(m.num_states * 4, sink);
  m.terminal.assign(m.num_states, false);
  m.task_reward.assign(m.num_states, 0.0);
  m.terminal[goal] = m.terminal[sink] = true;
  m.task_reward[goal] = 1.0;
  Table probs(m.num_states, 4);
  for (std::size_t q = 0; q < p.questions; ++q) {
    const bool hard = q >= p.questions - p.hard_questions;
    const double adv = hard ? p.hard_advance : p.easy_advance;
    const double shortcut = (1.0 - adv) * p.shortcut_share;
    const double wrong = (1.0 - adv - shortcut) / 2.0;
    m.initial_states.push_back(q * L);
    for (std::size_t i = 0; i < L; ++i) {
      const StateId s = q * L + i;
      m.transition[s * 4 + 0] = i + 1 < L ? s + 1 : answer;
      m.transition[s * 4 + 1] = i + p.shortcut_reach >= L ? answer : derail + i;
      m.transition[s * 4 + 2] = m.transition[s * 4 + 3] = derail + i;
      detail::set_row(probs, s, {adv, shortcut, wrong, wrong});
    }
  }
  for (std::size_t j = 0; j < L; ++j) {
    const StateId r = derail + j;
    for (TokenId a = 0; a < 4; ++a) m.transition[r * 4 + a] = j + 1 < L ? r + 1 : sink;
    detail::fill_uniform(probs, r);
  }
  m.transition[answer * 4 + 0] = goal;
  const double rest_answer = (1.0 - p.answer_confidence) / 3.0;
  detail::set_row(probs, answer, {p.answer_confidence, rest_answer, rest_answer, rest_answer});
  for (StateId s : {goal, sink}) {
    for (TokenId a = 0; a < 4; ++a) m.transition[s * 4 + a] = s;
    detail::fill_uniform(probs, s);
  }
  m.validate();
  task.teacher = TeacherPolicy::from_probs(std::move(probs), p.teacher_floor);
  return task;
}

struct RandomInstanceParams {
  std::size_t min_states = 3, max_states = 6;
  std::size_t min_vocab = 2, max_vocab = 4;
  std::size_t min_horizon = 1, max_horizon = 5;
  double logit_scale = 1.5;
};

/// Random small instance: a couple of terminal states (at least one paying),
/// random deterministic transitions, a random floored teacher.
inline Task random_task(Rng& rng, const RandomInstanceParams& p = {}) {
  auto between = [&](std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); };
  Task task;
  task.name = "random";
  TokenMdp& m = task.mdp;
  m.num_states = between(p.min_states, p.max_states);
  m.vocab_size = between(p.min_vocab, p.max_vocab);
  m.horizon = between(p.min_horizon, p.max_horizon);
  m.terminal.assign(m.num_states, false);
  m.task_reward.assign(m.num_states, 0.0);
  // last state always terminal and paying; one more terminal with probability 1/2
  m.terminal[m.num_states - 1] = true;
  m.task_reward[m.num_states - 1] = 1.0;
  if (m.num_states > 3 && rng.uniform() < 0.5) m.terminal[m.num_states - 2] = true;
  m.transition.resize(m.num_states * m.vocab_size);
  for (StateId s = 0; s < m.num_states; ++s)
    for (TokenId a = 0; a < m.vocab_size; ++a) m.transition[s * m.vocab_size + a] = rng.below(m.num_states);
  for (StateId s = 0; s < m.num_states; ++s)
    if (!m.terminal[s]) m.initial_states.push_back(s);
  if (m.initial_states.size() > 2) m.initial_states.resize(2);
  m.validate();
  task.teacher = TeacherPolicy::from_policy(SoftmaxPolicy::random(m.num_states, m.vocab_size, p.logit_scale, rng));
  return task;
}

/// "prefix.<state>" -> state, range-checked.
inline StateId parse_state_suffix(const KvConfig& cfg, const std::string& key, std::size_t num_states) {
  const auto dot = key.find('.');
  const std::string suffix = key.substr(dot + 1);
  StateId s = 0;
  const auto [ptr, ec] = std::from_chars(suffix.data(), suffix.data() + suffix.size(), s);
  if (ec != std::errc() || ptr != suffix.data() + suffix.size() || suffix.empty())
    cfg.fail(key, "expected a numeric state suffix");
  if (s >= num_states) cfg.fail(key, fmt::format("state {} out of range", s));
  return s;
}

/// Loads a task from a key-value file:
///
///   schema_version = 1
///   name           = my-task            (optional)
///   num_states     = 5
///   vocab_size     = 3
///   horizon        = 4
///   token_names    = advance, goal, wrong   (optional)
///   initial_states = 0
///   terminal_states = 3, 4
///   reward.3       = 1                  (terminal rewards; default 0)
///   transition.0   = 1 4 4              (next state per token, every non-terminal state)
///   teacher.0      = 0.8 0.1 0.1        (every non-terminal state; terminal rows default uniform)
///   teacher_floor  = 1e-8               (optional)
///
/// Terminal states self-loop. Unknown keys are rejected.
inline Task load_task(const KvConfig& cfg) {
  if (cfg.get_uint("schema_version") != 1) cfg.fail("schema_version", "only schema_version 1 is supported");
  Task task;
  task.name = cfg.get_string("name", "custom");
  TokenMdp& m = task.mdp;
  m.num_states = cfg.get_uint("num_states");
  m.vocab_size = cfg.get_uint("vocab_size");
  m.horizon = cfg.get_uint("horizon", 8);
  if (m.num_states == 0 || m.num_states > 100000) cfg.fail("num_states", "must lie in [1, 100000]");
  if (m.vocab_size == 0 || m.vocab_size > 1024) cfg.fail("vocab_size", "must lie in [1, 1024]");
  if (cfg.has("token_names")) {
    m.token_names = cfg.get_list("token_names");
    if (m.token_names.size() != m.vocab_size) cfg.fail("token_names", "must name every token");
  }
  for (auto s : cfg.get_uint_list("initial_states")) {
    if (s >= m.num_states) cfg.fail("initial_states", fmt::format("state {} out of range", s));
    m.initial_states.push_back(s);
  }
  m.terminal.assign(m.num_states, false);
  m.task_reward.assign(m.num_states, 0.0);
  for (auto s : cfg.get_uint_list("terminal_states")) {
    if (s >= m.num_states) cfg.fail("terminal_states", fmt::format("state {} out of range", s));
    m.terminal[s] = true;
  }
  for (const auto& key : cfg.keys_with_prefix("reward.")) {
    const auto s = parse_state_suffix(cfg, key, m.num_states);
    m.task_reward[s] = cfg.get_double(key);
  }
  m.transition.assign(m.num_states * m.vocab_size, 0);
  Table probs(m.num_states, m.vocab_size, 1.0 / static_cast<double>(m.vocab_size));
  for (StateId s = 0; s < m.num_states; ++s) {
    const std::string tkey = fmt::format("transition.{}", s);
    const std::string pkey = fmt::format("teacher.{}", s);
    if (m.terminal[s] && !cfg.has(tkey)) {
      for (TokenId a = 0; a < m.vocab_size; ++a) m.transition[s * m.vocab_size + a] = s;
    } else {
      const auto next = cfg.get_uint_list(tkey);
      if (next.size() != m.vocab_size) cfg.fail(tkey, fmt::format("expects {} next states", m.vocab_size));
      for (TokenId a = 0; a < m.vocab_size; ++a) {
        if (next[a] >= m.num_states) cfg.fail(tkey, fmt::format("next state {} out of range", next[a]));
        m.transition[s * m.vocab_size + a] = next[a];
      }
    }
    if (!m.terminal[s] || cfg.has(pkey)) {
      const auto row = cfg.get_double_list(pkey);
      if (row.size() != m.vocab_size) cfg.fail(pkey, fmt::format("expects {} probabilities", m.vocab_size));
      for (TokenId a = 0; a < m.vocab_size; ++a) probs(s, a) = row[a];
    }
  }
  // keys for states that do not exist
  for (const auto& prefix : {"transition.", "teacher."})
    for (const auto& key : cfg.keys_with_prefix(prefix)) parse_state_suffix(cfg, key, m.num_states);
  const double floor = cfg.get_double("teacher_floor", kDefaultFloor);
  cfg.reject_unknown();
  try {
    m.validate();
    task.teacher = TeacherPolicy::from_probs(std::move(probs), floor);
  } catch (const InputError& e) {
    throw ConfigError(fmt::format("{}: {}", cfg.source(), e.what()));
  }
  return task;
}

inline Task load_task(const std::string& path) { return load_task(KvConfig::load(path)); }

/// Built-in task by name: "chain", "trivial", "tension".
inline Task builtin_task(const std::string& name, const TensionParams& tension = {}) {
  if (name == "chain") return chain_task();
  if (name == "trivial") return trivial_task();
  if (name == "tension") return tension_task(tension);
  throw ConfigError(fmt::format("unknown built-in task '{}'", name));
}

}  // namespace cdistill
