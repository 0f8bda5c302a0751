#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include <fmt/core.h>

#include "cdistill/errors.hpp"
#include "cdistill/rng.hpp"
#include "cdistill/table.hpp"
#include "cdistill/token_mdp.hpp"

namespace cdistill {

inline constexpr double kDefaultFloor = 1e-8;

/// Mixes a distribution with the uniform one: p <- (p + floor) / (1 + V floor).
/// Stays exactly on the simplex and bounds every entry below by floor/(1+V floor).
inline void apply_floor(std::span<double> probs, double floor) noexcept {
  if (floor <= 0.0) return;
  const double norm = 1.0 + static_cast<double>(probs.size()) * floor;
  for (double& p : probs) p = (p + floor) / norm;
}

/// Tabular softmax student: one logit per (state, token).
class SoftmaxPolicy {
 public:
  SoftmaxPolicy() = default;
  SoftmaxPolicy(std::size_t num_states, std::size_t vocab_size, double floor = kDefaultFloor)
      : logits_(num_states, vocab_size, 0.0), floor_(floor) {
    check_floor();
  }
  explicit SoftmaxPolicy(Table logits, double floor = kDefaultFloor) : logits_(std::move(logits)), floor_(floor) {
    check_floor();
  }

  /// Logits N(0, scale^2) from a dedicated stream; scale 0 gives the uniform policy.
  static SoftmaxPolicy random(std::size_t num_states, std::size_t vocab_size, double scale, Rng& rng,
                              double floor = kDefaultFloor) {
    SoftmaxPolicy p(num_states, vocab_size, floor);
    if (scale > 0.0)
      for (double& x : p.logits_.data()) x = scale * rng.normal();
    return p;
  }

  std::size_t num_states() const noexcept { return logits_.rows(); }
  std::size_t vocab_size() const noexcept { return logits_.cols(); }
  double floor() const noexcept { return floor_; }

  const Table& logits() const noexcept { return logits_; }
  Table& logits() noexcept { return logits_; }

  /// Unfloored softmax of the logits row.
  void softmax(StateId s, std::span<double> out) const noexcept {
    const auto row = logits_.row(s);
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t a = 0; a < row.size(); ++a) {
      out[a] = std::exp(row[a] - m);
      z += out[a];
    }
    for (double& x : out) x /= z;
  }

  /// Softmax of the logits row, floored and renormalized.
  void action_probs(StateId s, std::span<double> out) const noexcept {
    softmax(s, out);
    apply_floor(out, floor_);
  }

  std::vector<double> action_probs(StateId s) const {
    check_state(s);
    std::vector<double> p(vocab_size());
    action_probs(s, p);
    return p;
  }

  Table probs_table() const {
    Table t(num_states(), vocab_size());
    for (std::size_t s = 0; s < num_states(); ++s) action_probs(s, t.row(s));
    return t;
  }

  /// acc[s, :] += weight * d log pi(token | s) / d logits[s, :]
  ///
  /// With sigma the unfloored softmax and p the floored probabilities,
  /// d log p_t / d theta_b = sigma_t (1{t=b} - sigma_b) / ((1 + V floor) p_t).
  /// For floor = 0 this is the familiar 1{t=b} - pi_b.
  void accumulate_grad_log_prob(StateId s, TokenId token, double weight, Table& acc) const noexcept {
    const std::size_t V = vocab_size();
    double sigma_buf[64];
    std::vector<double> heap;
    std::span<double> sigma;
    if (V <= 64) {
      sigma = {sigma_buf, V};
    } else {
      heap.resize(V);
      sigma = heap;
    }
    softmax(s, sigma);
    const double scale = weight * score_scale(sigma[token]);
    auto row = acc.row(s);
    for (std::size_t b = 0; b < V; ++b) row[b] -= scale * sigma[b];
    row[token] += scale;
  }

  Table grad_log_prob(StateId s, TokenId token) const {
    check_state(s);
    if (token >= vocab_size()) throw InputError(fmt::format("token {} out of range", token));
    Table g(num_states(), vocab_size());
    accumulate_grad_log_prob(s, token, 1.0, g);
    return g;
  }

  /// sigma_t / (sigma_t + floor): the factor the floor puts on the score.
  double score_scale(double sigma_t) const noexcept {
    return floor_ > 0.0 ? sigma_t / (sigma_t + floor_) : 1.0;
  }

  void check_state(StateId s) const {
    if (s >= num_states()) throw InputError(fmt::format("state {} out of range [0, {})", s, num_states()));
  }

 private:
  void check_floor() const {
    if (!(floor_ >= 0.0) || !std::isfinite(floor_)) throw InputError("policy floor must be finite and >= 0");
  }

  Table logits_;
  double floor_ = kDefaultFloor;
};

/// Frozen teacher: a probability table, floored at construction.
class TeacherPolicy {
 public:
  TeacherPolicy() = default;

  /// Rows must lie on the simplex (within 1e-9) before flooring.
  static TeacherPolicy from_probs(Table probs, double floor = kDefaultFloor) {
    if (!(floor >= 0.0)) throw InputError("teacher floor must be >= 0");
    for (std::size_t s = 0; s < probs.rows(); ++s) {
      auto row = probs.row(s);
      double sum = 0.0;
      for (double p : row) {
        if (!(p >= 0.0) || !std::isfinite(p)) throw InputError(fmt::format("teacher row {} has an invalid entry", s));
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-9) throw InputError(fmt::format("teacher row {} sums to {}, not 1", s, sum));
      for (double& p : row) p /= sum;
      apply_floor(row, floor);
    }
    TeacherPolicy t;
    t.probs_ = std::move(probs);
    t.floor_ = floor;
    return t;
  }

  /// Teacher equal to the floored action distribution of a student snapshot.
  static TeacherPolicy from_policy(const SoftmaxPolicy& p) {
    TeacherPolicy t;
    t.probs_ = p.probs_table();
    t.floor_ = p.floor();
    return t;
  }

  static TeacherPolicy uniform(std::size_t num_states, std::size_t vocab_size) {
    return from_probs(Table(num_states, vocab_size, 1.0 / static_cast<double>(vocab_size)), 0.0);
  }

  std::size_t num_states() const noexcept { return probs_.rows(); }
  std::size_t vocab_size() const noexcept { return probs_.cols(); }
  double floor() const noexcept { return floor_; }
  const Table& probs() const noexcept { return probs_; }
  std::span<const double> action_probs(StateId s) const noexcept { return probs_.row(s); }

  /// Student logits log(mu) reproduce this teacher exactly when floors agree up to the floor mixing.
  SoftmaxPolicy as_student(double floor = 0.0) const {
    Table logits(num_states(), vocab_size());
    for (std::size_t i = 0; i < probs_.size(); ++i) logits.data()[i] = std::log(probs_.data()[i]);
    return SoftmaxPolicy(std::move(logits), floor);
  }

 private:
  Table probs_;
  double floor_ = kDefaultFloor;
};

inline std::vector<double> action_probs(const SoftmaxPolicy& policy, StateId s) { return policy.action_probs(s); }

inline Table grad_log_prob(const SoftmaxPolicy& policy, StateId s, TokenId token) {
  return policy.grad_log_prob(s, token);
}

/// Shape check between the MDP and the policies defined over it.
inline void check_compatible(const TokenMdp& mdp, const SoftmaxPolicy& student, const TeacherPolicy& teacher) {
  if (student.num_states() != mdp.num_states || student.vocab_size() != mdp.vocab_size)
    throw InputError("student policy shape does not match the MDP");
  if (teacher.num_states() != mdp.num_states || teacher.vocab_size() != mdp.vocab_size)
    throw InputError("teacher policy shape does not match the MDP");
}

}  // namespace cdistill
