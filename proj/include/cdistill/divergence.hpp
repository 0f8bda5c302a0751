#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/core.h>

#include "cdistill/errors.hpp"
#include "cdistill/policy.hpp"
#include "cdistill/table.hpp"

namespace cdistill {

enum class DivergenceKind { reverse_kl, jensen_shannon };

inline std::string_view to_string(DivergenceKind k) noexcept {
  return k == DivergenceKind::reverse_kl ? "reverse-kl" : "jensen-shannon";
}

inline DivergenceKind parse_divergence_kind(std::string_view s) {
  if (s == "reverse-kl" || s == "kl") return DivergenceKind::reverse_kl;
  if (s == "jensen-shannon" || s == "js") return DivergenceKind::jensen_shannon;
  throw ConfigError(fmt::format("unknown divergence kind '{}'", s));
}

/// KL(p || q) summed over the whole vocabulary. Terms with p_a = 0 contribute 0;
/// q_a = 0 < p_a gives +inf (only reachable with a zero floor).
inline double kl_divergence(std::span<const double> p, std::span<const double> q) noexcept {
  double acc = 0.0;
  for (std::size_t a = 0; a < p.size(); ++a) {
    if (p[a] <= 0.0) continue;
    acc += p[a] * (std::log(p[a]) - std::log(q[a]));
  }
  return acc > 0.0 ? acc : 0.0;
}

/// JS(p, q) = KL(p || m)/2 + KL(q || m)/2 with m the midpoint; bounded by ln 2.
inline double js_divergence(std::span<const double> p, std::span<const double> q) noexcept {
  double acc = 0.0;
  for (std::size_t a = 0; a < p.size(); ++a) {
    const double m = 0.5 * (p[a] + q[a]);
    if (p[a] > 0.0) acc += 0.5 * p[a] * (std::log(p[a]) - std::log(m));
    if (q[a] > 0.0) acc += 0.5 * q[a] * (std::log(q[a]) - std::log(m));
  }
  return acc > 0.0 ? acc : 0.0;
}

inline double divergence(std::span<const double> p, std::span<const double> q, DivergenceKind kind) noexcept {
  return kind == DivergenceKind::reverse_kl ? kl_divergence(p, q) : js_divergence(p, q);
}

/// Per-state cost C(s) = D(student(.|s) || teacher(.|s)).
inline double per_state_cost(const SoftmaxPolicy& student, const TeacherPolicy& teacher, StateId s,
                             DivergenceKind kind = DivergenceKind::reverse_kl) {
  return divergence(student.action_probs(s), teacher.action_probs(s), kind);
}

/// Discrepancy term added to the violation penalty. Same formula as the cost;
/// its kind is configured independently.
inline double phi(const SoftmaxPolicy& student, const TeacherPolicy& teacher, StateId s,
                  DivergenceKind kind = DivergenceKind::reverse_kl) {
  return per_state_cost(student, teacher, s, kind);
}

/// Score-function gradient of KL(student || teacher) at state s w.r.t. the logits:
///   E_{a~pi}[ grad log pi(a|s) (1 + log pi(a|s) - log mu(a|s)) ]
/// evaluated exactly over the vocabulary. Accumulates weight * gradient into acc.
inline void accumulate_kl_score_gradient(const SoftmaxPolicy& student, const TeacherPolicy& teacher, StateId s,
                                         double weight, Table& acc) {
  const auto p = student.action_probs(s);
  const auto q = teacher.action_probs(s);
  for (std::size_t a = 0; a < p.size(); ++a) {
    const double w = p[a] * (1.0 + std::log(p[a]) - std::log(q[a]));
    student.accumulate_grad_log_prob(s, a, weight * w, acc);
  }
}

inline Table kl_score_gradient(const SoftmaxPolicy& student, const TeacherPolicy& teacher, StateId s) {
  student.check_state(s);
  Table g(student.num_states(), student.vocab_size());
  accumulate_kl_score_gradient(student, teacher, s, 1.0, g);
  return g;
}

/// d JS / d p_a = log(p_a / m_a) / 2, chained through the floored softmax the
/// same way as the KL score gradient.
inline void accumulate_js_gradient(const SoftmaxPolicy& student, const TeacherPolicy& teacher, StateId s,
                                   double weight, Table& acc) {
  const auto p = student.action_probs(s);
  const auto q = teacher.action_probs(s);
  for (std::size_t a = 0; a < p.size(); ++a) {
    const double m = 0.5 * (p[a] + q[a]);
    const double w = p[a] * 0.5 * (std::log(p[a]) - std::log(m));
    student.accumulate_grad_log_prob(s, a, weight * w, acc);
  }
}

inline void accumulate_divergence_gradient(const SoftmaxPolicy& student, const TeacherPolicy& teacher, StateId s,
                                           DivergenceKind kind, double weight, Table& acc) {
  if (kind == DivergenceKind::reverse_kl)
    accumulate_kl_score_gradient(student, teacher, s, weight, acc);
  else
    accumulate_js_gradient(student, teacher, s, weight, acc);
}

inline Table divergence_gradient(const SoftmaxPolicy& student, const TeacherPolicy& teacher, StateId s,
                                 DivergenceKind kind) {
  student.check_state(s);
  Table g(student.num_states(), student.vocab_size());
  accumulate_divergence_gradient(student, teacher, s, kind, 1.0, g);
  return g;
}

/// ln(1 / min_a mu(a|s)) over all states: upper bound on any reverse KL against this teacher.
inline double reverse_kl_bound(const TeacherPolicy& teacher) noexcept {
  double min_q = 1.0;
  for (double q : teacher.probs().data()) min_q = std::min(min_q, q);
  return min_q > 0.0 ? -std::log(min_q) : std::numeric_limits<double>::infinity();
}

}  // namespace cdistill
