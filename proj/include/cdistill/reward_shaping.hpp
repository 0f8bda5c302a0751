#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/core.h>

#include "cdistill/divergence.hpp"
#include "cdistill/errors.hpp"
#include "cdistill/trajectory.hpp"

namespace cdistill {

/// Which step reward the trainer optimizes.
///   unaugmented     R while the reconstructed budget is feasible, else -(n + phi)
///   saute           R while the tracked budget z >= 0, else -n
///   lagrangian      R - lambda * C
///   reward_only     R
///   kl_only         -C with per-step credit
///   kl_long_horizon -C with return-to-go credit
enum class Method { unaugmented, saute, lagrangian, reward_only, kl_only, kl_long_horizon };

inline std::string_view to_string(Method m) noexcept {
  switch (m) {
    case Method::unaugmented: return "unaugmented";
    case Method::saute: return "saute";
    case Method::lagrangian: return "lagrangian";
    case Method::reward_only: return "reward-only";
    case Method::kl_only: return "kl-only";
    case Method::kl_long_horizon: return "kl-long-horizon";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  for (Method m : {Method::unaugmented, Method::saute, Method::lagrangian, Method::reward_only, Method::kl_only,
                   Method::kl_long_horizon})
    if (s == to_string(m)) return m;
  throw ConfigError(fmt::format("unknown method '{}'", s));
}

struct ConstrainedRewardSpec {
  double d = 0.35;
  double n = 20.0;
  double epsilon = 1e-3;
  double gamma = 1.0;
  double lambda = 0.0;
  DivergenceKind cost_kind = DivergenceKind::reverse_kl;
  DivergenceKind phi_kind = DivergenceKind::reverse_kl;
  Method mode = Method::unaugmented;

  void validate() const {
    if (!(d > 0.0)) throw ConfigError(fmt::format("budget d must be > 0 (got {})", d));
    if (!(n > 0.0) || !std::isfinite(n)) throw ConfigError(fmt::format("penalty n must be finite and > 0 (got {})", n));
    if (!(epsilon >= 0.0)) throw ConfigError(fmt::format("epsilon must be >= 0 (got {})", epsilon));
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError(fmt::format("gamma must lie in (0, 1] (got {})", gamma));
    if (mode == Method::lagrangian && !(lambda >= 0.0 && std::isfinite(lambda)))
      throw ConfigError(fmt::format("lambda must be finite and >= 0 (got {})", lambda));
  }

  /// Whether the per-step credit of the likelihood-ratio term is the immediate
  /// reward rather than the return-to-go.
  bool immediate_credit() const noexcept { return mode == Method::kl_only; }
};

/// Remaining budget z_t = d - sum of costs charged so far.
struct BudgetLedger {
  double d = 0.0;
  double cumulative_cost = 0.0;

  explicit BudgetLedger(double budget) : d(budget) {}
  double remaining() const noexcept { return d - cumulative_cost; }
  void charge(double cost) noexcept { cumulative_cost += cost; }
};

/// True iff the costs charged so far (steps 0..T-1, never the current one) fit the budget.
inline bool feasible_at(const BudgetLedger& ledger) noexcept { return ledger.remaining() >= 0.0; }

/// Un-augmented constrained reward: the budget is reconstructed from the
/// trajectory prefix. Once infeasible every later step is penalized, since
/// costs are nonnegative and the prefix sum only grows.
inline std::vector<double> unaug_reward(const Trajectory& traj, const ConstrainedRewardSpec& spec) {
  std::vector<double> out;
  out.reserve(traj.steps.size());
  BudgetLedger ledger(spec.d);
  for (const Step& st : traj.steps) {
    out.push_back(feasible_at(ledger) ? st.task_reward : -(spec.n + st.phi));
    ledger.charge(st.cost);
  }
  return out;
}

/// Augmented-state reference: z is carried alongside the state with
/// z_{t+1} = z_t - C(s_t), z_0 = d, and the penalty is the constant -n.
inline std::vector<double> saute_reward(const Trajectory& traj, const ConstrainedRewardSpec& spec) {
  std::vector<double> out;
  out.reserve(traj.steps.size());
  double z = spec.d;
  for (const Step& st : traj.steps) {
    out.push_back(z >= 0.0 ? st.task_reward : -spec.n);
    z = z - st.cost;
  }
  return out;
}

/// Fixed-weight relaxation: R - lambda * C at every step.
inline std::vector<double> lagrangian_step_reward(const Trajectory& traj, const ConstrainedRewardSpec& spec) {
  std::vector<double> out;
  out.reserve(traj.steps.size());
  for (const Step& st : traj.steps) out.push_back(st.task_reward - spec.lambda * st.cost);
  return out;
}

inline std::vector<double> shape_rewards(const Trajectory& traj, const ConstrainedRewardSpec& spec) {
  switch (spec.mode) {
    case Method::unaugmented: return unaug_reward(traj, spec);
    case Method::saute: return saute_reward(traj, spec);
    case Method::lagrangian: return lagrangian_step_reward(traj, spec);
    case Method::reward_only: {
      std::vector<double> out;
      out.reserve(traj.steps.size());
      for (const Step& st : traj.steps) out.push_back(st.task_reward);
      return out;
    }
    case Method::kl_only:
    case Method::kl_long_horizon: {
      std::vector<double> out;
      out.reserve(traj.steps.size());
      for (const Step& st : traj.steps) out.push_back(-st.cost);
      return out;
    }
  }
  return {};
}

/// sum_t gamma^t r_t
inline double discounted_return(const std::vector<double>& rewards, double gamma) noexcept {
  double g = 0.0;
  double w = 1.0;
  for (double r : rewards) {
    g += w * r;
    w *= gamma;
  }
  return g;
}

}  // namespace cdistill
