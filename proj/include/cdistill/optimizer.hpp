#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include <fmt/core.h>

#include "cdistill/errors.hpp"
#include "cdistill/table.hpp"

namespace cdistill {

enum class OptimizerKind { plain, adam };

inline std::string_view to_string(OptimizerKind k) noexcept { return k == OptimizerKind::plain ? "plain" : "adam"; }

inline OptimizerKind parse_optimizer_kind(std::string_view s) {
  if (s == "plain" || s == "sgd") return OptimizerKind::plain;
  if (s == "adam" || s == "adamw") return OptimizerKind::adam;
  throw ConfigError(fmt::format("unknown optimizer '{}'", s));
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 5e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      throw ConfigError(fmt::format("learning rate must be finite and > 0 (got {})", learning_rate));
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("adam betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("adam eps must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
  }
};

/// Gradient ascent on a parameter table. The Adam variant applies decoupled
/// weight decay (AdamW). State is plain data so checkpoints can carry it.
struct AscentOptimizer {
  OptimizerConfig config;
  Table m;
  Table v;
  std::uint64_t steps = 0;

  AscentOptimizer() = default;
  AscentOptimizer(OptimizerConfig cfg, std::size_t rows, std::size_t cols)
      : config(cfg), m(rows, cols), v(rows, cols) {
    config.validate();
  }

  void step(Table& params, const Table& grad) {
    if (!params.same_shape(grad) || !params.same_shape(m)) throw InputError("optimizer: shape mismatch");
    ++steps;
    auto p = params.data();
    const auto g = grad.data();
    const double lr = config.learning_rate;
    if (config.kind == OptimizerKind::plain) {
      for (std::size_t i = 0; i < p.size(); ++i) p[i] += lr * g[i] - lr * config.weight_decay * p[i];
      return;
    }
    auto mm = m.data();
    auto vv = v.data();
    const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(steps));
    const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(steps));
    for (std::size_t i = 0; i < p.size(); ++i) {
      mm[i] = config.beta1 * mm[i] + (1.0 - config.beta1) * g[i];
      vv[i] = config.beta2 * vv[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double mhat = mm[i] / c1;
      const double vhat = vv[i] / c2;
      p[i] += lr * mhat / (std::sqrt(vhat) + config.eps) - lr * config.weight_decay * p[i];
    }
  }
};

}  // namespace cdistill
