#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "cdistill/binary_io.hpp"
#include "cdistill/errors.hpp"
#include "cdistill/gradient.hpp"
#include "cdistill/optimizer.hpp"
#include "cdistill/policy.hpp"
#include "cdistill/reward_shaping.hpp"
#include "cdistill/rng.hpp"
#include "cdistill/rollout.hpp"
#include "cdistill/tasks.hpp"

namespace cdistill {

inline constexpr std::uint64_t kInitStreamTag = 0x1417;
inline constexpr std::uint64_t kTrainStreamTag = 0x7A41;

struct TrainConfig {
  /// spec.mode selects the method.
  ConstrainedRewardSpec spec;
  std::size_t groups_per_batch = 8;
  std::size_t rollouts_per_group = 8;
  std::size_t batches_per_epoch = 32;
  std::size_t epochs = 20;
  /// Leading epochs trained kl-only before switching to spec.mode.
  std::size_t warm_start_epochs = 3;
  OptimizerConfig optimizer;
  AdvantageOptions advantage;
  RunSeed seed{0};
  double init_scale = 0.5;
  double student_floor = kDefaultFloor;
  std::size_t threads = 1;

  Method method() const noexcept { return spec.mode; }
  std::size_t batch_size() const noexcept { return groups_per_batch * rollouts_per_group; }

  void validate() const {
    spec.validate();
    optimizer.validate();
    if (groups_per_batch == 0 || rollouts_per_group == 0 || batches_per_epoch == 0)
      throw ConfigError("groups_per_batch, rollouts_per_group and batches_per_epoch must be positive");
    if (advantage.baseline != BaselineMode::none && rollouts_per_group < 2)
      throw ConfigError("a group baseline needs rollouts_per_group >= 2");
    if (!(init_scale >= 0.0)) throw ConfigError("init_scale must be >= 0");
    if (!(student_floor >= 0.0)) throw ConfigError("student_floor must be >= 0");
  }
};

/// Name of the objective a spec optimizes. A zero-weight Lagrangian is the
/// plain reward objective and carries that name.
inline std::string objective_label(const ConstrainedRewardSpec& spec) {
  if (spec.mode == Method::lagrangian)
    return spec.lambda == 0.0 ? std::string(to_string(Method::reward_only)) : fmt::format("lagrangian({})", spec.lambda);
  return std::string(to_string(spec.mode));
}

/// Statistics of the trajectories sampled during one epoch.
struct EpochMetrics {
  std::uint64_t epoch = 0;
  std::string method;
  std::string phase;  // "warm-start" or "main"
  double mean_return = 0.0;  // task return
  double mean_kl = 0.0;      // sum of per-state costs per episode
  double cs = 0.0;
  double violation_rate = 0.0;
  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

inline std::string to_json_line(const EpochMetrics& m) {
  nlohmann::ordered_json j;
  j["epoch"] = m.epoch;
  j["method"] = m.method;
  j["phase"] = m.phase;
  j["mean_return"] = m.mean_return;
  j["mean_kl"] = m.mean_kl;
  j["cs"] = m.cs;
  j["violation_rate"] = m.violation_rate;
  return j.dump();
}

struct Checkpoint {
  std::uint64_t epoch = 0;  // epochs completed
  SoftmaxPolicy policy;
  AscentOptimizer optimizer;
  std::vector<EpochMetrics> history;
};

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

/// "CDCK", u32 version, u64 epoch, f64 floor, logits table, u32 optimizer
/// kind, 5 f64 optimizer settings, u64 steps, m and v tables, u64 history
/// length and per entry: u64 epoch, two length-prefixed strings, four f64.
/// Tables are u64 rows, u64 cols, then f64 data. Little-endian throughout.
inline std::string serialize_checkpoint(const Checkpoint& c) {
  ByteWriter w;
  w.bytes("CDCK");
  w.u32(kCheckpointFormatVersion);
  w.u64(c.epoch);
  w.f64(c.policy.floor());
  w.table(c.policy.logits());
  const OptimizerConfig& o = c.optimizer.config;
  w.u32(o.kind == OptimizerKind::plain ? 0 : 1);
  for (double x : {o.learning_rate, o.beta1, o.beta2, o.eps, o.weight_decay}) w.f64(x);
  w.u64(c.optimizer.steps);
  w.table(c.optimizer.m);
  w.table(c.optimizer.v);
  w.u64(c.history.size());
  for (const EpochMetrics& m : c.history) {
    w.u64(m.epoch);
    w.str(m.method);
    w.str(m.phase);
    for (double x : {m.mean_return, m.mean_kl, m.cs, m.violation_rate}) w.f64(x);
  }
  return w.str();
}

inline Checkpoint deserialize_checkpoint(std::string data, std::string source = "<checkpoint>") {
  ByteReader r(std::move(data), std::move(source));
  r.expect("CDCK");
  if (const auto v = r.u32(); v != kCheckpointFormatVersion)
    throw IoError(fmt::format("unsupported checkpoint version {}", v));
  Checkpoint c;
  c.epoch = r.u64();
  const double floor = r.f64();
  c.policy = SoftmaxPolicy(r.table(), floor);
  OptimizerConfig o;
  const std::uint32_t kind = r.u32();
  if (kind > 1) throw IoError("unknown optimizer kind in checkpoint");
  o.kind = kind == 0 ? OptimizerKind::plain : OptimizerKind::adam;
  o.learning_rate = r.f64();
  o.beta1 = r.f64();
  o.beta2 = r.f64();
  o.eps = r.f64();
  o.weight_decay = r.f64();
  c.optimizer.config = o;
  c.optimizer.steps = r.u64();
  c.optimizer.m = r.table();
  c.optimizer.v = r.table();
  if (!c.optimizer.m.same_shape(c.policy.logits()) || !c.optimizer.v.same_shape(c.policy.logits()))
    throw IoError("checkpoint optimizer state does not match the policy shape");
  const std::uint64_t n = r.u64();
  if (n > (1u << 20)) throw IoError("checkpoint history too long");
  for (std::uint64_t i = 0; i < n; ++i) {
    EpochMetrics m;
    m.epoch = r.u64();
    m.method = r.str();
    m.phase = r.str();
    m.mean_return = r.f64();
    m.mean_kl = r.f64();
    m.cs = r.f64();
    m.violation_rate = r.f64();
    c.history.push_back(std::move(m));
  }
  r.expect_end();
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  write_file_atomic(path, serialize_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path), path.string());
}

/// Parameters went non-finite. Carries the last checkpoint whose
/// parameters were all finite.
struct TrainingDiverged : std::runtime_error {
  TrainingDiverged(const std::string& what, Checkpoint last) : std::runtime_error(what), last_finite(std::move(last)) {}
  Checkpoint last_finite;
};

struct TrainResult {
  SoftmaxPolicy policy;
  std::vector<Checkpoint> checkpoints;  // one per completed epoch
  std::vector<EpochMetrics> metrics;
};

using EpochCallback = std::function<void(const EpochMetrics&, const Checkpoint&)>;

/// Student the run starts from: logits N(0, init_scale^2) on the run's init stream.
inline SoftmaxPolicy initial_student(const TokenMdp& mdp, const TrainConfig& cfg) {
  Rng rng(derive_stream(cfg.seed, {kInitStreamTag}));
  return SoftmaxPolicy::random(mdp.num_states, mdp.vocab_size, cfg.init_scale, rng, cfg.student_floor);
}

/// Epochs of (sample groups, shape rewards, estimate gradient, ascend).
/// Batch b of epoch e samples from stream (seed, e, b), so resuming from a
/// checkpoint continues the exact sequence of the uninterrupted run.
inline TrainResult train(const Task& task, const TrainConfig& cfg, const EpochCallback& on_epoch = {},
                         const Checkpoint* resume = nullptr) {
  cfg.validate();
  const TokenMdp& mdp = task.mdp;
  const TeacherPolicy& teacher = task.teacher;
  TrainResult result;
  Checkpoint state;
  if (resume) {
    state = *resume;
    if (state.policy.num_states() != mdp.num_states || state.policy.vocab_size() != mdp.vocab_size)
      throw InputError("checkpoint policy does not match the task");
  } else {
    state.policy = initial_student(mdp, cfg);
    state.optimizer = AscentOptimizer(cfg.optimizer, mdp.num_states, mdp.vocab_size);
  }
  check_compatible(mdp, state.policy, teacher);
  const std::string label = objective_label(cfg.spec);

  for (std::uint64_t epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    const Checkpoint last_good = state;
    ConstrainedRewardSpec spec = cfg.spec;
    const bool warm = epoch < cfg.warm_start_epochs;
    if (warm) spec.mode = Method::kl_only;
    EpochMetrics m;
    m.epoch = epoch;
    m.method = label;
    m.phase = warm ? "warm-start" : "main";
    std::size_t episodes = 0;
    std::size_t violations = 0;
    for (std::size_t b = 0; b < cfg.batches_per_epoch; ++b) {
      const StateCosts costs = StateCosts::compute(state.policy, teacher, spec);
      const std::uint64_t stream = derive_stream(cfg.seed, {kTrainStreamTag, epoch, b});
      const auto groups = sample_groups(mdp, costs, cfg.groups_per_batch, cfg.rollouts_per_group, stream,
                                        (epoch * cfg.batches_per_epoch + b) * cfg.groups_per_batch, cfg.threads);
      const auto shaped = shape_groups(groups, spec);
      const GradientEstimate g = total_gradient(state.policy, teacher, shaped, spec, cfg.advantage, cfg.threads);
      for (const auto& group : groups)
        for (const Trajectory& t : group) {
          const double c = t.total_cost();
          m.mean_return += t.task_return();
          m.mean_kl += c;
          if (c > spec.d) ++violations;
          ++episodes;
        }
      state.optimizer.step(state.policy.logits(), g.table);
      if (!state.policy.logits().all_finite())
        throw TrainingDiverged(
            fmt::format("non-finite parameters at epoch {}, batch {} (method {})", epoch, b, label), last_good);
    }
    const double n = static_cast<double>(episodes);
    m.mean_return /= n;
    m.mean_kl /= n;
    m.violation_rate = static_cast<double>(violations) / n;
    m.cs = 1.0 - m.violation_rate;
    state.epoch = epoch + 1;
    state.history.push_back(m);
    result.metrics.push_back(m);
    result.checkpoints.push_back(state);
    if (on_epoch) on_epoch(m, state);
  }
  result.policy = state.policy;
  return result;
}

/// Runs kl-only updates for `epochs_kl` epochs and returns the student.
inline SoftmaxPolicy warm_start(const Task& task, const TrainConfig& cfg, std::size_t epochs_kl) {
  if (epochs_kl == 0) return initial_student(task.mdp, cfg);
  TrainConfig kl = cfg;
  kl.spec.mode = Method::kl_only;
  kl.epochs = epochs_kl;
  kl.warm_start_epochs = epochs_kl;
  return train(task, kl).policy;
}

}  // namespace cdistill
