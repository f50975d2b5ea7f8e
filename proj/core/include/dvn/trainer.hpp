#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dvn/backbone.hpp"
#include "dvn/data.hpp"
#include "dvn/model.hpp"
#include "dvn/partition.hpp"

namespace dvn {

struct RateStep {
  std::size_t epoch = 0;
  double rate = 0.0;
};

struct TrainConfig {
  /// Piecewise-constant learning rate: the last step whose epoch <= current epoch applies.
  std::vector<RateStep> schedule{{0, 0.05}};
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 0.0;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  double temperature = 2.0;
  std::uint64_t seed = 1;

  double rate_at(std::size_t epoch) const;
};

/// Throws ConfigError for non-positive rates, temperature or batch size.
void validate_train_config(const TrainConfig& config);

/// Per-task train/test data, task j at index j-1.
struct TaskBundle {
  std::vector<data::Split> tasks;
};

/// Throws ConfigError when tasks, classes or sample shapes disagree with the model spec.
void validate_bundle(const TaskBundle& bundle, const BackboneSpec& spec);

struct Batch {
  Tensor inputs;
  std::vector<int> labels;
};

enum class TermKind { kCrossEntropy, kDistillation };

struct LossTerm {
  int task = 0;
  int level = 0;
  TermKind kind = TermKind::kCrossEntropy;
  double value = 0.0;
  std::size_t correct = 0;  // argmax hits of this term's logits (cross-entropy terms only)
  std::size_t count = 0;
};

struct LossBreakdown {
  double total = 0.0;
  double decay = 0.0;
  std::vector<LossTerm> terms;

  double term_sum() const;
  const LossTerm& term(int task, int level, TermKind kind = TermKind::kCrossEntropy) const;
};

struct ObjectiveOptions {
  NormMode mode = NormMode::kTrain;
  bool update_stats = true;
  /// Terms to keep; empty keeps all.
  std::function<bool(int task, int level, TermKind kind)> include;
  bool include_decay = true;
};

/// Sum over every task j and level l of CE(logits at h^{l,j}, labels of task
/// j), plus (weight_decay / 2) * ||weights||^2 once. `batches[j-1]` feeds task j.
LossBreakdown joint_loss(ModelParams& params, const BackboneSpec& spec, const Hierarchy& hierarchy,
                         std::span<const Batch> batches, double weight_decay, const ObjectiveOptions& options = {});

/// Same objective, followed by one backward pass. Gradients accumulate into
/// the parameter tensors; zero them first for a fresh gradient.
LossBreakdown joint_grad(ModelParams& params, const BackboneSpec& spec, const Hierarchy& hierarchy,
                         std::span<const Batch> batches, double weight_decay, const ObjectiveOptions& options = {});

/// Single-task nested objective: sum over the task's levels of CE plus decay.
LossBreakdown nested_loss(ModelParams& params, const BackboneSpec& spec, const Hierarchy& hierarchy, const Batch& batch,
                          double weight_decay, bool backward, const ObjectiveOptions& options = {});

/// Softened outputs of the old network on the new task's inputs.
/// `soft[j-1][l-1]` holds one row per new-task sample for old task j at level l.
struct DistillTargets {
  double temperature = 2.0;
  int new_task = 0;
  std::size_t samples = 0;
  std::vector<std::vector<Tensor>> soft;
};

/// q = softmax(z_old / T) for every old task j < new_task and every level,
/// where z_old are the snapshot's eval-mode logits at h^{l,j} on `new_inputs`.
DistillTargets distill_targets(const ModelParams& snapshot, const BackboneSpec& spec, const Hierarchy& hierarchy,
                               int new_task, const Tensor& new_inputs, double temperature);

/// Distillation terms for every old task and level (soft-target CE at the
/// targets' temperature, rows picked by `sample_indices`) plus CE for the new
/// task at every level, plus decay. Runs backward when `backward` is set.
LossBreakdown sequential_loss(ModelParams& params, const BackboneSpec& spec, const Hierarchy& hierarchy,
                              const Batch& new_batch, std::span<const std::size_t> sample_indices,
                              const DistillTargets& targets, double weight_decay, bool backward,
                              const ObjectiveOptions& options = {});

/// Per-tensor velocity for SGD with (Nesterov) momentum.
struct MomentumState {
  std::vector<std::vector<double>> velocity;
};

/// v <- mu v + g; w <- w - rate (g + mu v) with Nesterov, w <- w - rate v
/// without. Gradients already carry the weight-decay term from the objective.
void sgd_step(ModelParams& params, MomentumState& state, const TrainConfig& config, std::size_t epoch);

struct EpochMetric {
  std::size_t epoch = 0;
  int task = 0;
  int level = 0;
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochMetric> metrics;
  std::vector<double> step_losses;
};

/// Fraction of `dataset` whose eval-mode argmax at (task, level) equals the label.
double evaluate(const ModelParams& params, const BackboneSpec& spec, const Hierarchy& hierarchy,
                const data::Dataset& dataset, int task, int level);

/// Mean eval-mode cross entropy on `dataset` at (task, level).
double evaluate_loss(const ModelParams& params, const BackboneSpec& spec, const Hierarchy& hierarchy,
                     const data::Dataset& dataset, int task, int level);

/// Sample order of one task's training set for one epoch.
std::vector<std::size_t> epoch_permutation(std::size_t samples, std::uint64_t seed, std::size_t epoch, int task);

/// Joint multi-task training: every step draws one minibatch per task and
/// updates once on the summed objective. Records train and test metrics for
/// every (task, level) each epoch.
TrainResult train_joint(const TaskBundle& bundle, const BackboneSpec& spec, const Hierarchy& hierarchy,
                        ModelParams initial, const TrainConfig& config);

/// Single-task nested training (the k = 1 special case of joint training).
TrainResult train_single(const data::Split& task, const BackboneSpec& spec, const Hierarchy& hierarchy,
                         ModelParams initial, const TrainConfig& config);

struct SequentialOptions {
  TrainConfig old_phase;
  TrainConfig new_phase;
  /// false drops the distillation terms in phase 2 (forgetting ablation).
  bool distill = true;
};

struct SequentialResult {
  TrainResult old_phase;
  ModelParams snapshot;
  /// Test accuracy of every old task and level at the snapshot, [j-1][l-1].
  std::vector<std::vector<double>> snapshot_accuracy;
  TrainResult new_phase;
};

/// Phase 1 trains tasks 1..k-1 jointly; a snapshot is taken; phase 2 trains
/// task k with distillation towards the snapshot's outputs on task k's inputs.
SequentialResult train_sequential(const TaskBundle& bundle, const BackboneSpec& spec, const Hierarchy& hierarchy,
                                  ModelParams initial, const SequentialOptions& options);

}  // namespace dvn
