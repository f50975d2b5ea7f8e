#include "dvn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <tuple>
#include <utility>

#include "kernels.hpp"

namespace dvn {

namespace {

std::string task_level(int task, int level) { return std::to_string(task) + "/" + std::to_string(level); }

void check_tasks(const std::vector<const data::Split*>& tasks, const BackboneSpec& spec, std::size_t first_task) {
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const int task = static_cast<int>(first_task + i);
    const TaskSpec& ts = spec.task(task);
    for (const data::Dataset* d : {&tasks[i]->train, &tasks[i]->test}) {
      if (d->classes != ts.classes) {
        throw ConfigError("task " + std::to_string(task) + " expects " + std::to_string(ts.classes) +
                          " classes, dataset '" + d->name + "' has " + std::to_string(d->classes));
      }
      if (d->sample_shape != ts.input_shape) {
        throw ConfigError("task " + std::to_string(task) + " expects samples of shape " +
                          shape_string(ts.input_shape) + ", dataset '" + d->name + "' has " +
                          shape_string(d->sample_shape));
      }
    }
    if (tasks[i]->train.size() == 0) throw ConfigError("task " + std::to_string(task) + " has no training samples");
  }
}

/// Records (weight_decay / 2) * sum of squared weights, or nothing when the
/// coefficient is zero.
std::optional<NodeId> record_decay(Tape& tape, ModelParams& params, double weight_decay) {
  if (weight_decay == 0.0) return std::nullopt;
  std::optional<NodeId> acc;
  params.for_each([&](const std::string& name, Tensor& t, TensorRole role) {
    if (role != TensorRole::kWeight) return;
    NodeId sq = tape.sum_squares(tape.parameter(t, name), name + "/sq");
    acc = acc ? tape.add(*acc, sq, "decay/acc") : sq;
  });
  return tape.scale(*acc, 0.5 * weight_decay, "decay");
}

struct PendingTerm {
  LossTerm term;
  NodeId loss;
  NodeId logits;
  const std::vector<int>* labels = nullptr;
};

/// Sums the recorded terms and decay into one terminal, runs the tape and
/// fills the breakdown.
LossBreakdown finish(Tape& tape, std::vector<PendingTerm>& pending, std::optional<NodeId> decay,
                     std::span<const Tensor> inputs, bool backward) {
  std::optional<NodeId> total;
  for (const PendingTerm& p : pending) total = total ? tape.add(*total, p.loss, "objective/acc") : p.loss;
  if (decay) total = total ? tape.add(*total, *decay, "objective") : *decay;
  if (!total) total = tape.constant(Tensor::scalar(0.0), "objective");
  // the terminal is the last recorded node
  if (*total != tape.terminal()) total = tape.scale(*total, 1.0, "objective");

  LossBreakdown out;
  out.total = tape.forward_eval(inputs).item();
  if (decay) out.decay = tape.value(*decay).item();
  for (PendingTerm& p : pending) {
    p.term.value = tape.value(p.loss).item();
    if (p.labels) {
      const std::vector<int> pred = argmax_rows(tape.value(p.logits));
      for (std::size_t i = 0; i < pred.size(); ++i) p.term.correct += pred[i] == (*p.labels)[i] ? 1 : 0;
    }
    out.terms.push_back(p.term);
  }
  if (backward) tape.backward_eval();
  return out;
}

bool keep(const ObjectiveOptions& options, int task, int level, TermKind kind) {
  return !options.include || options.include(task, level, kind);
}

LossBreakdown joint_impl(ModelParams& params, const BackboneSpec& spec, const Hierarchy& hierarchy,
                         std::span<const Batch> batches, double weight_decay, const ObjectiveOptions& options,
                         bool backward) {
  if (batches.size() != hierarchy.task_count()) {
    throw ConfigError("joint objective needs one minibatch per task: got " + std::to_string(batches.size()) +
                      " for " + std::to_string(hierarchy.task_count()) + " tasks");
  }
  Tape tape;
  std::vector<Tensor> inputs;
  std::vector<PendingTerm> pending;
  for (std::size_t t = 0; t < batches.size(); ++t) {
    const int task = static_cast<int>(t) + 1;
    const Batch& b = batches[t];
    if (b.inputs.dim(0) != b.labels.size()) throw ShapeError("task " + std::to_string(task) + ": inputs and labels differ in batch size");
    inputs.push_back(b.inputs);
    NodeId x = tape.input("batch/" + std::to_string(task));
    for (const LevelMask& mask : hierarchy.masks[t]) {
      if (!keep(options, task, mask.level, TermKind::kCrossEntropy)) continue;
      NodeId z = record_logits(tape, params, spec, mask, x, options.mode, options.update_stats);
      NodeId ce = tape.softmax_cross_entropy(z, b.labels, "ce/" + task_level(task, mask.level));
      pending.push_back({LossTerm{task, mask.level, TermKind::kCrossEntropy, 0.0, 0, b.labels.size()}, ce, z, &b.labels});
    }
  }
  const auto decay = options.include_decay ? record_decay(tape, params, weight_decay) : std::nullopt;
  return finish(tape, pending, decay, inputs, backward);
}

struct TermAccumulator {
  double loss = 0.0;
  std::size_t correct = 0;
  std::size_t count = 0;
};

using TermKey = std::tuple<int, int, TermKind>;

/// Shared epoch loop: sampling, SGD and metric collection. `step` gets the
/// per-task index lists of one minibatch and returns the breakdown after a
/// backward pass.
template <class Step>
TrainResult run_epochs(ModelParams params, const BackboneSpec& spec, const Hierarchy& hierarchy,
                       const std::vector<std::pair<int, const data::Dataset*>>& sampled,
                       const std::vector<std::pair<int, const data::Dataset*>>& tested, const TrainConfig& config,
                       Step&& step) {
  validate_train_config(config);
  TrainResult result{std::move(params), {}, {}};
  MomentumState state;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::vector<std::size_t>> perms;
    std::size_t steps = 0;
    for (const auto& [task, d] : sampled) {
      perms.push_back(epoch_permutation(d->size(), config.seed, epoch, task));
      steps = std::max(steps, (d->size() + config.batch_size - 1) / config.batch_size);
    }
    std::map<TermKey, TermAccumulator> acc;
    for (std::size_t s = 0; s < steps; ++s) {
      std::vector<std::vector<std::size_t>> indices;
      for (std::size_t t = 0; t < sampled.size(); ++t) {
        const std::size_t n = perms[t].size();
        const std::size_t b = std::min(config.batch_size, n);
        std::vector<std::size_t> idx(b);
        for (std::size_t i = 0; i < b; ++i) idx[i] = perms[t][(s * config.batch_size + i) % n];
        indices.push_back(std::move(idx));
      }
      result.params.zero_grad();
      const LossBreakdown bd = step(result.params, indices);
      result.step_losses.push_back(bd.total);
      sgd_step(result.params, state, config, epoch);
      for (const LossTerm& term : bd.terms) {
        TermAccumulator& a = acc[{term.task, term.level, term.kind}];
        a.loss += term.value * static_cast<double>(term.count);
        a.correct += term.correct;
        a.count += term.count;
      }
    }
    for (const auto& [key, a] : acc) {
      const auto& [task, level, kind] = key;
      if (kind != TermKind::kCrossEntropy) continue;
      result.metrics.push_back(EpochMetric{epoch + 1, task, level, "train", a.loss / static_cast<double>(a.count),
                                           static_cast<double>(a.correct) / static_cast<double>(a.count)});
    }
    for (const auto& [task, d] : tested) {
      for (std::size_t l = 1; l <= hierarchy.levels(task); ++l) {
        const int level = static_cast<int>(l);
        result.metrics.push_back(EpochMetric{epoch + 1, task, level, "test",
                                             evaluate_loss(result.params, spec, hierarchy, *d, task, level),
                                             evaluate(result.params, spec, hierarchy, *d, task, level)});
      }
    }
  }
  result.params.zero_grad();
  return result;
}

Hierarchy leading_tasks(const Hierarchy& hierarchy, std::size_t count) {
  return Hierarchy{{hierarchy.masks.begin(), hierarchy.masks.begin() + static_cast<std::ptrdiff_t>(count)}};
}

}  // namespace

double TrainConfig::rate_at(std::size_t epoch) const {
  if (schedule.empty()) throw ConfigError("learning-rate schedule is empty");
  double rate = schedule.front().rate;
  for (const RateStep& step : schedule) {
    if (step.epoch <= epoch) rate = step.rate;
  }
  return rate;
}

void validate_train_config(const TrainConfig& config) {
  if (config.schedule.empty()) throw ConfigError("learning-rate schedule is empty");
  for (std::size_t i = 0; i < config.schedule.size(); ++i) {
    if (!(config.schedule[i].rate > 0.0)) throw ConfigError("learning rates must be > 0");
    if (i > 0 && config.schedule[i].epoch <= config.schedule[i - 1].epoch) {
      throw ConfigError("learning-rate schedule epochs must increase");
    }
  }
  if (!(config.temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (config.momentum < 0.0 || config.momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (config.weight_decay < 0.0) throw ConfigError("weight decay must be >= 0");
  if (config.batch_size == 0) throw ConfigError("batch size must be >= 1");
}

void validate_bundle(const TaskBundle& bundle, const BackboneSpec& spec) {
  if (bundle.tasks.size() != spec.task_count()) {
    throw ConfigError("bundle has " + std::to_string(bundle.tasks.size()) + " tasks, backbone has " +
                      std::to_string(spec.task_count()));
  }
  std::vector<const data::Split*> tasks;
  for (const data::Split& s : bundle.tasks) tasks.push_back(&s);
  check_tasks(tasks, spec, 1);
}

double LossBreakdown::term_sum() const {
  double s = 0.0;
  for (const LossTerm& t : terms) s += t.value;
  return s;
}

const LossTerm& LossBreakdown::term(int task, int level, TermKind kind) const {
  for (const LossTerm& t : terms) {
    if (t.task == task && t.level == level && t.kind == kind) return t;
  }
  throw std::out_of_range("no loss term for task " + task_level(task, level));
}

LossBreakdown joint_loss(ModelParams& params, const BackboneSpec& spec, const Hierarchy& hierarchy,
                         std::span<const Batch> batches, double weight_decay, const ObjectiveOptions& options) {
  return joint_impl(params, spec, hierarchy, batches, weight_decay, options, false);
}

LossBreakdown joint_grad(ModelParams& params, const BackboneSpec& spec, const Hierarchy& hierarchy,
                         std::span<const Batch> batches, double weight_decay, const ObjectiveOptions& options) {
  return joint_impl(params, spec, hierarchy, batches, weight_decay, options, true);
}

LossBreakdown nested_loss(ModelParams& params, const BackboneSpec& spec, const Hierarchy& hierarchy, const Batch& batch,
                          double weight_decay, bool backward, const ObjectiveOptions& options) {
  if (hierarchy.task_count() != 1) throw ConfigError("the nested objective covers exactly one task");
  if (batch.inputs.dim(0) != batch.labels.size()) throw ShapeError("inputs and labels differ in batch size");
  Tape tape;
  NodeId x = tape.input("batch");
  std::vector<PendingTerm> pending;
  for (std::size_t l = 1; l <= hierarchy.levels(1); ++l) {
    const int level = static_cast<int>(l);
    if (!keep(options, 1, level, TermKind::kCrossEntropy)) continue;
    NodeId z = record_logits(tape, params, spec, hierarchy.at(1, level), x, options.mode, options.update_stats);
    NodeId ce = tape.softmax_cross_entropy(z, batch.labels, "ce/" + task_level(1, level));
    pending.push_back({LossTerm{1, level, TermKind::kCrossEntropy, 0.0, 0, batch.labels.size()}, ce, z, &batch.labels});
  }
  const auto decay = options.include_decay ? record_decay(tape, params, weight_decay) : std::nullopt;
  const Tensor inputs[] = {batch.inputs};
  return finish(tape, pending, decay, inputs, backward);
}

DistillTargets distill_targets(const ModelParams& snapshot, const BackboneSpec& spec, const Hierarchy& hierarchy,
                               int new_task, const Tensor& new_inputs, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (new_task < 1 || static_cast<std::size_t>(new_task) > hierarchy.task_count()) {
    throw ConfigError("new task " + std::to_string(new_task) + " is not in the hierarchy");
  }
  DistillTargets out;
  out.temperature = temperature;
  out.new_task = new_task;
  out.samples = new_inputs.dim(0);
  for (int j = 1; j < new_task; ++j) {
    std::vector<Tensor> per_level;
    for (const LevelMask& mask : hierarchy.masks[static_cast<std::size_t>(j) - 1]) {
      const Tensor z = predict_logits(snapshot, spec, mask, new_inputs);
      Tensor q(z.shape());
      const std::size_t c = z.dim(1);
      for (std::size_t i = 0; i < z.dim(0); ++i) {
        kernels::softmax_row(z.data().subspan(i * c, c), temperature, q.data().subspan(i * c, c));
      }
      per_level.push_back(std::move(q));
    }
    out.soft.push_back(std::move(per_level));
  }
  return out;
}

LossBreakdown sequential_loss(ModelParams& params, const BackboneSpec& spec, const Hierarchy& hierarchy,
                              const Batch& new_batch, std::span<const std::size_t> sample_indices,
                              const DistillTargets& targets, double weight_decay, bool backward,
                              const ObjectiveOptions& options) {
  const int k = targets.new_task;
  if (k < 1 || static_cast<std::size_t>(k) > hierarchy.task_count() ||
      targets.soft.size() != static_cast<std::size_t>(k) - 1) {
    throw ConfigError("distillation targets do not match the hierarchy");
  }
  const std::size_t b = new_batch.labels.size();
  if (new_batch.inputs.dim(0) != b || sample_indices.size() != b) {
    throw ShapeError("new-task batch, labels and sample indices differ in size");
  }
  for (std::size_t idx : sample_indices) {
    if (idx >= targets.samples) {
      throw ConfigError("no distillation target for sample " + std::to_string(idx) + " (targets cover " +
                        std::to_string(targets.samples) + ")");
    }
  }

  Tape tape;
  NodeId x = tape.input("batch");
  std::vector<PendingTerm> pending;
  for (int j = 1; j < k; ++j) {
    const auto& levels = hierarchy.masks[static_cast<std::size_t>(j) - 1];
    if (targets.soft[static_cast<std::size_t>(j) - 1].size() != levels.size()) {
      throw ConfigError("missing distillation targets for task " + std::to_string(j));
    }
    for (const LevelMask& mask : levels) {
      if (!keep(options, j, mask.level, TermKind::kDistillation)) continue;
      const Tensor& all = targets.soft[static_cast<std::size_t>(j) - 1][static_cast<std::size_t>(mask.level) - 1];
      const std::size_t c = all.dim(1);
      Tensor q({b, c});
      for (std::size_t i = 0; i < b; ++i) {
        std::copy_n(all.data().begin() + static_cast<std::ptrdiff_t>(sample_indices[i] * c), c,
                    q.data().begin() + static_cast<std::ptrdiff_t>(i * c));
      }
      NodeId z = record_logits(tape, params, spec, mask, x, options.mode, options.update_stats);
      NodeId d = tape.soft_target_cross_entropy(z, std::move(q), targets.temperature,
                                                "distill/" + task_level(j, mask.level));
      pending.push_back({LossTerm{j, mask.level, TermKind::kDistillation, 0.0, 0, b}, d, z, nullptr});
    }
  }
  for (const LevelMask& mask : hierarchy.masks[static_cast<std::size_t>(k) - 1]) {
    if (!keep(options, k, mask.level, TermKind::kCrossEntropy)) continue;
    NodeId z = record_logits(tape, params, spec, mask, x, options.mode, options.update_stats);
    NodeId ce = tape.softmax_cross_entropy(z, new_batch.labels, "ce/" + task_level(k, mask.level));
    pending.push_back({LossTerm{k, mask.level, TermKind::kCrossEntropy, 0.0, 0, b}, ce, z, &new_batch.labels});
  }
  const auto decay = options.include_decay ? record_decay(tape, params, weight_decay) : std::nullopt;
  const Tensor inputs[] = {new_batch.inputs};
  return finish(tape, pending, decay, inputs, backward);
}

void sgd_step(ModelParams& params, MomentumState& state, const TrainConfig& config, std::size_t epoch) {
  const double rate = config.rate_at(epoch);
  const double mu = config.momentum;
  std::size_t slot = 0;
  params.for_each([&](const std::string&, Tensor& t, TensorRole role) {
    if (!is_trainable(role)) return;
    if (state.velocity.size() <= slot) state.velocity.emplace_back(t.size(), 0.0);
    std::vector<double>& v = state.velocity[slot++];
    if (v.size() != t.size()) throw ShapeError("momentum state does not match parameter sizes");
    auto w = t.data();
    const std::span<const double> g = std::as_const(t).grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      v[i] = mu * v[i] + gi;
      w[i] -= config.nesterov ? rate * (gi + mu * v[i]) : rate * v[i];
    }
  });
}

double evaluate(const ModelParams& params, const BackboneSpec& spec, const Hierarchy& hierarchy,
                const data::Dataset& dataset, int task, int level) {
  if (dataset.size() == 0) throw ConfigError("cannot evaluate on an empty dataset");
  const Tensor z = predict_logits(params, spec, hierarchy.at(task, level), dataset.all_features());
  const std::vector<int> pred = argmax_rows(z);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == dataset.labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

double evaluate_loss(const ModelParams& params, const BackboneSpec& spec, const Hierarchy& hierarchy,
                     const data::Dataset& dataset, int task, int level) {
  if (dataset.size() == 0) throw ConfigError("cannot evaluate on an empty dataset");
  const Tensor z = predict_logits(params, spec, hierarchy.at(task, level), dataset.all_features());
  const std::size_t c = z.dim(1);
  std::vector<double> p(c);
  double loss = 0.0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const double lse = kernels::softmax_row(z.data().subspan(i * c, c), 1.0, p);
    loss += lse - z[i * c + static_cast<std::size_t>(dataset.labels[i])];
  }
  return loss / static_cast<double>(dataset.size());
}

std::vector<std::size_t> epoch_permutation(std::size_t samples, std::uint64_t seed, std::size_t epoch, int task) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(task)};
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> perm(samples);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  // Fisher-Yates with an explicit draw so the order does not depend on the
  // standard library's shuffle implementation.
  for (std::size_t i = samples; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

TrainResult train_joint(const TaskBundle& bundle, const BackboneSpec& spec, const Hierarchy& hierarchy,
                        ModelParams initial, const TrainConfig& config) {
  validate_bundle(bundle, spec);
  if (hierarchy.task_count() != bundle.tasks.size()) throw ConfigError("hierarchy and bundle differ in task count");
  std::vector<std::pair<int, const data::Dataset*>> sampled, tested;
  for (std::size_t t = 0; t < bundle.tasks.size(); ++t) {
    sampled.emplace_back(static_cast<int>(t) + 1, &bundle.tasks[t].train);
    tested.emplace_back(static_cast<int>(t) + 1, &bundle.tasks[t].test);
  }
  return run_epochs(std::move(initial), spec, hierarchy, sampled, tested, config,
                    [&](ModelParams& params, const std::vector<std::vector<std::size_t>>& indices) {
                      std::vector<Batch> batches;
                      for (std::size_t t = 0; t < indices.size(); ++t) {
                        const data::Dataset& d = *sampled[t].second;
                        batches.push_back(Batch{d.batch(indices[t]), d.batch_labels(indices[t])});
                      }
                      return joint_grad(params, spec, hierarchy, batches, config.weight_decay);
                    });
}

TrainResult train_single(const data::Split& task, const BackboneSpec& spec, const Hierarchy& hierarchy,
                         ModelParams initial, const TrainConfig& config) {
  if (spec.task_count() != 1 || hierarchy.task_count() != 1) throw ConfigError("single-task training needs exactly one task");
  check_tasks({&task}, spec, 1);
  const std::vector<std::pair<int, const data::Dataset*>> sampled{{1, &task.train}}, tested{{1, &task.test}};
  return run_epochs(std::move(initial), spec, hierarchy, sampled, tested, config,
                    [&](ModelParams& params, const std::vector<std::vector<std::size_t>>& indices) {
                      const Batch batch{task.train.batch(indices[0]), task.train.batch_labels(indices[0])};
                      return nested_loss(params, spec, hierarchy, batch, config.weight_decay, true);
                    });
}

SequentialResult train_sequential(const TaskBundle& bundle, const BackboneSpec& spec, const Hierarchy& hierarchy,
                                  ModelParams initial, const SequentialOptions& options) {
  validate_bundle(bundle, spec);
  const std::size_t k = bundle.tasks.size();
  if (k < 2) throw ConfigError("sequential training needs at least two tasks");
  if (hierarchy.task_count() != k) throw ConfigError("hierarchy and bundle differ in task count");
  validate_train_config(options.new_phase);
  const int new_task = static_cast<int>(k);
  for (std::size_t t = 0; t + 1 < k; ++t) {
    if (spec.task(static_cast<int>(t) + 1).input_shape != spec.task(new_task).input_shape) {
      throw ConfigError("distillation feeds new-task inputs to old tasks; input shapes must match");
    }
  }

  SequentialResult out;
  const Hierarchy old_hierarchy = leading_tasks(hierarchy, k - 1);
  {
    std::vector<std::pair<int, const data::Dataset*>> sampled, tested;
    for (std::size_t t = 0; t + 1 < k; ++t) {
      sampled.emplace_back(static_cast<int>(t) + 1, &bundle.tasks[t].train);
      tested.emplace_back(static_cast<int>(t) + 1, &bundle.tasks[t].test);
    }
    out.old_phase = run_epochs(std::move(initial), spec, old_hierarchy, sampled, tested, options.old_phase,
                               [&](ModelParams& params, const std::vector<std::vector<std::size_t>>& indices) {
                                 std::vector<Batch> batches;
                                 for (std::size_t t = 0; t < indices.size(); ++t) {
                                   const data::Dataset& d = *sampled[t].second;
                                   batches.push_back(Batch{d.batch(indices[t]), d.batch_labels(indices[t])});
                                 }
                                 return joint_grad(params, spec, old_hierarchy, batches,
                                                   options.old_phase.weight_decay);
                               });
  }

  out.snapshot = out.old_phase.params;
  for (std::size_t t = 0; t + 1 < k; ++t) {
    std::vector<double> acc;
    for (std::size_t l = 1; l <= hierarchy.levels(static_cast<int>(t) + 1); ++l) {
      acc.push_back(evaluate(out.snapshot, spec, hierarchy, bundle.tasks[t].test, static_cast<int>(t) + 1,
                             static_cast<int>(l)));
    }
    out.snapshot_accuracy.push_back(std::move(acc));
  }

  const data::Dataset& fresh = bundle.tasks[k - 1].train;
  const DistillTargets targets =
      distill_targets(out.snapshot, spec, hierarchy, new_task, fresh.all_features(), options.new_phase.temperature);
  ObjectiveOptions objective;
  if (!options.distill) {
    objective.include = [](int, int, TermKind kind) { return kind == TermKind::kCrossEntropy; };
  }
  std::vector<std::pair<int, const data::Dataset*>> tested;
  for (std::size_t t = 0; t < k; ++t) tested.emplace_back(static_cast<int>(t) + 1, &bundle.tasks[t].test);
  out.new_phase = run_epochs(out.snapshot, spec, hierarchy, {{new_task, &fresh}}, tested, options.new_phase,
                             [&](ModelParams& params, const std::vector<std::vector<std::size_t>>& indices) {
                               const Batch batch{fresh.batch(indices[0]), fresh.batch_labels(indices[0])};
                               return sequential_loss(params, spec, hierarchy, batch, indices[0], targets,
                                                      options.new_phase.weight_decay, true, objective);
                             });
  return out;
}

}  // namespace dvn
