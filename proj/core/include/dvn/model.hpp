#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dvn/backbone.hpp"
#include "dvn/partition.hpp"
#include "dvn/tape.hpp"
#include "dvn/tensor.hpp"

namespace dvn {

struct LayerParams {
  Tensor weight;
  Tensor bias;
};

/// Normalization state owned by one (task, level, layer). Sized to the
/// layer's masked output channels at that level.
struct NormParams {
  Tensor scale;
  Tensor shift;
  Tensor running_mean;
  Tensor running_var;
};

/// `layer` 0 is the task's input layer, r >= 1 is body layer r.
struct NormKey {
  int task = 0;
  int level = 0;
  std::size_t layer = 0;
  auto operator<=>(const NormKey&) const = default;
};

enum class TensorRole { kWeight, kBias, kNormAffine, kNormStatistic };

inline bool is_trainable(TensorRole role) { return role != TensorRole::kNormStatistic; }

/// Every tensor of the physical network.
struct ModelParams {
  std::vector<LayerParams> inputs;              // per task
  std::vector<LayerParams> body;                // per body layer, full (unmasked) shape
  std::vector<std::vector<LayerParams>> heads;  // [task-1][level-1]
  std::map<NormKey, NormParams> norms;

  using Visitor = std::function<void(const std::string& name, Tensor& tensor, TensorRole role)>;
  using ConstVisitor = std::function<void(const std::string& name, const Tensor& tensor, TensorRole role)>;

  /// Visits all tensors in a fixed order (inputs, body, heads, norms).
  void for_each(const Visitor& f);
  void for_each(const ConstVisitor& f) const;

  void zero_grad();
  const NormParams& norm(int task, int level, std::size_t layer) const;
};

/// Xavier-uniform weights (fan-in/fan-out from the full layer shape), zero
/// biases, unit norm scale and zero shift, running mean 0 and variance 1.
/// Deterministic per seed.
ModelParams init_params(const BackboneSpec& spec, const Hierarchy& hierarchy, std::uint64_t seed);

/// Xavier-uniform bound sqrt(6 / (fan_in + fan_out)) for a weight shape.
double xavier_bound(const Shape& weight_shape);

/// Records input layer -> masked body -> (mean pool) -> head for the mask's
/// (task, level). Only the channel blocks named by the mask are gathered from
/// the body weights, so parameters outside the mask never enter the graph.
/// Train mode normalizes with batch statistics and, when `update_stats` is
/// set, blends them into the running statistics.
NodeId record_logits(Tape& tape, ModelParams& params, const BackboneSpec& spec, const LevelMask& mask, NodeId batch,
                     NormMode mode, bool update_stats = true);

/// Eval-mode recording against read-only parameters; no gradients flow.
NodeId record_eval_logits(Tape& tape, const ModelParams& params, const BackboneSpec& spec, const LevelMask& mask,
                          NodeId batch);

/// Logits of shape (batch, classes) for the mask's (task, level).
Tensor forward_logits(ModelParams& params, const BackboneSpec& spec, const LevelMask& mask, const Tensor& batch,
                      NormMode mode);

/// Eval-mode forward; deterministic and free of side effects.
Tensor predict_logits(const ModelParams& params, const BackboneSpec& spec, const LevelMask& mask, const Tensor& batch);

/// Gradients of all trainable tensors, concatenated in visiting order
/// (zeros for tensors that have no gradient buffer yet).
std::vector<double> flat_grads(const ModelParams& params);
/// Values of all trainable tensors, concatenated in visiting order.
std::vector<double> flat_values(const ModelParams& params);

/// Row-wise argmax of a (batch, classes) tensor.
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace dvn
