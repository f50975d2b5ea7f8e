#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dvn/tensor.hpp"

namespace dvn {

/// Handle to a node recorded on a Tape. Only meaningful for the tape that issued it.
struct NodeId {
  std::size_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

/// Index list for one axis of a gather; nullopt keeps the whole axis.
using AxisSelection = std::optional<std::vector<std::size_t>>;

struct Conv2dOptions {
  std::size_t stride = 1;
  /// Symmetric zero padding. nullopt means "same" padding of kernel/2.
  std::optional<std::size_t> padding;
};

enum class NormMode { kTrain, kEval };

/// Running statistics of a channel_norm. Eval mode reads `running_*`; train
/// mode blends batch statistics into `update_*` when they are set. All
/// tensors must outlive the tape and have one entry per normalized channel.
struct NormStats {
  const Tensor* running_mean = nullptr;
  const Tensor* running_var = nullptr;
  Tensor* update_mean = nullptr;
  Tensor* update_var = nullptr;
  double momentum = 0.1;
};

inline constexpr double kNormEpsilon = 1e-5;

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A recorded list of primitive operations, evaluated forward and then
/// differentiated in reverse.
///
/// Recording only captures structure; no arithmetic happens until
/// forward_eval. Nodes are appended in order, so every node's inputs precede
/// it. The last recorded node is the terminal. Parameter nodes refer to
/// tensors owned elsewhere: backward_eval adds into their gradient buffers,
/// so gradients accumulate across calls until the owner zeroes them.
///
/// Layout conventions: dense activations are (batch, channels); image
/// activations are (batch, height, width, channels); conv kernels are
/// (kernel_h, kernel_w, in_channels, out_channels).
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  NodeId input(std::string label = {});
  NodeId constant(Tensor value, std::string label = {});
  NodeId parameter(Tensor& param, std::string label = {});
  /// Read-only parameter: participates in forward but never receives gradient.
  NodeId frozen(const Tensor& param, std::string label = {});

  NodeId gather(NodeId x, std::vector<AxisSelection> selection, std::string label = {});
  NodeId matmul(NodeId a, NodeId b, std::string label = {});
  NodeId conv2d(NodeId x, NodeId kernel, Conv2dOptions options = {}, std::string label = {});
  NodeId bias_add(NodeId x, NodeId bias, std::string label = {});
  NodeId relu(NodeId x, std::string label = {});
  NodeId mean_pool(NodeId x, std::string label = {});
  NodeId channel_norm(NodeId x, NodeId scale, NodeId shift, NormStats stats, NormMode mode,
                      std::string label = {});
  /// Mean over the batch of -log softmax(logits)[label].
  NodeId softmax_cross_entropy(NodeId logits, std::vector<int> labels, std::string label = {});
  /// Mean over the batch of -sum_c q_c log softmax(logits / T)_c.
  NodeId soft_target_cross_entropy(NodeId logits, Tensor targets, double temperature,
                                   std::string label = {});
  NodeId sum_squares(NodeId x, std::string label = {});
  NodeId sum(NodeId x, std::string label = {});
  NodeId add(NodeId a, NodeId b, std::string label = {});
  NodeId scale(NodeId x, double factor, std::string label = {});

  /// Evaluates every node in order, binding `inputs` to input() placeholders
  /// in recording order. Returns the terminal value.
  const Tensor& forward_eval(std::span<const Tensor> inputs = {});
  const Tensor& forward_eval(std::initializer_list<Tensor> inputs) {
    return forward_eval(std::span<const Tensor>(inputs.begin(), inputs.size()));
  }

  /// Reverse sweep from the scalar terminal. Parameter gradients accumulate.
  void backward_eval();

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  NodeId terminal() const;
  const Tensor& value(NodeId id) const;
  /// Gradient of the terminal with respect to a node; empty when the node
  /// does not depend on any parameter.
  std::span<const double> grad(NodeId id) const;
  std::string describe(NodeId id) const;

 private:
  enum class Op {
    kInput,
    kConstant,
    kParameter,
    kGather,
    kMatMul,
    kConv2d,
    kBiasAdd,
    kRelu,
    kMeanPool,
    kChannelNorm,
    kSoftmaxXent,
    kSoftTargetXent,
    kSumSquares,
    kSum,
    kAdd,
    kScale,
  };

  struct Node {
    Op op;
    std::vector<std::size_t> inputs;
    std::string label;
    bool requires_grad = false;

    Tensor value;
    std::vector<double> grad;

    std::size_t input_slot = 0;
    const Tensor* param = nullptr;
    Tensor* grad_target = nullptr;
    Tensor constant;
    std::vector<AxisSelection> selection;
    std::vector<int> labels;
    Conv2dOptions conv;
    double factor = 1.0;
    NormStats stats;
    NormMode mode = NormMode::kEval;

    std::vector<double> cache;   // im2col columns, probabilities, normalized inputs
    std::vector<double> cache2;  // per-channel inverse std
  };

  static const char* op_name(Op op);
  NodeId push(Node node);
  const Node& at(NodeId id) const;
  const Tensor& node_value(std::size_t index) const;
  [[noreturn]] void fail(std::size_t index, const std::string& what) const;

  void forward_node(std::size_t index, std::span<const Tensor> inputs);
  void backward_node(std::size_t index);
  std::vector<double>* grad_sink(std::size_t index);

  std::vector<Node> nodes_;
  std::size_t input_count_ = 0;
  bool evaluated_ = false;
};

}  // namespace dvn
