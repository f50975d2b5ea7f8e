#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "dvn/tensor.hpp"

namespace dvn {

/// Raised for structurally invalid specs, partitions, orders and run configs.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class LayerKind { kDense, kConv2d };

const char* layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::kDense;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  // conv only; dense layers keep the 1/1/1 defaults
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  bool norm = false;
  bool relu = true;

  std::size_t kernel_area() const { return kernel_h * kernel_w; }
  /// (kernel_h, kernel_w, in, out) for conv, (in, out) for dense.
  Shape weight_shape() const;
  std::size_t weight_count() const { return shape_size(weight_shape()); }
  /// Output shape of one sample, given the per-sample input shape.
  Shape output_shape(const Shape& sample_shape) const;
};

struct TaskSpec {
  std::string name;
  std::size_t classes = 0;
  /// Per-sample shape: (features) for dense inputs, (height, width, channels) for images.
  Shape input_shape;
};

/// Classifier on top of one (task, level): dense in_channels -> classes.
struct HeadSpec {
  std::size_t in_channels = 0;
  std::size_t classes = 0;
};

/// The physical network: task-specific input layers feeding a shared,
/// partitioned body, with one head per (task, level).
///
/// Tasks are addressed by 1-based index into `tasks`; `heads[j-1][l-1]` is the
/// head for task j at level l. Heads are derived from a hierarchy and are
/// empty until attach_heads() has run.
struct BackboneSpec {
  std::vector<TaskSpec> tasks;
  std::vector<LayerSpec> input_layers;
  std::vector<LayerSpec> body;
  std::vector<std::vector<HeadSpec>> heads;

  std::size_t task_count() const { return tasks.size(); }
  const TaskSpec& task(int j) const;
  bool is_image() const;
  /// Width of the input layers' output, i.e. the body's input width.
  std::size_t stem_width() const;
};

/// Throws ConfigError on the first violated structural invariant.
void validate_spec(const BackboneSpec& spec);

/// Dense MLP: per task dense in->width input layer, then `depth` dense
/// width->width body layers, relu everywhere, no normalization.
BackboneSpec mlp_preset(std::vector<TaskSpec> tasks, std::size_t width = 24, std::size_t depth = 2);

/// Conv net: per task 3x3 conv input layer (stride picked so every task lands
/// on the same spatial size), then `depth` 3x3 conv body layers of `channels`
/// channels, each with norm and relu.
BackboneSpec conv_preset(std::vector<TaskSpec> tasks, std::size_t channels = 16, std::size_t depth = 4);

}  // namespace dvn
