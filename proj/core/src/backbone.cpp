#include "dvn/backbone.hpp"

#include <algorithm>

namespace dvn {

const char* layer_kind_name(LayerKind kind) {
  return kind == LayerKind::kDense ? "dense" : "conv2d";
}

LayerKind parse_layer_kind(const std::string& name) {
  if (name == "dense") return LayerKind::kDense;
  if (name == "conv2d") return LayerKind::kConv2d;
  throw ConfigError("unknown layer kind '" + name + "'");
}

Shape LayerSpec::weight_shape() const {
  if (kind == LayerKind::kDense) return {in_channels, out_channels};
  return {kernel_h, kernel_w, in_channels, out_channels};
}

Shape LayerSpec::output_shape(const Shape& sample_shape) const {
  if (kind == LayerKind::kDense) {
    if (sample_shape.size() != 1 || sample_shape[0] != in_channels) {
      throw ConfigError("dense layer expects (" + std::to_string(in_channels) + ") input, got " +
                        shape_string(sample_shape));
    }
    return {out_channels};
  }
  if (sample_shape.size() != 3 || sample_shape[2] != in_channels) {
    throw ConfigError("conv2d layer expects (h, w, " + std::to_string(in_channels) + ") input, got " +
                      shape_string(sample_shape));
  }
  const std::size_t pad_h = kernel_h / 2, pad_w = kernel_w / 2;
  if (sample_shape[0] + 2 * pad_h < kernel_h || sample_shape[1] + 2 * pad_w < kernel_w) {
    throw ConfigError("conv2d kernel larger than input " + shape_string(sample_shape));
  }
  return {(sample_shape[0] + 2 * pad_h - kernel_h) / stride + 1, (sample_shape[1] + 2 * pad_w - kernel_w) / stride + 1,
          out_channels};
}

const TaskSpec& BackboneSpec::task(int j) const {
  if (j < 1 || static_cast<std::size_t>(j) > tasks.size()) {
    throw ConfigError("unknown task " + std::to_string(j));
  }
  return tasks[static_cast<std::size_t>(j) - 1];
}

bool BackboneSpec::is_image() const {
  return !input_layers.empty() && input_layers.front().kind == LayerKind::kConv2d;
}

std::size_t BackboneSpec::stem_width() const {
  if (input_layers.empty()) throw ConfigError("backbone has no input layers");
  return input_layers.front().out_channels;
}

void validate_spec(const BackboneSpec& spec) {
  if (spec.tasks.empty()) throw ConfigError("backbone needs at least one task");
  if (spec.body.empty()) throw ConfigError("backbone body needs at least one layer");
  if (spec.input_layers.size() != spec.tasks.size()) {
    throw ConfigError("every task needs exactly one input layer (" + std::to_string(spec.tasks.size()) +
                      " tasks, " + std::to_string(spec.input_layers.size()) + " input layers)");
  }
  auto check_layer = [](const LayerSpec& l, const std::string& where) {
    if (l.in_channels == 0 || l.out_channels == 0) throw ConfigError(where + ": channel counts must be positive");
    if (l.stride == 0 || l.kernel_h == 0 || l.kernel_w == 0) {
      throw ConfigError(where + ": kernel and stride must be positive");
    }
    if (l.kind == LayerKind::kDense && (l.kernel_h != 1 || l.kernel_w != 1 || l.stride != 1)) {
      throw ConfigError(where + ": dense layers take no kernel or stride");
    }
  };

  const LayerKind kind = spec.input_layers.front().kind;
  Shape stem_out;
  for (std::size_t t = 0; t < spec.tasks.size(); ++t) {
    const TaskSpec& task = spec.tasks[t];
    const LayerSpec& in = spec.input_layers[t];
    const std::string where = "input layer of task " + std::to_string(t + 1);
    check_layer(in, where);
    if (task.classes < 1) throw ConfigError("task " + std::to_string(t + 1) + " needs at least one class");
    if (in.kind != kind) throw ConfigError(where + ": all input layers must be of the same kind");
    const Shape out = in.output_shape(task.input_shape);
    if (t == 0) {
      stem_out = out;
    } else if (out != stem_out) {
      throw ConfigError(where + ": output " + shape_string(out) + " differs from task 1's " + shape_string(stem_out));
    }
  }

  Shape cur = stem_out;
  for (std::size_t r = 0; r < spec.body.size(); ++r) {
    const LayerSpec& l = spec.body[r];
    const std::string where = "body layer " + std::to_string(r + 1);
    check_layer(l, where);
    if (l.kind != kind) throw ConfigError(where + ": body and input layers must be of the same kind");
    const std::size_t prev = r == 0 ? spec.stem_width() : spec.body[r - 1].out_channels;
    if (l.in_channels != prev) {
      throw ConfigError(where + ": expects " + std::to_string(l.in_channels) + " input channels, previous layer has " +
                        std::to_string(prev));
    }
    cur = l.output_shape(cur);
  }

  if (!spec.heads.empty()) {
    if (spec.heads.size() != spec.tasks.size()) throw ConfigError("heads must be listed for every task");
    const std::size_t levels = spec.heads.front().size();
    for (std::size_t t = 0; t < spec.heads.size(); ++t) {
      if (spec.heads[t].size() != levels) throw ConfigError("every task must have the same number of heads");
      for (const HeadSpec& h : spec.heads[t]) {
        if (h.classes != spec.tasks[t].classes) {
          throw ConfigError("head of task " + std::to_string(t + 1) + " has the wrong class count");
        }
        if (h.in_channels == 0 || h.in_channels > spec.body.back().out_channels) {
          throw ConfigError("head of task " + std::to_string(t + 1) + " has an invalid width");
        }
      }
    }
  }
}

BackboneSpec mlp_preset(std::vector<TaskSpec> tasks, std::size_t width, std::size_t depth) {
  BackboneSpec spec;
  for (const TaskSpec& t : tasks) {
    if (t.input_shape.size() != 1) throw ConfigError("mlp preset needs flat feature inputs");
    spec.input_layers.push_back(LayerSpec{.kind = LayerKind::kDense, .in_channels = t.input_shape[0],
                                          .out_channels = width});
  }
  spec.tasks = std::move(tasks);
  for (std::size_t r = 0; r < depth; ++r) {
    spec.body.push_back(LayerSpec{.kind = LayerKind::kDense, .in_channels = width, .out_channels = width});
  }
  validate_spec(spec);
  return spec;
}

BackboneSpec conv_preset(std::vector<TaskSpec> tasks, std::size_t channels, std::size_t depth) {
  BackboneSpec spec;
  if (tasks.empty()) throw ConfigError("conv preset needs at least one task");
  std::size_t smallest = tasks.front().input_shape.at(0);
  for (const TaskSpec& t : tasks) {
    if (t.input_shape.size() != 3) throw ConfigError("conv preset needs (h, w, c) inputs");
    smallest = std::min(smallest, t.input_shape[0]);
  }
  for (const TaskSpec& t : tasks) {
    if (t.input_shape[0] % smallest != 0 || t.input_shape[0] != t.input_shape[1]) {
      throw ConfigError("conv preset needs square inputs whose sizes are multiples of the smallest");
    }
    spec.input_layers.push_back(LayerSpec{.kind = LayerKind::kConv2d,
                                          .in_channels = t.input_shape[2],
                                          .out_channels = channels,
                                          .kernel_h = 3,
                                          .kernel_w = 3,
                                          .stride = t.input_shape[0] / smallest,
                                          .norm = true});
  }
  spec.tasks = std::move(tasks);
  for (std::size_t r = 0; r < depth; ++r) {
    spec.body.push_back(LayerSpec{.kind = LayerKind::kConv2d,
                                  .in_channels = channels,
                                  .out_channels = channels,
                                  .kernel_h = 3,
                                  .kernel_w = 3,
                                  .norm = true});
  }
  validate_spec(spec);
  return spec;
}

}  // namespace dvn
