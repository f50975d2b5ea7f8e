#include "dvn/model.hpp"

#include <cmath>
#include <random>
#include <type_traits>

namespace dvn {

namespace {

std::string layer_name(const std::string& prefix, std::size_t index) {
  return prefix + "/" + std::to_string(index);
}

template <class Params, class F>
void visit_all(Params& p, F&& f) {
  for (std::size_t t = 0; t < p.inputs.size(); ++t) {
    const std::string n = layer_name("input", t + 1);
    f(n + "/weight", p.inputs[t].weight, TensorRole::kWeight);
    f(n + "/bias", p.inputs[t].bias, TensorRole::kBias);
  }
  for (std::size_t r = 0; r < p.body.size(); ++r) {
    const std::string n = layer_name("body", r + 1);
    f(n + "/weight", p.body[r].weight, TensorRole::kWeight);
    f(n + "/bias", p.body[r].bias, TensorRole::kBias);
  }
  for (std::size_t t = 0; t < p.heads.size(); ++t) {
    for (std::size_t l = 0; l < p.heads[t].size(); ++l) {
      const std::string n = layer_name(layer_name("head", t + 1), l + 1);
      f(n + "/weight", p.heads[t][l].weight, TensorRole::kWeight);
      f(n + "/bias", p.heads[t][l].bias, TensorRole::kBias);
    }
  }
  for (auto& [key, np] : p.norms) {
    const std::string n = "norm/" + std::to_string(key.task) + "/" + std::to_string(key.level) + "/" +
                          std::to_string(key.layer);
    f(n + "/scale", np.scale, TensorRole::kNormAffine);
    f(n + "/shift", np.shift, TensorRole::kNormAffine);
    f(n + "/running_mean", np.running_mean, TensorRole::kNormStatistic);
    f(n + "/running_var", np.running_var, TensorRole::kNormStatistic);
  }
}

NormParams fresh_norm(std::size_t channels) {
  return NormParams{Tensor({channels}, 1.0), Tensor({channels}, 0.0), Tensor({channels}, 0.0), Tensor({channels}, 1.0)};
}

void check_batch(const BackboneSpec& spec, int task, const Shape& batch_shape) {
  const Shape& sample = spec.task(task).input_shape;
  const bool ok = batch_shape.size() == sample.size() + 1 &&
                  std::equal(sample.begin(), sample.end(), batch_shape.begin() + 1);
  if (!ok) {
    throw ShapeError("batch " + shape_string(batch_shape) + " does not match task " + std::to_string(task) +
                     " samples of shape " + shape_string(sample));
  }
}

template <class Params>
NodeId record_impl(Tape& tape, Params& params, const BackboneSpec& spec, const LevelMask& mask, NodeId batch,
                   NormMode mode, bool update_stats) {
  constexpr bool kFrozen = std::is_const_v<Params>;
  const int task = mask.task;
  const int level = mask.level;
  spec.task(task);
  if (mask.layers.size() != spec.body.size() || params.body.size() != spec.body.size()) {
    throw ShapeError("mask covers " + std::to_string(mask.layers.size()) + " body layers, backbone has " +
                     std::to_string(spec.body.size()));
  }
  const auto t = static_cast<std::size_t>(task) - 1;
  if (t >= params.heads.size() || level < 1 || static_cast<std::size_t>(level) > params.heads[t].size()) {
    throw ConfigError("no head for task " + std::to_string(task) + " level " + std::to_string(level));
  }

  auto leaf = [&](auto& tensor, const std::string& label) {
    if constexpr (kFrozen) {
      return tape.frozen(tensor, label);
    } else {
      return tape.parameter(tensor, label);
    }
  };
  auto norm = [&](NodeId x, std::size_t layer, const std::string& label) {
    auto it = params.norms.find(NormKey{task, level, layer});
    if (it == params.norms.end()) {
      throw ConfigError("missing norm parameters for task " + std::to_string(task) + " level " +
                        std::to_string(level) + " layer " + std::to_string(layer));
    }
    auto& np = it->second;
    NormStats stats{&np.running_mean, &np.running_var, nullptr, nullptr, 0.1};
    if constexpr (!kFrozen) {
      if (mode == NormMode::kTrain && update_stats) {
        stats.update_mean = &np.running_mean;
        stats.update_var = &np.running_var;
      }
    }
    return tape.channel_norm(x, leaf(np.scale, label + "/scale"), leaf(np.shift, label + "/shift"), stats, mode,
                             label + "/norm");
  };
  auto apply = [&](NodeId x, NodeId w, const LayerSpec& ls, const std::string& label) {
    return ls.kind == LayerKind::kDense ? tape.matmul(x, w, label)
                                        : tape.conv2d(x, w, Conv2dOptions{ls.stride, std::nullopt}, label);
  };

  const LayerSpec& in_spec = spec.input_layers[t];
  const std::string in_label = "input/" + std::to_string(task);
  NodeId h = apply(batch, leaf(params.inputs[t].weight, in_label + "/weight"), in_spec, in_label);
  h = tape.bias_add(h, leaf(params.inputs[t].bias, in_label + "/bias"), in_label + "/bias_add");
  if (in_spec.norm) h = norm(h, 0, in_label);
  if (in_spec.relu) h = tape.relu(h, in_label + "/relu");
  if (!spec.body.empty()) {
    // the input layer runs at full width; the level sees only its own channels
    std::vector<AxisSelection> sel(spec.is_image() ? 4 : 2, std::nullopt);
    sel.back() = mask.layers[0].in;
    h = tape.gather(h, std::move(sel), in_label + "/channels");
  }

  for (std::size_t r = 0; r < spec.body.size(); ++r) {
    const LayerSpec& ls = spec.body[r];
    const LayerChannels& ch = mask.layers[r];
    const std::string label = "body/" + std::to_string(r + 1);
    std::vector<AxisSelection> sel;
    if (ls.kind == LayerKind::kConv2d) {
      sel = {std::nullopt, std::nullopt, ch.in, ch.out};
    } else {
      sel = {ch.in, ch.out};
    }
    NodeId w = tape.gather(leaf(params.body[r].weight, label + "/weight"), std::move(sel), label + "/weight_block");
    NodeId b = tape.gather(leaf(params.body[r].bias, label + "/bias"), {ch.out}, label + "/bias_block");
    h = apply(h, w, ls, label);
    h = tape.bias_add(h, b, label + "/bias_add");
    if (ls.norm) h = norm(h, r + 1, label);
    if (ls.relu) h = tape.relu(h, label + "/relu");
  }
  if (spec.is_image()) h = tape.mean_pool(h, "pool");

  auto& head = params.heads[t][static_cast<std::size_t>(level) - 1];
  const std::string head_label = "head/" + std::to_string(task) + "/" + std::to_string(level);
  h = tape.matmul(h, leaf(head.weight, head_label + "/weight"), head_label);
  return tape.bias_add(h, leaf(head.bias, head_label + "/bias"), head_label + "/bias_add");
}

}  // namespace

void ModelParams::for_each(const Visitor& f) { visit_all(*this, f); }

void ModelParams::for_each(const ConstVisitor& f) const { visit_all(*this, f); }

void ModelParams::zero_grad() {
  for_each([](const std::string&, Tensor& t, TensorRole) { t.zero_grad(); });
}

const NormParams& ModelParams::norm(int task, int level, std::size_t layer) const {
  auto it = norms.find(NormKey{task, level, layer});
  if (it == norms.end()) throw ConfigError("missing norm parameters");
  return it->second;
}

double xavier_bound(const Shape& weight_shape) {
  std::size_t receptive = 1;
  for (std::size_t a = 0; a + 2 < weight_shape.size(); ++a) receptive *= weight_shape[a];
  const double fan_in = static_cast<double>(receptive * weight_shape[weight_shape.size() - 2]);
  const double fan_out = static_cast<double>(receptive * weight_shape.back());
  return std::sqrt(6.0 / (fan_in + fan_out));
}

ModelParams init_params(const BackboneSpec& spec, const Hierarchy& hierarchy, std::uint64_t seed) {
  validate_spec(spec);
  if (spec.heads.size() != spec.task_count() || hierarchy.task_count() != spec.task_count()) {
    throw ConfigError("heads must be attached from the hierarchy before initialization");
  }
  ModelParams p;
  auto layer = [](const LayerSpec& ls) { return LayerParams{Tensor(ls.weight_shape()), Tensor({ls.out_channels})}; };
  for (const LayerSpec& ls : spec.input_layers) p.inputs.push_back(layer(ls));
  for (const LayerSpec& ls : spec.body) p.body.push_back(layer(ls));
  for (std::size_t t = 0; t < spec.heads.size(); ++t) {
    if (hierarchy.masks[t].size() != spec.heads[t].size()) throw ConfigError("hierarchy and heads disagree");
    std::vector<LayerParams> heads;
    for (const HeadSpec& hs : spec.heads[t]) {
      heads.push_back(LayerParams{Tensor({hs.in_channels, hs.classes}), Tensor({hs.classes})});
    }
    p.heads.push_back(std::move(heads));
  }
  for (std::size_t t = 0; t < hierarchy.masks.size(); ++t) {
    for (const LevelMask& m : hierarchy.masks[t]) {
      if (spec.input_layers[t].norm) {
        p.norms.emplace(NormKey{m.task, m.level, 0}, fresh_norm(spec.input_layers[t].out_channels));
      }
      for (std::size_t r = 0; r < spec.body.size(); ++r) {
        if (spec.body[r].norm) p.norms.emplace(NormKey{m.task, m.level, r + 1}, fresh_norm(m.layers[r].out.size()));
      }
    }
  }

  std::mt19937_64 rng(seed);
  p.for_each([&](const std::string&, Tensor& w, TensorRole role) {
    if (role != TensorRole::kWeight) return;
    std::uniform_real_distribution<double> dist(-xavier_bound(w.shape()), xavier_bound(w.shape()));
    for (double& v : w.data()) v = dist(rng);
  });
  return p;
}

NodeId record_logits(Tape& tape, ModelParams& params, const BackboneSpec& spec, const LevelMask& mask, NodeId batch,
                     NormMode mode, bool update_stats) {
  return record_impl(tape, params, spec, mask, batch, mode, update_stats);
}

NodeId record_eval_logits(Tape& tape, const ModelParams& params, const BackboneSpec& spec, const LevelMask& mask,
                          NodeId batch) {
  return record_impl(tape, params, spec, mask, batch, NormMode::kEval, false);
}

Tensor forward_logits(ModelParams& params, const BackboneSpec& spec, const LevelMask& mask, const Tensor& batch,
                      NormMode mode) {
  check_batch(spec, mask.task, batch.shape());
  Tape tape;
  record_logits(tape, params, spec, mask, tape.input("batch"), mode);
  return tape.forward_eval({batch});
}

Tensor predict_logits(const ModelParams& params, const BackboneSpec& spec, const LevelMask& mask, const Tensor& batch) {
  check_batch(spec, mask.task, batch.shape());
  Tape tape;
  record_eval_logits(tape, params, spec, mask, tape.input("batch"));
  return tape.forward_eval({batch});
}

std::vector<double> flat_grads(const ModelParams& params) {
  std::vector<double> out;
  params.for_each([&](const std::string&, const Tensor& t, TensorRole role) {
    if (!is_trainable(role)) return;
    if (t.has_grad()) {
      out.insert(out.end(), t.grad().begin(), t.grad().end());
    } else {
      out.insert(out.end(), t.size(), 0.0);
    }
  });
  return out;
}

std::vector<double> flat_values(const ModelParams& params) {
  std::vector<double> out;
  params.for_each([&](const std::string&, const Tensor& t, TensorRole role) {
    if (is_trainable(role)) out.insert(out.end(), t.data().begin(), t.data().end());
  });
  return out;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("argmax_rows expects a matrix, got " + shape_string(logits.shape()));
  const std::size_t c = logits.dim(1);
  std::vector<int> out(logits.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (logits[i * c + k] > logits[i * c + best]) best = k;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

}  // namespace dvn
