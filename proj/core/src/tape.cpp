#include "dvn/tape.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kernels.hpp"

namespace dvn {

const char* Tape::op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kConstant: return "constant";
    case Op::kParameter: return "parameter";
    case Op::kGather: return "gather";
    case Op::kMatMul: return "matmul";
    case Op::kConv2d: return "conv2d";
    case Op::kBiasAdd: return "bias_add";
    case Op::kRelu: return "relu";
    case Op::kMeanPool: return "mean_pool";
    case Op::kChannelNorm: return "channel_norm";
    case Op::kSoftmaxXent: return "softmax_cross_entropy";
    case Op::kSoftTargetXent: return "soft_target_cross_entropy";
    case Op::kSumSquares: return "sum_squares";
    case Op::kSum: return "sum";
    case Op::kAdd: return "add";
    case Op::kScale: return "scale";
  }
  return "?";
}

NodeId Tape::push(Node node) {
  for (std::size_t in : node.inputs) {
    if (in >= nodes_.size()) throw TapeError("node input refers to a node that does not exist yet");
    node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
  }
  nodes_.push_back(std::move(node));
  evaluated_ = false;
  return NodeId{nodes_.size() - 1};
}

const Tape::Node& Tape::at(NodeId id) const {
  if (id.index >= nodes_.size()) throw TapeError("unknown node id " + std::to_string(id.index));
  return nodes_[id.index];
}

std::string Tape::describe(NodeId id) const {
  const Node& n = at(id);
  std::string s = "node " + std::to_string(id.index) + " (" + op_name(n.op);
  if (!n.label.empty()) s += " '" + n.label + "'";
  return s + ")";
}

void Tape::fail(std::size_t index, const std::string& what) const {
  throw ShapeError(describe(NodeId{index}) + ": " + what);
}

NodeId Tape::input(std::string label) {
  Node n{.op = Op::kInput, .label = std::move(label)};
  n.input_slot = input_count_++;
  return push(std::move(n));
}

NodeId Tape::constant(Tensor value, std::string label) {
  Node n{.op = Op::kConstant, .label = std::move(label)};
  n.constant = std::move(value);
  return push(std::move(n));
}

NodeId Tape::parameter(Tensor& param, std::string label) {
  Node n{.op = Op::kParameter, .label = std::move(label), .requires_grad = true};
  n.param = &param;
  n.grad_target = &param;
  return push(std::move(n));
}

NodeId Tape::frozen(const Tensor& param, std::string label) {
  Node n{.op = Op::kParameter, .label = std::move(label)};
  n.param = &param;
  return push(std::move(n));
}

NodeId Tape::gather(NodeId x, std::vector<AxisSelection> selection, std::string label) {
  Node n{.op = Op::kGather, .inputs = {x.index}, .label = std::move(label)};
  n.selection = std::move(selection);
  return push(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b, std::string label) {
  return push(Node{.op = Op::kMatMul, .inputs = {a.index, b.index}, .label = std::move(label)});
}

NodeId Tape::conv2d(NodeId x, NodeId kernel, Conv2dOptions options, std::string label) {
  Node n{.op = Op::kConv2d, .inputs = {x.index, kernel.index}, .label = std::move(label)};
  if (options.stride == 0) throw TapeError("conv2d stride must be positive");
  n.conv = options;
  return push(std::move(n));
}

NodeId Tape::bias_add(NodeId x, NodeId bias, std::string label) {
  return push(Node{.op = Op::kBiasAdd, .inputs = {x.index, bias.index}, .label = std::move(label)});
}

NodeId Tape::relu(NodeId x, std::string label) {
  return push(Node{.op = Op::kRelu, .inputs = {x.index}, .label = std::move(label)});
}

NodeId Tape::mean_pool(NodeId x, std::string label) {
  return push(Node{.op = Op::kMeanPool, .inputs = {x.index}, .label = std::move(label)});
}

NodeId Tape::channel_norm(NodeId x, NodeId scale, NodeId shift, NormStats stats, NormMode mode,
                          std::string label) {
  Node n{.op = Op::kChannelNorm, .inputs = {x.index, scale.index, shift.index}, .label = std::move(label)};
  n.stats = stats;
  n.mode = mode;
  return push(std::move(n));
}

NodeId Tape::softmax_cross_entropy(NodeId logits, std::vector<int> labels, std::string label) {
  Node n{.op = Op::kSoftmaxXent, .inputs = {logits.index}, .label = std::move(label)};
  n.labels = std::move(labels);
  return push(std::move(n));
}

NodeId Tape::soft_target_cross_entropy(NodeId logits, Tensor targets, double temperature, std::string label) {
  if (!(temperature > 0.0)) throw TapeError("temperature must be positive");
  Node n{.op = Op::kSoftTargetXent, .inputs = {logits.index}, .label = std::move(label)};
  n.constant = std::move(targets);
  n.factor = temperature;
  return push(std::move(n));
}

NodeId Tape::sum_squares(NodeId x, std::string label) {
  return push(Node{.op = Op::kSumSquares, .inputs = {x.index}, .label = std::move(label)});
}

NodeId Tape::sum(NodeId x, std::string label) {
  return push(Node{.op = Op::kSum, .inputs = {x.index}, .label = std::move(label)});
}

NodeId Tape::add(NodeId a, NodeId b, std::string label) {
  return push(Node{.op = Op::kAdd, .inputs = {a.index, b.index}, .label = std::move(label)});
}

NodeId Tape::scale(NodeId x, double factor, std::string label) {
  Node n{.op = Op::kScale, .inputs = {x.index}, .label = std::move(label)};
  n.factor = factor;
  return push(std::move(n));
}

NodeId Tape::terminal() const {
  if (nodes_.empty()) throw TapeError("tape is empty");
  return NodeId{nodes_.size() - 1};
}

const Tensor& Tape::node_value(std::size_t index) const {
  const Node& n = nodes_[index];
  return n.op == Op::kParameter ? *n.param : n.value;
}

const Tensor& Tape::value(NodeId id) const {
  const Node& n = at(id);
  if (n.op != Op::kParameter && !evaluated_) throw TapeError("value() requested before forward_eval");
  return node_value(id.index);
}

std::span<const double> Tape::grad(NodeId id) const {
  return at(id).grad;
}

const Tensor& Tape::forward_eval(std::span<const Tensor> inputs) {
  if (nodes_.empty()) throw TapeError("forward_eval on an empty tape");
  if (inputs.size() != input_count_) {
    throw TapeError("tape expects " + std::to_string(input_count_) + " inputs, got " +
                    std::to_string(inputs.size()));
  }
  evaluated_ = false;
  for (std::size_t i = 0; i < nodes_.size(); ++i) forward_node(i, inputs);
  evaluated_ = true;
  return value(terminal());
}

void Tape::backward_eval() {
  if (!evaluated_) throw TapeError("backward_eval requires a completed forward_eval");
  const std::size_t last = terminal().index;
  if (value(NodeId{last}).size() != 1) {
    fail(last, "terminal must be scalar for backward, got shape " + shape_string(nodes_[last].value.shape()));
  }
  for (Node& n : nodes_) {
    if (n.requires_grad) {
      const std::size_t sz = n.op == Op::kParameter ? n.param->size() : n.value.size();
      n.grad.assign(sz, 0.0);
    } else {
      n.grad.clear();
    }
  }
  if (!nodes_[last].requires_grad) return;
  nodes_[last].grad[0] = 1.0;
  for (std::size_t i = last + 1; i-- > 0;) {
    if (nodes_[i].requires_grad) backward_node(i);
  }
}

std::vector<double>* Tape::grad_sink(std::size_t index) {
  Node& n = nodes_[index];
  return n.requires_grad ? &n.grad : nullptr;
}

namespace {

std::vector<std::vector<std::size_t>> resolve_selection(const Shape& shape, const std::vector<AxisSelection>& sel,
                                                        Shape& out_shape) {
  std::vector<std::vector<std::size_t>> idx(shape.size());
  out_shape.resize(shape.size());
  for (std::size_t a = 0; a < shape.size(); ++a) {
    if (sel[a]) {
      idx[a] = *sel[a];
    } else {
      idx[a].resize(shape[a]);
      std::iota(idx[a].begin(), idx[a].end(), std::size_t{0});
    }
    out_shape[a] = idx[a].size();
  }
  return idx;
}

std::vector<std::size_t> row_major_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t a = shape.size(); a-- > 1;) strides[a - 1] = strides[a] * shape[a];
  return strides;
}

// Visits (source offset, destination offset) pairs of a gather in row-major
// destination order.
template <class F>
void for_each_gathered(const std::vector<std::vector<std::size_t>>& idx, const std::vector<std::size_t>& strides,
                       F&& f) {
  std::size_t dst = 0;
  auto rec = [&](auto&& self, std::size_t axis, std::size_t base) -> void {
    const auto& ix = idx[axis];
    if (axis + 1 == idx.size()) {
      for (std::size_t i : ix) f(base + i * strides[axis], dst++);
      return;
    }
    for (std::size_t i : ix) self(self, axis + 1, base + i * strides[axis]);
  };
  rec(rec, 0, 0);
}

struct ConvGeometry {
  std::size_t batch, height, width, channels;
  std::size_t kh, kw, out_channels;
  std::size_t stride, pad;
  std::size_t out_h, out_w;
  std::size_t rows() const { return batch * out_h * out_w; }
  std::size_t patch() const { return kh * kw * channels; }
};

// Calls f(col_offset, x_offset) for every in-bounds patch element.
template <class F>
void for_each_patch_element(const ConvGeometry& g, F&& f) {
  std::size_t row = 0;
  const std::size_t patch = g.patch();
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ++ox, ++row) {
        std::size_t col = row * patch;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t kx = 0; kx < g.kw; ++kx, col += g.channels) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.height) ||
                ix >= static_cast<std::ptrdiff_t>(g.width)) {
              continue;
            }
            const std::size_t xoff =
                ((b * g.height + static_cast<std::size_t>(iy)) * g.width + static_cast<std::size_t>(ix)) * g.channels;
            f(col, xoff);
          }
        }
      }
    }
  }
}

}  // namespace

void Tape::forward_node(std::size_t index, std::span<const Tensor> inputs) {
  Node& n = nodes_[index];
  auto in = [&](std::size_t k) -> const Tensor& { return node_value(n.inputs[k]); };

  switch (n.op) {
    case Op::kInput:
      n.value = inputs[n.input_slot];
      break;
    case Op::kConstant:
      n.value = n.constant;
      break;
    case Op::kParameter:
      break;
    case Op::kGather: {
      const Tensor& x = in(0);
      if (n.selection.size() != x.rank()) {
        fail(index, "selection has " + std::to_string(n.selection.size()) + " axes for input of shape " +
                        shape_string(x.shape()));
      }
      for (std::size_t a = 0; a < x.rank(); ++a) {
        if (!n.selection[a]) continue;
        if (n.selection[a]->empty()) fail(index, "empty selection on axis " + std::to_string(a));
        for (std::size_t i : *n.selection[a]) {
          if (i >= x.dim(a)) {
            fail(index, "index " + std::to_string(i) + " out of range on axis " + std::to_string(a) + " of " +
                            shape_string(x.shape()));
          }
        }
      }
      Shape out_shape;
      const auto idx = resolve_selection(x.shape(), n.selection, out_shape);
      n.value = Tensor(out_shape);
      auto src = x.data();
      auto dst = n.value.data();
      for_each_gathered(idx, row_major_strides(x.shape()), [&](std::size_t s, std::size_t d) { dst[d] = src[s]; });
      break;
    }
    case Op::kMatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        fail(index, "cannot multiply " + shape_string(a.shape()) + " by " + shape_string(b.shape()));
      }
      n.value = Tensor({a.dim(0), b.dim(1)});
      kernels::gemm(a.data().data(), b.data().data(), n.value.data().data(), a.dim(0), a.dim(1), b.dim(1));
      break;
    }
    case Op::kConv2d: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      if (x.rank() != 4 || w.rank() != 4 || w.dim(2) != x.dim(3)) {
        fail(index, "conv2d input " + shape_string(x.shape()) + " incompatible with kernel " +
                        shape_string(w.shape()));
      }
      ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(1), w.dim(3), n.conv.stride,
                     n.conv.padding.value_or(w.dim(0) / 2), 0, 0};
      if (g.height + 2 * g.pad < g.kh || g.width + 2 * g.pad < g.kw) {
        fail(index, "kernel larger than padded input " + shape_string(x.shape()));
      }
      g.out_h = (g.height + 2 * g.pad - g.kh) / g.stride + 1;
      g.out_w = (g.width + 2 * g.pad - g.kw) / g.stride + 1;
      n.cache.assign(g.rows() * g.patch(), 0.0);
      auto xs = x.data();
      for_each_patch_element(g, [&](std::size_t col, std::size_t xoff) {
        std::copy_n(xs.begin() + static_cast<std::ptrdiff_t>(xoff), g.channels,
                    n.cache.begin() + static_cast<std::ptrdiff_t>(col));
      });
      n.value = Tensor({g.batch, g.out_h, g.out_w, g.out_channels});
      kernels::gemm(n.cache.data(), w.data().data(), n.value.data().data(), g.rows(), g.patch(), g.out_channels);
      break;
    }
    case Op::kBiasAdd: {
      const Tensor& x = in(0);
      const Tensor& b = in(1);
      const std::size_t c = x.shape().back();
      if (b.size() != c) {
        fail(index, "bias of " + std::to_string(b.size()) + " entries for input " + shape_string(x.shape()));
      }
      n.value = x;
      auto v = n.value.data();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] += b[i % c];
      break;
    }
    case Op::kRelu: {
      n.value = in(0);
      for (double& v : n.value.data()) v = v > 0.0 ? v : 0.0;
      break;
    }
    case Op::kMeanPool: {
      const Tensor& x = in(0);
      if (x.rank() != 4) fail(index, "mean_pool expects (batch, h, w, c), got " + shape_string(x.shape()));
      const std::size_t b = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
      n.value = Tensor({b, c});
      auto xs = x.data();
      auto out = n.value.data();
      for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t p = 0; p < hw; ++p) {
          for (std::size_t ch = 0; ch < c; ++ch) out[i * c + ch] += xs[(i * hw + p) * c + ch];
        }
        for (std::size_t ch = 0; ch < c; ++ch) out[i * c + ch] /= static_cast<double>(hw);
      }
      break;
    }
    case Op::kChannelNorm: {
      const Tensor& x = in(0);
      const Tensor& scale = in(1);
      const Tensor& shift = in(2);
      const std::size_t c = x.shape().back();
      const std::size_t count = x.size() / c;
      if (scale.size() != c || shift.size() != c) {
        fail(index, "norm parameters of size " + std::to_string(scale.size()) + " for input " +
                        shape_string(x.shape()));
      }
      auto xs = x.data();
      std::vector<double> mean(c, 0.0), var(c, 0.0);
      if (n.mode == NormMode::kTrain) {
        for (std::size_t i = 0; i < count; ++i)
          for (std::size_t ch = 0; ch < c; ++ch) mean[ch] += xs[i * c + ch];
        for (double& m : mean) m /= static_cast<double>(count);
        for (std::size_t i = 0; i < count; ++i)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const double d = xs[i * c + ch] - mean[ch];
            var[ch] += d * d;
          }
        for (double& v : var) v /= static_cast<double>(count);
      } else {
        if (!n.stats.running_mean || !n.stats.running_var) fail(index, "eval mode requires running statistics");
        if (n.stats.running_mean->size() != c || n.stats.running_var->size() != c) {
          fail(index, "running statistics do not match " + std::to_string(c) + " channels");
        }
        std::copy_n(n.stats.running_mean->data().begin(), c, mean.begin());
        std::copy_n(n.stats.running_var->data().begin(), c, var.begin());
      }
      n.cache2.resize(c);
      for (std::size_t ch = 0; ch < c; ++ch) n.cache2[ch] = 1.0 / std::sqrt(var[ch] + kNormEpsilon);
      n.cache.resize(x.size());
      n.value = Tensor(x.shape());
      auto out = n.value.data();
      for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double xhat = (xs[i * c + ch] - mean[ch]) * n.cache2[ch];
          n.cache[i * c + ch] = xhat;
          out[i * c + ch] = scale[ch] * xhat + shift[ch];
        }
      }
      if (n.mode == NormMode::kTrain && n.stats.update_mean && n.stats.update_var) {
        if (n.stats.update_mean->size() != c || n.stats.update_var->size() != c) {
          fail(index, "running statistics do not match " + std::to_string(c) + " channels");
        }
        const double m = n.stats.momentum;
        const double unbias = count > 1 ? static_cast<double>(count) / static_cast<double>(count - 1) : 1.0;
        auto rm = n.stats.update_mean->data();
        auto rv = n.stats.update_var->data();
        for (std::size_t ch = 0; ch < c; ++ch) {
          rm[ch] = (1.0 - m) * rm[ch] + m * mean[ch];
          rv[ch] = (1.0 - m) * rv[ch] + m * var[ch] * unbias;
        }
      }
      break;
    }
    case Op::kSoftmaxXent: {
      const Tensor& z = in(0);
      if (z.rank() != 2 || z.dim(0) != n.labels.size()) {
        fail(index, "logits " + shape_string(z.shape()) + " do not match " + std::to_string(n.labels.size()) +
                        " labels");
      }
      const std::size_t b = z.dim(0), c = z.dim(1);
      n.cache.resize(z.size());
      double loss = 0.0;
      for (std::size_t i = 0; i < b; ++i) {
        const int y = n.labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= c) {
          fail(index, "label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
        }
        const double lse = kernels::softmax_row(z.data().subspan(i * c, c), 1.0, std::span(n.cache).subspan(i * c, c));
        loss += lse - z[i * c + static_cast<std::size_t>(y)];
      }
      n.value = Tensor::scalar(loss / static_cast<double>(b));
      break;
    }
    case Op::kSoftTargetXent: {
      const Tensor& z = in(0);
      if (z.rank() != 2 || z.shape() != n.constant.shape()) {
        fail(index, "logits " + shape_string(z.shape()) + " do not match targets " +
                        shape_string(n.constant.shape()));
      }
      const std::size_t b = z.dim(0), c = z.dim(1);
      const double t = n.factor;
      n.cache.resize(z.size());
      double loss = 0.0;
      for (std::size_t i = 0; i < b; ++i) {
        auto p = std::span(n.cache).subspan(i * c, c);
        const double lse = kernels::softmax_row(z.data().subspan(i * c, c), t, p);
        for (std::size_t k = 0; k < c; ++k) {
          const double q = n.constant[i * c + k];
          if (q != 0.0) loss -= q * (z[i * c + k] / t - lse);
        }
      }
      n.value = Tensor::scalar(loss / static_cast<double>(b));
      break;
    }
    case Op::kSumSquares: {
      double s = 0.0;
      for (double v : in(0).data()) s += v * v;
      n.value = Tensor::scalar(s);
      break;
    }
    case Op::kSum: {
      double s = 0.0;
      for (double v : in(0).data()) s += v;
      n.value = Tensor::scalar(s);
      break;
    }
    case Op::kAdd: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.shape() != b.shape()) fail(index, "cannot add " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
      n.value = a;
      auto v = n.value.data();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] += b[i];
      break;
    }
    case Op::kScale: {
      n.value = in(0);
      for (double& v : n.value.data()) v *= n.factor;
      break;
    }
  }
}

void Tape::backward_node(std::size_t index) {
  Node& n = nodes_[index];
  const std::vector<double>& g = n.grad;
  auto in = [&](std::size_t k) -> const Tensor& { return node_value(n.inputs[k]); };
  auto sink = [&](std::size_t k) { return grad_sink(n.inputs[k]); };

  switch (n.op) {
    case Op::kInput:
    case Op::kConstant:
      break;
    case Op::kParameter: {
      auto pg = n.grad_target->grad();
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += g[i];
      break;
    }
    case Op::kGather: {
      std::vector<double>* dx = sink(0);
      if (!dx) break;
      Shape out_shape;
      const auto idx = resolve_selection(in(0).shape(), n.selection, out_shape);
      for_each_gathered(idx, row_major_strides(in(0).shape()),
                        [&](std::size_t s, std::size_t d) { (*dx)[s] += g[d]; });
      break;
    }
    case Op::kMatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const std::size_t m = a.dim(0), k = a.dim(1), cols = b.dim(1);
      if (auto* da = sink(0)) kernels::gemm_a_bt(g.data(), b.data().data(), da->data(), m, cols, k);
      if (auto* db = sink(1)) kernels::gemm_at_b(a.data().data(), g.data(), db->data(), m, k, cols);
      break;
    }
    case Op::kConv2d: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      ConvGeometry geo{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(1), w.dim(3), n.conv.stride,
                       n.conv.padding.value_or(w.dim(0) / 2), n.value.dim(1), n.value.dim(2)};
      if (auto* dw = sink(1)) {
        kernels::gemm_at_b(n.cache.data(), g.data(), dw->data(), geo.rows(), geo.patch(), geo.out_channels);
      }
      if (auto* dx = sink(0)) {
        std::vector<double> dcols(geo.rows() * geo.patch(), 0.0);
        kernels::gemm_a_bt(g.data(), w.data().data(), dcols.data(), geo.rows(), geo.out_channels, geo.patch());
        for_each_patch_element(geo, [&](std::size_t col, std::size_t xoff) {
          for (std::size_t ch = 0; ch < geo.channels; ++ch) (*dx)[xoff + ch] += dcols[col + ch];
        });
      }
      break;
    }
    case Op::kBiasAdd: {
      const std::size_t c = in(1).size();
      if (auto* dx = sink(0)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*dx)[i] += g[i];
      }
      if (auto* db = sink(1)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*db)[i % c] += g[i];
      }
      break;
    }
    case Op::kRelu: {
      if (auto* dx = sink(0)) {
        auto xs = in(0).data();
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (xs[i] > 0.0) (*dx)[i] += g[i];
        }
      }
      break;
    }
    case Op::kMeanPool: {
      if (auto* dx = sink(0)) {
        const Tensor& x = in(0);
        const std::size_t b = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
        const double inv = 1.0 / static_cast<double>(hw);
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t p = 0; p < hw; ++p)
            for (std::size_t ch = 0; ch < c; ++ch) (*dx)[(i * hw + p) * c + ch] += g[i * c + ch] * inv;
      }
      break;
    }
    case Op::kChannelNorm: {
      const Tensor& x = in(0);
      const Tensor& scale = in(1);
      const std::size_t c = x.shape().back();
      const std::size_t count = x.size() / c;
      const auto& xhat = n.cache;
      std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
      for (std::size_t i = 0; i < count; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
          sum_g[ch] += g[i * c + ch];
          sum_gx[ch] += g[i * c + ch] * xhat[i * c + ch];
        }
      if (auto* dscale = sink(1)) {
        for (std::size_t ch = 0; ch < c; ++ch) (*dscale)[ch] += sum_gx[ch];
      }
      if (auto* dshift = sink(2)) {
        for (std::size_t ch = 0; ch < c; ++ch) (*dshift)[ch] += sum_g[ch];
      }
      if (auto* dx = sink(0)) {
        if (n.mode == NormMode::kEval) {
          for (std::size_t i = 0; i < count; ++i)
            for (std::size_t ch = 0; ch < c; ++ch) (*dx)[i * c + ch] += g[i * c + ch] * scale[ch] * n.cache2[ch];
        } else {
          // dx = invstd/N * (N dxhat - sum(dxhat) - xhat * sum(dxhat xhat)), dxhat = g * scale
          const double cnt = static_cast<double>(count);
          for (std::size_t i = 0; i < count; ++i)
            for (std::size_t ch = 0; ch < c; ++ch) {
              const std::size_t o = i * c + ch;
              const double term = cnt * g[o] - sum_g[ch] - xhat[o] * sum_gx[ch];
              (*dx)[o] += scale[ch] * n.cache2[ch] / cnt * term;
            }
        }
      }
      break;
    }
    case Op::kSoftmaxXent: {
      if (auto* dz = sink(0)) {
        const std::size_t b = n.labels.size();
        const std::size_t c = n.cache.size() / b;
        const double s = g[0] / static_cast<double>(b);
        for (std::size_t i = 0; i < b; ++i) {
          for (std::size_t k = 0; k < c; ++k) {
            const double onehot = static_cast<std::size_t>(n.labels[i]) == k ? 1.0 : 0.0;
            (*dz)[i * c + k] += s * (n.cache[i * c + k] - onehot);
          }
        }
      }
      break;
    }
    case Op::kSoftTargetXent: {
      if (auto* dz = sink(0)) {
        const std::size_t b = n.constant.dim(0), c = n.constant.dim(1);
        const double s = g[0] / (static_cast<double>(b) * n.factor);
        for (std::size_t i = 0; i < b; ++i) {
          double mass = 0.0;
          for (std::size_t k = 0; k < c; ++k) mass += n.constant[i * c + k];
          for (std::size_t k = 0; k < c; ++k) {
            (*dz)[i * c + k] += s * (n.cache[i * c + k] * mass - n.constant[i * c + k]);
          }
        }
      }
      break;
    }
    case Op::kSumSquares: {
      if (auto* dx = sink(0)) {
        auto xs = in(0).data();
        for (std::size_t i = 0; i < xs.size(); ++i) (*dx)[i] += 2.0 * xs[i] * g[0];
      }
      break;
    }
    case Op::kSum: {
      if (auto* dx = sink(0)) {
        for (double& v : *dx) v += g[0];
      }
      break;
    }
    case Op::kAdd: {
      for (std::size_t k = 0; k < 2; ++k) {
        if (auto* d = sink(k)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i];
        }
      }
      break;
    }
    case Op::kScale: {
      if (auto* dx = sink(0)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*dx)[i] += n.factor * g[i];
      }
      break;
    }
  }
}

}  // namespace dvn
