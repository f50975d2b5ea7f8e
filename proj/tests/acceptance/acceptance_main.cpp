// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "dvn/budget.hpp"
#include "dvn/gradcheck.hpp"
#include "dvn/trainer.hpp"
#include "test_support.hpp"

using namespace dvn;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& why) {
    if (!ok && pass) {
      pass = false;
      detail = why;
    }
  }
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

std::string order_string(const std::vector<int>& order) {
  std::string s = "(";
  for (std::size_t i = 0; i < order.size(); ++i) s += (i ? "," : "") + std::to_string(order[i]);
  return s + ")";
}

std::vector<Batch> random_batches(const BackboneSpec& spec, std::size_t n, std::mt19937_64& rng) {
  std::vector<Batch> out;
  for (const TaskSpec& t : spec.tasks) {
    Shape s{n};
    s.insert(s.end(), t.input_shape.begin(), t.input_shape.end());
    out.push_back({testing::random_tensor(s, rng), testing::random_labels(n, t.classes, rng)});
  }
  return out;
}

std::vector<double> numeric_grads(ModelParams& params, const std::function<double()>& loss) {
  std::vector<double> out;
  params.for_each([&](const std::string&, Tensor& t, TensorRole role) {
    if (!is_trainable(role)) return;
    const Tensor g = finite_diff_grad(loss, t, 1e-5);
    out.insert(out.end(), g.data().begin(), g.data().end());
  });
  return out;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// ---- 1 ----

Outcome orders_match_displayed_equations() {
  Outcome o;
  const auto check = [&](int k, const std::vector<std::vector<int>>& expected) {
    const auto configs = derive_orders(k);
    o.require(configs.size() == expected.size(), "derive_orders(" + std::to_string(k) + ") has wrong size");
    for (std::size_t j = 0; j < expected.size() && j < configs.size(); ++j) {
      o.require(configs[j].task == static_cast<int>(j) + 1 && configs[j].order == expected[j],
                "k=" + std::to_string(k) + " task " + std::to_string(j + 1) + " got " + order_string(configs[j].order));
    }
  };
  check(3, {{1, 2, 3}, {2, 1, 3}, {3, 2, 1}});
  check(2, {{1, 2}, {2, 1}});
  if (o.pass) o.detail = "k=3 (1,2,3) (2,1,3) (3,2,1); k=2 (1,2) (2,1)";
  return o;
}

// ---- 2 ----

BackboneSpec random_backbone(std::size_t k, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> depth(1, 4), extra(0, 3 * k), conv(0, 1);
  const bool image = conv(rng) == 1;
  BackboneSpec spec;
  spec.tasks = testing::dense_tasks(k, 3, 2);
  std::size_t width = k + extra(rng);
  for (std::size_t j = 0; j < k; ++j) {
    if (image) spec.tasks[j].input_shape = {4, 4, 2};
    spec.input_layers.push_back(image ? LayerSpec{LayerKind::kConv2d, 2, width, 3, 3, 1, false, true}
                                      : LayerSpec{LayerKind::kDense, 3, width});
  }
  const std::size_t layers = depth(rng);
  for (std::size_t r = 0; r < layers; ++r) {
    const std::size_t out = k + extra(rng);
    spec.body.push_back(image ? LayerSpec{LayerKind::kConv2d, width, out, 3, 3, 1, false, true}
                              : LayerSpec{LayerKind::kDense, width, out});
    width = out;
  }
  validate_spec(spec);
  return spec;
}

/// Random positive group sizes summing to `width`.
std::vector<std::size_t> random_groups(std::size_t width, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::size_t> sizes(k, 1);
  std::uniform_int_distribution<std::size_t> pick(0, k - 1);
  for (std::size_t c = k; c < width; ++c) ++sizes[pick(rng)];
  return sizes;
}

Outcome nesting_and_partition_invariants() {
  Outcome o;
  std::mt19937_64 rng(2024);
  std::size_t checked = 0;
  for (std::size_t k = 1; k <= 6; ++k) {
    const auto configs = derive_orders(static_cast<int>(k));
    for (int trial = 0; trial < 50; ++trial) {
      const BackboneSpec spec = random_backbone(k, rng);
      UnitPartition p;
      if (trial % 2 == 0) {
        p = equal_partition(spec, k);
      } else {
        std::vector<std::vector<std::size_t>> bounds{random_groups(spec.body.front().in_channels, k, rng)};
        for (const LayerSpec& l : spec.body) bounds.push_back(random_groups(l.out_channels, k, rng));
        p = partition_from_sizes(spec, bounds);
      }
      const std::string where = "k=" + std::to_string(k) + " trial " + std::to_string(trial);
      const ValidationReport report = validate(p, configs);
      o.require(static_cast<bool>(report), where + ": validate failed: " + report.violation);

      // independent checks of the same invariants
      for (std::size_t r = 0; r < p.layers.size(); ++r) {
        const LayerGroups& g = p.layers[r];
        for (const auto* side : {&g.in, &g.out}) {
          const std::size_t width = side == &g.in ? g.in_width : g.out_width;
          std::vector<int> owner(width, 0);
          for (const ChannelRange& c : *side) {
            for (std::size_t ch = c.begin; ch < c.end() && ch < width; ++ch) ++owner[ch];
            o.require(c.end() <= width && c.size > 0, where + ": group out of range");
          }
          o.require(side->size() == k && std::all_of(owner.begin(), owner.end(), [](int n) { return n == 1; }),
                    where + ": groups are not a disjoint cover");
        }
      }
      const Hierarchy h = build_hierarchy(p, configs);
      for (std::size_t j = 0; j < k; ++j) {
        std::vector<int> sorted = configs[j].order;
        std::sort(sorted.begin(), sorted.end());
        std::vector<int> identity(k);
        for (std::size_t i = 0; i < k; ++i) identity[i] = static_cast<int>(i) + 1;
        o.require(sorted == identity, where + ": order is not a permutation");
        o.require(configs[j].order.front() == static_cast<int>(j) + 1, where + ": rule (i) violated");
        for (std::size_t l = 1; l < k; ++l) {
          const LevelMask& lo = h.masks[j][l - 1];
          const LevelMask& hi = h.masks[j][l];
          for (std::size_t r = 0; r < lo.layers.size(); ++r) {
            const auto subset = [](const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
              return std::includes(b.begin(), b.end(), a.begin(), a.end());
            };
            o.require(subset(lo.layers[r].in, hi.layers[r].in) && subset(lo.layers[r].out, hi.layers[r].out) &&
                          lo.layers[r].out.size() < hi.layers[r].out.size(),
                      where + ": mask(l) not strictly inside mask(l+1)");
          }
        }
      }
      ++checked;
    }
  }
  if (o.pass) o.detail = std::to_string(checked) + " backbones, k=1..6, equal and uneven partitions";
  return o;
}

// ---- 3 ----

Outcome density_ratio() {
  Outcome o;
  BackboneSpec spec = conv_preset({{"a", 4, {8, 8, 3}}, {"b", 4, {8, 8, 3}}, {"c", 4, {8, 8, 3}}, {"d", 4, {8, 8, 3}}});
  const UnitPartition p = equal_partition(spec, 4);
  const auto configs = derive_orders(4);
  const Hierarchy h = build_hierarchy(p, configs);
  std::string counts;
  for (int j = 1; j <= 4; ++j) {
    for (int l = 1; l <= 4; ++l) {
      const std::size_t n = count_params(spec, h.at(j, l), CountScope::kBody, false);
      // l of 4 equal groups in every 16-channel 3x3 layer: (4l)^2 * 9 per layer
      std::size_t oracle = 0;
      for (const LayerSpec& layer : spec.body) {
        oracle += (layer.in_channels / 4 * l) * (layer.out_channels / 4 * l) * layer.kernel_area();
      }
      o.require(n == oracle, "task " + std::to_string(j) + " level " + std::to_string(l) + ": " + std::to_string(n) +
                                 " != " + std::to_string(oracle));
      const std::size_t top = count_params(spec, h.at(j, 4), CountScope::kBody, false);
      o.require(n * 16 == top * static_cast<std::size_t>(l * l), "ratio is not l^2:16");
      if (j == 1) counts += (l > 1 ? ":" : "") + std::to_string(n);
    }
  }
  if (o.pass) o.detail = "body counts " + counts + " = 1:4:9:16";
  return o;
}

// ---- 4 ----

/// Smallest |pre-activation| feeding any ReLU of the MLP at one (task, level)
/// on `x`, computed directly from the weights. Central differences straddle a
/// kink when a perturbation moves such a value across zero.
double relu_margin(const ModelParams& p, const BackboneSpec& spec, const LevelMask& mask, const Tensor& x) {
  const auto t = static_cast<std::size_t>(mask.task - 1);
  double margin = INFINITY;
  for (std::size_t s = 0; s < x.dim(0); ++s) {
    const Tensor& w0 = p.inputs[t].weight;
    const std::size_t width = w0.dim(1);
    std::vector<double> h(width);
    for (std::size_t o = 0; o < width; ++o) {
      double z = p.inputs[t].bias[o];
      for (std::size_t i = 0; i < w0.dim(0); ++i) z += x[s * w0.dim(0) + i] * w0[i * width + o];
      margin = std::min(margin, std::abs(z));
      h[o] = std::max(z, 0.0);
    }
    for (std::size_t r = 0; r < spec.body.size(); ++r) {
      const LayerChannels& ch = mask.layers[r];
      const Tensor& w = p.body[r].weight;
      std::vector<double> next(w.dim(1), 0.0);
      for (std::size_t o : ch.out) {
        double z = p.body[r].bias[o];
        for (std::size_t i : ch.in) z += h[i] * w[i * w.dim(1) + o];
        margin = std::min(margin, std::abs(z));
        next[o] = std::max(z, 0.0);
      }
      h = std::move(next);
    }
  }
  return margin;
}

Outcome gradients_match_finite_differences() {
  Outcome o;
  // points closer than this to a kink are redrawn: no derivative exists there
  constexpr double kMargin = 1e-4;
  double worst = 0.0, worst_abs = 0.0;
  std::size_t entries = 0, redrawn = 0, accepted = 0;
  for (std::uint64_t point = 0; accepted < 20; ++point) {
    auto f = testing::mlp_fixture(3, 100 + point, 24, 2);
    testing::jitter(f.params, 200 + point, 0.2);
    std::mt19937_64 rng(300 + point);
    const auto batches = random_batches(f.spec, 4, rng);
    ModelParams snapshot = f.params;
    testing::jitter(snapshot, 400 + point, 0.2);
    const Batch& nb = batches[2];

    double margin = INFINITY;
    for (int j = 1; j <= 3; ++j) {
      for (int l = 1; l <= 3; ++l) {
        margin = std::min({margin, relu_margin(f.params, f.spec, f.hierarchy.at(j, l), batches[static_cast<std::size_t>(j - 1)].inputs),
                           relu_margin(f.params, f.spec, f.hierarchy.at(j, l), nb.inputs)});
      }
    }
    if (margin < kMargin) {
      ++redrawn;
      continue;
    }
    ++accepted;

    f.params.zero_grad();
    joint_grad(f.params, f.spec, f.hierarchy, batches, 0.01);
    const auto joint_analytic = flat_grads(f.params);
    const auto joint_numeric =
        numeric_grads(f.params, [&] { return joint_loss(f.params, f.spec, f.hierarchy, batches, 0.01).total; });
    const GradCheckResult rj = compare_gradients(joint_analytic, joint_numeric);
    o.require(rj.ok, "joint objective, point " + std::to_string(point) + ": " + rj.message);

    const DistillTargets targets = distill_targets(snapshot, f.spec, f.hierarchy, 3, nb.inputs, 2.0);
    const std::vector<std::size_t> idx{0, 1, 2, 3};
    f.params.zero_grad();
    sequential_loss(f.params, f.spec, f.hierarchy, nb, idx, targets, 0.01, true);
    const auto seq_analytic = flat_grads(f.params);
    const auto seq_numeric = numeric_grads(
        f.params, [&] { return sequential_loss(f.params, f.spec, f.hierarchy, nb, idx, targets, 0.01, false).total; });
    const GradCheckResult rs = compare_gradients(seq_analytic, seq_numeric);
    o.require(rs.ok, "sequential objective, point " + std::to_string(point) + ": " + rs.message);

    worst = std::max({worst, rj.worst_rel, rs.worst_rel});
    worst_abs = std::max({worst_abs, rj.worst_abs, rs.worst_abs});
    entries += joint_analytic.size() + seq_analytic.size();
  }
  if (o.pass) {
    o.detail = fmt("20 points (%.0f redrawn within 1e-4 of a kink), %.0f entries, ", static_cast<double>(redrawn),
                   static_cast<double>(entries)) +
               fmt("worst rel err %.2e, worst abs err %.2e", worst, worst_abs);
  }
  return o;
}

// ---- 5 ----

bool bitwise_zero(const Tensor& g, const std::vector<std::size_t>& rows, const std::vector<std::size_t>& cols) {
  const std::size_t width = g.dim(1);
  const auto grad = g.grad();
  for (std::size_t r : rows) {
    for (std::size_t c : cols) {
      const double v = grad[r * width + c];
      if (v != 0.0 || std::signbit(v)) return false;
    }
  }
  return true;
}

Outcome masked_gradient_structure() {
  Outcome o;
  std::size_t zero_blocks = 0, live_blocks = 0;
  for (std::size_t k : {2u, 3u, 4u}) {
    auto f = testing::mlp_fixture(k, 7 * k, 24, 3);
    testing::jitter(f.params, 11 * k, 0.2);
    std::mt19937_64 rng(13 * k);
    const auto batches = random_batches(f.spec, 6, rng);
    const auto S = s_matrix(f.configs);
    for (int j = 1; j <= static_cast<int>(k); ++j) {
      for (int l = 1; l <= static_cast<int>(k); ++l) {
        ObjectiveOptions single;
        single.include = [j, l](int t, int lv, TermKind) { return t == j && lv == l; };
        single.include_decay = false;
        f.params.zero_grad();
        joint_grad(f.params, f.spec, f.hierarchy, batches, 0.0, single);
        for (std::size_t r = 0; r < f.spec.body.size(); ++r) {
          const LayerGroups& g = f.partition.layers[r];
          const Tensor& w = f.params.body[r].weight;
          for (int i = 1; i <= static_cast<int>(k); ++i) {
            for (int i2 = 1; i2 <= static_cast<int>(k); ++i2) {
              const int s_in = S[static_cast<std::size_t>(j - 1)][static_cast<std::size_t>(i - 1)];
              const int s_out = S[static_cast<std::size_t>(j - 1)][static_cast<std::size_t>(i2 - 1)];
              const bool zero = bitwise_zero(w, testing::channels(g.in[static_cast<std::size_t>(i - 1)]),
                                             testing::channels(g.out[static_cast<std::size_t>(i2 - 1)]));
              if (l < std::max(s_in, s_out)) {
                o.require(zero, "k=" + std::to_string(k) + " term (l=" + std::to_string(l) + ", j=" +
                                    std::to_string(j) + ") touched block (" + std::to_string(i) + "," +
                                    std::to_string(i2) + ") of body layer " + std::to_string(r + 1));
                ++zero_blocks;
              } else {
                live_blocks += zero ? 0 : 1;
              }
            }
          }
        }
      }
    }
  }
  o.require(live_blocks > 0, "no included block received gradient");
  if (o.pass) {
    o.detail = std::to_string(zero_blocks) + " excluded blocks bitwise zero, " + std::to_string(live_blocks) +
               " included blocks nonzero (k=2,3,4)";
  }
  return o;
}

// ---- 6 ----

/// Plain multi-head network over the whole body, written directly against
/// the tape: task input layer, every body layer at full width, task head.
NodeId direct_logits(Tape& tape, ModelParams& p, const BackboneSpec& spec, int task, NodeId x, bool frozen) {
  const auto t = static_cast<std::size_t>(task - 1);
  const auto leaf = [&](Tensor& w) { return frozen ? tape.frozen(w) : tape.parameter(w); };
  NodeId h = tape.relu(tape.bias_add(tape.matmul(x, leaf(p.inputs[t].weight)), leaf(p.inputs[t].bias)));
  for (std::size_t r = 0; r < spec.body.size(); ++r) {
    h = tape.bias_add(tape.matmul(h, leaf(p.body[r].weight)), leaf(p.body[r].bias));
    if (spec.body[r].relu) h = tape.relu(h);
  }
  return tape.bias_add(tape.matmul(h, leaf(p.heads[t][0].weight)), leaf(p.heads[t][0].bias));
}

/// Learning-without-forgetting objective: CE of the new task plus soft-target
/// CE of every old head against the snapshot's softened outputs, plus decay.
double direct_lwf(ModelParams& p, ModelParams& snapshot, const BackboneSpec& spec, const Batch& b, double T,
                  double decay) {
  const int k = static_cast<int>(spec.task_count());
  std::vector<Tensor> soft;
  for (int j = 1; j < k; ++j) {
    Tape old;
    direct_logits(old, snapshot, spec, j, old.input(), true);
    const Tensor& z = old.forward_eval({b.inputs});
    Tensor q(z.shape());
    const std::size_t c = z.dim(1);
    for (std::size_t i = 0; i < z.dim(0); ++i) {
      double m = -INFINITY, s = 0.0;
      for (std::size_t a = 0; a < c; ++a) m = std::max(m, z[i * c + a] / T);
      for (std::size_t a = 0; a < c; ++a) s += q[i * c + a] = std::exp(z[i * c + a] / T - m);
      for (std::size_t a = 0; a < c; ++a) q[i * c + a] /= s;
    }
    soft.push_back(std::move(q));
  }
  Tape tape;
  const NodeId x = tape.input();
  NodeId total = tape.softmax_cross_entropy(direct_logits(tape, p, spec, k, x, false), b.labels);
  for (int j = 1; j < k; ++j) {
    total = tape.add(total, tape.soft_target_cross_entropy(direct_logits(tape, p, spec, j, x, false),
                                                           soft[static_cast<std::size_t>(j - 1)], T));
  }
  NodeId sq = tape.sum_squares(tape.parameter(p.inputs[0].weight));
  for (std::size_t t = 1; t < p.inputs.size(); ++t) sq = tape.add(sq, tape.sum_squares(tape.parameter(p.inputs[t].weight)));
  for (auto& layer : p.body) sq = tape.add(sq, tape.sum_squares(tape.parameter(layer.weight)));
  for (auto& heads : p.heads) sq = tape.add(sq, tape.sum_squares(tape.parameter(heads[0].weight)));
  tape.add(total, tape.scale(sq, 0.5 * decay));
  const double value = tape.forward_eval({b.inputs}).item();
  tape.backward_eval();
  return value;
}

Outcome degenerate_equivalences() {
  Outcome o;
  // (a) k = 1: joint trainer vs single-task nested trainer, 50 steps
  BackboneSpec spec = mlp_preset(testing::dense_tasks(1, 2, 4));
  const UnitPartition p = equal_partition(spec, 3);
  Hierarchy nested;
  nested.masks.emplace_back();
  for (int l = 1; l <= 3; ++l) nested.masks[0].push_back(level_mask(p, nested_config(3), l));
  attach_heads(spec, nested);
  const data::Split task = data::gen_blobs({.classes = 4, .samples_per_class = 20, .seed = 61});
  TrainConfig config;
  config.batch_size = 12;  // 56 samples: 5 steps per epoch
  config.epochs = 10;
  config.weight_decay = 5e-4;
  config.seed = 62;
  const ModelParams initial = init_params(spec, nested, 63);
  const TrainResult joint = train_joint(TaskBundle{{task}}, spec, nested, initial, config);
  const TrainResult single = train_single(task, spec, nested, initial, config);
  o.require(joint.step_losses.size() == 50 && single.step_losses.size() == 50, "expected 50 optimization steps");
  const double loss_gap = max_abs_diff(joint.step_losses, single.step_losses);
  const double param_gap = max_abs_diff(flat_values(joint.params), flat_values(single.params));
  o.require(loss_gap <= 1e-12 && param_gap <= 1e-12,
            fmt("k=1 trajectories differ: loss %.3e, params %.3e", loss_gap, param_gap));

  // (b) n_h = 1 with full masks: sequential objective vs directly coded distillation objective
  BackboneSpec lwf_spec = mlp_preset(testing::dense_tasks(3, 2, 3));
  const UnitPartition lp = equal_partition(lwf_spec, 3);
  const Hierarchy flat = flat_hierarchy(lp, 3);
  attach_heads(lwf_spec, flat);
  ModelParams snapshot = init_params(lwf_spec, flat, 71);
  testing::jitter(snapshot, 72, 0.2);
  ModelParams ours = snapshot, direct = snapshot;
  std::mt19937_64 rng(73);
  const Batch batch{testing::random_tensor({16, 2}, rng), testing::random_labels(16, 3, rng)};
  std::vector<std::size_t> idx(16);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const DistillTargets targets = distill_targets(snapshot, lwf_spec, flat, 3, batch.inputs, 2.0);
  TrainConfig sgd;
  sgd.schedule = {{0, 0.05}};
  MomentumState state_ours, state_direct;
  double worst_grad = 0.0, worst_loss = 0.0;
  for (int step = 0; step < 20; ++step) {
    ours.zero_grad();
    direct.zero_grad();
    const double a = sequential_loss(ours, lwf_spec, flat, batch, idx, targets, 1e-3, true).total;
    const double b = direct_lwf(direct, snapshot, lwf_spec, batch, 2.0, 1e-3);
    worst_loss = std::max(worst_loss, std::abs(a - b));
    worst_grad = std::max(worst_grad, max_abs_diff(flat_grads(ours), flat_grads(direct)));
    sgd_step(ours, state_ours, sgd, 0);
    sgd_step(direct, state_direct, sgd, 0);
  }
  o.require(worst_grad <= 1e-10 && worst_loss <= 1e-10,
            fmt("distillation mismatch: loss %.3e, gradient %.3e", worst_loss, worst_grad));
  if (o.pass) {
    o.detail = fmt("(a) 50 steps, loss gap %.1e, param gap %.1e; ", loss_gap, param_gap) +
               fmt("(b) 20 steps, max grad gap %.1e", worst_grad);
  }
  return o;
}

// ---- 7 ----

Outcome distillation_stationarity() {
  Outcome o;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto f = testing::mlp_fixture(3, 500 + seed, 24, 2);
    testing::jitter(f.params, 600 + seed, 0.2);
    std::mt19937_64 rng(700 + seed);
    const Batch b{testing::random_tensor({12, 2}, rng), testing::random_labels(12, 3, rng)};
    std::vector<std::size_t> idx(12);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const DistillTargets targets = distill_targets(f.params, f.spec, f.hierarchy, 3, b.inputs, 2.0);
    ObjectiveOptions distill_only;
    distill_only.include = [](int, int, TermKind kind) { return kind == TermKind::kDistillation; };
    distill_only.include_decay = false;
    f.params.zero_grad();
    sequential_loss(f.params, f.spec, f.hierarchy, b, idx, targets, 0.0, true, distill_only);
    double sq = 0.0;
    for (double g : flat_grads(f.params)) sq += g * g;
    worst = std::max(worst, std::sqrt(sq));
  }
  o.require(worst <= 1e-8, fmt("distillation gradient norm %.3e at the snapshot", worst));
  if (o.pass) o.detail = fmt("max gradient norm %.2e over 5 snapshots", worst);
  return o;
}

// ---- 8 ----

Outcome joint_learning_on_blobs() {
  Outcome o;
  TaskBundle bundle;
  for (std::uint64_t j = 0; j < 3; ++j) {
    bundle.tasks.push_back(data::gen_blobs(
        {.classes = 4, .samples_per_class = 175, .dim = 2, .spread = 0.25, .seed = 81 + j, .train_parts = 5, .test_parts = 2}));
    o.require(bundle.tasks.back().train.size() == 500 && bundle.tasks.back().test.size() == 200, "dataset sizes");
  }
  BackboneSpec spec = mlp_preset(testing::dense_tasks(3, 2, 4));
  const Hierarchy h = build_hierarchy(equal_partition(spec, 3), derive_orders(3));
  attach_heads(spec, h);
  TrainConfig config;
  config.schedule = {{0, 0.05}, {100, 0.005}, {150, 0.0005}};
  config.epochs = 200;
  config.batch_size = 32;
  config.seed = 8;
  const TrainResult r = train_joint(bundle, spec, h, init_params(spec, h, 8), config);
  std::string acc;
  for (int j = 1; j <= 3; ++j) {
    const double top = evaluate(r.params, spec, h, bundle.tasks[static_cast<std::size_t>(j - 1)].test, j, 3);
    const double bottom = evaluate(r.params, spec, h, bundle.tasks[static_cast<std::size_t>(j - 1)].test, j, 1);
    o.require(top >= 0.90, fmt("task %.0f top-level accuracy %.3f < 0.90", j, top));
    o.require(bottom >= 0.80, fmt("task %.0f level-1 accuracy %.3f < 0.80", j, bottom));
    acc += fmt("t%.0f top %.3f L1 %.3f", j, top, bottom) + (j < 3 ? ", " : "");
  }
  if (o.pass) o.detail = acc;
  return o;
}

// ---- 9 ----

Outcome forgetting_with_and_without_distillation() {
  Outcome o;
  constexpr int kSeeds = 5;
  double drop_distill = 0.0, drop_ablation = 0.0;
  for (std::uint64_t seed = 1; seed <= kSeeds; ++seed) {
    const data::Split base =
        data::gen_blobs({.classes = 8, .samples_per_class = 200, .dim = 2, .spread = 0.35, .seed = seed});
    const auto train = data::split_classes(base.train, 2);
    const auto test = data::split_classes(base.test, 2);
    const TaskBundle bundle{{{train[0], test[0]}, {train[1], test[1]}}};
    BackboneSpec spec = mlp_preset(testing::dense_tasks(2, 2, 4));
    const Hierarchy h = build_hierarchy(equal_partition(spec, 2), derive_orders(2));
    attach_heads(spec, h);
    TrainConfig old_phase;
    old_phase.schedule = {{0, 0.05}};
    old_phase.epochs = 60;
    old_phase.seed = seed;
    TrainConfig new_phase = old_phase;
    new_phase.epochs = 100;
    for (bool distill : {true, false}) {
      const SequentialResult r = train_sequential(bundle, spec, h, init_params(spec, h, seed), {old_phase, new_phase, distill});
      const double after = evaluate(r.new_phase.params, spec, h, test[0], 1, 2);
      (distill ? drop_distill : drop_ablation) += (r.snapshot_accuracy[0][1] - after) / kSeeds;
    }
  }
  o.require(drop_distill <= 0.05, fmt("mean drop with distillation %.3f > 0.05", drop_distill));
  o.require(drop_ablation > 0.0 && drop_ablation >= 3.0 * std::max(drop_distill, 0.0),
            fmt("ablation drop %.3f is not >= 3x the distillation drop %.3f", drop_ablation, drop_distill));
  if (o.pass) {
    o.detail = fmt("mean task-1 top-level drop over 5 seeds: %.1f points with distillation, %.1f without",
                   100 * drop_distill, 100 * drop_ablation);
  }
  return o;
}

// ---- 10 ----

Outcome budget_behavior() {
  Outcome o;
  std::vector<TaskSpec> tasks;
  for (int j = 1; j <= 4; ++j) tasks.push_back({"t" + std::to_string(j), 4, {16, 16, 3}});
  BackboneSpec spec = conv_preset(tasks);
  const Hierarchy h = build_hierarchy(equal_partition(spec, 4), derive_orders(4));
  attach_heads(spec, h);
  const ModelParams params = init_params(spec, h, 10);
  const BudgetReport report = budget_table(spec, h, &params, LatencyOptions{100, 1000, 7});
  o.require(report.rows.size() == 16, "expected k x n_h = 16 rows, got " + std::to_string(report.rows.size()));
  std::string latencies;
  for (int j = 1; j <= 4; ++j) {
    for (int l = 1; l < 4; ++l) {
      const BudgetRow& lo = report.row(j, l);
      const BudgetRow& hi = report.row(j, l + 1);
      o.require(lo.body_params < hi.body_params, "body counts not increasing");
      o.require(*lo.latency_seconds <= *hi.latency_seconds,
                fmt("task %.0f: latency level %.0f > next level", j, l) +
                    fmt(" (%.3e s vs %.3e s)", *lo.latency_seconds, *hi.latency_seconds));
    }
  }
  for (int l = 1; l <= 4; ++l) latencies += fmt("%.0f us", 1e6 * *report.row(1, l).latency_seconds) + (l < 4 ? " / " : "");

  // 100 budgets spanning level 1 to beyond the top level of every task
  for (int j = 1; j <= 4; ++j) {
    const std::size_t lo = report.row(j, 1).total_params;
    const std::size_t hi = report.row(j, 4).total_params + 1000;
    int previous = 0;
    for (std::size_t b = 0; b < 100; ++b) {
      const std::size_t budget = lo + (hi - lo) * b / 99;
      const int level = select_level(report, j, budget);
      o.require(level >= previous, "select_level not monotone");
      o.require(report.row(j, level).total_params <= budget, "selected level exceeds the budget");
      o.require(level == 4 || report.row(j, level + 1).total_params > budget, "a larger level would have fit");
      previous = level;
    }
  }
  if (o.pass) o.detail = "16 rows; task 1 latency " + latencies;
  return o;
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  Outcome (*run)();
};

}  // namespace

int main() {
  const Criterion criteria[] = {
      {1, "configuration-rule fidelity", 1.0, orders_match_displayed_equations},
      {2, "nesting and partition invariants", 10.0, nesting_and_partition_invariants},
      {3, "density ratio 1:4:9:16", 1.0, density_ratio},
      {4, "gradient correctness vs finite differences", 120.0, gradients_match_finite_differences},
      {5, "masked-gradient structure", 30.0, masked_gradient_structure},
      {6, "degenerate equivalences", 60.0, degenerate_equivalences},
      {7, "distillation stationarity", 10.0, distillation_stationarity},
      {8, "desk-scale joint learning", 120.0, joint_learning_on_blobs},
      {9, "desk-scale forgetting", 120.0, forgetting_with_and_without_distillation},
      {10, "budget behavior", 60.0, budget_behavior},
  };
  int failures = 0;
  for (const Criterion& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (o.pass && seconds > c.budget_seconds) {
      o.pass = false;
      o.detail = fmt("took %.1f s, limit %.0f s", seconds, c.budget_seconds);
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s %2d %s (%.2f s): %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, seconds, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
