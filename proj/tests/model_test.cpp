#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "dvn/io.hpp"
#include "dvn/model.hpp"
#include "test_support.hpp"

using namespace dvn;
using dvn::testing::dense_tasks;
using dvn::testing::mlp_fixture;
using dvn::testing::random_tensor;

namespace {

/// Activations as (batch, height, width, channels); dense layers use 1x1.
struct Act {
  std::size_t b = 0, h = 1, w = 1, c = 0;
  std::vector<double> v;
  double& at(std::size_t n, std::size_t y, std::size_t x, std::size_t ch) { return v[((n * h + y) * w + x) * c + ch]; }
  double at(std::size_t n, std::size_t y, std::size_t x, std::size_t ch) const {
    return v[((n * h + y) * w + x) * c + ch];
  }
};

Act from_batch(const Tensor& x) {
  Act a;
  a.b = x.dim(0);
  if (x.rank() == 4) {
    a.h = x.dim(1);
    a.w = x.dim(2);
  }
  a.c = x.dim(x.rank() - 1);
  a.v.assign(x.data().begin(), x.data().end());
  return a;
}

/// Direct convolution with a standalone kernel `w` of (kh, kw, cin, cout).
Act conv(const Act& x, const std::vector<double>& w, const std::vector<double>& bias, std::size_t kh, std::size_t kw,
         std::size_t cout, std::size_t stride) {
  const std::size_t ph = kh / 2, pw = kw / 2;
  Act y;
  y.b = x.b;
  y.h = (x.h + 2 * ph - kh) / stride + 1;
  y.w = (x.w + 2 * pw - kw) / stride + 1;
  y.c = cout;
  y.v.assign(y.b * y.h * y.w * y.c, 0.0);
  for (std::size_t n = 0; n < x.b; ++n)
    for (std::size_t oy = 0; oy < y.h; ++oy)
      for (std::size_t ox = 0; ox < y.w; ++ox)
        for (std::size_t o = 0; o < cout; ++o) {
          double s = bias[o];
          for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(ph);
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pw);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(x.h) || ix >= static_cast<long>(x.w)) continue;
              for (std::size_t i = 0; i < x.c; ++i) {
                s += x.at(n, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), i) *
                     w[((ky * kw + kx) * x.c + i) * cout + o];
              }
            }
          y.at(n, oy, ox, o) = s;
        }
  return y;
}

void norm_eval(Act& x, const NormParams& np) {
  for (std::size_t i = 0; i < x.v.size(); ++i) {
    const std::size_t ch = i % x.c;
    x.v[i] = np.scale[ch] * (x.v[i] - np.running_mean[ch]) / std::sqrt(np.running_var[ch] + kNormEpsilon) +
             np.shift[ch];
  }
}

void relu(Act& x) {
  for (double& v : x.v) v = std::max(v, 0.0);
}

/// Eval-mode logits of a standalone network materialized from the masked
/// blocks: every body weight is copied into a fresh, smaller array.
Tensor standalone_logits(const ModelParams& p, const BackboneSpec& spec, const LevelMask& mask, const Tensor& batch) {
  const auto t = static_cast<std::size_t>(mask.task) - 1;
  const LayerSpec& in = spec.input_layers[t];
  Act h = conv(from_batch(batch), std::vector<double>(p.inputs[t].weight.data().begin(), p.inputs[t].weight.data().end()),
               std::vector<double>(p.inputs[t].bias.data().begin(), p.inputs[t].bias.data().end()), in.kernel_h,
               in.kernel_w, in.out_channels, in.stride);
  if (in.norm) norm_eval(h, p.norm(mask.task, mask.level, 0));
  if (in.relu) relu(h);

  // select the first body layer's input channels from the full stem output
  Act sel = h;
  sel.c = mask.layers[0].in.size();
  sel.v.clear();
  for (std::size_t i = 0; i < h.v.size() / h.c; ++i) {
    for (std::size_t ch : mask.layers[0].in) sel.v.push_back(h.v[i * h.c + ch]);
  }
  h = sel;

  for (std::size_t r = 0; r < spec.body.size(); ++r) {
    const LayerSpec& ls = spec.body[r];
    const auto& ci = mask.layers[r].in;
    const auto& co = mask.layers[r].out;
    if (r > 0) EXPECT_EQ(ci, mask.layers[r - 1].out);
    std::vector<double> w(ls.kernel_area() * ci.size() * co.size());
    std::vector<double> b(co.size());
    const Tensor& full = p.body[r].weight;
    for (std::size_t tap = 0; tap < ls.kernel_area(); ++tap)
      for (std::size_t i = 0; i < ci.size(); ++i)
        for (std::size_t o = 0; o < co.size(); ++o)
          w[(tap * ci.size() + i) * co.size() + o] = full[(tap * ls.in_channels + ci[i]) * ls.out_channels + co[o]];
    for (std::size_t o = 0; o < co.size(); ++o) b[o] = p.body[r].bias[co[o]];
    h = conv(h, w, b, ls.kernel_h, ls.kernel_w, co.size(), ls.stride);
    if (ls.norm) norm_eval(h, p.norm(mask.task, mask.level, r + 1));
    if (ls.relu) relu(h);
  }

  std::vector<double> feat(h.b * h.c, 0.0);
  for (std::size_t n = 0; n < h.b; ++n)
    for (std::size_t y = 0; y < h.h; ++y)
      for (std::size_t x = 0; x < h.w; ++x)
        for (std::size_t ch = 0; ch < h.c; ++ch) feat[n * h.c + ch] += h.at(n, y, x, ch) / static_cast<double>(h.h * h.w);

  const LayerParams& head = p.heads[t][static_cast<std::size_t>(mask.level) - 1];
  const std::size_t classes = head.bias.size();
  Tensor out({h.b, classes});
  for (std::size_t n = 0; n < h.b; ++n)
    for (std::size_t c = 0; c < classes; ++c) {
      double s = head.bias[c];
      for (std::size_t i = 0; i < h.c; ++i) s += feat[n * h.c + i] * head.weight[i * classes + c];
      out[n * classes + c] = s;
    }
  return out;
}

/// Fills every tensor with seeded values; running variances stay positive.
void randomize(ModelParams& p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 0.5);
  p.for_each([&](const std::string& name, Tensor& t, TensorRole) {
    const bool variance = name.ends_with("running_var");
    for (double& v : t.data()) v = variance ? 0.5 + std::abs(dist(rng)) : dist(rng);
  });
}

struct ConvFixture {
  BackboneSpec spec;
  Hierarchy hierarchy;
  ModelParams params;
};

ConvFixture conv_fixture(std::size_t k, std::uint64_t seed) {
  ConvFixture f;
  std::vector<TaskSpec> tasks;
  for (std::size_t j = 0; j < k; ++j) tasks.push_back({"c" + std::to_string(j + 1), 3, {j % 2 ? 8u : 4u, j % 2 ? 8u : 4u, 2}});
  f.spec = conv_preset(tasks, 2 * k + 1, 2);
  f.hierarchy = build_hierarchy(equal_partition(f.spec, k), derive_orders(static_cast<int>(k)));
  attach_heads(f.spec, f.hierarchy);
  f.params = init_params(f.spec, f.hierarchy, seed);
  randomize(f.params, seed + 1);
  return f;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor batch_for(const BackboneSpec& spec, int task, std::size_t n, std::mt19937_64& rng) {
  Shape s{n};
  const Shape& sample = spec.task(task).input_shape;
  s.insert(s.end(), sample.begin(), sample.end());
  return random_tensor(s, rng);
}

}  // namespace

TEST(InitParams, XavierBoundForDense4x4) {
  BackboneSpec spec = mlp_preset(dense_tasks(1, 4, 2), 4, 1);
  const Hierarchy h = build_hierarchy(equal_partition(spec, 1), derive_orders(1));
  attach_heads(spec, h);
  const ModelParams p = init_params(spec, h, 11);
  const double bound = std::sqrt(6.0 / 8.0);
  EXPECT_DOUBLE_EQ(xavier_bound({4, 4}), bound);
  bool any_large = false;
  for (double v : p.body[0].weight.data()) {
    EXPECT_LE(std::abs(v), bound);
    any_large = any_large || std::abs(v) > bound / 2;
  }
  EXPECT_TRUE(any_large);
  for (double v : p.body[0].bias.data()) EXPECT_EQ(v, 0.0);
}

TEST(InitParams, ConvFanIncludesReceptiveField) {
  EXPECT_DOUBLE_EQ(xavier_bound({3, 3, 4, 8}), std::sqrt(6.0 / (36.0 + 72.0)));
}

TEST(InitParams, DeterministicPerSeed) {
  const auto a = mlp_fixture(3, 42);
  const auto b = mlp_fixture(3, 42);
  const auto c = mlp_fixture(3, 43);
  EXPECT_EQ(flat_values(a.params), flat_values(b.params));
  EXPECT_NE(flat_values(a.params), flat_values(c.params));
}

TEST(InitParams, NormDefaults) {
  const ConvFixture f = [] {
    ConvFixture g;
    g.spec = conv_preset({{"a", 2, {4, 4, 1}}}, 4, 2);
    g.hierarchy = build_hierarchy(equal_partition(g.spec, 1), derive_orders(1));
    attach_heads(g.spec, g.hierarchy);
    g.params = init_params(g.spec, g.hierarchy, 3);
    return g;
  }();
  const NormParams& np = f.params.norm(1, 1, 2);
  for (double v : np.scale.data()) EXPECT_EQ(v, 1.0);
  for (double v : np.shift.data()) EXPECT_EQ(v, 0.0);
  for (double v : np.running_var.data()) EXPECT_EQ(v, 1.0);
}

TEST(InitParams, NormSizedToMaskedChannels) {
  ConvFixture f = conv_fixture(3, 1);
  // 7 channels over 3 units: groups 3/2/2
  EXPECT_EQ(f.params.norm(2, 1, 1).scale.size(), 2u);
  EXPECT_EQ(f.params.norm(2, 2, 1).scale.size(), 5u);
  EXPECT_EQ(f.params.norm(2, 3, 1).scale.size(), 7u);
  EXPECT_EQ(f.params.norm(2, 1, 0).scale.size(), 7u);
}

Hierarchy nested_hierarchy(const UnitPartition& partition) {
  const VirtualNetConfig c = nested_config(partition.k);
  Hierarchy h;
  h.masks.emplace_back();
  for (std::size_t l = 1; l <= partition.k; ++l) h.masks[0].push_back(level_mask(partition, c, static_cast<int>(l)));
  return h;
}

TEST(ForwardLogits, IdentityComposition) {
  BackboneSpec spec = mlp_preset(dense_tasks(1, 4, 2), 4, 1);
  const Hierarchy h = nested_hierarchy(equal_partition(spec, 2));
  attach_heads(spec, h);
  ModelParams p = init_params(spec, h, 5);
  auto eye = [](Tensor& w) {
    for (std::size_t i = 0; i < w.dim(0); ++i)
      for (std::size_t j = 0; j < w.dim(1); ++j) w[i * w.dim(1) + j] = i == j ? 1.0 : 0.0;
  };
  eye(p.inputs[0].weight);
  eye(p.body[0].weight);
  eye(p.heads[0][0].weight);
  const Tensor x = Tensor::matrix(2, 4, {1, 2, 3, 4, 5, 6, 7, 8});
  const Tensor z = predict_logits(p, spec, h.at(1, 1), x);
  EXPECT_EQ(z.shape(), (Shape{2, 2}));
  EXPECT_EQ(z[0], 1.0);
  EXPECT_EQ(z[1], 2.0);
  EXPECT_EQ(z[2], 5.0);
  EXPECT_EQ(z[3], 6.0);
}

TEST(ForwardLogits, MatchesStandaloneExtractionMlp) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto f = mlp_fixture(3, seed, 12, 3);
    randomize(f.params, seed + 100);
    std::mt19937_64 rng(seed);
    for (int task = 1; task <= 3; ++task) {
      const Tensor x = batch_for(f.spec, task, 5, rng);
      for (int level = 1; level <= 3; ++level) {
        const LevelMask& m = f.hierarchy.at(task, level);
        EXPECT_LE(max_abs_diff(predict_logits(f.params, f.spec, m, x), standalone_logits(f.params, f.spec, m, x)), 1e-12)
            << "seed " << seed << " task " << task << " level " << level;
      }
    }
  }
}

TEST(ForwardLogits, MatchesStandaloneExtractionConv) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    ConvFixture f = conv_fixture(3, seed);
    std::mt19937_64 rng(seed);
    for (int task = 1; task <= 3; ++task) {
      const Tensor x = batch_for(f.spec, task, 3, rng);
      for (int level = 1; level <= 3; ++level) {
        const LevelMask& m = f.hierarchy.at(task, level);
        EXPECT_LE(max_abs_diff(predict_logits(f.params, f.spec, m, x), standalone_logits(f.params, f.spec, m, x)), 1e-12)
            << "seed " << seed << " task " << task << " level " << level;
      }
    }
  }
}

TEST(ForwardLogits, OutsideMaskPerturbationIsInvisible) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto f = mlp_fixture(3, seed, 9, 2);
    std::mt19937_64 rng(seed);
    for (int task = 1; task <= 3; ++task) {
      const Tensor x = batch_for(f.spec, task, 4, rng);
      for (int level = 1; level < 3; ++level) {
        const LevelMask& m = f.hierarchy.at(task, level);
        const Tensor before = predict_logits(f.params, f.spec, m, x);
        ModelParams q = f.params;
        for (std::size_t r = 0; r < f.spec.body.size(); ++r) {
          Tensor& w = q.body[r].weight;
          const std::size_t out = w.dim(1);
          for (std::size_t i = 0; i < w.dim(0); ++i)
            for (std::size_t o = 0; o < out; ++o) {
              const bool inside = std::binary_search(m.layers[r].in.begin(), m.layers[r].in.end(), i) &&
                                  std::binary_search(m.layers[r].out.begin(), m.layers[r].out.end(), o);
              if (!inside) w[i * out + o] += 10.0;
            }
          for (std::size_t o = 0; o < out; ++o) {
            if (!std::binary_search(m.layers[r].out.begin(), m.layers[r].out.end(), o)) q.body[r].bias[o] -= 3.0;
          }
        }
        const Tensor after = predict_logits(q, f.spec, m, x);
        for (std::size_t i = 0; i < before.size(); ++i) ASSERT_EQ(before[i], after[i]);
      }
    }
  }
}

TEST(ForwardLogits, TopLevelEqualsUnmaskedNetwork) {
  auto f = mlp_fixture(2, 9, 8, 2);
  std::mt19937_64 rng(1);
  const Tensor x = batch_for(f.spec, 2, 6, rng);
  const LevelMask top = f.hierarchy.at(2, 2);
  const LevelMask full = full_mask(equal_partition(f.spec, 2), 2);
  LevelMask relabelled = full;
  relabelled.level = 2;
  const Tensor a = predict_logits(f.params, f.spec, top, x);
  const Tensor b = predict_logits(f.params, f.spec, relabelled, x);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(ForwardLogits, EvalIsSideEffectFree) {
  ConvFixture f = conv_fixture(2, 4);
  std::mt19937_64 rng(2);
  const Tensor x = batch_for(f.spec, 1, 3, rng);
  const std::vector<double> before = flat_values(f.params);
  const Tensor a = forward_logits(f.params, f.spec, f.hierarchy.at(1, 2), x, NormMode::kEval);
  const Tensor b = forward_logits(f.params, f.spec, f.hierarchy.at(1, 2), x, NormMode::kEval);
  EXPECT_EQ(flat_values(f.params), before);
  EXPECT_EQ(std::vector<double>(a.data().begin(), a.data().end()), std::vector<double>(b.data().begin(), b.data().end()));
}

TEST(ForwardLogits, TrainModeUpdatesOnlyItsOwnStatistics) {
  ConvFixture f = conv_fixture(2, 4);
  std::mt19937_64 rng(2);
  const Tensor x = batch_for(f.spec, 1, 3, rng);
  const Tensor other_before = f.params.norm(1, 2, 1).running_mean;
  const Tensor own_before = f.params.norm(1, 1, 1).running_mean;
  forward_logits(f.params, f.spec, f.hierarchy.at(1, 1), x, NormMode::kTrain);
  const auto other = f.params.norm(1, 2, 1).running_mean.data();
  const auto own = f.params.norm(1, 1, 1).running_mean.data();
  EXPECT_TRUE(std::equal(other.begin(), other.end(), other_before.data().begin()));
  EXPECT_FALSE(std::equal(own.begin(), own.end(), own_before.data().begin()));
}

TEST(ForwardLogits, ShapeErrors) {
  auto f = mlp_fixture(2, 1);
  EXPECT_THROW(predict_logits(f.params, f.spec, f.hierarchy.at(1, 1), Tensor({3, 5})), ShapeError);
  LevelMask bogus = f.hierarchy.at(1, 1);
  bogus.level = 7;
  EXPECT_THROW(predict_logits(f.params, f.spec, bogus, Tensor({3, 2})), ConfigError);
}

TEST(ParamsIo, RoundTripBitwise) {
  ConvFixture f = conv_fixture(2, 8);
  const auto dir = std::filesystem::temp_directory_path() / "dvn_params_io";
  std::filesystem::create_directories(dir);
  save_params(f.params, dir / "model");
  const ModelParams back = load_params(f.spec, f.hierarchy, dir / "model");
  EXPECT_EQ(flat_values(back), flat_values(f.params));
  EXPECT_EQ(back.norm(2, 1, 1).running_var.data()[0], f.params.norm(2, 1, 1).running_var.data()[0]);
  std::filesystem::remove_all(dir);
}

TEST(ParamsIo, RejectsMismatchedLayout) {
  auto f = mlp_fixture(2, 1);
  const auto dir = std::filesystem::temp_directory_path() / "dvn_params_mismatch";
  std::filesystem::create_directories(dir);
  save_params(f.params, dir / "model");
  auto g = mlp_fixture(3, 1);
  EXPECT_THROW(load_params(g.spec, g.hierarchy, dir / "model"), std::exception);
  std::filesystem::remove_all(dir);
}

TEST(ArgmaxRows, FirstMaximumWins) {
  const Tensor z = Tensor::matrix(2, 3, {1, 3, 3, -1, -2, -0.5});
  EXPECT_EQ(argmax_rows(z), (std::vector<int>{1, 2}));
}
