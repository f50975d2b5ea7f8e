#include "dvn/data.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>
#include <random>
#include <stdexcept>

#include "dvn/backbone.hpp"
#include "dvn/io.hpp"

namespace dvn::data {

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  const std::size_t fs = sample_size();
  Shape shape{indices.size()};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  std::vector<double> out;
  out.reserve(indices.size() * fs);
  for (std::size_t i : indices) {
    if (i >= size()) throw std::out_of_range("sample index " + std::to_string(i) + " out of range");
    out.insert(out.end(), features.begin() + static_cast<std::ptrdiff_t>(i * fs),
               features.begin() + static_cast<std::ptrdiff_t>((i + 1) * fs));
  }
  return Tensor(std::move(shape), std::move(out));
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels.at(i));
  return out;
}

Tensor Dataset::all_features() const {
  Shape shape{size()};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  return Tensor(std::move(shape), features);
}

std::vector<int> Dataset::all_labels() const { return {labels.begin(), labels.end()}; }

std::vector<std::size_t> Dataset::histogram() const {
  std::vector<std::size_t> h(classes, 0);
  for (auto y : labels) ++h.at(static_cast<std::size_t>(y));
  return h;
}

namespace {

void check_split(std::size_t train_parts, std::size_t test_parts) {
  if (train_parts == 0 || test_parts == 0) throw ConfigError("train and test parts must both be positive");
}

// Round-robin over classes so every prefix of the file is near-balanced.
template <class SampleFn>
Split generate(std::size_t classes, std::size_t per_class, std::size_t train_parts, std::size_t test_parts,
               std::size_t sample_size, SampleFn&& sample) {
  Split s;
  const std::size_t cycle = train_parts + test_parts;
  std::vector<double> x(sample_size);
  for (std::size_t n = 0; n < per_class; ++n) {
    Dataset& dst = n % cycle < train_parts ? s.train : s.test;
    for (std::size_t c = 0; c < classes; ++c) {
      sample(c, x);
      dst.features.insert(dst.features.end(), x.begin(), x.end());
      dst.labels.push_back(static_cast<std::int32_t>(c));
    }
  }
  return s;
}

void stamp(Split& s, const std::string& generator, std::size_t classes, const Shape& shape, std::uint64_t seed,
           std::map<std::string, double> params) {
  for (Dataset* d : {&s.train, &s.test}) {
    d->classes = classes;
    d->sample_shape = shape;
    d->seed = seed;
    d->generator = generator;
    d->parameters = params;
  }
  s.train.name = generator + "-train";
  s.test.name = generator + "-test";
}

}  // namespace

Split gen_blobs(const BlobOptions& o) {
  if (o.classes < 2) throw ConfigError("gen_blobs needs at least 2 classes");
  if (!(o.spread > 0.0)) throw ConfigError("gen_blobs spread must be positive");
  if (o.dim < 1 || o.samples_per_class < 1) throw ConfigError("gen_blobs needs dim >= 1 and samples >= 1");
  check_split(o.train_parts, o.test_parts);

  std::size_t side = 1;
  auto capacity = [&](std::size_t s) {
    std::size_t c = 1;
    for (std::size_t d = 0; d < o.dim && c < o.classes; ++d) c *= s;
    return c;
  };
  while (capacity(side) < o.classes) ++side;

  std::mt19937_64 rng(o.seed);
  std::vector<std::size_t> site(o.classes);
  std::iota(site.begin(), site.end(), std::size_t{0});
  std::shuffle(site.begin(), site.end(), rng);

  std::vector<std::vector<double>> means(o.classes, std::vector<double>(o.dim, 0.0));
  const double centre = (static_cast<double>(side) - 1.0) / 2.0;
  for (std::size_t c = 0; c < o.classes; ++c) {
    std::size_t s = site[c];
    for (std::size_t d = 0; d < o.dim; ++d) {
      means[c][d] = static_cast<double>(s % side) - centre;
      s /= side;
    }
  }

  std::normal_distribution<double> noise(0.0, o.spread);
  Split out = generate(o.classes, o.samples_per_class, o.train_parts, o.test_parts, o.dim,
                       [&](std::size_t c, std::vector<double>& x) {
                         for (std::size_t d = 0; d < o.dim; ++d) x[d] = means[c][d] + noise(rng);
                       });
  stamp(out, "blobs", o.classes, {o.dim}, o.seed,
        {{"classes", static_cast<double>(o.classes)},
         {"samples_per_class", static_cast<double>(o.samples_per_class)},
         {"dim", static_cast<double>(o.dim)},
         {"spread", o.spread},
         {"train_parts", static_cast<double>(o.train_parts)},
         {"test_parts", static_cast<double>(o.test_parts)}});
  return out;
}

Split gen_image_blobs(const ImageBlobOptions& o) {
  if (o.classes < 2) throw ConfigError("gen_image_blobs needs at least 2 classes");
  if (!(o.spread > 0.0)) throw ConfigError("gen_image_blobs spread must be positive");
  if (o.height < 2 || o.width < 2 || o.channels < 1) throw ConfigError("gen_image_blobs needs at least 2x2x1 images");
  check_split(o.train_parts, o.test_parts);

  std::mt19937_64 rng(o.seed);
  std::bernoulli_distribution coin(0.5);
  std::uniform_real_distribution<double> level(-1.0, 1.0);
  std::vector<std::vector<double>> cells(o.classes, std::vector<double>(4 * o.channels));
  for (auto& pattern : cells) {
    // a per-channel offset keeps classes apart after global pooling
    std::vector<double> offset(o.channels);
    for (double& v : offset) v = level(rng);
    for (std::size_t i = 0; i < pattern.size(); ++i) pattern[i] = offset[i % o.channels] + (coin(rng) ? 0.5 : -0.5);
  }
  const std::size_t sample_size = o.height * o.width * o.channels;
  std::vector<std::vector<double>> protos(o.classes, std::vector<double>(sample_size));
  for (std::size_t c = 0; c < o.classes; ++c) {
    for (std::size_t y = 0; y < o.height; ++y)
      for (std::size_t x = 0; x < o.width; ++x)
        for (std::size_t ch = 0; ch < o.channels; ++ch) {
          const std::size_t cell = (2 * y / o.height) * 2 + (2 * x / o.width);
          protos[c][(y * o.width + x) * o.channels + ch] = cells[c][cell * o.channels + ch];
        }
  }
  std::normal_distribution<double> noise(0.0, o.spread);
  Split out = generate(o.classes, o.samples_per_class, o.train_parts, o.test_parts, sample_size,
                       [&](std::size_t c, std::vector<double>& x) {
                         for (std::size_t i = 0; i < sample_size; ++i) x[i] = protos[c][i] + noise(rng);
                       });
  stamp(out, "image-blobs", o.classes, {o.height, o.width, o.channels}, o.seed,
        {{"classes", static_cast<double>(o.classes)},
         {"samples_per_class", static_cast<double>(o.samples_per_class)},
         {"height", static_cast<double>(o.height)},
         {"width", static_cast<double>(o.width)},
         {"channels", static_cast<double>(o.channels)},
         {"spread", o.spread},
         {"train_parts", static_cast<double>(o.train_parts)},
         {"test_parts", static_cast<double>(o.test_parts)}});
  return out;
}

std::vector<Dataset> split_classes(const Dataset& base, std::size_t m) {
  if (m < 1 || m > base.classes) {
    throw ConfigError("cannot split " + std::to_string(base.classes) + " classes into " + std::to_string(m) + " subsets");
  }
  std::vector<std::size_t> first(m + 1, 0);
  for (std::size_t t = 0; t < m; ++t) first[t + 1] = first[t] + base.classes / m + (t < base.classes % m ? 1 : 0);

  std::vector<Dataset> out(m);
  const std::size_t fs = base.sample_size();
  for (std::size_t t = 0; t < m; ++t) {
    Dataset& d = out[t];
    d.name = base.name + "-part" + std::to_string(t + 1);
    d.task_id = static_cast<int>(t) + 1;
    d.classes = first[t + 1] - first[t];
    d.sample_shape = base.sample_shape;
    d.seed = base.seed;
    d.generator = base.generator;
    d.parameters = base.parameters;
    d.parameters["split_index"] = static_cast<double>(t);
    d.parameters["split_count"] = static_cast<double>(m);
  }
  for (std::size_t i = 0; i < base.size(); ++i) {
    const auto y = static_cast<std::size_t>(base.labels[i]);
    const std::size_t t = static_cast<std::size_t>(std::upper_bound(first.begin(), first.end(), y) - first.begin()) - 1;
    Dataset& d = out[t];
    d.features.insert(d.features.end(), base.features.begin() + static_cast<std::ptrdiff_t>(i * fs),
                      base.features.begin() + static_cast<std::ptrdiff_t>((i + 1) * fs));
    d.labels.push_back(static_cast<std::int32_t>(y - first[t]));
  }
  return out;
}

std::pair<Dataset, Dataset> coarse_fine(const Dataset& base, const std::vector<int>& groups) {
  if (groups.size() != base.classes) {
    throw ConfigError("coarse mapping covers " + std::to_string(groups.size()) + " of " +
                      std::to_string(base.classes) + " fine classes");
  }
  int coarse_classes = 0;
  for (int g : groups) {
    if (g < 0) throw ConfigError("coarse labels must be non-negative");
    coarse_classes = std::max(coarse_classes, g + 1);
  }
  Dataset coarse = base;
  Dataset fine = base;
  coarse.name = base.name + "-coarse";
  fine.name = base.name + "-fine";
  coarse.task_id = 1;
  fine.task_id = 2;
  coarse.classes = static_cast<std::size_t>(coarse_classes);
  for (auto& y : coarse.labels) y = groups[static_cast<std::size_t>(y)];
  return {std::move(coarse), std::move(fine)};
}

namespace {

std::filesystem::path suffixed(const std::filesystem::path& stem, const char* suffix) {
  std::filesystem::path p = stem;
  p += suffix;
  return p;
}

}  // namespace

void save_dataset(const Dataset& d, const std::filesystem::path& stem) {
  if (d.features.size() != d.size() * d.sample_size()) throw ShapeError("dataset features do not match its labels");
  json manifest{{"name", d.name},
                {"task_id", d.task_id},
                {"classes", d.classes},
                {"sample_shape", d.sample_shape},
                {"samples", d.size()},
                {"seed", d.seed},
                {"generator", {{"name", d.generator}, {"parameters", d.parameters}}},
                {"binary", suffixed(stem, ".bin").filename().string()},
                {"layout", {{"features", "f64le"}, {"labels", "i32le"}}}};
  std::string blob(d.features.size() * sizeof(double) + d.labels.size() * sizeof(std::int32_t), '\0');
  std::memcpy(blob.data(), d.features.data(), d.features.size() * sizeof(double));
  std::memcpy(blob.data() + d.features.size() * sizeof(double), d.labels.data(), d.labels.size() * sizeof(std::int32_t));
  write_file_atomic(suffixed(stem, ".bin"), blob);
  write_file_atomic(suffixed(stem, ".json"), manifest.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& stem) {
  const json m = json::parse(read_file(suffixed(stem, ".json")));
  Dataset d;
  d.name = m.value("name", std::string{});
  d.task_id = m.value("task_id", 1);
  d.classes = m.at("classes").get<std::size_t>();
  d.sample_shape = m.at("sample_shape").get<Shape>();
  d.seed = m.value("seed", std::uint64_t{0});
  if (m.contains("generator")) {
    d.generator = m["generator"].value("name", std::string{});
    d.parameters = m["generator"].value("parameters", std::map<std::string, double>{});
  }
  const auto n = m.at("samples").get<std::size_t>();
  const std::string blob = read_file(suffixed(stem, ".bin"));
  const std::size_t feature_bytes = n * shape_size(d.sample_shape) * sizeof(double);
  if (blob.size() != feature_bytes + n * sizeof(std::int32_t)) {
    throw std::runtime_error("dataset binary " + suffixed(stem, ".bin").string() + " has " +
                             std::to_string(blob.size()) + " bytes, manifest implies " +
                             std::to_string(feature_bytes + n * sizeof(std::int32_t)));
  }
  d.features.resize(n * shape_size(d.sample_shape));
  d.labels.resize(n);
  std::memcpy(d.features.data(), blob.data(), feature_bytes);
  std::memcpy(d.labels.data(), blob.data() + feature_bytes, n * sizeof(std::int32_t));
  for (auto y : d.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= d.classes) {
      throw std::runtime_error("dataset label " + std::to_string(y) + " outside [0, " + std::to_string(d.classes) + ")");
    }
  }
  return d;
}

}  // namespace dvn::data
