#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dvn/tensor.hpp"

namespace dvn::data {

/// A labelled set of samples for one task, stored flat.
struct Dataset {
  std::string name;
  int task_id = 1;
  std::size_t classes = 0;
  Shape sample_shape;
  std::vector<double> features;  // size() * sample_size() values, row-major
  std::vector<std::int32_t> labels;
  std::uint64_t seed = 0;
  std::string generator;
  std::map<std::string, double> parameters;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_size() const { return shape_size(sample_shape); }

  /// Stacks the given samples into a (n, sample_shape...) tensor.
  Tensor batch(std::span<const std::size_t> indices) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
  Tensor all_features() const;
  std::vector<int> all_labels() const;
  /// Per-class sample counts.
  std::vector<std::size_t> histogram() const;
};

struct Split {
  Dataset train;
  Dataset test;
};

struct BlobOptions {
  std::size_t classes = 4;
  std::size_t samples_per_class = 100;
  std::size_t dim = 2;
  double spread = 0.25;
  std::uint64_t seed = 1;
  /// Within each class, sample s goes to train when s mod (train + test) < train.
  std::size_t train_parts = 7;
  std::size_t test_parts = 3;
};

/// Gaussian clusters around the sites of a unit-spaced lattice centred at the
/// origin. Which class sits on which site is shuffled by the seed.
Split gen_blobs(const BlobOptions& options);

struct ImageBlobOptions {
  std::size_t classes = 4;
  std::size_t samples_per_class = 100;
  std::size_t height = 8;
  std::size_t width = 8;
  std::size_t channels = 3;
  double spread = 0.5;
  std::uint64_t seed = 1;
  std::size_t train_parts = 7;
  std::size_t test_parts = 3;
};

/// Image-shaped blobs: each class has a seeded per-channel level plus a 2x2
/// cell sign pattern, upsampled to (height, width), plus Gaussian noise.
Split gen_image_blobs(const ImageBlobOptions& options);

/// Splits classes into m contiguous subsets, reindexing labels from 0. When
/// the class count is not divisible by m the earliest subsets get one more.
std::vector<Dataset> split_classes(const Dataset& base, std::size_t m);

/// Two tasks over the same inputs: coarse labels `groups[fine]` and the
/// original fine labels. `groups` must map every fine class.
std::pair<Dataset, Dataset> coarse_fine(const Dataset& base, const std::vector<int>& groups);

/// Writes `<stem>.json` (manifest) and `<stem>.bin` (f64 features then i32
/// labels, little-endian), each atomically.
void save_dataset(const Dataset& dataset, const std::filesystem::path& stem);
Dataset load_dataset(const std::filesystem::path& stem);

}  // namespace dvn::data
