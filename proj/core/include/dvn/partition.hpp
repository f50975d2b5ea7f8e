#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dvn/backbone.hpp"

namespace dvn {

/// Contiguous channel interval [begin, begin + size).
struct ChannelRange {
  std::size_t begin = 0;
  std::size_t size = 0;
  std::size_t end() const { return begin + size; }
  friend bool operator==(const ChannelRange&, const ChannelRange&) = default;
};

/// Channel groups of one body layer: `in[i-1]` / `out[i-1]` belong to unit i.
struct LayerGroups {
  std::size_t in_width = 0;
  std::size_t out_width = 0;
  std::vector<ChannelRange> in;
  std::vector<ChannelRange> out;
};

/// Splits every body layer's input and output channels into k disjoint
/// groups. Unit i is the i-th group taken across all body layers.
struct UnitPartition {
  std::size_t k = 0;
  std::vector<LayerGroups> layers;
};

/// Contiguous groups of near-equal size; the first (width mod k) units get
/// one extra channel. Throws ConfigError if any body layer has fewer than k
/// channels on either side.
UnitPartition equal_partition(const BackboneSpec& spec, std::size_t k);

/// Builds a partition from explicit group sizes at each layer boundary:
/// `boundaries[0]` splits the body's input width, `boundaries[r]` splits the
/// output of body layer r. Every list must have the same length k.
UnitPartition partition_from_sizes(const BackboneSpec& spec, const std::vector<std::vector<std::size_t>>& boundaries);

/// One task's deep virtual network: `order[l-1]` is the unit (1-based) that
/// joins the hierarchy at level l.
struct VirtualNetConfig {
  int task = 0;
  std::vector<int> order;
  std::size_t levels() const { return order.size(); }
  friend bool operator==(const VirtualNetConfig&, const VirtualNetConfig&) = default;
};

/// Unit orders for k tasks: task j starts from unit j and repeatedly couples
/// the uncoupled unit adjacent (by id) to its coupled block, preferring the
/// lower id when both neighbours are free.
std::vector<VirtualNetConfig> derive_orders(int k);

/// Level at which `unit` joins the hierarchy of `task` (both 1-based).
int s_value(const std::vector<VirtualNetConfig>& configs, int unit, int task);

/// S matrix indexed [task-1][unit-1].
std::vector<std::vector<int>> s_matrix(const std::vector<VirtualNetConfig>& configs);

/// Number of (task, level) loss terms whose mask contains each unit.
std::vector<int> inclusion_counts(const std::vector<VirtualNetConfig>& configs);

struct LayerChannels {
  std::vector<std::size_t> in;
  std::vector<std::size_t> out;
};

/// Parameter subset selected for one (task, level): every included layer
/// block is (union of the units' input groups) x (union of their output
/// groups), so interconnections between included units come along.
/// Channel lists are sorted ascending.
struct LevelMask {
  int task = 0;
  int level = 0;
  std::vector<int> units;
  std::vector<LayerChannels> layers;

  bool contains_unit(int unit) const;
  /// True when every channel of `other` is also in this mask.
  bool includes(const LevelMask& other) const;
};

LevelMask level_mask(const UnitPartition& partition, const VirtualNetConfig& config, int level);

/// Mask over all units, labelled as level 1 of `task`.
LevelMask full_mask(const UnitPartition& partition, int task);

/// Masks for every task and level: `masks[j-1][l-1]`.
struct Hierarchy {
  std::vector<std::vector<LevelMask>> masks;

  std::size_t task_count() const { return masks.size(); }
  std::size_t levels(int task) const;
  const LevelMask& at(int task, int level) const;
};

Hierarchy build_hierarchy(const UnitPartition& partition, const std::vector<VirtualNetConfig>& configs);

/// One level per task, covering the whole body. Used for plain
/// (non-hierarchical) multi-head training such as learning without forgetting.
Hierarchy flat_hierarchy(const UnitPartition& partition, std::size_t tasks);

/// Fills spec.heads from the masked widths of the last body layer.
void attach_heads(BackboneSpec& spec, const Hierarchy& hierarchy);

struct ValidationReport {
  bool ok = true;
  std::string violation;
  explicit operator bool() const { return ok; }
};

/// Checks partition coverage and disjointness, order permutations, that each
/// task's first unit is its own, and mask nesting. Reports the first violation.
ValidationReport validate(const UnitPartition& partition, const std::vector<VirtualNetConfig>& configs);

/// Single-task nested network over all k units, levels in unit-id order.
VirtualNetConfig nested_config(std::size_t k);

/// Validation for a single-task nested network: partition checks, a
/// permutation order, and nesting. Rule (i) does not apply.
ValidationReport validate_nested(const UnitPartition& partition, const VirtualNetConfig& config);

}  // namespace dvn
