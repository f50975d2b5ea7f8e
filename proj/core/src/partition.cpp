#include "dvn/partition.hpp"

#include <algorithm>
#include <numeric>
#include <set>

namespace dvn {

namespace {

std::vector<ChannelRange> split_sizes(const std::vector<std::size_t>& sizes) {
  std::vector<ChannelRange> out;
  std::size_t begin = 0;
  for (std::size_t s : sizes) {
    out.push_back({begin, s});
    begin += s;
  }
  return out;
}

std::vector<std::size_t> equal_sizes(std::size_t width, std::size_t k) {
  std::vector<std::size_t> sizes(k, width / k);
  for (std::size_t i = 0; i < width % k; ++i) ++sizes[i];
  return sizes;
}

std::vector<std::size_t> boundary_widths(const BackboneSpec& spec) {
  std::vector<std::size_t> widths{spec.body.front().in_channels};
  for (const LayerSpec& l : spec.body) widths.push_back(l.out_channels);
  return widths;
}

void append_range(std::vector<std::size_t>& out, const ChannelRange& r) {
  for (std::size_t c = r.begin; c < r.end(); ++c) out.push_back(c);
}

std::string check_groups(const std::vector<ChannelRange>& groups, std::size_t width, std::size_t k,
                         const std::string& where) {
  if (groups.size() != k) return where + ": expected " + std::to_string(k) + " groups";
  std::vector<ChannelRange> sorted = groups;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.begin < b.begin; });
  std::size_t next = 0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i].size == 0) return where + ": every unit needs at least one channel";
    if (sorted[i].begin < next) return where + ": groups overlap";
    if (sorted[i].begin > next) return where + ": groups do not cover channel " + std::to_string(next);
    next = sorted[i].end();
  }
  if (next != width) return where + ": groups cover " + std::to_string(next) + " of " + std::to_string(width) + " channels";
  return {};
}

std::string check_partition(const UnitPartition& p) {
  if (p.k < 1) return "k must be ≥ 1";
  if (p.layers.empty()) return "partition has no layers";
  for (std::size_t r = 0; r < p.layers.size(); ++r) {
    const LayerGroups& g = p.layers[r];
    const std::string where = "layer " + std::to_string(r + 1);
    if (auto e = check_groups(g.in, g.in_width, p.k, where + " inputs"); !e.empty()) return e;
    if (auto e = check_groups(g.out, g.out_width, p.k, where + " outputs"); !e.empty()) return e;
    if (r + 1 < p.layers.size() && g.out != p.layers[r + 1].in) {
      return where + ": output groups differ from the next layer's input groups";
    }
  }
  return {};
}

std::string check_order(const VirtualNetConfig& c, std::size_t k) {
  const std::string where = "task " + std::to_string(c.task);
  if (c.order.size() != k) {
    return where + ": not a permutation (" + std::to_string(c.order.size()) + " levels for " + std::to_string(k) +
           " units)";
  }
  std::vector<bool> seen(k + 1, false);
  for (int u : c.order) {
    if (u < 1 || static_cast<std::size_t>(u) > k || seen[static_cast<std::size_t>(u)]) {
      return where + ": not a permutation";
    }
    seen[static_cast<std::size_t>(u)] = true;
  }
  return {};
}

std::string check_nesting(const UnitPartition& p, const VirtualNetConfig& c) {
  LevelMask prev = level_mask(p, c, 1);
  for (int l = 2; l <= static_cast<int>(c.levels()); ++l) {
    LevelMask cur = level_mask(p, c, l);
    if (!cur.includes(prev)) {
      return "task " + std::to_string(c.task) + ": level " + std::to_string(l - 1) + " is not nested in level " +
             std::to_string(l);
    }
    prev = std::move(cur);
  }
  return {};
}

}  // namespace

UnitPartition equal_partition(const BackboneSpec& spec, std::size_t k) {
  if (k < 1) throw ConfigError("k must be ≥ 1");
  if (spec.body.empty()) throw ConfigError("backbone body is empty");
  std::vector<std::vector<std::size_t>> boundaries;
  for (std::size_t w : boundary_widths(spec)) {
    if (w < k) {
      throw ConfigError("cannot split " + std::to_string(w) + " channels into " + std::to_string(k) + " units");
    }
    boundaries.push_back(equal_sizes(w, k));
  }
  return partition_from_sizes(spec, boundaries);
}

UnitPartition partition_from_sizes(const BackboneSpec& spec, const std::vector<std::vector<std::size_t>>& boundaries) {
  const auto widths = boundary_widths(spec);
  if (boundaries.size() != widths.size()) {
    throw ConfigError("expected " + std::to_string(widths.size()) + " group-size lists, got " +
                      std::to_string(boundaries.size()));
  }
  UnitPartition p;
  p.k = boundaries.front().size();
  for (std::size_t b = 0; b < boundaries.size(); ++b) {
    const std::size_t total = std::accumulate(boundaries[b].begin(), boundaries[b].end(), std::size_t{0});
    if (total != widths[b]) {
      throw ConfigError("group sizes at boundary " + std::to_string(b) + " sum to " + std::to_string(total) +
                        ", expected " + std::to_string(widths[b]));
    }
  }
  for (std::size_t r = 0; r < spec.body.size(); ++r) {
    p.layers.push_back(LayerGroups{widths[r], widths[r + 1], split_sizes(boundaries[r]), split_sizes(boundaries[r + 1])});
  }
  if (auto e = check_partition(p); !e.empty()) throw ConfigError(e);
  return p;
}

std::vector<VirtualNetConfig> derive_orders(int k) {
  if (k < 1) throw ConfigError("k must be ≥ 1");
  std::vector<VirtualNetConfig> configs;
  for (int j = 1; j <= k; ++j) {
    VirtualNetConfig c{j, {j}};
    int lo = j, hi = j;
    while (static_cast<int>(c.order.size()) < k) {
      // the coupled block is always contiguous, so its free neighbours are lo-1 and hi+1
      if (lo > 1) {
        c.order.push_back(--lo);
      } else {
        c.order.push_back(++hi);
      }
    }
    configs.push_back(std::move(c));
  }
  return configs;
}

int s_value(const std::vector<VirtualNetConfig>& configs, int unit, int task) {
  if (task < 1 || static_cast<std::size_t>(task) > configs.size()) {
    throw ConfigError("unknown task " + std::to_string(task));
  }
  const auto& order = configs[static_cast<std::size_t>(task) - 1].order;
  const auto it = std::find(order.begin(), order.end(), unit);
  if (it == order.end()) throw ConfigError("unit " + std::to_string(unit) + " is not in task " + std::to_string(task));
  return static_cast<int>(it - order.begin()) + 1;
}

std::vector<std::vector<int>> s_matrix(const std::vector<VirtualNetConfig>& configs) {
  std::vector<std::vector<int>> s;
  for (const auto& c : configs) {
    std::vector<int> row;
    for (int u = 1; u <= static_cast<int>(c.levels()); ++u) row.push_back(s_value(configs, u, c.task));
    s.push_back(std::move(row));
  }
  return s;
}

std::vector<int> inclusion_counts(const std::vector<VirtualNetConfig>& configs) {
  if (configs.empty()) return {};
  // a unit entering at level S appears in levels S..n_h
  std::vector<int> out(configs.front().levels(), 0);
  for (const auto& c : configs) {
    const int levels = static_cast<int>(c.levels());
    for (int pos = 0; pos < levels; ++pos) {
      out[static_cast<std::size_t>(c.order[static_cast<std::size_t>(pos)]) - 1] += levels - pos;
    }
  }
  return out;
}

bool LevelMask::contains_unit(int unit) const {
  return std::find(units.begin(), units.end(), unit) != units.end();
}

bool LevelMask::includes(const LevelMask& other) const {
  if (other.layers.size() != layers.size()) return false;
  for (std::size_t r = 0; r < layers.size(); ++r) {
    if (!std::includes(layers[r].in.begin(), layers[r].in.end(), other.layers[r].in.begin(), other.layers[r].in.end()) ||
        !std::includes(layers[r].out.begin(), layers[r].out.end(), other.layers[r].out.begin(),
                       other.layers[r].out.end())) {
      return false;
    }
  }
  return true;
}

namespace {

LevelMask mask_for_units(const UnitPartition& partition, int task, int level, std::vector<int> units) {
  LevelMask m{task, level, std::move(units), {}};
  for (const LayerGroups& g : partition.layers) {
    LayerChannels ch;
    for (int u : m.units) {
      append_range(ch.in, g.in.at(static_cast<std::size_t>(u) - 1));
      append_range(ch.out, g.out.at(static_cast<std::size_t>(u) - 1));
    }
    std::sort(ch.in.begin(), ch.in.end());
    std::sort(ch.out.begin(), ch.out.end());
    m.layers.push_back(std::move(ch));
  }
  return m;
}

}  // namespace

LevelMask level_mask(const UnitPartition& partition, const VirtualNetConfig& config, int level) {
  if (level < 1 || static_cast<std::size_t>(level) > config.levels()) {
    throw ConfigError("level " + std::to_string(level) + " out of range [1, " + std::to_string(config.levels()) +
                      "] for task " + std::to_string(config.task));
  }
  for (int u : config.order) {
    if (u < 1 || static_cast<std::size_t>(u) > partition.k) throw ConfigError("order refers to unknown unit " + std::to_string(u));
  }
  return mask_for_units(partition, config.task, level,
                        std::vector<int>(config.order.begin(), config.order.begin() + level));
}

LevelMask full_mask(const UnitPartition& partition, int task) {
  std::vector<int> units(partition.k);
  std::iota(units.begin(), units.end(), 1);
  return mask_for_units(partition, task, 1, std::move(units));
}

std::size_t Hierarchy::levels(int task) const {
  if (task < 1 || static_cast<std::size_t>(task) > masks.size()) throw ConfigError("unknown task " + std::to_string(task));
  return masks[static_cast<std::size_t>(task) - 1].size();
}

const LevelMask& Hierarchy::at(int task, int level) const {
  const std::size_t n = levels(task);
  if (level < 1 || static_cast<std::size_t>(level) > n) {
    throw ConfigError("level " + std::to_string(level) + " out of range for task " + std::to_string(task));
  }
  return masks[static_cast<std::size_t>(task) - 1][static_cast<std::size_t>(level) - 1];
}

Hierarchy build_hierarchy(const UnitPartition& partition, const std::vector<VirtualNetConfig>& configs) {
  Hierarchy h;
  for (std::size_t j = 0; j < configs.size(); ++j) {
    const VirtualNetConfig& c = configs[j];
    if (c.task != static_cast<int>(j) + 1) throw ConfigError("configs must be listed in task order");
    std::vector<LevelMask> levels;
    for (int l = 1; l <= static_cast<int>(c.levels()); ++l) levels.push_back(level_mask(partition, c, l));
    h.masks.push_back(std::move(levels));
  }
  return h;
}

Hierarchy flat_hierarchy(const UnitPartition& partition, std::size_t tasks) {
  Hierarchy h;
  for (std::size_t j = 1; j <= tasks; ++j) h.masks.push_back({full_mask(partition, static_cast<int>(j))});
  return h;
}

void attach_heads(BackboneSpec& spec, const Hierarchy& hierarchy) {
  if (hierarchy.task_count() != spec.task_count()) {
    throw ConfigError("hierarchy covers " + std::to_string(hierarchy.task_count()) + " tasks, backbone has " +
                      std::to_string(spec.task_count()));
  }
  spec.heads.clear();
  for (std::size_t t = 0; t < hierarchy.masks.size(); ++t) {
    std::vector<HeadSpec> heads;
    for (const LevelMask& m : hierarchy.masks[t]) {
      if (m.layers.size() != spec.body.size()) throw ConfigError("mask does not match the backbone body depth");
      heads.push_back({m.layers.back().out.size(), spec.tasks[t].classes});
    }
    spec.heads.push_back(std::move(heads));
  }
  validate_spec(spec);
}

ValidationReport validate(const UnitPartition& partition, const std::vector<VirtualNetConfig>& configs) {
  auto fail = [](std::string why) { return ValidationReport{false, std::move(why)}; };
  if (auto e = check_partition(partition); !e.empty()) return fail(e);
  if (configs.size() != partition.k) {
    return fail("expected one virtual network per unit (" + std::to_string(partition.k) + "), got " +
                std::to_string(configs.size()));
  }
  for (std::size_t j = 0; j < configs.size(); ++j) {
    const VirtualNetConfig& c = configs[j];
    if (c.task != static_cast<int>(j) + 1) return fail("configs must be listed in task order");
    if (auto e = check_order(c, partition.k); !e.empty()) return fail(e);
    if (c.order.front() != c.task) {
      return fail("task " + std::to_string(c.task) + ": rule (i) violated, level 1 holds unit " +
                  std::to_string(c.order.front()));
    }
    if (auto e = check_nesting(partition, c); !e.empty()) return fail(e);
  }
  return {};
}

VirtualNetConfig nested_config(std::size_t k) {
  VirtualNetConfig c{1, std::vector<int>(k)};
  std::iota(c.order.begin(), c.order.end(), 1);
  return c;
}

ValidationReport validate_nested(const UnitPartition& partition, const VirtualNetConfig& config) {
  auto fail = [](std::string why) { return ValidationReport{false, std::move(why)}; };
  if (auto e = check_partition(partition); !e.empty()) return fail(e);
  if (auto e = check_order(config, partition.k); !e.empty()) return fail(e);
  if (auto e = check_nesting(partition, config); !e.empty()) return fail(e);
  return {};
}

}  // namespace dvn
