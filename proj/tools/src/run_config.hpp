#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dvn/backbone.hpp"
#include "dvn/io.hpp"
#include "dvn/partition.hpp"
#include "dvn/trainer.hpp"

namespace dvn::cli {

enum class Mode { kJoint, kSequential, kSingle };

const char* mode_name(Mode mode);

struct TaskEntry {
  std::string name;
  std::filesystem::path train;  // dataset stems, resolved against the config's directory
  std::filesystem::path test;
  // optional; read from the training set's manifest when absent
  std::optional<std::size_t> classes;
  std::optional<Shape> input_shape;
};

/// One JSON document describing a whole run. Relative paths are resolved
/// against the directory holding the config file.
struct RunConfig {
  std::filesystem::path base_dir;
  json backbone;
  json partition;
  std::optional<std::vector<VirtualNetConfig>> orders;
  bool flat = false;  // one full-width level per task (plain multi-head with distillation)
  std::vector<TaskEntry> tasks;
  Mode mode = Mode::kJoint;
  TrainConfig train;
  // sequential mode
  std::size_t phase_boundary = 0;
  TrainConfig new_phase;
  bool distill = true;
  std::filesystem::path output_dir;
};

/// Throws ConfigError on any structural problem.
RunConfig parse_run_config(const json& doc, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

TrainConfig train_config_from_json(const json& doc, TrainConfig base = {});
json train_config_to_json(const TrainConfig& config);

/// Network layout resolved from a run config.
struct Scenario {
  BackboneSpec spec;
  UnitPartition partition;
  std::vector<VirtualNetConfig> configs;
  Hierarchy hierarchy;
};

/// Task class counts and input shapes are read from the training datasets.
Scenario build_scenario(const RunConfig& config);

TaskBundle load_bundle(const RunConfig& config);

}  // namespace dvn::cli
