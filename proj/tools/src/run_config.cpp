#include "run_config.hpp"

#include "dvn/data.hpp"

namespace dvn::cli {

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

template <class T>
T field(const json& doc, const char* key, T fallback) {
  if (!doc.contains(key)) return fallback;
  return doc.at(key).get<T>();
}

}  // namespace

const char* mode_name(Mode mode) {
  switch (mode) {
    case Mode::kJoint: return "joint";
    case Mode::kSequential: return "sequential";
    case Mode::kSingle: return "single";
  }
  return "?";
}

TrainConfig train_config_from_json(const json& doc, TrainConfig c) {
  if (doc.contains("schedule")) {
    c.schedule.clear();
    for (const json& step : doc.at("schedule")) {
      c.schedule.push_back({step.at(0).get<std::size_t>(), step.at(1).get<double>()});
    }
  } else if (doc.contains("learning_rate")) {
    c.schedule = {{0, doc.at("learning_rate").get<double>()}};
  }
  c.momentum = field(doc, "momentum", c.momentum);
  c.nesterov = field(doc, "nesterov", c.nesterov);
  c.weight_decay = field(doc, "weight_decay", c.weight_decay);
  c.batch_size = field(doc, "batch_size", c.batch_size);
  c.epochs = field(doc, "epochs", c.epochs);
  c.temperature = field(doc, "temperature", c.temperature);
  c.seed = field(doc, "seed", c.seed);
  validate_train_config(c);
  return c;
}

json train_config_to_json(const TrainConfig& c) {
  json schedule = json::array();
  for (const RateStep& s : c.schedule) schedule.push_back({s.epoch, s.rate});
  return {{"schedule", schedule},   {"momentum", c.momentum}, {"nesterov", c.nesterov},
          {"weight_decay", c.weight_decay}, {"batch_size", c.batch_size}, {"epochs", c.epochs},
          {"temperature", c.temperature}, {"seed", c.seed}};
}

RunConfig parse_run_config(const json& doc, const std::filesystem::path& base_dir) {
  try {
    RunConfig c;
    c.base_dir = base_dir;
    c.backbone = doc.value("backbone", json{{"preset", "mlp"}});
    c.partition = doc.value("partition", json::object());
    if (doc.contains("orders")) c.orders = configs_from_json(doc.at("orders"));
    const std::string hierarchy = doc.value("hierarchy", std::string("dvn"));
    if (hierarchy != "dvn" && hierarchy != "flat") throw ConfigError("hierarchy must be 'dvn' or 'flat'");
    c.flat = hierarchy == "flat";

    const std::string mode = doc.value("mode", std::string("joint"));
    if (mode == "joint") {
      c.mode = Mode::kJoint;
    } else if (mode == "sequential") {
      c.mode = Mode::kSequential;
    } else if (mode == "single") {
      c.mode = Mode::kSingle;
    } else {
      throw ConfigError("unknown mode '" + mode + "' (expected joint, sequential or single)");
    }

    for (const json& t : doc.at("tasks")) {
      TaskEntry e;
      e.name = t.value("name", "task" + std::to_string(c.tasks.size() + 1));
      e.train = resolve(base_dir, t.at("train").get<std::string>());
      e.test = resolve(base_dir, t.at("test").get<std::string>());
      if (t.contains("classes")) e.classes = t.at("classes").get<std::size_t>();
      if (t.contains("input_shape")) e.input_shape = t.at("input_shape").get<Shape>();
      c.tasks.push_back(std::move(e));
    }
    if (c.tasks.empty()) throw ConfigError("a run needs at least one task");

    if (c.partition.contains("k") && c.partition.at("k").is_number_integer() && c.partition.at("k").get<long long>() < 1) {
      throw ConfigError("k must be ≥ 1");
    }
    if (!c.partition.contains("k") && !c.partition.contains("group_sizes")) {
      if (c.mode == Mode::kSingle) throw ConfigError("single mode needs partition.k (the number of levels)");
      c.partition["k"] = c.tasks.size();
    }

    c.train = train_config_from_json(doc.value("train", json::object()));
    if (c.mode == Mode::kSingle && c.tasks.size() != 1) throw ConfigError("single mode takes exactly one task");
    if (c.mode == Mode::kSequential) {
      const json seq = doc.value("sequential", json::object());
      c.phase_boundary = seq.value("phase_boundary", c.tasks.size() - 1);
      if (c.tasks.size() < 2) throw ConfigError("sequential mode needs at least two tasks");
      if (c.phase_boundary != c.tasks.size() - 1) {
        throw ConfigError("sequential mode supports a single new task: phase_boundary must be " +
                          std::to_string(c.tasks.size() - 1));
      }
      c.new_phase = train_config_from_json(seq.value("new_phase", json::object()), c.train);
      c.distill = seq.value("distill", true);
    }
    c.output_dir = resolve(base_dir, doc.value("output_dir", std::string("out")));
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid run config: ") + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
  return parse_run_config(doc, path.has_parent_path() ? path.parent_path() : std::filesystem::path("."));
}

Scenario build_scenario(const RunConfig& config) {
  Scenario s;
  std::vector<TaskSpec> tasks;
  for (const TaskEntry& t : config.tasks) {
    if (t.classes && t.input_shape) {
      tasks.push_back({t.name, *t.classes, *t.input_shape});
      continue;
    }
    const data::Dataset d = data::load_dataset(t.train);
    tasks.push_back({t.name, t.classes.value_or(d.classes), t.input_shape.value_or(d.sample_shape)});
  }
  try {
    const std::string preset = config.backbone.value("preset", std::string());
    if (preset == "mlp") {
      s.spec = mlp_preset(tasks, config.backbone.value("width", std::size_t{24}),
                          config.backbone.value("depth", std::size_t{2}));
    } else if (preset == "conv") {
      s.spec = conv_preset(tasks, config.backbone.value("channels", std::size_t{16}),
                           config.backbone.value("depth", std::size_t{4}));
    } else if (preset.empty()) {
      json doc = config.backbone;
      doc.erase("heads");
      doc["tasks"] = json::array();
      for (const TaskSpec& t : tasks) doc["tasks"].push_back({{"name", t.name}, {"classes", t.classes}, {"input_shape", t.input_shape}});
      s.spec = spec_from_json(doc);
      validate_spec(s.spec);
    } else {
      throw ConfigError("unknown backbone preset '" + preset + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid backbone: ") + e.what());
  }

  s.partition = partition_from_json(s.spec, config.partition);
  const int k = static_cast<int>(s.partition.k);
  if (config.mode == Mode::kSingle) {
    s.configs = config.orders ? *config.orders : std::vector<VirtualNetConfig>{nested_config(s.partition.k)};
    if (s.configs.size() != 1) throw ConfigError("single mode takes exactly one unit order");
    if (const ValidationReport r = validate_nested(s.partition, s.configs[0]); !r) throw ConfigError(r.violation);
  } else {
    if (s.partition.k != config.tasks.size()) {
      throw ConfigError("k (" + std::to_string(k) + ") must equal the number of tasks (" +
                        std::to_string(config.tasks.size()) + ")");
    }
    s.configs = config.orders ? *config.orders : derive_orders(k);
    if (const ValidationReport r = validate(s.partition, s.configs); !r) throw ConfigError(r.violation);
  }

  if (config.flat) {
    s.hierarchy = flat_hierarchy(s.partition, config.tasks.size());
  } else if (config.mode == Mode::kSingle) {
    s.hierarchy.masks.emplace_back();
    for (std::size_t l = 1; l <= s.configs[0].levels(); ++l) {
      s.hierarchy.masks[0].push_back(level_mask(s.partition, s.configs[0], static_cast<int>(l)));
    }
  } else {
    s.hierarchy = build_hierarchy(s.partition, s.configs);
  }
  attach_heads(s.spec, s.hierarchy);
  return s;
}

TaskBundle load_bundle(const RunConfig& config) {
  TaskBundle b;
  for (const TaskEntry& t : config.tasks) b.tasks.push_back({data::load_dataset(t.train), data::load_dataset(t.test)});
  return b;
}

}  // namespace dvn::cli
