#include "commands.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "dvn/budget.hpp"
#include "dvn/data.hpp"
#include "run_config.hpp"

namespace dvn::cli {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string join(const std::vector<int>& values, const char* sep = " ") {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) s += (i ? sep : "") + std::to_string(values[i]);
  return s;
}

// ---- plan ----

struct PlanArgs {
  std::string config;
  bool json = false;
};

int cmd_plan(const PlanArgs& a, std::ostream& out) {
  const RunConfig config = load_run_config(a.config);
  const Scenario s = build_scenario(config);
  const auto S = s_matrix(s.configs);
  const auto counts = inclusion_counts(s.configs);

  json masks = json::array();
  for (int j = 1; j <= static_cast<int>(s.hierarchy.task_count()); ++j) {
    for (int l = 1; l <= static_cast<int>(s.hierarchy.levels(j)); ++l) {
      const LevelMask& m = s.hierarchy.at(j, l);
      masks.push_back({{"task", j},
                       {"level", l},
                       {"units", m.units},
                       {"body_params", count_params(s.spec, m, CountScope::kBody)},
                       {"total_params", count_params(s.spec, m, CountScope::kTotal)}});
    }
  }
  std::vector<std::vector<int>> significance = S;
  for (std::size_t j = 0; j < S.size(); ++j) {
    const int levels = static_cast<int>(s.configs[j].levels());
    for (int& v : significance[j]) v = std::abs(levels - v);
  }

  if (a.json) {
    const json doc{{"k", s.partition.k},
                   {"hierarchy", config.flat ? "flat" : "dvn"},
                   {"orders", configs_to_json(s.configs)},
                   {"s_matrix", S},
                   {"significance", significance},
                   {"inclusion_counts", counts},
                   {"masks", masks},
                   {"partition", partition_to_json(s.partition)},
                   {"valid", true}};
    out << doc.dump(2) << "\n";
    return kOk;
  }

  out << "k = " << s.partition.k << (config.flat ? " (flat hierarchy)" : "") << "\n\norders\n";
  for (const VirtualNetConfig& c : s.configs) out << "  task " << c.task << ": " << join(c.order) << "\n";
  out << "\nS(i, j): level at which unit i joins task j\n      ";
  for (std::size_t i = 1; i <= s.partition.k; ++i) out << std::setw(4) << ("u" + std::to_string(i));
  out << "\n";
  for (std::size_t j = 0; j < S.size(); ++j) {
    out << "  t" << std::left << std::setw(4) << j + 1 << std::right;
    for (int v : S[j]) out << std::setw(4) << v;
    out << "\n";
  }
  out << "\n|n_h - S(i, j)|\n";
  for (std::size_t j = 0; j < significance.size(); ++j) {
    out << "  t" << std::left << std::setw(4) << j + 1 << std::right;
    for (int v : significance[j]) out << std::setw(4) << v;
    out << "\n";
  }
  out << "\ninclusion counts (loss terms per unit)\n  ";
  for (std::size_t i = 0; i < counts.size(); ++i) out << "u" << i + 1 << "=" << counts[i] << (i + 1 < counts.size() ? " " : "\n");
  out << "\nmasks\n  task level units        body_params total_params\n";
  for (const json& m : masks) {
    out << "  " << std::setw(4) << m["task"].get<int>() << " " << std::setw(5) << m["level"].get<int>() << " "
        << std::left << std::setw(12) << join(m["units"].get<std::vector<int>>(), ",") << std::right << " "
        << std::setw(11) << m["body_params"].get<std::size_t>() << " " << std::setw(12)
        << m["total_params"].get<std::size_t>() << "\n";
  }
  out << "\nvalidation: ok\n";
  return kOk;
}

// ---- gen ----

struct GenArgs {
  std::string generator;
  std::string out_dir;
  std::size_t classes = 4;
  std::size_t samples = 100;
  std::size_t dim = 2;
  std::size_t height = 8;
  std::size_t width = 8;
  std::size_t channels = 3;
  std::optional<double> spread;
  std::uint64_t seed = 1;
  std::size_t train_parts = 7;
  std::size_t test_parts = 3;
  std::size_t tasks = 1;
  std::size_t split_classes = 0;
  std::vector<int> coarse_groups;
};

data::Split generate(const GenArgs& a, std::uint64_t seed) {
  if (a.generator == "blobs") {
    data::BlobOptions o{a.classes, a.samples, a.dim, a.spread.value_or(0.25), seed, a.train_parts, a.test_parts};
    return data::gen_blobs(o);
  }
  data::ImageBlobOptions o{a.classes, a.samples, a.height, a.width, a.channels, a.spread.value_or(0.5),
                           seed, a.train_parts, a.test_parts};
  return data::gen_image_blobs(o);
}

int cmd_gen(const GenArgs& a, std::ostream& out) {
  const int modes = (a.tasks > 1) + (a.split_classes > 0) + !a.coarse_groups.empty();
  if (modes > 1) throw ConfigError("--tasks, --split-classes and --coarse-groups are mutually exclusive");
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  std::vector<std::string> written;
  auto save = [&](data::Dataset d, const std::string& stem, int task) {
    d.task_id = task;
    d.name = stem;
    data::save_dataset(d, dir / stem);
    written.push_back(stem);
  };

  if (a.tasks > 1) {
    for (std::size_t t = 1; t <= a.tasks; ++t) {
      const data::Split s = generate(a, a.seed + t - 1);
      const std::string prefix = "task" + std::to_string(t);
      save(s.train, prefix + "_train", static_cast<int>(t));
      save(s.test, prefix + "_test", static_cast<int>(t));
    }
  } else if (a.split_classes > 0) {
    const data::Split s = generate(a, a.seed);
    const auto train = data::split_classes(s.train, a.split_classes);
    const auto test = data::split_classes(s.test, a.split_classes);
    for (std::size_t t = 0; t < train.size(); ++t) {
      const std::string prefix = "task" + std::to_string(t + 1);
      save(train[t], prefix + "_train", static_cast<int>(t + 1));
      save(test[t], prefix + "_test", static_cast<int>(t + 1));
    }
  } else if (!a.coarse_groups.empty()) {
    const data::Split s = generate(a, a.seed);
    auto [coarse_train, fine_train] = data::coarse_fine(s.train, a.coarse_groups);
    auto [coarse_test, fine_test] = data::coarse_fine(s.test, a.coarse_groups);
    save(coarse_train, "task1_train", 1);
    save(coarse_test, "task1_test", 1);
    save(fine_train, "task2_train", 2);
    save(fine_test, "task2_test", 2);
  } else {
    const data::Split s = generate(a, a.seed);
    save(s.train, "train", 1);
    save(s.test, "test", 1);
  }
  for (const std::string& stem : written) out << (dir / stem).string() << "\n";
  return kOk;
}

// ---- train ----

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::string> output_dir;
};

void apply_overrides(RunConfig& config, const TrainArgs& a) {
  if (a.seed) config.train.seed = config.new_phase.seed = *a.seed;
  if (a.epochs) config.train.epochs = config.new_phase.epochs = *a.epochs;
  if (a.output_dir) config.output_dir = *a.output_dir;
}

std::string metrics_csv(const std::vector<const TrainResult*>& phases) {
  std::string csv = "epoch,task,level,split,loss,accuracy\n";
  std::size_t offset = 0;
  for (const TrainResult* r : phases) {
    std::size_t last = 0;
    for (const EpochMetric& m : r->metrics) {
      csv += std::to_string(m.epoch + offset) + "," + std::to_string(m.task) + "," + std::to_string(m.level) + "," +
             m.split + "," + fmt(m.loss) + "," + fmt(m.accuracy) + "\n";
      last = std::max(last, m.epoch);
    }
    offset += last;
  }
  return csv;
}

json accuracy_entries(const ModelParams& params, const Scenario& s, const TaskBundle& bundle, const RunConfig& config) {
  json entries = json::array();
  for (int j = 1; j <= static_cast<int>(s.hierarchy.task_count()); ++j) {
    const data::Dataset& test = bundle.tasks[static_cast<std::size_t>(j - 1)].test;
    for (int l = 1; l <= static_cast<int>(s.hierarchy.levels(j)); ++l) {
      entries.push_back({{"task", j},
                         {"name", config.tasks[static_cast<std::size_t>(j - 1)].name},
                         {"level", l},
                         {"accuracy", evaluate(params, s.spec, s.hierarchy, test, j, l)},
                         {"loss", evaluate_loss(params, s.spec, s.hierarchy, test, j, l)}});
    }
  }
  return entries;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig config = load_run_config(a.config);
  apply_overrides(config, a);
  const Scenario s = build_scenario(config);
  const TaskBundle bundle = load_bundle(config);
  validate_bundle(bundle, s.spec);
  ModelParams initial = init_params(s.spec, s.hierarchy, config.train.seed);

  json summary{{"mode", mode_name(config.mode)},
               {"k", s.partition.k},
               {"hierarchy", config.flat ? "flat" : "dvn"},
               {"seed", config.train.seed},
               {"train", train_config_to_json(config.train)}};
  std::string metrics;
  ModelParams final_params;
  std::optional<ModelParams> snapshot;

  switch (config.mode) {
    case Mode::kJoint: {
      TrainResult r = train_joint(bundle, s.spec, s.hierarchy, std::move(initial), config.train);
      metrics = metrics_csv({&r});
      final_params = std::move(r.params);
      break;
    }
    case Mode::kSingle: {
      TrainResult r = train_single(bundle.tasks[0], s.spec, s.hierarchy, std::move(initial), config.train);
      metrics = metrics_csv({&r});
      final_params = std::move(r.params);
      break;
    }
    case Mode::kSequential: {
      SequentialResult r = train_sequential(bundle, s.spec, s.hierarchy, std::move(initial),
                                            {config.train, config.new_phase, config.distill});
      metrics = metrics_csv({&r.old_phase, &r.new_phase});
      json snap = json::array();
      json forgetting = json::array();
      for (std::size_t j = 0; j < r.snapshot_accuracy.size(); ++j) {
        for (std::size_t l = 0; l < r.snapshot_accuracy[j].size(); ++l) {
          const int task = static_cast<int>(j + 1), level = static_cast<int>(l + 1);
          const double before = r.snapshot_accuracy[j][l];
          const double after = evaluate(r.new_phase.params, s.spec, s.hierarchy, bundle.tasks[j].test, task, level);
          snap.push_back({{"task", task}, {"level", level}, {"accuracy", before}});
          forgetting.push_back({{"task", task}, {"level", level}, {"drop", before - after}});
        }
      }
      summary["new_phase"] = train_config_to_json(config.new_phase);
      summary["distill"] = config.distill;
      summary["snapshot_accuracy"] = snap;
      summary["forgetting"] = forgetting;
      snapshot = std::move(r.snapshot);
      final_params = std::move(r.new_phase.params);
      break;
    }
  }
  summary["accuracy"] = accuracy_entries(final_params, s, bundle, config);

  BudgetReport report = budget_table(s.spec, s.hierarchy);
  for (const json& e : summary["accuracy"]) report.row(e["task"], e["level"]).accuracy = e["accuracy"].get<double>();

  const fs::path dir = config.output_dir;
  fs::create_directories(dir);
  save_params(final_params, dir / "model");
  if (snapshot) save_params(*snapshot, dir / "snapshot");
  write_file_atomic(dir / "metrics.csv", metrics);
  write_file_atomic(dir / "budget.csv", report_csv(report, false));
  write_file_atomic(dir / "summary.json", summary.dump(2) + "\n");

  out << "trained " << mode_name(config.mode) << " model, artifacts in " << dir.string() << "\n";
  for (const json& e : summary["accuracy"]) {
    out << "  task " << e["task"].get<int>() << " level " << e["level"].get<int>()
        << " test accuracy " << fmt(e["accuracy"].get<double>()) << "\n";
  }
  return kOk;
}

// ---- eval / infer / budget share a trained model ----

struct Loaded {
  RunConfig config;
  Scenario scenario;
  ModelParams params;
};

Loaded load_trained(const std::string& config_path, const std::optional<std::string>& params_stem) {
  Loaded l;
  l.config = load_run_config(config_path);
  l.scenario = build_scenario(l.config);
  const fs::path stem = params_stem ? fs::path(*params_stem) : l.config.output_dir / "model";
  l.params = load_params(l.scenario.spec, l.scenario.hierarchy, stem);
  return l;
}

struct EvalArgs {
  std::string config;
  std::optional<std::string> params;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Loaded l = load_trained(a.config, a.params);
  const TaskBundle bundle = load_bundle(l.config);
  out << "task,level,loss,accuracy\n";
  for (const json& e : accuracy_entries(l.params, l.scenario, bundle, l.config)) {
    out << e["task"].get<int>() << "," << e["level"].get<int>() << "," << fmt(e["loss"].get<double>()) << ","
        << fmt(e["accuracy"].get<double>()) << "\n";
  }
  return kOk;
}

struct InferArgs {
  std::string config;
  std::optional<std::string> params;
  int task = 1;
  std::size_t budget = 0;
  std::string input;
  std::string scope = "total";
};

int cmd_infer(const InferArgs& a, std::ostream& out) {
  const CountScope scope = parse_scope(a.scope);
  const RunConfig config = load_run_config(a.config);
  const Scenario s = build_scenario(config);
  if (a.task < 1 || a.task > static_cast<int>(s.hierarchy.task_count())) {
    throw ConfigError("task " + std::to_string(a.task) + " is out of range 1.." +
                      std::to_string(s.hierarchy.task_count()));
  }
  // choose the level before touching the weights so an infeasible budget fails fast
  const BudgetReport report = budget_table(s.spec, s.hierarchy);
  const int level = select_level(report, a.task, a.budget, scope);
  const fs::path stem = a.params ? fs::path(*a.params) : config.output_dir / "model";
  const ModelParams params = load_params(s.spec, s.hierarchy, stem);
  const data::Dataset input = data::load_dataset(a.input);

  const Tensor logits = predict_logits(params, s.spec, s.hierarchy.at(a.task, level), input.all_features());
  const std::vector<int> predicted = argmax_rows(logits);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == input.labels[i];

  out << "task: " << a.task << "\n";
  out << "level: " << level << "\n";
  out << "params: " << report.row(a.task, level).params(scope) << " (" << scope_name(scope) << ", budget "
      << a.budget << ")\n";
  out << "accuracy: " << fmt(predicted.empty() ? 0.0 : static_cast<double>(correct) / predicted.size()) << "\n";
  out << "predictions: " << join(predicted) << "\n";
  return kOk;
}

struct BudgetArgs {
  std::string config;
  std::optional<std::string> params;
  bool latency = false;
  bool csv = false;
  std::size_t runs = 1000;
  std::size_t warmup = 100;
};

int cmd_budget(const BudgetArgs& a, std::ostream& out) {
  const RunConfig config = load_run_config(a.config);
  const Scenario s = build_scenario(config);
  const fs::path stem = a.params ? fs::path(*a.params) : config.output_dir / "model";
  const bool trained = a.params || fs::exists(fs::path(stem.string() + ".json"));
  std::optional<ModelParams> params;
  if (trained) {
    params = load_params(s.spec, s.hierarchy, stem);
  } else if (a.latency) {
    params = init_params(s.spec, s.hierarchy, config.train.seed);  // timing does not depend on trained values
  }
  BudgetReport report = budget_table(s.spec, s.hierarchy, a.latency ? &*params : nullptr,
                                     LatencyOptions{a.warmup, a.runs, 7});
  if (trained) {
    const TaskBundle bundle = load_bundle(config);
    for (BudgetRow& row : report.rows) {
      row.accuracy = evaluate(*params, s.spec, s.hierarchy, bundle.tasks[static_cast<std::size_t>(row.task - 1)].test,
                              row.task, row.level);
    }
  }
  out << (a.csv ? report_csv(report, a.latency) : report_table(report));
  return kOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Deep virtual network trainer and budgeted inference", "dvn"};
  app.require_subcommand(1);

  PlanArgs plan;
  auto* plan_cmd = app.add_subcommand("plan", "Print unit orders, S matrix, mask sizes and inclusion counts");
  plan_cmd->add_option("config", plan.config, "Run config JSON")->required();
  plan_cmd->add_flag("--json", plan.json, "Emit JSON instead of a table");

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate synthetic datasets");
  gen_cmd->add_option("generator", gen.generator, "blobs | image-blobs")
      ->required()
      ->check(CLI::IsMember({"blobs", "image-blobs"}));
  gen_cmd->add_option("--out", gen.out_dir, "Output directory")->required();
  gen_cmd->add_option("--classes", gen.classes);
  gen_cmd->add_option("--samples", gen.samples, "Samples per class");
  gen_cmd->add_option("--dim", gen.dim, "Feature dimension (blobs)");
  gen_cmd->add_option("--height", gen.height, "Image height (image-blobs)");
  gen_cmd->add_option("--width", gen.width, "Image width (image-blobs)");
  gen_cmd->add_option("--channels", gen.channels, "Image channels (image-blobs)");
  gen_cmd->add_option("--spread", gen.spread, "Noise standard deviation");
  gen_cmd->add_option("--seed", gen.seed);
  gen_cmd->add_option("--train-parts", gen.train_parts, "Train share of the train:test ratio");
  gen_cmd->add_option("--test-parts", gen.test_parts, "Test share of the train:test ratio");
  gen_cmd->add_option("--tasks", gen.tasks, "Independent tasks, seeded seed, seed+1, ...");
  gen_cmd->add_option("--split-classes", gen.split_classes, "Split the classes into this many tasks");
  gen_cmd->add_option("--coarse-groups", gen.coarse_groups, "Coarse label of every fine class")->delimiter(',');

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train per the run config and write artifacts");
  train_cmd->add_option("config", train.config, "Run config JSON")->required();
  train_cmd->add_option("--seed", train.seed);
  train_cmd->add_option("--epochs", train.epochs);
  train_cmd->add_option("--output-dir", train.output_dir);

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Test accuracy and loss of a trained model at every level");
  eval_cmd->add_option("config", eval.config, "Run config JSON")->required();
  eval_cmd->add_option("--params", eval.params, "Parameter file stem (default <output_dir>/model)");

  InferArgs infer;
  auto* infer_cmd = app.add_subcommand("infer", "Predict with the largest level that fits a parameter budget");
  infer_cmd->add_option("config", infer.config, "Run config JSON")->required();
  infer_cmd->add_option("--task", infer.task)->required();
  infer_cmd->add_option("--budget", infer.budget, "Maximum parameter count")->required();
  infer_cmd->add_option("--input", infer.input, "Dataset stem")->required();
  infer_cmd->add_option("--params", infer.params, "Parameter file stem (default <output_dir>/model)");
  infer_cmd->add_option("--scope", infer.scope, "Count scope: total | body");

  BudgetArgs budget;
  auto* budget_cmd = app.add_subcommand("budget", "Parameter counts, density and latency per level");
  budget_cmd->add_option("config", budget.config, "Run config JSON")->required();
  budget_cmd->add_option("--params", budget.params, "Parameter file stem (default <output_dir>/model)");
  budget_cmd->add_flag("--latency", budget.latency, "Measure single-sample latency");
  budget_cmd->add_option("--runs", budget.runs);
  budget_cmd->add_option("--warmup", budget.warmup);
  budget_cmd->add_flag("--csv", budget.csv, "Emit CSV instead of a table");

  std::vector<std::string> argv_storage{"dvn"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const std::string& s : argv_storage) argv.push_back(s.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kOk;
    }
    app.exit(e, out, err);
    return kInvalidConfig;
  }

  try {
    if (*plan_cmd) return cmd_plan(plan, out);
    if (*gen_cmd) return cmd_gen(gen, out);
    if (*train_cmd) return cmd_train(train, out);
    if (*eval_cmd) return cmd_eval(eval, out);
    if (*infer_cmd) return cmd_infer(infer, out);
    if (*budget_cmd) return cmd_budget(budget, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kInvalidConfig;
  } catch (const BudgetError& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
  return kInvalidConfig;
}

}  // namespace dvn::cli
