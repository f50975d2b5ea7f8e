#include "dvn/budget.hpp"

#include <chrono>
#include <cstdio>
#include <random>
#include <sstream>
#include <utility>

namespace dvn {

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string general(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

const char* scope_name(CountScope scope) { return scope == CountScope::kBody ? "body" : "total"; }

CountScope parse_scope(const std::string& name) {
  if (name == "body") return CountScope::kBody;
  if (name == "total") return CountScope::kTotal;
  throw ConfigError("unknown count scope '" + name + "' (expected body or total)");
}

std::size_t count_params(const BackboneSpec& spec, const LevelMask& mask, CountScope scope, bool include_bias) {
  if (mask.layers.size() != spec.body.size()) throw ConfigError("mask does not match the backbone depth");
  std::size_t n = 0;
  for (std::size_t r = 0; r < spec.body.size(); ++r) {
    const std::size_t out = mask.layers[r].out.size();
    n += mask.layers[r].in.size() * out * spec.body[r].kernel_area();
    if (include_bias) n += out;
  }
  if (scope == CountScope::kBody) return n;

  const auto t = static_cast<std::size_t>(mask.task) - 1;
  const LayerSpec& in = spec.input_layers.at(t);
  n += in.weight_count() + (include_bias ? in.out_channels : 0);
  if (in.norm) n += 2 * in.out_channels;
  for (std::size_t r = 0; r < spec.body.size(); ++r) {
    if (spec.body[r].norm) n += 2 * mask.layers[r].out.size();
  }
  if (t >= spec.heads.size() || mask.level < 1 || static_cast<std::size_t>(mask.level) > spec.heads[t].size()) {
    throw ConfigError("no head for task " + std::to_string(mask.task) + " level " + std::to_string(mask.level));
  }
  const HeadSpec& head = spec.heads[t][static_cast<std::size_t>(mask.level) - 1];
  n += head.in_channels * head.classes + (include_bias ? head.classes : 0);
  return n;
}

const BudgetRow& BudgetReport::row(int task, int level) const {
  for (const BudgetRow& r : rows) {
    if (r.task == task && r.level == level) return r;
  }
  throw std::out_of_range("no budget row for task " + std::to_string(task) + " level " + std::to_string(level));
}

BudgetRow& BudgetReport::row(int task, int level) {
  return const_cast<BudgetRow&>(std::as_const(*this).row(task, level));
}

double measure_latency(const ModelParams& params, const BackboneSpec& spec, const LevelMask& mask,
                       const LatencyOptions& options) {
  if (options.runs == 0) throw ConfigError("latency needs at least one timed run");
  Shape shape{1};
  const Shape& sample = spec.task(mask.task).input_shape;
  shape.insert(shape.end(), sample.begin(), sample.end());
  Tensor x(shape);
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> dist;
  for (double& v : x.data()) v = dist(rng);

  double sink = 0.0;
  for (std::size_t i = 0; i < options.warmup; ++i) sink += predict_logits(params, spec, mask, x)[0];
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < options.runs; ++i) sink += predict_logits(params, spec, mask, x)[0];
  const auto stop = std::chrono::steady_clock::now();
  // keeps the forwards observable to the optimizer
  volatile double keep = sink;
  (void)keep;
  return std::chrono::duration<double>(stop - start).count() / static_cast<double>(options.runs);
}

BudgetReport budget_table(const BackboneSpec& spec, const Hierarchy& hierarchy, const ModelParams* params,
                          const LatencyOptions& latency) {
  BudgetReport report;
  std::size_t full = 0;
  for (const LayerSpec& ls : spec.body) full += ls.weight_count() + ls.out_channels;
  report.full_body_params = full;
  for (const auto& levels : hierarchy.masks) {
    for (const LevelMask& mask : levels) {
      BudgetRow row;
      row.task = mask.task;
      row.level = mask.level;
      row.body_params = count_params(spec, mask, CountScope::kBody);
      row.total_params = count_params(spec, mask, CountScope::kTotal);
      row.density = static_cast<double>(row.body_params) / static_cast<double>(full);
      row.compression = 1.0 / row.density;
      if (params) row.latency_seconds = measure_latency(*params, spec, mask, latency);
      report.rows.push_back(row);
    }
  }
  return report;
}

int select_level(const BudgetReport& report, int task, std::size_t max_params, CountScope scope) {
  int best = 0;
  std::size_t minimum = 0;
  bool seen = false;
  for (const BudgetRow& r : report.rows) {
    if (r.task != task) continue;
    seen = true;
    if (r.level == 1) minimum = r.params(scope);
    if (r.params(scope) <= max_params && r.level > best) best = r.level;
  }
  if (!seen) throw ConfigError("no budget rows for task " + std::to_string(task));
  if (best == 0) {
    throw BudgetError("budget of " + std::to_string(max_params) + " parameters is below the minimum for task " +
                      std::to_string(task) + ": level 1 needs " + std::to_string(minimum) + " (" + scope_name(scope) +
                      " scope)");
  }
  return best;
}

std::string report_csv(const BudgetReport& report, bool include_latency) {
  std::ostringstream os;
  os << "task,level,body_params,total_params,density,compression";
  if (include_latency) os << ",latency_seconds";
  os << ",accuracy\n";
  for (const BudgetRow& r : report.rows) {
    os << r.task << ',' << r.level << ',' << r.body_params << ',' << r.total_params << ',' << general(r.density)
       << ',' << general(r.compression);
    if (include_latency) os << ',' << (r.latency_seconds ? general(*r.latency_seconds) : "");
    os << ',' << (r.accuracy ? general(*r.accuracy) : "") << '\n';
  }
  return os.str();
}

std::string report_table(const BudgetReport& report) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%4s %5s %12s %12s %8s %11s %12s %8s\n", "task", "level", "body", "total",
                "density", "compression", "latency(us)", "acc");
  os << line;
  for (const BudgetRow& r : report.rows) {
    const std::string lat = r.latency_seconds ? fixed(*r.latency_seconds * 1e6, 2) : "-";
    const std::string acc = r.accuracy ? fixed(*r.accuracy, 4) : "-";
    std::snprintf(line, sizeof line, "%4d %5d %12zu %12zu %8.4f %11.3f %12s %8s\n", r.task, r.level, r.body_params,
                  r.total_params, r.density, r.compression, lat.c_str(), acc.c_str());
    os << line;
  }
  return os.str();
}

}  // namespace dvn
