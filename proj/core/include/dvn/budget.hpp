#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dvn/backbone.hpp"
#include "dvn/model.hpp"
#include "dvn/partition.hpp"

namespace dvn {

/// Raised when no level of a task fits the requested parameter budget.
class BudgetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class CountScope {
  kBody,   // masked body blocks only
  kTotal,  // body + task input layer + (task, level) head + norm scale/shift
};

const char* scope_name(CountScope scope);
CountScope parse_scope(const std::string& name);

/// Parameters a mask touches. Per body layer: |in| x |out| x kernel area
/// weights plus |out| biases when `include_bias` is set.
std::size_t count_params(const BackboneSpec& spec, const LevelMask& mask, CountScope scope, bool include_bias = true);

struct BudgetRow {
  int task = 0;
  int level = 0;
  std::size_t body_params = 0;
  std::size_t total_params = 0;
  double density = 0.0;      // body_params / full body
  double compression = 0.0;  // 1 / density
  std::optional<double> latency_seconds;
  std::optional<double> accuracy;

  std::size_t params(CountScope scope) const { return scope == CountScope::kBody ? body_params : total_params; }
};

struct BudgetReport {
  std::size_t full_body_params = 0;
  std::vector<BudgetRow> rows;  // task-major, then level

  const BudgetRow& row(int task, int level) const;
  BudgetRow& row(int task, int level);
};

struct LatencyOptions {
  std::size_t warmup = 100;
  std::size_t runs = 1000;
  std::uint64_t seed = 7;
};

/// Counts for every (task, level). When `params` is given, also measures the
/// mean wall-clock time of a single-sample eval forward at each level.
BudgetReport budget_table(const BackboneSpec& spec, const Hierarchy& hierarchy, const ModelParams* params = nullptr,
                          const LatencyOptions& latency = {});

/// Mean seconds per single-sample eval forward at one (task, level).
double measure_latency(const ModelParams& params, const BackboneSpec& spec, const LevelMask& mask,
                       const LatencyOptions& options);

/// Largest level of `task` whose count in `scope` is <= max_params.
/// Throws BudgetError naming the level-1 count when even level 1 is too big.
int select_level(const BudgetReport& report, int task, std::size_t max_params, CountScope scope = CountScope::kTotal);

/// CSV with header task,level,body_params,total_params,density,compression,latency_seconds,accuracy.
std::string report_csv(const BudgetReport& report, bool include_latency = true);
/// Fixed-width table for terminals.
std::string report_table(const BudgetReport& report);

}  // namespace dvn
