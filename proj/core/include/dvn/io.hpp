#pragma once

#include <filesystem>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dvn/backbone.hpp"
#include "dvn/model.hpp"
#include "dvn/partition.hpp"

namespace dvn {

using json = nlohmann::json;

json spec_to_json(const BackboneSpec& spec);
/// Accepts the document written by spec_to_json; `heads` is optional.
BackboneSpec spec_from_json(const json& doc);

/// {"k": k, "group_sizes": [[...], ...]} with one list per layer boundary.
json partition_to_json(const UnitPartition& partition);
UnitPartition partition_from_json(const BackboneSpec& spec, const json& doc);

json configs_to_json(const std::vector<VirtualNetConfig>& configs);
std::vector<VirtualNetConfig> configs_from_json(const json& doc);

/// Writes `bytes` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

/// `<stem>.bin`: every tensor as 64-bit little-endian reals, back to back.
/// `<stem>.json`: manifest of tensor names, shapes and byte offsets.
void save_params(const ModelParams& params, const std::filesystem::path& stem);

/// Loads into a model laid out for `spec`/`hierarchy`; every manifest entry
/// must match a tensor of the same name and shape, and vice versa.
ModelParams load_params(const BackboneSpec& spec, const Hierarchy& hierarchy, const std::filesystem::path& stem);

}  // namespace dvn
