#include "dvn/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace dvn {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

json layer_to_json(const LayerSpec& l) {
  json j{{"kind", layer_kind_name(l.kind)},
         {"in_channels", l.in_channels},
         {"out_channels", l.out_channels},
         {"norm", l.norm},
         {"relu", l.relu}};
  if (l.kind == LayerKind::kConv2d) {
    j["kernel"] = {l.kernel_h, l.kernel_w};
    j["stride"] = l.stride;
  }
  return j;
}

LayerSpec layer_from_json(const json& j) {
  LayerSpec l;
  l.kind = parse_layer_kind(j.at("kind").get<std::string>());
  l.in_channels = j.at("in_channels").get<std::size_t>();
  l.out_channels = j.at("out_channels").get<std::size_t>();
  l.norm = j.value("norm", false);
  l.relu = j.value("relu", true);
  if (l.kind == LayerKind::kConv2d) {
    const auto k = j.at("kernel").get<std::vector<std::size_t>>();
    if (k.size() != 2) throw ConfigError("kernel must be [h, w]");
    l.kernel_h = k[0];
    l.kernel_w = k[1];
    l.stride = j.value("stride", std::size_t{1});
  } else if (j.contains("kernel") || j.contains("stride")) {
    throw ConfigError("dense layers take no kernel or stride");
  }
  return l;
}

}  // namespace

json spec_to_json(const BackboneSpec& spec) {
  json doc;
  for (const TaskSpec& t : spec.tasks) {
    doc["tasks"].push_back({{"name", t.name}, {"classes", t.classes}, {"input_shape", t.input_shape}});
  }
  for (const LayerSpec& l : spec.input_layers) doc["input_layers"].push_back(layer_to_json(l));
  for (const LayerSpec& l : spec.body) doc["body"].push_back(layer_to_json(l));
  if (!spec.heads.empty()) {
    for (const auto& per_task : spec.heads) {
      json row = json::array();
      for (const HeadSpec& h : per_task) row.push_back({{"in_channels", h.in_channels}, {"classes", h.classes}});
      doc["heads"].push_back(row);
    }
  }
  return doc;
}

BackboneSpec spec_from_json(const json& doc) {
  try {
    BackboneSpec spec;
    for (const json& t : doc.at("tasks")) {
      spec.tasks.push_back(TaskSpec{t.value("name", std::string{}), t.at("classes").get<std::size_t>(),
                                    t.at("input_shape").get<Shape>()});
    }
    for (const json& l : doc.at("input_layers")) spec.input_layers.push_back(layer_from_json(l));
    for (const json& l : doc.at("body")) spec.body.push_back(layer_from_json(l));
    if (doc.contains("heads")) {
      for (const json& row : doc.at("heads")) {
        std::vector<HeadSpec> heads;
        for (const json& h : row) heads.push_back({h.at("in_channels").get<std::size_t>(), h.at("classes").get<std::size_t>()});
        spec.heads.push_back(std::move(heads));
      }
    }
    validate_spec(spec);
    return spec;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid backbone document: ") + e.what());
  }
}

json partition_to_json(const UnitPartition& partition) {
  json sizes = json::array();
  auto group_sizes = [](const std::vector<ChannelRange>& groups) {
    std::vector<std::size_t> s;
    for (const ChannelRange& r : groups) s.push_back(r.size);
    return s;
  };
  if (!partition.layers.empty()) sizes.push_back(group_sizes(partition.layers.front().in));
  for (const LayerGroups& g : partition.layers) sizes.push_back(group_sizes(g.out));
  return {{"k", partition.k}, {"group_sizes", sizes}};
}

UnitPartition partition_from_json(const BackboneSpec& spec, const json& doc) {
  try {
    if (doc.contains("group_sizes")) {
      return partition_from_sizes(spec, doc.at("group_sizes").get<std::vector<std::vector<std::size_t>>>());
    }
    const long long k = doc.at("k").get<long long>();
    if (k < 1) throw ConfigError("k must be ≥ 1");
    return equal_partition(spec, static_cast<std::size_t>(k));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid partition document: ") + e.what());
  }
}

json configs_to_json(const std::vector<VirtualNetConfig>& configs) {
  json doc = json::array();
  for (const auto& c : configs) doc.push_back({{"task", c.task}, {"order", c.order}});
  return doc;
}

std::vector<VirtualNetConfig> configs_from_json(const json& doc) {
  try {
    std::vector<VirtualNetConfig> configs;
    for (const json& c : doc) configs.push_back({c.at("task").get<int>(), c.at("order").get<std::vector<int>>()});
    return configs;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid configs document: ") + e.what());
  }
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  std::filesystem::path p = stem;
  p += suffix;
  return p;
}

}  // namespace

void save_params(const ModelParams& params, const std::filesystem::path& stem) {
  std::string blob;
  json manifest;
  manifest["format"] = "f64le";
  manifest["binary"] = with_suffix(stem, ".bin").filename().string();
  params.for_each([&](const std::string& name, const Tensor& t, TensorRole) {
    manifest["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", blob.size()}});
    const auto* bytes = reinterpret_cast<const char*>(t.data().data());
    blob.append(bytes, t.size() * sizeof(double));
  });
  manifest["bytes"] = blob.size();
  write_file_atomic(with_suffix(stem, ".bin"), blob);
  write_file_atomic(with_suffix(stem, ".json"), manifest.dump(2) + "\n");
}

ModelParams load_params(const BackboneSpec& spec, const Hierarchy& hierarchy, const std::filesystem::path& stem) {
  ModelParams params = init_params(spec, hierarchy, 0);
  const json manifest = json::parse(read_file(with_suffix(stem, ".json")));
  const std::string blob = read_file(with_suffix(stem, ".bin"));
  if (manifest.value("bytes", std::size_t{0}) != blob.size()) {
    throw std::runtime_error("parameter binary size does not match its manifest");
  }
  std::map<std::string, json> entries;
  for (const json& e : manifest.at("tensors")) entries.emplace(e.at("name").get<std::string>(), e);
  std::size_t matched = 0;
  params.for_each([&](const std::string& name, Tensor& t, TensorRole) {
    auto it = entries.find(name);
    if (it == entries.end()) throw std::runtime_error("parameter file lacks tensor " + name);
    if (it->second.at("shape").get<Shape>() != t.shape()) {
      throw std::runtime_error("tensor " + name + " has shape " + it->second.at("shape").dump() + ", expected " +
                               shape_string(t.shape()));
    }
    const auto offset = it->second.at("offset").get<std::size_t>();
    const std::size_t bytes = t.size() * sizeof(double);
    if (offset + bytes > blob.size()) throw std::runtime_error("tensor " + name + " runs past the end of the binary");
    std::memcpy(t.data().data(), blob.data() + offset, bytes);
    ++matched;
  });
  if (matched != entries.size()) throw std::runtime_error("parameter file has tensors this model does not know");
  return params;
}

}  // namespace dvn
