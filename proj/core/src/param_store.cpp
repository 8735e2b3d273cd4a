#include "zoforge/param_store.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "bytes.hpp"
#include "zoforge/errors.hpp"

namespace zoforge {

namespace {

std::size_t total_length(const std::vector<GroupDesc>& groups) {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.length;
  return n;
}

}  // namespace

ParamStore::ParamStore(std::vector<GroupDesc> groups, StoragePrecision precision)
    : groups_(std::move(groups)), values_(total_length(groups_), 0.0), precision_(precision) {
  validate();
}

ParamStore::ParamStore(std::vector<GroupDesc> groups, std::vector<double> values,
                       StoragePrecision precision)
    : groups_(std::move(groups)), values_(std::move(values)), precision_(precision) {
  validate();
  for (double& v : values_) v = stored(v);
}

void ParamStore::validate() const {
  if (groups_.empty()) throw InvalidArgument("parameter store needs at least one group");
  std::size_t expected_offset = 0;
  for (const auto& g : groups_) {
    if (g.length == 0) throw InvalidArgument("group '" + g.name + "' is empty");
    if (g.offset != expected_offset) {
      throw InvalidArgument("group '" + g.name + "' is not contiguous with its predecessor");
    }
    expected_offset += g.length;
  }
  if (expected_offset != values_.size()) {
    throw InvalidArgument("groups cover " + std::to_string(expected_offset) + " entries but store has " +
                          std::to_string(values_.size()));
  }
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    for (std::size_t j = i + 1; j < groups_.size(); ++j) {
      if (groups_[i].name == groups_[j].name) throw InvalidArgument("duplicate group '" + groups_[i].name + "'");
    }
  }
}

ParamStore with_storage(const ParamStore& store, StoragePrecision precision) {
  ParamStore out = store;
  out.precision_ = precision;
  for (double& v : out.values_) v = out.stored(v);
  return out;
}

std::optional<std::size_t> ParamStore::find_group(std::string_view name) const noexcept {
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    if (groups_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t ParamStore::group_index(std::string_view name) const {
  if (auto i = find_group(name)) return *i;
  throw InvalidArgument("unknown parameter group '" + std::string(name) + "'");
}

std::span<double> ParamStore::group_values(std::string_view name) {
  const auto& g = group(name);
  return std::span<double>(values_).subspan(g.offset, g.length);
}

std::span<const double> ParamStore::group_values(std::string_view name) const {
  const auto& g = group(name);
  return std::span<const double>(values_).subspan(g.offset, g.length);
}

void ParamStore::set_trainable(std::string_view name, bool trainable) {
  groups_[group_index(name)].trainable = trainable;
}

GroupMask ParamStore::trainable_mask() const {
  GroupMask mask(groups_.size());
  for (std::size_t i = 0; i < groups_.size(); ++i) mask[i] = groups_[i].trainable;
  return mask;
}

void ParamStore::apply_mask(const GroupMask& mask) {
  if (mask.size() != groups_.size()) throw InvalidArgument("mask size does not match group count");
  for (std::size_t i = 0; i < groups_.size(); ++i) groups_[i].trainable = mask[i];
}

std::size_t ParamStore::masked_count(const GroupMask& mask) const {
  if (mask.size() != groups_.size()) throw InvalidArgument("mask size does not match group count");
  std::size_t n = 0;
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    if (mask[i]) n += groups_[i].length;
  }
  return n;
}

const AdapterSpec* ParamStore::adapter_for(std::string_view target) const noexcept {
  for (const auto& a : adapters_) {
    if (a.target_group == target) return &a;
  }
  return nullptr;
}

std::uint64_t ParamStore::layout_hash() const {
  std::vector<std::uint8_t> bytes;
  for (const auto& g : groups_) {
    bytes.insert(bytes.end(), g.name.begin(), g.name.end());
    bytes.push_back(0);
    detail::put_le<std::uint64_t>(bytes, g.offset);
    detail::put_le<std::uint64_t>(bytes, g.length);
  }
  return detail::fnv1a(bytes);
}

void add_scaled_noise(ParamStore& store, const NoiseSpec& noise, double coeff, const GroupMask& mask,
                      std::span<const double> group_scale) {
  const auto& groups = store.groups();
  if (!group_scale.empty() && group_scale.size() != groups.size()) {
    throw InvalidArgument("group scale size does not match group count");
  }
  const std::size_t dim = store.masked_count(mask);
  if (dim == 0) return;
  auto stream = NoiseStream::make(noise.seed, noise.dist, dim);
  auto values = store.values();
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (!mask[g]) continue;
    const double c = group_scale.empty() ? coeff : coeff * group_scale[g];
    const std::size_t end = groups[g].offset + groups[g].length;
    for (std::size_t i = groups[g].offset; i < end; ++i) {
      values[i] = store.stored(values[i] + c * stream.next());
    }
  }
}

std::vector<double> materialize_noise(const ParamStore& store, const NoiseSpec& noise,
                                      const GroupMask& mask) {
  std::vector<double> z(store.size(), 0.0);
  const std::size_t dim = store.masked_count(mask);
  if (dim == 0) return z;
  auto stream = NoiseStream::make(noise.seed, noise.dist, dim);
  const auto& groups = store.groups();
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (!mask[g]) continue;
    stream.fill(std::span<double>(z).subspan(groups[g].offset, groups[g].length));
  }
  return z;
}

ParamStore attach_low_rank_adapter(const ParamStore& store, const AdapterSpec& spec) {
  const auto index = store.find_group(spec.target_group);
  if (!index) throw InvalidArgument("adapter target '" + spec.target_group + "' does not exist");
  const GroupDesc& target = store.groups()[*index];
  if (!target.is_matrix()) {
    throw InvalidArgument("adapter target '" + spec.target_group + "' is not a linear-map weight");
  }
  if (spec.rank == 0 || spec.rank > std::min(target.rows, target.cols)) {
    throw InvalidArgument("adapter rank " + std::to_string(spec.rank) + " does not fit a " +
                          std::to_string(target.rows) + "x" + std::to_string(target.cols) + " map");
  }
  if (store.adapter_for(spec.target_group) != nullptr) {
    throw InvalidArgument("group '" + spec.target_group + "' already has an adapter");
  }

  const std::size_t m = target.rows;
  const std::size_t n = target.cols;
  const std::size_t r = spec.rank;

  std::vector<GroupDesc> groups = store.groups();
  groups[*index].trainable = false;
  std::size_t offset = store.size();
  groups.push_back({spec.target_group + ".lora_A", offset, m * r, true, m, r});
  offset += m * r;
  groups.push_back({spec.target_group + ".lora_B", offset, r * n, true, r, n});

  std::vector<double> values(store.values().begin(), store.values().end());
  values.reserve(values.size() + m * r + r * n);
  auto stream = NoiseStream::gaussian(spec.init_seed);
  const double init_scale = 1.0 / std::sqrt(static_cast<double>(r));
  for (std::size_t i = 0; i < m * r; ++i) values.push_back(init_scale * stream.next());
  values.insert(values.end(), r * n, 0.0);

  ParamStore out(std::move(groups), std::move(values), store.precision());
  out.adapters_ = store.adapters_;
  out.adapters_.push_back(spec);
  return out;
}

std::vector<double> effective_weight(const ParamStore& store, std::string_view group) {
  const auto base = store.group_values(group);
  std::vector<double> w(base.begin(), base.end());
  const AdapterSpec* adapter = store.adapter_for(group);
  if (adapter == nullptr) return w;

  const GroupDesc& g = store.group(group);
  const std::string name(group);
  const auto a = store.group_values(name + ".lora_A");
  const auto b = store.group_values(name + ".lora_B");
  const std::size_t r = adapter->rank;
  const double scale = adapter->alpha / static_cast<double>(r);
  for (std::size_t i = 0; i < g.rows; ++i) {
    for (std::size_t j = 0; j < g.cols; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < r; ++k) acc += a[i * r + k] * b[k * g.cols + j];
      w[i * g.cols + j] += scale * acc;
    }
  }
  return w;
}

std::filesystem::path sidecar_path(const std::filesystem::path& bin_path) {
  return std::filesystem::path(bin_path.string() + ".json");
}

void export_params(const ParamStore& store, const std::filesystem::path& bin_path,
                   const std::filesystem::path& json_path) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(store.size() * 8);
  for (double v : store.values()) detail::put_f64(bytes, v);
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw Error("cannot open '" + bin_path.string() + "' for writing");
  bin.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));

  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : store.groups()) {
    nlohmann::json entry = {{"name", g.name}, {"offset", g.offset}, {"length", g.length}, {"trainable", g.trainable}};
    if (g.is_matrix()) {
      entry["rows"] = g.rows;
      entry["cols"] = g.cols;
    }
    groups.push_back(std::move(entry));
  }
  nlohmann::json adapters = nlohmann::json::array();
  for (const auto& a : store.adapters()) {
    adapters.push_back({{"target", a.target_group}, {"rank", a.rank}, {"alpha", a.alpha}, {"init_seed", a.init_seed.value}});
  }
  nlohmann::json doc = {{"dtype", "float64-le"}, {"count", store.size()}, {"groups", groups}};
  if (!adapters.empty()) doc["adapters"] = adapters;
  std::ofstream js(json_path);
  if (!js) throw Error("cannot open '" + json_path.string() + "' for writing");
  js << doc.dump(2) << '\n';
}

ParamStore import_params(const std::filesystem::path& bin_path, const std::filesystem::path& json_path) {
  std::ifstream js(json_path);
  if (!js) throw Error("cannot open parameter sidecar '" + json_path.string() + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed parameter sidecar '" + json_path.string() + "': " + e.what());
  }

  std::vector<GroupDesc> groups;
  try {
    for (const auto& entry : doc.at("groups")) {
      GroupDesc g;
      g.name = entry.at("name").get<std::string>();
      g.offset = entry.at("offset").get<std::size_t>();
      g.length = entry.at("length").get<std::size_t>();
      g.trainable = entry.at("trainable").get<bool>();
      g.rows = entry.value("rows", std::size_t{0});
      g.cols = entry.value("cols", std::size_t{0});
      groups.push_back(std::move(g));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed parameter sidecar '" + json_path.string() + "': " + e.what());
  }

  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw Error("cannot open parameter file '" + bin_path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  if (bytes.size() % 8 != 0) throw Error("parameter file size is not a multiple of 8 bytes");
  std::vector<double> values(bytes.size() / 8);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = detail::get_f64(bytes, 8 * i);

  ParamStore store(std::move(groups), std::move(values));
  if (doc.contains("adapters")) {
    // Adapter groups are already present; re-register the specs so that
    // effective_weight composes them.
    for (const auto& a : doc["adapters"]) {
      AdapterSpec spec{a.at("target").get<std::string>(), a.at("rank").get<std::size_t>(),
                       a.at("alpha").get<double>(), Seed{a.value("init_seed", std::uint64_t{0})}};
      store.adapters_.push_back(spec);
    }
  }
  return store;
}

}  // namespace zoforge
