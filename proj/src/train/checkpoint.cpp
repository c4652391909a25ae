// SPDX-License-Identifier: Apache-2.0
#include <fstream>
#include <map>
#include <set>

#include "config_table.hpp"
#include "nhp/serialize.hpp"

namespace nhp {

namespace {

constexpr const char* kPrefix = "__config__.";

TensorRecord scalar_record(const std::string& name, double value) {
  TensorRecord r;
  r.name = kPrefix + name;
  r.precision = 8;
  r.values = {value};
  return r;
}

TensorRecord list_record(const std::string& name, const std::vector<int>& values) {
  TensorRecord r;
  r.name = kPrefix + name;
  r.shape = {values.size()};
  r.precision = 8;
  r.values.assign(values.begin(), values.end());
  return r;
}

std::vector<TensorRecord> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path.string());
  try {
    return read_records(in);
  } catch (const FormatError& e) {
    throw CheckpointError("checkpoint " + path.string() + ": " + e.what());
  }
}

TrainConfig config_from(const std::vector<TensorRecord>& records) {
  std::map<std::string, const TensorRecord*> cfg;
  for (const auto& r : records)
    if (r.name.rfind(kPrefix, 0) == 0) cfg[r.name.substr(std::string(kPrefix).size())] = &r;
  if (cfg.empty()) throw CheckpointError("checkpoint: no embedded configuration");
  auto scalar = [&](const std::string& key) {
    auto it = cfg.find(key);
    if (it == cfg.end() || it->second->values.size() != 1) throw CheckpointError("checkpoint: configuration lacks " + key);
    return it->second->values[0];
  };
  TrainConfig c;
  for (const auto& k : detail::config_keys()) k.set(c, scalar(k.section + "." + k.name));
  c.seed = (static_cast<std::uint64_t>(scalar("train.seed_hi")) << 32) | static_cast<std::uint64_t>(scalar("train.seed_lo"));
  auto list = [&](const std::string& key) {
    std::vector<int> out;
    if (auto it = cfg.find(key); it != cfg.end())
      for (double v : it->second->values) out.push_back(static_cast<int>(v));
    return out;
  };
  c.input_views = list("train.input_views");
  c.query_views = list("train.query_views");
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint: stored configuration is invalid: ") + e.what());
  }
  return c;
}

template <typename T>
ParamSet<T> params_from(const std::vector<TensorRecord>& records, const FieldConfig& cfg) {
  ParamSet<T> params = make_field_params<T>(cfg, 0);
  std::map<std::string, const TensorRecord*> found;
  for (const auto& r : records)
    if (r.name.rfind(kPrefix, 0) != 0) found[r.name] = &r;
  std::vector<std::string> missing, extra;
  for (const auto& name : params.names())
    if (!found.count(name)) missing.push_back(name);
  const std::set<std::string> expected(params.names().begin(), params.names().end());
  for (const auto& [name, rec] : found)
    if (!expected.count(name)) extra.push_back(name);
  if (!missing.empty() || !extra.empty()) {
    std::string msg = "checkpoint does not match the " + cfg.variant_name() + " architecture;";
    auto join = [](const std::vector<std::string>& v) {
      std::string s;
      for (const auto& n : v) s += (s.empty() ? " " : ", ") + n;
      return s;
    };
    if (!missing.empty()) msg += " missing:" + join(missing) + ";";
    if (!extra.empty()) msg += " extra:" + join(extra) + ";";
    throw CheckpointError(msg);
  }
  for (const auto& name : params.names()) {
    const TensorRecord& rec = *found.at(name);
    if (rec.precision != sizeof(T)) {
      throw CheckpointError("checkpoint: parameter " + name + " stored at " + std::to_string(8 * rec.precision) +
                            " bits, expected " + std::to_string(8 * sizeof(T)));
    }
    try {
      assign_record(rec, params.at(name));
    } catch (const FormatError& e) {
      throw CheckpointError(std::string("checkpoint: ") + e.what());
    }
  }
  return params;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamSet<T>& params, const TrainConfig& cfg) {
  std::vector<TensorRecord> records;
  for (const auto& name : params.names()) records.push_back(to_record(name, params.at(name)));
  TrainConfig stored = cfg;
  stored.precision = static_cast<int>(8 * sizeof(T));
  for (const auto& k : detail::config_keys()) records.push_back(scalar_record(k.section + "." + k.name, k.get(stored)));
  records.push_back(scalar_record("train.seed_hi", static_cast<double>(cfg.seed >> 32)));
  records.push_back(scalar_record("train.seed_lo", static_cast<double>(cfg.seed & 0xffffffffull)));
  records.push_back(list_record("train.input_views", cfg.input_views));
  records.push_back(list_record("train.query_views", cfg.query_views));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot write " + path.string());
  write_records(out, records);
  if (!out) throw CheckpointError("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto records = read_file(path);
  Checkpoint ck;
  ck.config = config_from(records);
  if (ck.config.precision == 64) {
    ck.params64 = params_from<double>(records, ck.config.field);
  } else {
    ck.params32 = params_from<float>(records, ck.config.field);
  }
  return ck;
}

template <typename T>
ParamSet<T> load_checkpoint_into(const std::filesystem::path& path, const FieldConfig& cfg) {
  return params_from<T>(read_file(path), cfg);
}

template void save_checkpoint(const std::filesystem::path&, const ParamSet<float>&, const TrainConfig&);
template void save_checkpoint(const std::filesystem::path&, const ParamSet<double>&, const TrainConfig&);
template ParamSet<float> load_checkpoint_into(const std::filesystem::path&, const FieldConfig&);
template ParamSet<double> load_checkpoint_into(const std::filesystem::path&, const FieldConfig&);

}  // namespace nhp
