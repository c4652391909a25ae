// SPDX-License-Identifier: Apache-2.0
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "config_table.hpp"

namespace nhp {

namespace detail {

namespace {

template <typename M>
ConfigKey int_key(std::string section, std::string name, M TrainConfig::*member) {
  return {std::move(section), std::move(name), KeyKind::kInt,
          [member](const TrainConfig& c) { return static_cast<double>(c.*member); },
          [member](TrainConfig& c, double v) { c.*member = static_cast<M>(v); }};
}

ConfigKey real_key(std::string section, std::string name, double TrainConfig::*member) {
  return {std::move(section), std::move(name), KeyKind::kReal, [member](const TrainConfig& c) { return c.*member; },
          [member](TrainConfig& c, double v) { c.*member = v; }};
}

template <typename M>
ConfigKey field_int(std::string name, M FieldConfig::*member) {
  return {"field", std::move(name), KeyKind::kInt,
          [member](const TrainConfig& c) { return static_cast<double>(c.field.*member); },
          [member](TrainConfig& c, double v) { c.field.*member = static_cast<M>(v); }};
}

ConfigKey field_bool(std::string name, bool FieldConfig::*member) {
  return {"field", std::move(name), KeyKind::kBool, [member](const TrainConfig& c) { return c.field.*member ? 1.0 : 0.0; },
          [member](TrainConfig& c, double v) { c.field.*member = v != 0.0; }};
}

ConfigKey encoder_int(std::string name, int EncoderConfig::*member) {
  return {"field", std::move(name), KeyKind::kInt,
          [member](const TrainConfig& c) { return static_cast<double>(c.field.encoder.*member); },
          [member](TrainConfig& c, double v) { c.field.encoder.*member = static_cast<int>(v); }};
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      int_key("train", "rays_per_step", &TrainConfig::rays_per_step),
      int_key("train", "samples", &TrainConfig::samples),
      int_key("train", "memory_offset", &TrainConfig::memory_offset),
      int_key("train", "steps", &TrainConfig::steps),
      real_key("train", "learning_rate", &TrainConfig::learning_rate),
      real_key("train", "beta1", &TrainConfig::beta1),
      real_key("train", "beta2", &TrainConfig::beta2),
      real_key("train", "epsilon", &TrainConfig::epsilon),
      int_key("train", "precision", &TrainConfig::precision),
      real_key("train", "foreground_fraction", &TrainConfig::foreground_fraction),
      int_key("train", "mask_dilation", &TrainConfig::mask_dilation),
      int_key("train", "chunk_rays", &TrainConfig::chunk_rays),
      field_bool("skeletal", &FieldConfig::enable_skeletal),
      field_bool("pixel_aligned", &FieldConfig::enable_pixel_aligned),
      field_bool("temporal", &FieldConfig::enable_temporal),
      field_bool("multiview", &FieldConfig::enable_multiview),
      field_bool("separate_query", &FieldConfig::separate_query),
      field_bool("zero_init_heads", &FieldConfig::zero_init_heads),
      encoder_int("encoder_hidden1", &EncoderConfig::hidden1),
      encoder_int("encoder_hidden2", &EncoderConfig::hidden2),
      encoder_int("encoder_features", &EncoderConfig::features),
      field_int("temporal_dim", &FieldConfig::temporal_dim),
      field_int("voxel_dim", &FieldConfig::voxel_dim),
      field_int("fuse_dim", &FieldConfig::fuse_dim),
      field_int("density_width", &FieldConfig::density_width),
      field_int("color_width", &FieldConfig::color_width),
      field_int("dir_freqs", &FieldConfig::dir_freqs),
      field_int("grid_resolution", &FieldConfig::grid_resolution),
      field_int("grid_padding", &FieldConfig::grid_padding),
  };
  return keys;
}

}  // namespace detail

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_number(const std::string& where, const std::string& text, detail::KeyKind kind) {
  const std::string v = trim(text);
  if (kind == detail::KeyKind::kBool) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return 1.0;
    if (v == "false" || v == "0" || v == "no" || v == "off") return 0.0;
    throw ConfigError(where + ": expected a boolean, got '" + v + "'");
  }
  if (kind == detail::KeyKind::kInt) {
    long long x = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(where + ": expected an integer, got '" + v + "'");
    return static_cast<double>(x);
  }
  std::istringstream is(v);
  double x = 0;
  if (!(is >> x) || !(is >> std::ws).eof()) throw ConfigError(where + ": expected a number, got '" + v + "'");
  return x;
}

std::vector<int> parse_list(const std::string& where, const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (trim(item).empty()) continue;
    out.push_back(static_cast<int>(parse_number(where, item, detail::KeyKind::kInt)));
  }
  return out;
}

// "a-b" as the half-open range [a, b).
std::pair<int, int> parse_range(const std::string& where, const std::string& text) {
  const std::string v = trim(text);
  const auto dash = v.find('-', 1);
  if (dash == std::string::npos) throw ConfigError(where + ": expected a range like 0-20, got '" + v + "'");
  const int a = static_cast<int>(parse_number(where, v.substr(0, dash), detail::KeyKind::kInt));
  const int b = static_cast<int>(parse_number(where, v.substr(dash + 1), detail::KeyKind::kInt));
  if (a >= b) throw ConfigError(where + ": empty range '" + v + "'");
  return {a, b};
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::ini_parser::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  std::map<std::string, const detail::ConfigKey*> index;
  for (const auto& k : detail::config_keys()) index[k.section + "." + k.name] = &k;

  RunConfig rc;
  for (const auto& [section, body] : tree) {
    if (section != "train" && section != "field" && section != "split") {
      throw ConfigError("config: unknown section [" + section + "]");
    }
    if (body.empty() && !body.data().empty()) throw ConfigError("config: key '" + section + "' outside a section");
    for (const auto& [key, node] : body) {
      const std::string where = section + "." + key;
      const std::string value = node.get_value<std::string>();
      if (where == "train.seed") {
        const std::string v = trim(value);
        const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), rc.train.seed);
        if (ec != std::errc() || end != v.data() + v.size()) throw ConfigError(where + ": expected an unsigned integer, got '" + v + "'");
      } else if (where == "train.input_views") {
        rc.train.input_views = parse_list(where, value);
      } else if (where == "train.query_views") {
        rc.train.query_views = parse_list(where, value);
      } else if (where == "split.train_subjects") {
        rc.split.train_subjects = parse_list(where, value);
      } else if (where == "split.test_subjects") {
        rc.split.test_subjects = parse_list(where, value);
      } else if (where == "split.train_frames") {
        std::tie(rc.split.train_frame_begin, rc.split.train_frame_end) = parse_range(where, value);
      } else if (where == "split.test_frames") {
        std::tie(rc.split.test_frame_begin, rc.split.test_frame_end) = parse_range(where, value);
      } else if (auto it = index.find(where); it != index.end()) {
        it->second->set(rc.train, parse_number(where, value, it->second->kind));
      } else {
        throw ConfigError("config: unknown key '" + where + "'");
      }
    }
  }
  rc.train.validate();
  return rc;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace nhp
