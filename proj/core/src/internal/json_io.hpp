#pragma once

#include <algorithm>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "lapflow/error.hpp"
#include "lapflow/model.hpp"
#include "lapflow/schedule.hpp"

namespace lapflow::detail {

using json = nlohmann::json;

/// Strict reader over one JSON object: every key must be consumed, and type
/// errors name the dotted path.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string prefix) : obj_(obj), prefix_(std::move(prefix)) {
    if (!obj_.is_object()) throw ConfigError(prefix_, "expected a JSON object");
  }

  std::string path(const std::string& key) const {
    return prefix_.empty() ? key : prefix_ + "." + key;
  }

  bool has(const std::string& key) const { return obj_.contains(key); }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return obj_.at(key);
  }

  template <typename V>
  bool get(const std::string& key, V& out) {
    if (!obj_.contains(key)) return false;
    seen_.insert(key);
    try {
      out = obj_.at(key).template get<V>();
    } catch (const json::exception& e) {
      throw ConfigError(path(key), std::string("wrong type: ") + e.what());
    }
    return true;
  }

  template <typename V>
  void require(const std::string& key, V& out) {
    if (!get(key, out)) throw ConfigError(path(key), "required key is missing");
  }

  ObjectReader child(const std::string& key) {
    seen_.insert(key);
    return ObjectReader(obj_.at(key), path(key));
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(path(it.key()), "unknown key");
    }
  }

 private:
  const json& obj_;
  std::string prefix_;
  std::set<std::string> seen_;
};

inline json to_json(const ModelConfig& m) {
  return json{{"scales", m.scales},         {"width", m.width},
              {"heads", m.heads},           {"depth", m.depth},
              {"patch", m.patch},           {"channels", m.channels},
              {"num_classes", m.num_classes}, {"image_size", m.image_size},
              {"mlp_ratio", m.mlp_ratio},   {"freq_dim", m.freq_dim},
              {"num_stages", m.num_stages}, {"init_std", m.init_std}};
}

inline void read_model(ObjectReader& r, ModelConfig& m) {
  r.get("scales", m.scales);
  r.get("width", m.width);
  r.get("heads", m.heads);
  r.get("depth", m.depth);
  r.get("patch", m.patch);
  r.get("channels", m.channels);
  r.get("num_classes", m.num_classes);
  r.get("image_size", m.image_size);
  r.get("mlp_ratio", m.mlp_ratio);
  r.get("freq_dim", m.freq_dim);
  r.get("num_stages", m.num_stages);
  r.get("init_std", m.init_std);
  r.finish();
}

inline json to_json(const ScheduleSpec& s) {
  return json{{"scales", s.scales}, {"critical_times", s.critical_times}, {"path", to_string(s.path)},
              {"independent_scale_noise", s.independent_scale_noise}};
}

/// Reads a schedule object. Critical times may be given in either order;
/// they are stored finest-first (descending).
inline void read_schedule(ObjectReader& r, ScheduleSpec& s, bool scales_required) {
  if (scales_required) {
    r.require("scales", s.scales);
  } else {
    r.get("scales", s.scales);
  }
  std::string path = to_string(s.path);
  if (r.get("path", path)) s.path = parse_path(path);
  r.get("independent_scale_noise", s.independent_scale_noise);
  std::vector<double> times;
  if (r.get("critical_times", times)) {
    std::sort(times.begin(), times.end(), std::greater<>());
    s.critical_times = times;
  } else {
    s.critical_times = ScheduleSpec::uniform(s.scales, s.path).critical_times;
  }
  r.finish();
  s.validate();
}

}  // namespace lapflow::detail
