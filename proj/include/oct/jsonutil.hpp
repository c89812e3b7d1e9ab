#pragma once

#include <fstream>
#include <initializer_list>
#include <string>

#include <json.hpp>

#include "oct/errors.hpp"

namespace oct {

using Json = nlohmann::json;

inline Json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  Json j;
  try {
    in >> j;
  } catch (const Json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return j;
}

inline void save_json(const Json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot create " + path);
  // Keys come out sorted, so serialized bytes are reproducible.
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + path);
}

// Configs are strict: a key we don't know is an error, not a no-op.
inline void reject_unknown_keys(const Json& j,
                                std::initializer_list<const char*> allowed,
                                const std::string& ctx) {
  if (!j.is_object()) throw ConfigError(ctx + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known) throw ConfigError(ctx + ": unknown field \"" + it.key() + "\"");
  }
}

template <typename T>
T json_get(const Json& j, const char* key, const std::string& ctx) {
  if (!j.contains(key))
    throw ConfigError(ctx + ": missing required field \"" + key + "\"");
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(ctx + ": field \"" + key + "\": " + e.what());
  }
}

template <typename T>
T json_get_or(const Json& j, const char* key, T fallback,
              const std::string& ctx) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(ctx + ": field \"" + key + "\": " + e.what());
  }
}

}  // namespace oct
