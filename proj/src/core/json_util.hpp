#pragma once

#include <initializer_list>
#include <string>

#include <json.hpp>

#include "srblab/error.hpp"
#include "srblab/spatial.hpp"

namespace srblab::detail {

using nlohmann::json;

inline json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::Parse, what + ": " + e.what());
  }
}

/// Rejects keys outside `allowed` so that typos surface as config errors.
inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& path) {
  if (!j.is_object()) fail(ErrorCode::Parse, "config: '" + path + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || it.key() == k;
    if (!ok) fail(ErrorCode::Parse, "config: unknown field '" + path + it.key() + "'");
  }
}

inline double get_number(const json& j, const char* key, const std::string& path, double fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number()) fail(ErrorCode::Parse, "config: field '" + path + key + "' must be a number");
  return v.get<double>();
}

inline int get_int(const json& j, const char* key, const std::string& path, int fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number_integer()) fail(ErrorCode::Parse, "config: field '" + path + key + "' must be an integer");
  return v.get<int>();
}

inline bool get_bool(const json& j, const char* key, const std::string& path, bool fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_boolean()) fail(ErrorCode::Parse, "config: field '" + path + key + "' must be a boolean");
  return v.get<bool>();
}

inline std::string get_string(const json& j, const char* key, const std::string& path, const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_string()) fail(ErrorCode::Parse, "config: field '" + path + key + "' must be a string");
  return v.get<std::string>();
}

inline Vec3 get_vec3(const json& j, const char* key, const std::string& path, const Vec3& fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_array() || v.size() != 3 || !v[0].is_number() || !v[1].is_number() || !v[2].is_number())
    fail(ErrorCode::Parse, "config: field '" + path + key + "' must hold 3 numbers");
  return Vec3(v[0].get<double>(), v[1].get<double>(), v[2].get<double>());
}

inline std::string join_path(const std::string& base, const std::string& p) {
  if (p.empty() || p[0] == '/' || base.empty() || base == ".") return p;
  return base + "/" + p;
}

}  // namespace srblab::detail
