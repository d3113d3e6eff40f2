#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "refalign/errors.hpp"

namespace refalign::detail {

using json = nlohmann::json;

inline json parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open file");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path + ": malformed document: " + e.what());
  }
}

inline json parse_line(const std::string& line, const std::string& where) {
  try {
    return json::parse(line);
  } catch (const json::parse_error& e) {
    throw DataError(where + ": malformed record: " + e.what());
  }
}

inline const json& member(const json& j, const char* key, const std::string& path) {
  if (!j.is_object()) throw DataError(path + ": expected an object");
  const auto it = j.find(key);
  if (it == j.end()) throw DataError(path + "." + key + ": missing field");
  return *it;
}

inline int as_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) throw DataError(path + ": expected an integer");
  return j.get<int>();
}

inline std::string as_string(const json& j, const std::string& path) {
  if (!j.is_string()) throw DataError(path + ": expected a string");
  return j.get<std::string>();
}

inline int int_field(const json& j, const char* key, const std::string& path) {
  return as_int(member(j, key, path), path + "." + key);
}

inline std::string string_field(const json& j, const char* key, const std::string& path) {
  return as_string(member(j, key, path), path + "." + key);
}

inline const json& array_field(const json& j, const char* key, const std::string& path) {
  const json& v = member(j, key, path);
  if (!v.is_array()) throw DataError(path + "." + key + ": expected an array");
  return v;
}

}  // namespace refalign::detail
