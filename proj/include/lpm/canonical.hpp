#pragma once

// Canonical object notation: JSON objects with lexicographically sorted keys,
// doubles printed in shortest round-trip form, one object per line.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace lpm {

using Json = nlohmann::json;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string to_canonical(const Json& j) { return j.dump(); }

inline Json parse_canonical(std::string_view text) {
  try {
    return Json::parse(text.begin(), text.end());
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed canonical text: ") + e.what());
  }
}

inline Json read_canonical_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_canonical(ss.str());
}

// Writes to a temporary sibling and renames, so readers never see a torn file.
inline void write_canonical_file(const std::filesystem::path& path, const Json& j) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out << to_canonical(j) << '\n';
    out.flush();
    if (!out) throw FormatError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

namespace detail {

inline const Json& field(const Json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw FormatError(std::string("missing field '") + key + "'");
  return *it;
}

inline double as_real(const Json& v, const char* what) {
  if (!v.is_number()) throw FormatError(std::string(what) + ": expected number");
  double d = v.get<double>();
  if (!std::isfinite(d)) throw FormatError(std::string(what) + ": not finite");
  return d;
}

inline std::int64_t as_int(const Json& v, const char* what) {
  if (v.is_number_unsigned()) {
    auto u = v.get<std::uint64_t>();
    if (u > static_cast<std::uint64_t>(INT64_MAX))
      throw FormatError(std::string(what) + ": out of range");
    return static_cast<std::int64_t>(u);
  }
  if (!v.is_number_integer()) throw FormatError(std::string(what) + ": expected integer");
  return v.get<std::int64_t>();
}

inline std::uint64_t as_uint(const Json& v, const char* what) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0)
    return static_cast<std::uint64_t>(v.get<std::int64_t>());
  throw FormatError(std::string(what) + ": expected non-negative integer");
}

inline std::string as_string(const Json& v, const char* what) {
  if (!v.is_string()) throw FormatError(std::string(what) + ": expected string");
  return v.get<std::string>();
}

inline bool as_bool(const Json& v, const char* what) {
  if (!v.is_boolean()) throw FormatError(std::string(what) + ": expected boolean");
  return v.get<bool>();
}

inline std::vector<double> as_reals(const Json& v, const char* what) {
  if (!v.is_array()) throw FormatError(std::string(what) + ": expected array");
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& e : v) out.push_back(as_real(e, what));
  return out;
}

inline double real_at(const Json& obj, const char* key) { return as_real(field(obj, key), key); }
inline std::int64_t int_at(const Json& obj, const char* key) { return as_int(field(obj, key), key); }
inline std::uint64_t uint_at(const Json& obj, const char* key) { return as_uint(field(obj, key), key); }
inline std::string string_at(const Json& obj, const char* key) { return as_string(field(obj, key), key); }
inline bool bool_at(const Json& obj, const char* key) { return as_bool(field(obj, key), key); }
inline std::vector<double> reals_at(const Json& obj, const char* key) {
  return as_reals(field(obj, key), key);
}

template <typename T>
T value_or(const Json& obj, const char* key, T fallback) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return fallback;
  return it->template get<T>();
}

}  // namespace detail
}  // namespace lpm
