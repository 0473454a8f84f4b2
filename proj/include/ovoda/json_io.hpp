#pragma once

// JSON helpers shared by every file format: canonical serialization and
// schema-checked readers that report JSON pointers.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include <json.hpp>

#include "ovoda/errors.hpp"
#include "ovoda/geometry.hpp"

namespace ovoda {

using json = nlohmann::json;

namespace detail {

inline void format_double(double v, std::string& out) {
  if (std::isnan(v)) {
    out += "\"NaN\"";
    return;
  }
  if (std::isinf(v)) {
    out += v > 0 ? "\"Infinity\"" : "\"-Infinity\"";
    return;
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  std::string_view s(buf);
  if (s == "-0.000000") s = "0.000000";
  out += s;
}

inline void canonical_dump_into(const json& j, std::string& out) {
  switch (j.type()) {
    case json::value_t::object: {
      out.push_back('{');
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {  // keys are already sorted
        if (!first) out.push_back(',');
        first = false;
        out += json(it.key()).dump();
        out.push_back(':');
        canonical_dump_into(it.value(), out);
      }
      out.push_back('}');
      break;
    }
    case json::value_t::array: {
      out.push_back('[');
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) out.push_back(',');
        canonical_dump_into(j[i], out);
      }
      out.push_back(']');
      break;
    }
    case json::value_t::number_float:
      format_double(j.get<double>(), out);
      break;
    default:
      out += j.dump();
  }
}

}  // namespace detail

/// Compact JSON with sorted keys and every float printed with six decimals,
/// so equal values always produce identical bytes.
inline std::string canonical_dump(const json& j) {
  std::string out;
  detail::canonical_dump_into(j, out);
  return out;
}

/// Rounds to the six-decimal grid used by canonical_dump.
inline double quantize6(double v) { return std::round(v * 1e6) / 1e6; }

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline json parse_json(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError(origin + ": invalid JSON: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Schema-checked readers. `ptr` is the JSON pointer of the value being read.

inline const json& require(const json& obj, std::string_view key, const std::string& ptr) {
  if (!obj.is_object()) throw SchemaError(ptr + ": expected object");
  auto it = obj.find(std::string(key));
  if (it == obj.end()) throw SchemaError(ptr + "/" + std::string(key) + ": missing field");
  return *it;
}

/// Accepts JSON numbers and the tokens "NaN", "Infinity", "-Infinity";
/// finiteness is a validation concern, not a schema one.
inline double read_number(const json& v, const std::string& ptr) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const auto& s = v.get_ref<const std::string&>();
    if (s == "NaN") return std::numeric_limits<double>::quiet_NaN();
    if (s == "Infinity") return std::numeric_limits<double>::infinity();
    if (s == "-Infinity") return -std::numeric_limits<double>::infinity();
  }
  throw SchemaError(ptr + ": expected number");
}

inline std::int64_t read_int(const json& v, const std::string& ptr) {
  if (!v.is_number_integer()) throw SchemaError(ptr + ": expected integer");
  return v.get<std::int64_t>();
}

inline std::string read_string(const json& v, const std::string& ptr) {
  if (!v.is_string()) throw SchemaError(ptr + ": expected string");
  return v.get<std::string>();
}

inline bool read_bool(const json& v, const std::string& ptr) {
  if (!v.is_boolean()) throw SchemaError(ptr + ": expected boolean");
  return v.get<bool>();
}

inline const json& read_array(const json& v, const std::string& ptr) {
  if (!v.is_array()) throw SchemaError(ptr + ": expected array");
  return v;
}

inline std::vector<double> read_numbers(const json& v, const std::string& ptr) {
  read_array(v, ptr);
  std::vector<double> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(read_number(v[i], ptr + "/" + std::to_string(i)));
  return out;
}

inline Vec3 read_vec3(const json& v, const std::string& ptr) {
  auto xs = read_numbers(v, ptr);
  if (xs.size() != 3) throw SchemaError(ptr + ": expected 3 numbers");
  return {xs[0], xs[1], xs[2]};
}

inline std::vector<std::string> read_strings(const json& v, const std::string& ptr) {
  read_array(v, ptr);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(read_string(v[i], ptr + "/" + std::to_string(i)));
  return out;
}

inline json vec_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

inline json box_to_json(const Box3D& b) {
  return json{{"center", vec_to_json(b.center())}, {"size", vec_to_json(b.size())}, {"yaw", b.yaw()}};
}

/// Reads a box; invalid values raise ValidationError prefixed by `context`.
inline Box3D read_box(const json& v, const std::string& ptr, const std::string& context) {
  const Vec3 c = read_vec3(require(v, "center", ptr), ptr + "/center");
  const Vec3 s = read_vec3(require(v, "size", ptr), ptr + "/size");
  const double yaw = read_number(require(v, "yaw", ptr), ptr + "/yaw");
  try {
    return Box3D(c, s, yaw);
  } catch (const ValidationError& e) {
    throw ValidationError(context + ": " + e.what());
  }
}

inline json box2d_to_json(const Box2D& r) { return json::array({r.x_min, r.y_min, r.x_max, r.y_max}); }

}  // namespace ovoda
