#pragma once

// Object/attribute vocabularies and the text prompts built from them.

#include <algorithm>
#include <cctype>
#include <initializer_list>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "ovoda/errors.hpp"
#include "ovoda/geometry.hpp"
#include "ovoda/json_io.hpp"
#include "ovoda/rng.hpp"

namespace ovoda {

enum class Family { Object, Attribute };

/// Compat key whose attributes apply to every class (the spatial relations).
inline constexpr std::string_view kAnyGroup = "*";

/// Base/novel/extra class sets for objects and attributes.
///
/// Object classes are plain lowercase names ("car"). Non-spatial attributes
/// use group-qualified ids ("vehicle.parked") because the same word can
/// belong to several groups ("pedestrian.moving", "vehicle.moving"); the four
/// spatial relations use their text as id. `class_groups` assigns each object
/// class to a group and `compat` lists the attributes allowed per group.
struct Vocabulary {
  std::string name;
  std::vector<std::string> base_objects, novel_objects, extra_objects;
  std::vector<std::string> base_attributes, novel_attributes, extra_attributes;
  std::map<std::string, std::string> class_groups;
  std::map<std::string, std::vector<std::string>> compat;

  bool is_base_object(std::string_view c) const { return contains(base_objects, c); }
  bool is_novel_object(std::string_view c) const { return contains(novel_objects, c); }
  bool is_base_attribute(std::string_view a) const { return contains(base_attributes, a); }
  bool has_object(std::string_view c) const {
    return contains(base_objects, c) || contains(novel_objects, c) || contains(extra_objects, c);
  }
  bool has_attribute(std::string_view a) const {
    return contains(base_attributes, a) || contains(novel_attributes, a) || contains(extra_attributes, a);
  }

  std::string group_of(const std::string& cls) const {
    auto it = class_groups.find(cls);
    return it == class_groups.end() ? std::string() : it->second;
  }

  /// Attribute ids allowed for `cls` (its group plus the universal ones).
  std::vector<std::string> allowed_attributes(const std::string& cls) const {
    std::vector<std::string> out;
    if (auto it = compat.find(group_of(cls)); it != compat.end()) out = it->second;
    if (auto it = compat.find(std::string(kAnyGroup)); it != compat.end())
      out.insert(out.end(), it->second.begin(), it->second.end());
    return out;
  }

  bool compatible(const std::string& cls, const std::string& attribute_id) const {
    return contains(allowed_attributes(cls), attribute_id);
  }

  /// Throws ValidationError when the sets overlap or compat is incomplete.
  void validate() const {
    auto check_disjoint = [&](std::initializer_list<const std::vector<std::string>*> sets, const char* family) {
      std::set<std::string> seen;
      for (const auto* s : sets)
        for (const auto& x : *s)
          if (!seen.insert(x).second)
            throw ValidationError("vocabulary '" + name + "': " + family + " '" + x + "' listed twice");
    };
    check_disjoint({&base_objects, &novel_objects, &extra_objects}, "object class");
    check_disjoint({&base_attributes, &novel_attributes, &extra_attributes}, "attribute");
    for (const auto* s : {&base_objects, &novel_objects, &extra_objects})
      for (const auto& c : *s)
        if (!class_groups.contains(c))
          throw ValidationError("vocabulary '" + name + "': class '" + c + "' has no group");
    std::set<std::string> covered;
    for (const auto& [group, attrs] : compat)
      for (const auto& a : attrs) {
        if (!has_attribute(a))
          throw ValidationError("vocabulary '" + name + "': compat group '" + group + "' names unknown attribute '" + a + "'");
        covered.insert(a);
      }
    for (const auto* s : {&base_attributes, &novel_attributes, &extra_attributes})
      for (const auto& a : *s)
        if (!covered.contains(a))
          throw ValidationError("vocabulary '" + name + "': attribute '" + a + "' is not in any compat group");
  }

 private:
  static bool contains(const std::vector<std::string>& v, std::string_view x) {
    return std::find(v.begin(), v.end(), x) != v.end();
  }
};

namespace detail {
inline std::vector<std::string> sorted(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  return v;
}
}  // namespace detail

/// Training vocabulary: base, novel, extra; each block sorted.
inline std::vector<std::string> training_vocab(const Vocabulary& v, Family family) {
  const bool obj = family == Family::Object;
  std::vector<std::string> out = detail::sorted(obj ? v.base_objects : v.base_attributes);
  for (const auto* block : {obj ? &v.novel_objects : &v.novel_attributes, obj ? &v.extra_objects : &v.extra_attributes}) {
    auto s = detail::sorted(*block);
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

/// Testing vocabulary: base then novel, each block sorted; extras dropped.
inline std::vector<std::string> testing_vocab(const Vocabulary& v, Family family) {
  const bool obj = family == Family::Object;
  std::vector<std::string> out = detail::sorted(obj ? v.base_objects : v.base_attributes);
  auto s = detail::sorted(obj ? v.novel_objects : v.novel_attributes);
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

/// Display text of an attribute id: group prefix dropped, '_' as space.
inline std::string attribute_text(std::string_view id) {
  if (auto dot = id.rfind('.'); dot != std::string_view::npos) id = id.substr(dot + 1);
  std::string out(id);
  std::replace(out.begin(), out.end(), '_', ' ');
  return out;
}

inline bool is_spatial_attribute(std::string_view id) { return relation_from_text(id).has_value(); }

/// Resolves an attribute given either as id or as display text against the
/// attributes allowed for `cls`.
inline std::optional<std::string> resolve_attribute(const Vocabulary& v, const std::string& cls,
                                                    const std::string& attribute) {
  const auto allowed = v.allowed_attributes(cls);
  for (const auto& id : allowed)
    if (id == attribute) return id;
  const std::string wanted = canonical_text(attribute);
  for (const auto& id : allowed)
    if (!is_spatial_attribute(id) && attribute_text(id) == wanted) return id;
  return std::nullopt;
}

struct PromptConfig {
  bool perspective_prefix = true;  // PSP
  bool trailing_period = true;
  std::string perspective_template = "From the perspective of {reference}, {subject} {relation} {reference}";
  std::string plain_template = "{subject} {relation} {reference}";
  std::string nonspatial_template = "{class} {attribute}";

  void validate() const {
    auto need = [](const std::string& t, std::initializer_list<const char*> keys, const char* which) {
      for (const char* k : keys)
        if (t.find(k) == std::string::npos)
          throw ConfigError(std::string(which) + " template lacks placeholder " + k);
    };
    need(perspective_template, {"{subject}", "{relation}", "{reference}"}, "perspective");
    need(plain_template, {"{subject}", "{relation}", "{reference}"}, "plain spatial");
    need(nonspatial_template, {"{class}", "{attribute}"}, "non-spatial");
  }
};

namespace detail {

inline std::string substitute(std::string tmpl, const std::map<std::string, std::string>& values) {
  for (const auto& [key, value] : values) {
    const std::string token = "{" + key + "}";
    for (auto pos = tmpl.find(token); pos != std::string::npos; pos = tmpl.find(token, pos + value.size()))
      tmpl.replace(pos, token.size(), value);
  }
  return tmpl;
}

// Collapses whitespace without touching case.
inline std::string squeeze_spaces(std::string_view s) {
  std::string out;
  bool pending = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending = !out.empty();
      continue;
    }
    if (pending) out.push_back(' ');
    pending = false;
    out.push_back(c);
  }
  return out;
}

}  // namespace detail

/// "<class> <attribute>", lowercase. Throws IncompatibleAttribute when the
/// attribute is not allowed for the class.
inline std::string render_nonspatial(const Vocabulary& v, const std::string& cls, const std::string& attribute,
                                     const PromptConfig& cfg = {}) {
  auto id = resolve_attribute(v, cls, attribute);
  if (!id || is_spatial_attribute(*id))
    throw IncompatibleAttribute("attribute '" + attribute + "' is not allowed for class '" + cls + "'");
  return canonical_text(detail::substitute(cfg.nonspatial_template,
                                           {{"class", cls}, {"attribute", attribute_text(*id)}}));
}

/// Spatial prompt for `subject` seen from `reference`. With the perspective
/// prefix: "From the perspective of <ref>, <subj> <relation> <ref>."
inline std::string render_spatial(const std::string& subject, const std::string& reference, SpatialRelation rel,
                                  const PromptConfig& cfg = {}) {
  const std::string& tmpl = cfg.perspective_prefix ? cfg.perspective_template : cfg.plain_template;
  std::string out = detail::squeeze_spaces(detail::substitute(
      tmpl, {{"subject", canonical_text(subject)},
             {"reference", canonical_text(reference)},
             {"relation", std::string(relation_text(rel))}}));
  if (cfg.trailing_period) out.push_back('.');
  return out;
}

/// Ground-truth pair label: "<class_i> <relation> <class_j>".
inline std::string render_ovad_label(const std::string& class_i, const std::string& class_j, SpatialRelation rel) {
  return canonical_text(class_i) + " " + std::string(relation_text(rel)) + " " + canonical_text(class_j);
}

struct ParsedSpatial {
  std::string subject, reference;
  SpatialRelation relation;
  friend bool operator==(const ParsedSpatial&, const ParsedSpatial&) = default;
};

/// Inverse of render_spatial for the default templates.
inline std::optional<ParsedSpatial> parse_spatial(std::string_view text, const PromptConfig& cfg = {}) {
  std::string body(text);
  if (cfg.trailing_period) {
    if (body.empty() || body.back() != '.') return std::nullopt;
    body.pop_back();
  }
  std::string reference_hint;
  if (cfg.perspective_prefix) {
    constexpr std::string_view kPrefix = "From the perspective of ";
    if (body.rfind(kPrefix, 0) != 0) return std::nullopt;
    body.erase(0, kPrefix.size());
    auto comma = body.find(", ");
    if (comma == std::string::npos) return std::nullopt;
    reference_hint = body.substr(0, comma);
    body.erase(0, comma + 2);
  }
  std::optional<ParsedSpatial> found;
  for (auto rel : kAllRelations) {
    const std::string token = " " + std::string(relation_text(rel)) + " ";
    auto pos = body.find(token);
    if (pos == std::string::npos) continue;
    if (found) return std::nullopt;  // ambiguous
    ParsedSpatial p{body.substr(0, pos), body.substr(pos + token.size()), rel};
    if (cfg.perspective_prefix && p.reference != reference_hint) return std::nullopt;
    found = p;
  }
  return found;
}

// ---------------------------------------------------------------------------
// Presets and the vocabulary file format.

namespace detail {

inline Vocabulary with_ovad_attributes(Vocabulary v) {
  v.base_attributes = {"cycle.with_rider", "pedestrian.sitting_lying_down", "vehicle.parked", "in front of", "behind"};
  v.novel_attributes = {"cycle.without_rider", "pedestrian.standing", "pedestrian.moving", "vehicle.moving",
                        "vehicle.stopped", "on the left of", "on the right of"};
  v.compat = {
      {"cycle", {"cycle.with_rider", "cycle.without_rider"}},
      {"pedestrian", {"pedestrian.moving", "pedestrian.standing", "pedestrian.sitting_lying_down"}},
      {"vehicle", {"vehicle.moving", "vehicle.parked", "vehicle.stopped"}},
      {std::string(kAnyGroup), {"in front of", "behind", "on the left of", "on the right of"}},
  };
  return v;
}

}  // namespace detail

/// nuScenes object classes (six base, four novel, six training-only extras)
/// with the OVAD attribute set.
inline Vocabulary nuscenes_ovad_vocabulary() {
  Vocabulary v;
  v.name = "nuscenes-ovad";
  v.base_objects = {"car", "construction vehicle", "trailer", "barrier", "bicycle", "pedestrian"};
  v.novel_objects = {"truck", "bus", "motorcycle", "traffic cone"};
  v.extra_objects = {"animal", "ambulance", "police", "pushable pullable object", "debris", "bicycle rack"};
  v.class_groups = {
      {"car", "vehicle"}, {"construction vehicle", "vehicle"}, {"trailer", "vehicle"}, {"truck", "vehicle"},
      {"bus", "vehicle"}, {"ambulance", "vehicle"}, {"police", "vehicle"}, {"bicycle", "cycle"},
      {"motorcycle", "cycle"}, {"pedestrian", "pedestrian"}, {"barrier", "static"}, {"traffic cone", "static"},
      {"animal", "static"}, {"pushable pullable object", "static"}, {"debris", "static"},
      {"bicycle rack", "static"},
  };
  return detail::with_ovad_attributes(std::move(v));
}

/// Argoverse 2 object classes (four base, four novel, seven extras) with the
/// OVAD attribute set.
inline Vocabulary argoverse2_ovad_vocabulary() {
  Vocabulary v;
  v.name = "argoverse2-ovad";
  v.base_objects = {"regular vehicle", "trailer", "bicycle", "pedestrian"};
  v.novel_objects = {"truck", "bus", "motorcycle", "construction cone"};
  v.extra_objects = {"animal", "bollard", "sign", "large vehicle", "wheeled device", "stroller", "railed vehicle"};
  v.class_groups = {
      {"regular vehicle", "vehicle"}, {"trailer", "vehicle"}, {"truck", "vehicle"}, {"bus", "vehicle"},
      {"large vehicle", "vehicle"}, {"railed vehicle", "vehicle"}, {"bicycle", "cycle"}, {"motorcycle", "cycle"},
      {"pedestrian", "pedestrian"}, {"construction cone", "static"}, {"animal", "static"}, {"bollard", "static"},
      {"sign", "static"}, {"wheeled device", "static"}, {"stroller", "static"},
  };
  return detail::with_ovad_attributes(std::move(v));
}

inline std::optional<Vocabulary> preset_vocabulary(std::string_view name) {
  if (name == "nuscenes-ovad") return nuscenes_ovad_vocabulary();
  if (name == "argoverse2-ovad") return argoverse2_ovad_vocabulary();
  return std::nullopt;
}

inline json vocabulary_to_json(const Vocabulary& v) {
  return json{{"name", v.name},
              {"base_objects", v.base_objects},
              {"novel_objects", v.novel_objects},
              {"extra_objects", v.extra_objects},
              {"base_attributes", v.base_attributes},
              {"novel_attributes", v.novel_attributes},
              {"extra_attributes", v.extra_attributes},
              {"class_groups", v.class_groups},
              {"compat", v.compat}};
}

inline Vocabulary vocabulary_from_json(const json& j) {
  Vocabulary v;
  v.name = read_string(require(j, "name", ""), "/name");
  auto list = [&](const char* key) { return read_strings(require(j, key, ""), std::string("/") + key); };
  v.base_objects = list("base_objects");
  v.novel_objects = list("novel_objects");
  v.extra_objects = list("extra_objects");
  v.base_attributes = list("base_attributes");
  v.novel_attributes = list("novel_attributes");
  v.extra_attributes = list("extra_attributes");
  const json& groups = require(j, "class_groups", "");
  if (!groups.is_object()) throw SchemaError("/class_groups: expected object");
  for (auto it = groups.begin(); it != groups.end(); ++it)
    v.class_groups[it.key()] = read_string(it.value(), "/class_groups/" + it.key());
  const json& compat = require(j, "compat", "");
  if (!compat.is_object()) throw SchemaError("/compat: expected object");
  for (auto it = compat.begin(); it != compat.end(); ++it)
    v.compat[it.key()] = read_strings(it.value(), "/compat/" + it.key());
  v.validate();
  return v;
}

/// Loads a vocabulary file, or a preset when `path_or_name` names one.
inline Vocabulary load_vocabulary(const std::string& path_or_name) {
  if (auto preset = preset_vocabulary(path_or_name)) return *preset;
  return vocabulary_from_json(parse_json(read_text_file(path_or_name), path_or_name));
}

}  // namespace ovoda
