#pragma once

// Scene datasets: types, the "ovoda-scene/1" JSON format and the synthetic
// scene generator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ovoda/errors.hpp"
#include "ovoda/geometry.hpp"
#include "ovoda/json_io.hpp"
#include "ovoda/rng.hpp"
#include "ovoda/vocabulary.hpp"

namespace ovoda {

inline constexpr const char* kSceneSchema = "ovoda-scene/1";

struct CameraView {
  CameraModel model;
  std::string image;  // opaque reference handed to the embedding provider
  friend bool operator==(const CameraView&, const CameraView&) = default;
};

struct Annotation {
  std::string instance_id;
  std::string class_name;
  Box3D box;
  std::vector<std::string> attributes;  // non-spatial attribute ids
  std::optional<Vec2> velocity;
  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct Frame {
  std::int64_t timestamp_us = 0;
  std::vector<CameraView> cameras;
  PointCloud cloud;
  std::vector<Annotation> annotations;
  friend bool operator==(const Frame&, const Frame&) = default;
};

struct Scene {
  std::string token;
  std::vector<Frame> frames;
  friend bool operator==(const Scene&, const Scene&) = default;
};

struct SceneDataset {
  std::string split = "val";
  std::string vocabulary_ref;  // preset name or vocabulary file path
  std::vector<Scene> scenes;
  friend bool operator==(const SceneDataset&, const SceneDataset&) = default;

  std::size_t frame_count() const {
    std::size_t n = 0;
    for (const auto& s : scenes) n += s.frames.size();
    return n;
  }
};

// ---------------------------------------------------------------------------
// Validation

/// Checks every dataset invariant against `vocab`; throws ValidationError
/// naming the offending scene/frame/annotation.
inline void validate_dataset(const SceneDataset& ds, const Vocabulary& vocab) {
  if (ds.split != "train" && ds.split != "val" && ds.split != "test")
    throw ValidationError("split must be train, val or test (got '" + ds.split + "')");
  std::set<std::string> tokens;
  for (const auto& scene : ds.scenes) {
    if (!tokens.insert(scene.token).second) throw ValidationError("duplicate scene token '" + scene.token + "'");
    for (std::size_t f = 0; f < scene.frames.size(); ++f) {
      const Frame& frame = scene.frames[f];
      const std::string where = "scene '" + scene.token + "' frame " + std::to_string(f);
      if (f > 0 && frame.timestamp_us <= scene.frames[f - 1].timestamp_us)
        throw ValidationError(where + ": timestamps must be strictly increasing");
      std::set<std::string> cam_ids;
      for (const auto& cam : frame.cameras) {
        if (!cam_ids.insert(cam.model.camera_id).second)
          throw ValidationError(where + ": duplicate camera id '" + cam.model.camera_id + "'");
        try {
          cam.model.validate();
        } catch (const ValidationError& e) {
          throw ValidationError(where + ": " + e.what());
        }
      }
      for (std::size_t i = 0; i < frame.cloud.points.size(); ++i)
        if (!frame.cloud.points[i].allFinite())
          throw ValidationError(where + ": point " + std::to_string(i) + " is not finite");
      if (!frame.cloud.intensity.empty() && frame.cloud.intensity.size() != frame.cloud.points.size())
        throw ValidationError(where + ": intensity count differs from point count");
      std::set<std::string> ids;
      for (const auto& a : frame.annotations) {
        const std::string who = where + " annotation '" + a.instance_id + "'";
        if (!ids.insert(a.instance_id).second) throw ValidationError(who + ": duplicate instance id");
        if (a.class_name.empty()) throw ValidationError(who + ": empty class name");
        if (!vocab.has_object(a.class_name))
          throw ValidationError(who + ": class '" + a.class_name + "' is not in vocabulary '" + vocab.name + "'");
        for (const auto& attr : a.attributes) {
          if (is_spatial_attribute(attr) || !vocab.compatible(a.class_name, attr))
            throw ValidationError(who + ": attribute '" + attr + "' is not compatible with '" + a.class_name + "'");
        }
        if (a.velocity && !a.velocity->allFinite()) throw ValidationError(who + ": velocity is not finite");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// JSON

inline json camera_to_json(const CameraView& cv) {
  json k = json::array(), e = json::array();
  for (int r = 0; r < 3; ++r) k.push_back({cv.model.intrinsics(r, 0), cv.model.intrinsics(r, 1), cv.model.intrinsics(r, 2)});
  for (int r = 0; r < 4; ++r)
    e.push_back({cv.model.extrinsics(r, 0), cv.model.extrinsics(r, 1), cv.model.extrinsics(r, 2), cv.model.extrinsics(r, 3)});
  return json{{"camera_id", cv.model.camera_id},
              {"image", cv.image},
              {"intrinsics", k},
              {"extrinsics", e},
              {"image_size", {cv.model.width, cv.model.height}}};
}

inline json dataset_to_json(const SceneDataset& ds) {
  json scenes = json::array();
  for (const auto& scene : ds.scenes) {
    json frames = json::array();
    for (const auto& fr : scene.frames) {
      json cams = json::array();
      for (const auto& c : fr.cameras) cams.push_back(camera_to_json(c));
      json pts = json::array();
      for (const auto& p : fr.cloud.points) pts.push_back(vec_to_json(p));
      json cloud{{"points", pts}};
      if (!fr.cloud.intensity.empty()) cloud["intensity"] = fr.cloud.intensity;
      json anns = json::array();
      for (const auto& a : fr.annotations) {
        anns.push_back({{"instance_id", a.instance_id},
                        {"class_name", a.class_name},
                        {"box", box_to_json(a.box)},
                        {"attributes", a.attributes},
                        {"velocity", a.velocity ? json::array({a.velocity->x(), a.velocity->y()}) : json(nullptr)}});
      }
      frames.push_back({{"timestamp_us", fr.timestamp_us}, {"cameras", cams}, {"cloud", cloud}, {"annotations", anns}});
    }
    scenes.push_back({{"token", scene.token}, {"frames", frames}});
  }
  return json{{"schema", kSceneSchema}, {"split", ds.split}, {"vocabulary", ds.vocabulary_ref}, {"scenes", scenes}};
}

namespace detail {

inline Eigen::MatrixXd read_matrix(const json& v, const std::string& ptr, int rows, int cols) {
  read_array(v, ptr);
  if (static_cast<int>(v.size()) != rows) throw SchemaError(ptr + ": expected " + std::to_string(rows) + " rows");
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    auto row = read_numbers(v[r], ptr + "/" + std::to_string(r));
    if (static_cast<int>(row.size()) != cols)
      throw SchemaError(ptr + "/" + std::to_string(r) + ": expected " + std::to_string(cols) + " numbers");
    for (int c = 0; c < cols; ++c) m(r, c) = row[c];
  }
  return m;
}

}  // namespace detail

/// Parses the document structure only; call validate_dataset afterwards.
inline SceneDataset dataset_from_json(const json& j) {
  SceneDataset ds;
  const std::string schema = read_string(require(j, "schema", ""), "/schema");
  if (schema != kSceneSchema) throw SchemaError("/schema: expected '" + std::string(kSceneSchema) + "', got '" + schema + "'");
  ds.split = read_string(require(j, "split", ""), "/split");
  ds.vocabulary_ref = read_string(require(j, "vocabulary", ""), "/vocabulary");
  const json& scenes = read_array(require(j, "scenes", ""), "/scenes");
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const std::string sp = "/scenes/" + std::to_string(s);
    Scene scene;
    scene.token = read_string(require(scenes[s], "token", sp), sp + "/token");
    const json& frames = read_array(require(scenes[s], "frames", sp), sp + "/frames");
    for (std::size_t f = 0; f < frames.size(); ++f) {
      const std::string fp = sp + "/frames/" + std::to_string(f);
      const json& fj = frames[f];
      Frame fr;
      fr.timestamp_us = read_int(require(fj, "timestamp_us", fp), fp + "/timestamp_us");
      const json& cams = read_array(require(fj, "cameras", fp), fp + "/cameras");
      for (std::size_t c = 0; c < cams.size(); ++c) {
        const std::string cp = fp + "/cameras/" + std::to_string(c);
        CameraView cv;
        cv.model.camera_id = read_string(require(cams[c], "camera_id", cp), cp + "/camera_id");
        cv.image = read_string(require(cams[c], "image", cp), cp + "/image");
        cv.model.intrinsics = detail::read_matrix(require(cams[c], "intrinsics", cp), cp + "/intrinsics", 3, 3);
        cv.model.extrinsics = detail::read_matrix(require(cams[c], "extrinsics", cp), cp + "/extrinsics", 4, 4);
        const json& size = read_array(require(cams[c], "image_size", cp), cp + "/image_size");
        if (size.size() != 2) throw SchemaError(cp + "/image_size: expected [width, height]");
        cv.model.width = static_cast<int>(read_int(size[0], cp + "/image_size/0"));
        cv.model.height = static_cast<int>(read_int(size[1], cp + "/image_size/1"));
        fr.cameras.push_back(std::move(cv));
      }
      const json& cloud = require(fj, "cloud", fp);
      const json& pts = read_array(require(cloud, "points", fp + "/cloud"), fp + "/cloud/points");
      fr.cloud.points.reserve(pts.size());
      for (std::size_t i = 0; i < pts.size(); ++i)
        fr.cloud.points.push_back(read_vec3(pts[i], fp + "/cloud/points/" + std::to_string(i)));
      if (auto it = cloud.find("intensity"); it != cloud.end())
        fr.cloud.intensity = read_numbers(*it, fp + "/cloud/intensity");
      const json& anns = read_array(require(fj, "annotations", fp), fp + "/annotations");
      for (std::size_t a = 0; a < anns.size(); ++a) {
        const std::string ap = fp + "/annotations/" + std::to_string(a);
        Annotation ann;
        ann.instance_id = read_string(require(anns[a], "instance_id", ap), ap + "/instance_id");
        ann.class_name = read_string(require(anns[a], "class_name", ap), ap + "/class_name");
        ann.attributes = read_strings(require(anns[a], "attributes", ap), ap + "/attributes");
        const std::string who = "scene '" + scene.token + "' frame " + std::to_string(f) + " annotation '" +
                                ann.instance_id + "'";
        ann.box = read_box(require(anns[a], "box", ap), ap + "/box", who);
        const json& vel = require(anns[a], "velocity", ap);
        if (!vel.is_null()) {
          auto xs = read_numbers(vel, ap + "/velocity");
          if (xs.size() != 2) throw SchemaError(ap + "/velocity: expected 2 numbers or null");
          ann.velocity = Vec2(xs[0], xs[1]);
        }
        fr.annotations.push_back(std::move(ann));
      }
      scene.frames.push_back(std::move(fr));
    }
    ds.scenes.push_back(std::move(scene));
  }
  return ds;
}

/// Loads and validates a dataset against an explicit vocabulary.
inline SceneDataset load_dataset(const std::string& path, const Vocabulary& vocab) {
  SceneDataset ds = dataset_from_json(parse_json(read_text_file(path), path));
  validate_dataset(ds, vocab);
  return ds;
}

/// Resolves the vocabulary named in the file: a preset name, or a path
/// relative to the dataset file.
inline Vocabulary resolve_vocabulary(const std::string& ref, const std::string& dataset_path) {
  if (auto preset = preset_vocabulary(ref)) return *preset;
  std::filesystem::path p(ref);
  if (p.is_relative()) p = std::filesystem::path(dataset_path).parent_path() / p;
  return load_vocabulary(p.string());
}

inline SceneDataset load_dataset(const std::string& path) {
  SceneDataset ds = dataset_from_json(parse_json(read_text_file(path), path));
  validate_dataset(ds, resolve_vocabulary(ds.vocabulary_ref, path));
  return ds;
}

inline std::string serialize_dataset(const SceneDataset& ds) { return canonical_dump(dataset_to_json(ds)) + "\n"; }

inline void write_dataset(const SceneDataset& ds, const std::string& path) {
  write_text_file(path, serialize_dataset(ds));
}

// ---------------------------------------------------------------------------
// Synthetic scenes

struct SynthConfig {
  std::string vocabulary = "nuscenes-ovad";
  std::string split = "val";
  int scenes = 1;
  int frames = 10;
  double dt = 0.5;                 // seconds between frames
  int objects = 8;                 // per scene, constant over its frames
  int novel_quota = 2;             // objects drawn from the novel classes
  double arena_half_size = 30.0;   // meters
  double min_range = 3.0;          // object distance from the sensor origin
  double max_range = 30.0;
  int cameras = 6;
  int image_width = 1600;
  int image_height = 900;
  double focal = 800.0;
  double camera_height = 1.5;
  int points_per_object = 64;
  int background_points = 400;
  double moving_threshold = 0.5;   // m/s; "moving" iff speed above it
  double min_speed = 0.8;
  double max_speed = 3.0;
  double size_jitter = 0.1;
  double separation_margin = 0.3;  // extra BEV clearance between objects

  void validate() const {
    if (scenes < 0 || frames < 0 || objects < 0 || novel_quota < 0 || points_per_object < 0 || background_points < 0)
      throw ConfigError("synth: counts must be non-negative");
    if (novel_quota > objects) throw ConfigError("synth: novel_quota exceeds objects");
    if (cameras < 1) throw ConfigError("synth: at least one camera is required");
    if (!(dt > 0.0)) throw ConfigError("synth: dt must be positive");
    if (!(min_range >= 0.0 && max_range > min_range)) throw ConfigError("synth: need 0 <= min_range < max_range");
    if (!(arena_half_size > 0.0)) throw ConfigError("synth: arena_half_size must be positive");
    if (image_width <= 0 || image_height <= 0 || !(focal > 0.0)) throw ConfigError("synth: bad camera intrinsics");
    if (!(min_speed > moving_threshold && max_speed >= min_speed))
      throw ConfigError("synth: need moving_threshold < min_speed <= max_speed");
    if (!(size_jitter >= 0.0 && size_jitter < 1.0)) throw ConfigError("synth: size_jitter must be in [0, 1)");
    if (split != "train" && split != "val" && split != "test") throw ConfigError("synth: bad split '" + split + "'");
  }
};

/// Nominal (length, width, height) per class; unknown classes get a 1 m cube.
inline Vec3 nominal_size(const std::string& cls) {
  static const std::map<std::string, Vec3> table = {
      {"car", {4.6, 1.9, 1.7}},          {"regular vehicle", {4.6, 1.9, 1.7}},
      {"truck", {8.0, 2.5, 3.2}},        {"bus", {11.0, 2.9, 3.4}},
      {"trailer", {10.0, 2.6, 3.8}},     {"construction vehicle", {6.5, 2.8, 3.2}},
      {"ambulance", {6.0, 2.3, 2.6}},    {"police", {4.9, 2.0, 1.6}},
      {"large vehicle", {7.0, 2.5, 3.0}}, {"railed vehicle", {15.0, 3.0, 3.8}},
      {"pedestrian", {0.7, 0.7, 1.75}},  {"motorcycle", {2.1, 0.8, 1.5}},
      {"bicycle", {1.8, 0.6, 1.3}},      {"traffic cone", {0.4, 0.4, 1.0}},
      {"construction cone", {0.4, 0.4, 1.0}}, {"barrier", {0.5, 2.5, 1.0}},
      {"animal", {1.0, 0.4, 0.8}},       {"pushable pullable object", {0.8, 0.6, 1.0}},
      {"debris", {0.6, 0.6, 0.4}},       {"bicycle rack", {2.5, 0.7, 1.1}},
      {"bollard", {0.3, 0.3, 1.0}},      {"sign", {0.5, 0.2, 2.2}},
      {"wheeled device", {1.2, 0.6, 1.2}}, {"stroller", {0.9, 0.6, 1.0}},
  };
  auto it = table.find(cls);
  return it == table.end() ? Vec3(1.0, 1.0, 1.0) : it->second;
}

namespace detail {

// Quantized (cos, sin) of `phi` whose squared norm is as close to 1 as the
// six-decimal grid allows, so written rotations stay orthonormal to ~1e-8.
inline std::pair<double, double> unit_direction_on_grid(double phi) {
  const long long a0 = std::llround(std::cos(phi) * 1e6);
  const double s_sign = std::sin(phi) < 0.0 ? -1.0 : 1.0;
  long long best_a = a0, best_b = std::llround(std::abs(std::sin(phi)) * 1e6);
  long long best_err = -1;
  for (long long a = a0 - 20; a <= a0 + 20; ++a) {
    const long long rem = 1'000'000'000'000LL - a * a;
    if (rem < 0) continue;
    const long long b = std::llround(std::sqrt(static_cast<double>(rem)));
    const long long err = std::llabs(a * a + b * b - 1'000'000'000'000LL);
    if (best_err < 0 || err < best_err || (err == best_err && std::llabs(a - a0) < std::llabs(best_a - a0))) {
      best_err = err;
      best_a = a;
      best_b = b;
    }
  }
  return {static_cast<double>(best_a) / 1e6, s_sign * static_cast<double>(best_b) / 1e6};
}

inline std::vector<CameraView> ring_cameras(const SynthConfig& cfg, const std::string& image_prefix) {
  std::vector<CameraView> cams;
  for (int k = 0; k < cfg.cameras; ++k) {
    const double phi = 2.0 * std::numbers::pi * k / cfg.cameras;
    const auto [c, s] = unit_direction_on_grid(phi);
    CameraView cv;
    cv.model.camera_id = "cam_" + std::to_string(k);
    cv.model.width = cfg.image_width;
    cv.model.height = cfg.image_height;
    cv.model.intrinsics << cfg.focal, 0, cfg.image_width / 2.0, 0, cfg.focal, cfg.image_height / 2.0, 0, 0, 1;
    Eigen::Matrix3d r;
    r << s, -c, 0,  // image x: right of the optical axis
        0, 0, -1,   // image y: down
        c, s, 0;    // optical axis
    const Vec3 origin(0, 0, cfg.camera_height);
    cv.model.extrinsics.setIdentity();
    cv.model.extrinsics.topLeftCorner<3, 3>() = r;
    const Vec3 t = -r * origin;
    for (int i = 0; i < 3; ++i) cv.model.extrinsics(i, 3) = quantize6(t(i));
    cv.image = image_prefix + cv.model.camera_id;
    cams.push_back(std::move(cv));
  }
  return cams;
}

struct SynthObject {
  std::string cls;
  Vec3 size;
  double yaw = 0;
  Vec2 start;
  Vec2 velocity = Vec2::Zero();
  std::vector<std::string> attributes;

  Vec2 at(int frame, double dt) const { return start + velocity * (frame * dt); }
  double radius() const { return 0.5 * std::hypot(size.x(), size.y()); }
};

// Attribute and speed for an object of the given class group.
inline void assign_motion(SynthObject& o, const std::string& group, const SynthConfig& cfg, SplitMix64& rng) {
  double speed = 0.0;
  if (group == "vehicle") {
    const char* states[] = {"vehicle.moving", "vehicle.parked", "vehicle.stopped"};
    o.attributes = {states[rng.below(3)]};
    if (o.attributes[0] == "vehicle.moving") speed = rng.uniform(cfg.min_speed, cfg.max_speed);
  } else if (group == "pedestrian") {
    const char* states[] = {"pedestrian.moving", "pedestrian.standing", "pedestrian.sitting_lying_down"};
    o.attributes = {states[rng.below(3)]};
    if (o.attributes[0] == "pedestrian.moving")
      speed = rng.uniform(cfg.min_speed, std::min(cfg.max_speed, std::max(cfg.min_speed, 1.8)));
  } else if (group == "cycle") {
    const bool rider = rng.below(2) == 0;
    o.attributes = {rider ? "cycle.with_rider" : "cycle.without_rider"};
    if (rider && rng.below(2) == 0) speed = rng.uniform(cfg.min_speed, cfg.max_speed);
  }
  o.velocity = Vec2(speed * std::cos(o.yaw), speed * std::sin(o.yaw));
}

inline bool placement_ok(const SynthObject& o, const std::vector<SynthObject>& placed, const SynthConfig& cfg) {
  for (int f = 0; f < std::max(cfg.frames, 1); ++f) {
    const Vec2 p = o.at(f, cfg.dt);
    const double r = o.radius();
    if (std::abs(p.x()) + r > cfg.arena_half_size || std::abs(p.y()) + r > cfg.arena_half_size) return false;
    if (p.norm() - r < cfg.min_range) return false;
    for (const auto& q : placed)
      if ((q.at(f, cfg.dt) - p).norm() < r + q.radius() + cfg.separation_margin) return false;
  }
  return true;
}

inline Vec3 quantized(const Vec3& v) { return {quantize6(v.x()), quantize6(v.y()), quantize6(v.z())}; }

// Largest representable yaw below pi on the six-decimal grid keeps
// normalization from flipping its sign after a round trip.
inline double grid_yaw(double yaw) {
  constexpr double kLimit = 3.141592;
  return std::clamp(quantize6(yaw), -kLimit, kLimit);
}

}  // namespace detail

/// Deterministic synthetic dataset; a pure function of (cfg, seed).
inline SceneDataset generate_synthetic(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto vocab_opt = preset_vocabulary(cfg.vocabulary);
  const Vocabulary vocab = vocab_opt ? *vocab_opt : load_vocabulary(cfg.vocabulary);
  if (cfg.objects > cfg.novel_quota && vocab.base_objects.empty())
    throw ConfigError("synth: vocabulary has no base classes");
  if (cfg.novel_quota > 0 && vocab.novel_objects.empty()) throw ConfigError("synth: vocabulary has no novel classes");
  const auto base = detail::sorted(vocab.base_objects);
  const auto novel = detail::sorted(vocab.novel_objects);

  SceneDataset ds;
  ds.split = cfg.split;
  ds.vocabulary_ref = cfg.vocabulary;
  for (int s = 0; s < cfg.scenes; ++s) {
    char token[32];
    std::snprintf(token, sizeof token, "scene-%04d", s);
    SplitMix64 rng(derive_seed(seed, {"scene", token}));

    // Novel classes are drawn without replacement until the pool is used up.
    std::vector<std::string> novel_left = novel;
    std::vector<detail::SynthObject> objects;
    for (int k = 0; k < cfg.objects; ++k) {
      detail::SynthObject o;
      if (k < cfg.novel_quota) {
        if (novel_left.empty()) novel_left = novel;
        const std::size_t pick = rng.below(novel_left.size());
        o.cls = novel_left[pick];
        novel_left.erase(novel_left.begin() + static_cast<std::ptrdiff_t>(pick));
      } else {
        o.cls = base[rng.below(base.size())];
      }
      const Vec3 nominal = nominal_size(o.cls);
      for (int i = 0; i < 3; ++i)
        o.size(i) = quantize6(nominal(i) * (1.0 + rng.uniform(-cfg.size_jitter, cfg.size_jitter)));
      bool placed = false;
      for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
        o.yaw = detail::grid_yaw(rng.uniform(-std::numbers::pi, std::numbers::pi));
        const double range = rng.uniform(cfg.min_range, cfg.max_range);
        const double bearing = rng.uniform(-std::numbers::pi, std::numbers::pi);
        o.start = Vec2(range * std::cos(bearing), range * std::sin(bearing));
        detail::assign_motion(o, vocab.group_of(o.cls), cfg, rng);
        placed = detail::placement_ok(o, objects, cfg);
      }
      if (!placed)
        throw ConfigError("synth: could not place object " + std::to_string(k) + " of " + std::to_string(cfg.objects) +
                          " after 1000 attempts; enlarge the arena or lower the object count");
      objects.push_back(std::move(o));
    }

    Scene scene;
    scene.token = token;
    for (int f = 0; f < cfg.frames; ++f) {
      char prefix[64];
      std::snprintf(prefix, sizeof prefix, "%s/%03d/", token, f);
      Frame fr;
      fr.timestamp_us = 1'000'000 + std::llround(f * cfg.dt * 1e6);
      fr.cameras = detail::ring_cameras(cfg, prefix);
      for (std::size_t k = 0; k < objects.size(); ++k) {
        const auto& o = objects[k];
        const Vec2 p = o.at(f, cfg.dt);
        Annotation a;
        char id[64];
        std::snprintf(id, sizeof id, "%s-obj%02zu", token, k);
        a.instance_id = id;
        a.class_name = o.cls;
        a.box = Box3D(detail::quantized(Vec3(p.x(), p.y(), 0.5 * o.size.z())), o.size, o.yaw);
        a.attributes = o.attributes;
        a.velocity = Vec2(quantize6(o.velocity.x()), quantize6(o.velocity.y()));
        for (int i = 0; i < cfg.points_per_object; ++i) {
          const Vec3 local(0.9 * o.size.x() * rng.uniform(-0.5, 0.5), 0.9 * o.size.y() * rng.uniform(-0.5, 0.5),
                           0.9 * o.size.z() * rng.uniform(-0.5, 0.5));
          const double c = std::cos(a.box.yaw()), sn = std::sin(a.box.yaw());
          const Vec3 world = a.box.center() + Vec3(c * local.x() - sn * local.y(), sn * local.x() + c * local.y(), local.z());
          fr.cloud.points.push_back(detail::quantized(world));
        }
        fr.annotations.push_back(std::move(a));
      }
      for (int i = 0; i < cfg.background_points; ++i) {
        for (int attempt = 0; attempt < 1000; ++attempt) {
          const Vec3 p = detail::quantized(Vec3(rng.uniform(-cfg.arena_half_size, cfg.arena_half_size),
                                                rng.uniform(-cfg.arena_half_size, cfg.arena_half_size),
                                                rng.uniform(0.0, 3.0)));
          const bool clear = std::none_of(fr.annotations.begin(), fr.annotations.end(), [&](const Annotation& a) {
            const Box3D inflated(a.box.center(), a.box.size() + Vec3::Constant(1.0), a.box.yaw());
            return inflated.contains(p);
          });
          if (clear) {
            fr.cloud.points.push_back(p);
            break;
          }
        }
      }
      scene.frames.push_back(std::move(fr));
    }
    ds.scenes.push_back(std::move(scene));
  }
  validate_dataset(ds, vocab);
  return ds;
}

}  // namespace ovoda
