#pragma once

// Run configuration: one JSON document with a section per stage. Defaults
// live in the structs below; a config file and then command-line overrides
// are merged on top, and unknown keys are rejected.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ovoda/errors.hpp"
#include "ovoda/json_io.hpp"
#include "ovoda/losses.hpp"
#include "ovoda/pipeline.hpp"
#include "ovoda/proposals.hpp"
#include "ovoda/scene.hpp"

namespace ovoda {

struct ProviderSettings {
  std::string kind = "synthetic";  // synthetic | remote
  std::optional<std::uint64_t> seed;  // synthetic anchors; defaults to the run seed
  std::size_t dim = 256;
  double noise = 0.0;
  std::string url = "http://127.0.0.1:8765";
  double timeout_s = 10.0;
  int retries = 2;
  int backoff_ms = 50;
  bool cache = true;
};

struct LossCheckSettings {
  LossWeights weights;
  int configs = 20;
  double step = 1e-5;
  double tolerance = 1e-4;
  int rows = 4;
  int dim = 16;
  int classes = 6;
  int attributes = 12;
};

struct RunConfig {
  std::uint64_t seed = 7;
  std::string dataset;      // scene file (input of detect/eval/build-ovad)
  std::string proposals;    // proposal JSONL; empty means synthesize from ground truth
  std::string vocabulary;   // preset name or file; empty means the dataset's own
  std::string detections;   // directory with detect outputs (eval)
  std::string out = "out";
  SynthConfig synth;
  NoiseConfig proposer;
  PipelineConfig pipeline;
  ProviderSettings provider;
  LossCheckSettings losses;
  EvalSettings eval;
  double ovad_max_distance = 15.0;

  std::uint64_t provider_seed() const { return provider.seed.value_or(seed); }
};

inline json config_to_json(const RunConfig& c) {
  const auto& p = c.pipeline;
  const auto& s = c.synth;
  return json{
      {"seed", c.seed},
      {"dataset", c.dataset},
      {"proposals", c.proposals},
      {"vocabulary", c.vocabulary},
      {"detections", c.detections},
      {"out", c.out},
      {"synth",
       {{"vocabulary", s.vocabulary}, {"split", s.split}, {"scenes", s.scenes}, {"frames", s.frames}, {"dt", s.dt},
        {"objects", s.objects}, {"novel_quota", s.novel_quota}, {"arena_half_size", s.arena_half_size},
        {"min_range", s.min_range}, {"max_range", s.max_range}, {"cameras", s.cameras},
        {"image_width", s.image_width}, {"image_height", s.image_height}, {"focal", s.focal},
        {"camera_height", s.camera_height}, {"points_per_object", s.points_per_object},
        {"background_points", s.background_points}, {"moving_threshold", s.moving_threshold},
        {"min_speed", s.min_speed}, {"max_speed", s.max_speed}, {"size_jitter", s.size_jitter},
        {"separation_margin", s.separation_margin}}},
      {"proposer",
       {{"center_sigma", c.proposer.center_sigma}, {"size_sigma", c.proposer.size_sigma},
        {"yaw_sigma", c.proposer.yaw_sigma}, {"kappa", c.proposer.kappa}, {"background", c.proposer.background},
        {"feature_noise", c.proposer.feature_noise}, {"det_dim", c.proposer.det_dim}}},
      {"thresholds",
       {{"theta_b", p.thresholds.theta_b}, {"theta_o", p.thresholds.theta_o}, {"theta_s", p.thresholds.theta_s},
        {"theta_a", p.thresholds.theta_a}, {"theta_d", p.thresholds.theta_d}}},
      {"events",
       {{"T", p.T}, {"assoc_gate", p.assoc_gate}, {"min_event_score", p.min_event_score}, {"hfa", p.hfa},
        {"hfa_swap_lr", p.hfa_swap_lr}}},
      {"prompt", {{"psp", p.prompt.perspective_prefix}, {"trailing_period", p.prompt.trailing_period}}},
      {"alignment", {{"temperature", p.temperature}, {"view_gain", p.view_gain}}},
      {"provider",
       {{"kind", c.provider.kind}, {"seed", c.provider.seed ? json(*c.provider.seed) : json(nullptr)},
        {"dim", c.provider.dim}, {"noise", c.provider.noise}, {"url", c.provider.url},
        {"timeout_s", c.provider.timeout_s}, {"retries", c.provider.retries},
        {"backoff_ms", c.provider.backoff_ms}, {"cache", c.provider.cache}}},
      {"losses",
       {{"w_od", c.losses.weights.w_od}, {"w_oc", c.losses.weights.w_oc}, {"w_ad", c.losses.weights.w_ad},
        {"w_ac", c.losses.weights.w_ac}, {"configs", c.losses.configs}, {"step", c.losses.step},
        {"tolerance", c.losses.tolerance}, {"rows", c.losses.rows}, {"dim", c.losses.dim},
        {"classes", c.losses.classes}, {"attributes", c.losses.attributes}}},
      {"eval",
       {{"matcher", c.eval.match.kind == MatchConfig::Kind::Iou ? "iou" : "center_distance"},
        {"thresholds", c.eval.match.thresholds}, {"iou_threshold", c.eval.iou_threshold},
        {"novel_iou", c.eval.novel_iou}, {"tp_center", c.eval.tp_center},
        {"attribute_threshold", c.eval.attribute_threshold}, {"localization_iou", c.eval.localization_iou}}},
      {"ovad", {{"max_distance", c.ovad_max_distance}}},
  };
}

namespace detail {

// Every key of `user` must exist in `defaults`, recursively.
inline void check_known_keys(const json& user, const json& defaults, const std::string& path) {
  if (!user.is_object()) return;
  if (!defaults.is_object()) throw ConfigError(path + ": expected a value, not an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string p = path.empty() ? it.key() : path + "." + it.key();
    auto d = defaults.find(it.key());
    if (d == defaults.end()) throw ConfigError("unknown config key '" + p + "'");
    if (it.value().is_object()) check_known_keys(it.value(), *d, p);
  }
}

inline void merge_into(json& base, const json& patch) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (it.value().is_object() && base.contains(it.key()) && base[it.key()].is_object())
      merge_into(base[it.key()], it.value());
    else
      base[it.key()] = it.value();
  }
}

class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {}

  double num(const char* key) const {
    const json& v = at(key);
    if (!v.is_number()) fail(key, "a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) fail(key, "a finite number");
    return x;
  }
  long long integer(const char* key) const {
    const json& v = at(key);
    if (!v.is_number_integer()) fail(key, "an integer");
    return v.get<long long>();
  }
  std::uint64_t u64(const char* key) const {
    const json& v = at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) fail(key, "a non-negative integer");
    return v.get<std::uint64_t>();
  }
  bool boolean(const char* key) const {
    const json& v = at(key);
    if (!v.is_boolean()) fail(key, "a boolean");
    return v.get<bool>();
  }
  std::string str(const char* key) const {
    const json& v = at(key);
    if (!v.is_string()) fail(key, "a string");
    return v.get<std::string>();
  }
  std::vector<double> nums(const char* key) const {
    const json& v = at(key);
    if (!v.is_array()) fail(key, "an array of numbers");
    std::vector<double> out;
    for (const auto& x : v) {
      if (!x.is_number()) fail(key, "an array of numbers");
      out.push_back(x.get<double>());
    }
    return out;
  }
  Section sub(const char* key) const {
    const json& v = at(key);
    if (!v.is_object()) fail(key, "an object");
    return Section(v, qualified(key));
  }
  const json& raw(const char* key) const { return at(key); }

 private:
  const json& at(const char* key) const {
    auto it = j_.find(key);
    if (it == j_.end()) throw ConfigError("missing config key '" + qualified(key) + "'");
    return *it;
  }
  std::string qualified(const char* key) const { return name_.empty() ? key : name_ + "." + key; }
  [[noreturn]] void fail(const char* key, const char* what) const {
    throw ConfigError("config key '" + qualified(key) + "' must be " + what);
  }

  const json& j_;
  std::string name_;
};

inline int to_int(long long v, const char* what) {
  if (v < -2147483647LL || v > 2147483647LL) throw ConfigError(std::string(what) + " is out of range");
  return static_cast<int>(v);
}

}  // namespace detail

/// Parses a complete config document (defaults already merged in).
inline RunConfig config_from_json(const json& j) {
  const detail::Section root(j, "");
  RunConfig c;
  c.seed = root.u64("seed");
  c.dataset = root.str("dataset");
  c.proposals = root.str("proposals");
  c.vocabulary = root.str("vocabulary");
  c.detections = root.str("detections");
  c.out = root.str("out");

  const auto s = root.sub("synth");
  c.synth.vocabulary = s.str("vocabulary");
  c.synth.split = s.str("split");
  c.synth.scenes = detail::to_int(s.integer("scenes"), "synth.scenes");
  c.synth.frames = detail::to_int(s.integer("frames"), "synth.frames");
  c.synth.dt = s.num("dt");
  c.synth.objects = detail::to_int(s.integer("objects"), "synth.objects");
  c.synth.novel_quota = detail::to_int(s.integer("novel_quota"), "synth.novel_quota");
  c.synth.arena_half_size = s.num("arena_half_size");
  c.synth.min_range = s.num("min_range");
  c.synth.max_range = s.num("max_range");
  c.synth.cameras = detail::to_int(s.integer("cameras"), "synth.cameras");
  c.synth.image_width = detail::to_int(s.integer("image_width"), "synth.image_width");
  c.synth.image_height = detail::to_int(s.integer("image_height"), "synth.image_height");
  c.synth.focal = s.num("focal");
  c.synth.camera_height = s.num("camera_height");
  c.synth.points_per_object = detail::to_int(s.integer("points_per_object"), "synth.points_per_object");
  c.synth.background_points = detail::to_int(s.integer("background_points"), "synth.background_points");
  c.synth.moving_threshold = s.num("moving_threshold");
  c.synth.min_speed = s.num("min_speed");
  c.synth.max_speed = s.num("max_speed");
  c.synth.size_jitter = s.num("size_jitter");
  c.synth.separation_margin = s.num("separation_margin");

  const auto pr = root.sub("proposer");
  c.proposer.center_sigma = pr.num("center_sigma");
  c.proposer.size_sigma = pr.num("size_sigma");
  c.proposer.yaw_sigma = pr.num("yaw_sigma");
  c.proposer.kappa = pr.num("kappa");
  c.proposer.background = detail::to_int(pr.integer("background"), "proposer.background");
  c.proposer.feature_noise = pr.num("feature_noise");
  const long long det_dim = pr.integer("det_dim");
  if (det_dim <= 0) throw ConfigError("proposer.det_dim must be positive");
  c.proposer.det_dim = static_cast<std::size_t>(det_dim);

  auto& p = c.pipeline;
  const auto th = root.sub("thresholds");
  p.thresholds = {th.num("theta_b"), th.num("theta_o"), th.num("theta_s"), th.num("theta_a"), th.num("theta_d")};
  const auto ev = root.sub("events");
  p.T = detail::to_int(ev.integer("T"), "events.T");
  p.assoc_gate = ev.num("assoc_gate");
  p.min_event_score = ev.num("min_event_score");
  p.hfa = ev.boolean("hfa");
  p.hfa_swap_lr = ev.boolean("hfa_swap_lr");
  const auto pt = root.sub("prompt");
  p.prompt.perspective_prefix = pt.boolean("psp");
  p.prompt.trailing_period = pt.boolean("trailing_period");
  const auto al = root.sub("alignment");
  p.temperature = al.num("temperature");
  p.view_gain = al.num("view_gain");
  p.fusion_seed = c.seed;

  const auto pv = root.sub("provider");
  c.provider.kind = pv.str("kind");
  if (c.provider.kind != "synthetic" && c.provider.kind != "remote")
    throw ConfigError("provider.kind must be 'synthetic' or 'remote'");
  if (!pv.raw("seed").is_null()) c.provider.seed = pv.u64("seed");
  const long long dim = pv.integer("dim");
  if (dim <= 0) throw ConfigError("provider.dim must be positive");
  c.provider.dim = static_cast<std::size_t>(dim);
  c.provider.noise = pv.num("noise");
  if (c.provider.noise < 0.0) throw ConfigError("provider.noise must be >= 0");
  c.provider.url = pv.str("url");
  c.provider.timeout_s = pv.num("timeout_s");
  if (!(c.provider.timeout_s > 0.0)) throw ConfigError("provider.timeout_s must be positive");
  c.provider.retries = detail::to_int(pv.integer("retries"), "provider.retries");
  if (c.provider.retries < 0) throw ConfigError("provider.retries must be >= 0");
  c.provider.backoff_ms = detail::to_int(pv.integer("backoff_ms"), "provider.backoff_ms");
  if (c.provider.backoff_ms < 0) throw ConfigError("provider.backoff_ms must be >= 0");
  c.provider.cache = pv.boolean("cache");

  const auto ls = root.sub("losses");
  c.losses.weights = {ls.num("w_od"), ls.num("w_oc"), ls.num("w_ad"), ls.num("w_ac")};
  c.losses.weights.validate();
  c.losses.configs = detail::to_int(ls.integer("configs"), "losses.configs");
  c.losses.step = ls.num("step");
  c.losses.tolerance = ls.num("tolerance");
  c.losses.rows = detail::to_int(ls.integer("rows"), "losses.rows");
  c.losses.dim = detail::to_int(ls.integer("dim"), "losses.dim");
  c.losses.classes = detail::to_int(ls.integer("classes"), "losses.classes");
  c.losses.attributes = detail::to_int(ls.integer("attributes"), "losses.attributes");
  if (c.losses.configs < 1 || c.losses.rows < 1 || c.losses.dim < 1 || c.losses.classes < 1 || c.losses.attributes < 1)
    throw ConfigError("losses: counts must be positive");
  if (!(c.losses.step > 0.0) || !(c.losses.tolerance > 0.0)) throw ConfigError("losses: step and tolerance must be positive");

  const auto e = root.sub("eval");
  const std::string matcher = e.str("matcher");
  if (matcher == "center_distance")
    c.eval.match.kind = MatchConfig::Kind::CenterDistance;
  else if (matcher == "iou")
    c.eval.match.kind = MatchConfig::Kind::Iou;
  else
    throw ConfigError("eval.matcher must be 'center_distance' or 'iou'");
  c.eval.match.thresholds = e.nums("thresholds");
  c.eval.match.validate();
  c.eval.iou_threshold = e.num("iou_threshold");
  c.eval.novel_iou = e.num("novel_iou");
  c.eval.tp_center = e.num("tp_center");
  c.eval.attribute_threshold = e.num("attribute_threshold");
  c.eval.localization_iou = e.num("localization_iou");
  for (double v : {c.eval.iou_threshold, c.eval.novel_iou, c.eval.localization_iou})
    if (!(v > 0.0 && v <= 1.0)) throw ConfigError("eval: IoU thresholds must lie in (0, 1]");
  c.eval.pair_distance = p.thresholds.theta_d;

  c.ovad_max_distance = root.sub("ovad").num("max_distance");
  if (!(c.ovad_max_distance >= 0.0)) throw ConfigError("ovad.max_distance must be >= 0");

  c.synth.validate();
  c.proposer.validate();
  p.validate();
  return c;
}

/// Applies a "dotted.key=value" override; the value is parsed as JSON when
/// possible and taken as a string otherwise.
inline void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty key segment");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      break;
    }
    if (!node->contains(key) || !(*node)[key].is_object()) (*node)[key] = json::object();
    node = &(*node)[key];
    start = dot + 1;
  }
}

/// Defaults, then the config file (if any), then overrides.
inline RunConfig resolve_config(const std::string& config_path, const std::vector<std::string>& overrides) {
  const json defaults = config_to_json(RunConfig{});
  json user = json::object();
  if (!config_path.empty()) {
    std::string text;
    try {
      text = read_text_file(config_path);
    } catch (const IoError& e) {
      throw ConfigError(e.what());
    }
    user = json::parse(text, nullptr, false);
    if (user.is_discarded() || !user.is_object()) throw ConfigError(config_path + ": not a JSON object");
  }
  for (const auto& o : overrides) apply_override(user, o);
  detail::check_known_keys(user, defaults, "");
  json merged = defaults;
  detail::merge_into(merged, user);
  return config_from_json(merged);
}

}  // namespace ovoda
