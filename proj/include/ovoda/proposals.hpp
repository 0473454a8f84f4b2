#pragma once

// Class-agnostic object proposals: the JSONL exchange format and a
// ground-truth-perturbing surrogate proposer.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ovoda/errors.hpp"
#include "ovoda/geometry.hpp"
#include "ovoda/json_io.hpp"
#include "ovoda/rng.hpp"
#include "ovoda/scene.hpp"

namespace ovoda {

inline constexpr std::size_t kMaxProposalsPerFrame = 128;

struct ObjectProposal {
  std::int64_t proposal_id = 0;
  Box3D box;
  double objectness = 0.0;
  std::vector<double> feature;  // detector hidden feature, D_det entries
  friend bool operator==(const ObjectProposal&, const ObjectProposal&) = default;
};

/// proposals[scene][frame] -> proposal list, aligned with a SceneDataset.
using ProposalSet = std::vector<std::vector<std::vector<ObjectProposal>>>;

inline ProposalSet empty_proposal_set(const SceneDataset& ds) {
  ProposalSet out(ds.scenes.size());
  for (std::size_t s = 0; s < ds.scenes.size(); ++s) out[s].resize(ds.scenes[s].frames.size());
  return out;
}

/// Keeps the `cap` highest-objectness proposals (ties keep the lower id).
inline void cap_proposals(std::vector<ObjectProposal>& props, std::size_t cap = kMaxProposalsPerFrame) {
  std::stable_sort(props.begin(), props.end(), [](const ObjectProposal& a, const ObjectProposal& b) {
    if (a.objectness != b.objectness) return a.objectness > b.objectness;
    return a.proposal_id < b.proposal_id;
  });
  if (props.size() > cap) props.resize(cap);
  std::sort(props.begin(), props.end(),
            [](const ObjectProposal& a, const ObjectProposal& b) { return a.proposal_id < b.proposal_id; });
}

inline void validate_proposal(const ObjectProposal& p, std::size_t det_dim, const std::string& where) {
  if (!(p.objectness >= 0.0 && p.objectness <= 1.0))
    throw ValidationError(where + ": objectness must lie in [0, 1]");
  if (p.feature.size() != det_dim)
    throw ValidationError(where + ": feature has " + std::to_string(p.feature.size()) + " entries, expected " +
                          std::to_string(det_dim));
  for (double x : p.feature)
    if (!std::isfinite(x)) throw ValidationError(where + ": feature entries must be finite");
}

inline json proposal_to_json(const std::string& scene, std::size_t frame, const ObjectProposal& p) {
  return json{{"scene", scene},
              {"frame", frame},
              {"proposal_id", p.proposal_id},
              {"box", box_to_json(p.box)},
              {"objectness", p.objectness},
              {"feature", p.feature}};
}

inline std::string serialize_proposals(const SceneDataset& ds, const ProposalSet& set) {
  std::string out;
  for (std::size_t s = 0; s < set.size(); ++s)
    for (std::size_t f = 0; f < set[s].size(); ++f)
      for (const auto& p : set[s][f]) out += canonical_dump(proposal_to_json(ds.scenes[s].token, f, p)) + "\n";
  return out;
}

inline void write_proposals(const SceneDataset& ds, const ProposalSet& set, const std::string& path) {
  write_text_file(path, serialize_proposals(ds, set));
}

/// Parses proposal JSONL text and aligns it with `ds`.
inline ProposalSet parse_proposals(const std::string& text, const SceneDataset& ds, std::size_t det_dim,
                                   const std::string& origin = "proposals") {
  std::map<std::string, std::size_t> scene_index;
  for (std::size_t s = 0; s < ds.scenes.size(); ++s) scene_index[ds.scenes[s].token] = s;
  ProposalSet out = empty_proposal_set(ds);
  std::vector<std::vector<std::set<std::int64_t>>> seen(ds.scenes.size());
  for (std::size_t s = 0; s < ds.scenes.size(); ++s) seen[s].resize(ds.scenes[s].frames.size());

  std::istringstream in(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    const json j = parse_json(line, where);
    const std::string scene = read_string(require(j, "scene", ""), where + " /scene");
    const std::int64_t frame = read_int(require(j, "frame", ""), where + " /frame");
    auto it = scene_index.find(scene);
    if (it == scene_index.end()) throw ValidationError(where + ": unknown scene '" + scene + "'");
    if (frame < 0 || static_cast<std::size_t>(frame) >= ds.scenes[it->second].frames.size())
      throw ValidationError(where + ": scene '" + scene + "' has no frame " + std::to_string(frame));
    ObjectProposal p;
    p.proposal_id = read_int(require(j, "proposal_id", ""), where + " /proposal_id");
    p.box = read_box(require(j, "box", ""), where + " /box", where + " proposal " + std::to_string(p.proposal_id));
    p.objectness = read_number(require(j, "objectness", ""), where + " /objectness");
    p.feature = read_numbers(require(j, "feature", ""), where + " /feature");
    validate_proposal(p, det_dim, where + " proposal " + std::to_string(p.proposal_id));
    if (!seen[it->second][frame].insert(p.proposal_id).second)
      throw ValidationError(where + ": duplicate proposal id " + std::to_string(p.proposal_id));
    out[it->second][frame].push_back(std::move(p));
  }
  for (auto& scene : out)
    for (auto& frame : scene)
      std::sort(frame.begin(), frame.end(),
                [](const ObjectProposal& a, const ObjectProposal& b) { return a.proposal_id < b.proposal_id; });
  return out;
}

inline ProposalSet load_proposals(const std::string& path, const SceneDataset& ds, std::size_t det_dim) {
  return parse_proposals(read_text_file(path), ds, det_dim, path);
}

// ---------------------------------------------------------------------------
// Surrogate proposer

struct NoiseConfig {
  double center_sigma = 0.0;    // meters, per axis
  double size_sigma = 0.0;      // meters, per dimension
  double yaw_sigma = 0.0;       // radians
  double kappa = 0.5;           // objectness = clamp(1 - kappa * |perturbation|)
  int background = 4;           // extra non-object proposals per frame
  double feature_noise = 0.0;   // per-entry sd of detector feature noise, in units of 1/sqrt(D)
  std::size_t det_dim = 256;
  std::uint64_t anchor_seed = 0;  // seed of the class anchors used for detector features

  void validate() const {
    if (!(center_sigma >= 0 && size_sigma >= 0 && yaw_sigma >= 0 && kappa >= 0 && feature_noise >= 0))
      throw ConfigError("proposer: noise scales must be non-negative");
    if (background < 0) throw ConfigError("proposer: background count must be non-negative");
    if (det_dim == 0) throw ConfigError("proposer: det_dim must be positive");
  }
};

namespace detail {

inline std::vector<double> detector_feature(const NoiseConfig& cfg, const std::string& label, SplitMix64& rng) {
  std::vector<double> f = anchor(cfg.anchor_seed, label, cfg.det_dim);
  const double sd = cfg.feature_noise / std::sqrt(static_cast<double>(cfg.det_dim));
  for (auto& x : f) x = quantize6(x + (sd > 0.0 ? sd * rng.gaussian() : 0.0));
  return f;
}

}  // namespace detail

/// One perturbed proposal per annotation plus `background` low-objectness
/// proposals that do not overlap any annotation.
inline std::vector<ObjectProposal> synth_proposer(const Frame& frame, const NoiseConfig& cfg, std::uint64_t seed,
                                                  const std::string& frame_key = "") {
  cfg.validate();
  SplitMix64 rng(derive_seed(seed, {"proposals", frame_key}));
  std::vector<ObjectProposal> out;
  std::int64_t next_id = 0;
  for (const auto& a : frame.annotations) {
    const Vec3 dc(cfg.center_sigma * rng.gaussian(), cfg.center_sigma * rng.gaussian(),
                  cfg.center_sigma * rng.gaussian());
    Vec3 ds(cfg.size_sigma * rng.gaussian(), cfg.size_sigma * rng.gaussian(), cfg.size_sigma * rng.gaussian());
    const Vec3 size = (a.box.size() + ds).cwiseMax(0.05);
    ds = size - a.box.size();
    const double dyaw = cfg.yaw_sigma * rng.gaussian();
    const double magnitude = std::sqrt(dc.squaredNorm() + ds.squaredNorm() + dyaw * dyaw);
    ObjectProposal p;
    p.proposal_id = next_id++;
    p.box = Box3D(detail::quantized(a.box.center() + dc), detail::quantized(size),
                  detail::grid_yaw(normalize_yaw(a.box.yaw() + dyaw)));
    p.objectness = quantize6(std::clamp(1.0 - cfg.kappa * magnitude, 0.0, 1.0));
    p.feature = detail::detector_feature(cfg, a.class_name, rng);
    out.push_back(std::move(p));
  }
  for (int b = 0; b < cfg.background; ++b) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      const Vec3 size(rng.uniform(0.5, 4.0), rng.uniform(0.5, 2.5), rng.uniform(0.5, 2.5));
      const double range = rng.uniform(3.0, 30.0), bearing = rng.uniform(-std::numbers::pi, std::numbers::pi);
      const Box3D box(detail::quantized(Vec3(range * std::cos(bearing), range * std::sin(bearing), 0.5 * size.z())),
                      detail::quantized(size), detail::grid_yaw(rng.uniform(-std::numbers::pi, std::numbers::pi)));
      const bool clear = std::all_of(frame.annotations.begin(), frame.annotations.end(),
                                     [&](const Annotation& a) { return iou3d(box, a.box) == 0.0; });
      if (!clear) continue;
      ObjectProposal p;
      p.proposal_id = next_id++;
      p.box = box;
      p.objectness = quantize6(rng.uniform(0.0, 0.3));
      p.feature = detail::detector_feature(cfg, "background", rng);
      out.push_back(std::move(p));
      break;
    }
  }
  cap_proposals(out);
  return out;
}

/// Runs the surrogate proposer over a whole dataset.
inline ProposalSet synth_proposals(const SceneDataset& ds, const NoiseConfig& cfg, std::uint64_t seed) {
  ProposalSet out = empty_proposal_set(ds);
  for (std::size_t s = 0; s < ds.scenes.size(); ++s)
    for (std::size_t f = 0; f < ds.scenes[s].frames.size(); ++f)
      out[s][f] = synth_proposer(ds.scenes[s].frames[f], cfg, seed, ds.scenes[s].token + "/" + std::to_string(f));
  return out;
}

}  // namespace ovoda
