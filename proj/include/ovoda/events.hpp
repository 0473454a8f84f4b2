#pragma once

// Complex-event proposals: temporal track buffer, non-spatial and spatial
// event generation, attribute classification with horizontal-flip averaging,
// and novel-attribute discovery.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "ovoda/alignment.hpp"
#include "ovoda/embedding.hpp"
#include "ovoda/errors.hpp"
#include "ovoda/geometry.hpp"
#include "ovoda/scene.hpp"
#include "ovoda/vocabulary.hpp"

namespace ovoda {

class TemporalBuffer {
 public:
  struct Slot {
    std::int64_t timestamp_us = 0;
    std::size_t frame_index = 0;
    std::vector<ClassifiedObject> objects;
    std::vector<std::int64_t> track_ids;  // aligned with objects
  };

  explicit TemporalBuffer(int past_frames = 2, double gate = 2.0) : T_(past_frames), gate_(gate) {
    if (past_frames < 0) throw ConfigError("temporal buffer: T must be non-negative");
    if (!(gate > 0.0)) throw ConfigError("temporal buffer: association gate must be positive");
  }

  /// Appends a frame, evicting beyond T+1 frames, and extends tracks by
  /// greedy nearest-BEV-center association with the previous frame.
  void push_frame(std::int64_t timestamp_us, std::size_t frame_index, std::vector<ClassifiedObject> objects) {
    if (!window_.empty() && timestamp_us <= window_.back().timestamp_us)
      throw OutOfOrderFrame("frame at " + std::to_string(timestamp_us) + " us does not follow " +
                            std::to_string(window_.back().timestamp_us) + " us");
    Slot slot{timestamp_us, frame_index, std::move(objects), {}};
    slot.track_ids.assign(slot.objects.size(), -1);
    if (!window_.empty()) {
      const Slot& prev = window_.back();
      std::vector<std::tuple<double, std::size_t, std::size_t>> cand;
      for (std::size_t p = 0; p < prev.objects.size(); ++p)
        for (std::size_t c = 0; c < slot.objects.size(); ++c) {
          const double d = bev_center_distance(prev.objects[p].box, slot.objects[c].box);
          if (d <= gate_) cand.emplace_back(d, p, c);
        }
      std::sort(cand.begin(), cand.end());
      std::vector<bool> prev_used(prev.objects.size(), false);
      for (const auto& [d, p, c] : cand) {
        if (prev_used[p] || slot.track_ids[c] >= 0) continue;
        prev_used[p] = true;
        slot.track_ids[c] = prev.track_ids[p];
      }
    }
    for (auto& t : slot.track_ids)
      if (t < 0) t = next_track_++;
    window_.push_back(std::move(slot));
    while (window_.size() > static_cast<std::size_t>(T_) + 1) window_.pop_front();
  }

  void clear() {
    window_.clear();
    next_track_ = 0;
  }

  bool empty() const { return window_.empty(); }
  int past_frames() const { return T_; }
  const std::deque<Slot>& window() const { return window_; }
  const Slot& current() const { return window_.back(); }

  /// (frame index, box) of a track over the window, oldest first.
  std::vector<std::pair<std::size_t, Box3D>> track_history(std::int64_t track) const {
    std::vector<std::pair<std::size_t, Box3D>> out;
    for (const auto& slot : window_)
      for (std::size_t i = 0; i < slot.objects.size(); ++i)
        if (slot.track_ids[i] == track) out.emplace_back(slot.frame_index, slot.objects[i].box);
    return out;
  }

 private:
  int T_;
  double gate_;
  std::deque<Slot> window_;
  std::int64_t next_track_ = 0;
};

enum class EventKind { NonSpatial, Spatial };

inline const char* event_kind_name(EventKind k) { return k == EventKind::Spatial ? "spatial" : "nonspatial"; }

struct ComplexEventProposal {
  std::int64_t event_id = 0;
  EventKind kind = EventKind::NonSpatial;
  std::vector<std::int64_t> member_ids;     // proposal ids; subject first for spatial events
  std::vector<std::string> member_sources;  // ground-truth instance ids, when known
  std::vector<std::string> member_classes;
  std::vector<Box3D> member_boxes;          // current-frame boxes of the members
  Box3D union_box;                          // combined box (spatial) or the current box
  std::int64_t track_id = -1;
  std::vector<std::pair<std::size_t, Box3D>> track_boxes;  // non-spatial: window history
  std::optional<SpatialRelation> geometric_relation;
  std::vector<std::string> candidate_attrs;  // attribute ids
  std::vector<std::string> candidate_texts;  // rendered prompts, aligned with candidate_attrs
  Distribution dist;
  std::string predicted_attr;
  std::string predicted_text;

  double score() const { return dist.max_prob(); }
};

/// One event per current-frame track whose class has compatible non-spatial
/// attributes among `active_attributes`.
inline std::vector<ComplexEventProposal> gen_nonspatial(const TemporalBuffer& buf, const Vocabulary& vocab,
                                                        const std::vector<std::string>& active_attributes,
                                                        const PromptConfig& prompt = {}) {
  std::vector<ComplexEventProposal> out;
  if (buf.empty()) return out;
  const auto& slot = buf.current();
  for (std::size_t i = 0; i < slot.objects.size(); ++i) {
    const ClassifiedObject& obj = slot.objects[i];
    ComplexEventProposal ev;
    ev.kind = EventKind::NonSpatial;
    for (const auto& a : active_attributes) {
      if (is_spatial_attribute(a) || !vocab.compatible(obj.predicted_class, a)) continue;
      ev.candidate_attrs.push_back(a);
      ev.candidate_texts.push_back(render_nonspatial(vocab, obj.predicted_class, a, prompt));
    }
    if (ev.candidate_attrs.empty()) continue;
    ev.member_ids = {obj.proposal_id};
    ev.member_sources = {obj.source_id};
    ev.member_classes = {obj.predicted_class};
    ev.member_boxes = {obj.box};
    ev.union_box = obj.box;
    ev.track_id = slot.track_ids[i];
    ev.track_boxes = buf.track_history(ev.track_id);
    out.push_back(std::move(ev));
  }
  return out;
}

/// Two events (one per perspective) for every unordered pair of objects whose
/// BEV centers are within theta_d. Pairs with coincident centers are skipped.
inline std::vector<ComplexEventProposal> gen_spatial(const std::vector<ClassifiedObject>& objects,
                                                     const std::vector<std::string>& active_attributes,
                                                     const DiscoveryThresholds& th, const PromptConfig& prompt = {}) {
  std::vector<SpatialRelation> relations;
  for (auto r : kAllRelations)
    if (std::find(active_attributes.begin(), active_attributes.end(), relation_text(r)) != active_attributes.end())
      relations.push_back(r);
  std::vector<ComplexEventProposal> out;
  if (relations.empty()) return out;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    for (std::size_t j = i + 1; j < objects.size(); ++j) {
      const auto& a = objects[i];
      const auto& b = objects[j];
      if (bev_center_distance(a.box, b.box) > th.theta_d) continue;
      std::optional<SpatialRelation> rel_ab, rel_ba;
      try {
        rel_ab = spatial_relation(a.box, b.box);
        rel_ba = spatial_relation(b.box, a.box);
      } catch (const CoincidentCenters&) {
        continue;
      }
      const Box3D u = combine(a.box, b.box);
      for (int dir = 0; dir < 2; ++dir) {
        const ClassifiedObject& s = dir == 0 ? a : b;
        const ClassifiedObject& r = dir == 0 ? b : a;
        ComplexEventProposal ev;
        ev.kind = EventKind::Spatial;
        ev.member_ids = {s.proposal_id, r.proposal_id};
        ev.member_sources = {s.source_id, r.source_id};
        ev.member_classes = {s.predicted_class, r.predicted_class};
        ev.member_boxes = {s.box, r.box};
        ev.union_box = u;
        ev.geometric_relation = dir == 0 ? rel_ab : rel_ba;
        for (auto rel : relations) {
          ev.candidate_attrs.emplace_back(relation_text(rel));
          ev.candidate_texts.push_back(render_spatial(s.predicted_class, r.predicted_class, rel, prompt));
        }
        out.push_back(std::move(ev));
      }
    }
  }
  return out;
}

struct EventConfig {
  double temperature = 0.05;
  bool hfa = true;
  bool hfa_swap_lr = false;  // swap left/right probabilities of the mirrored view
};

namespace detail {

inline Embedding fused_event_feature(const ComplexEventProposal& ev, EmbeddingProvider& provider, const Scene& scene,
                                     std::size_t current_frame, const FusionProjector& fusion, bool hflip) {
  if (ev.kind == EventKind::Spatial) {
    const Frame& frame = scene.frames.at(current_frame);
    std::vector<std::size_t> order;
    std::vector<bool> taken(frame.cloud.points.size(), false);
    auto take = [&](const std::vector<std::size_t>& idx) {
      for (std::size_t k : idx)
        if (!taken[k]) {
          taken[k] = true;
          order.push_back(k);
        }
    };
    take(crop_points(ev.member_boxes[0], frame.cloud));
    take(crop_points(ev.member_boxes[1], frame.cloud));
    take(crop_points(ev.union_box, frame.cloud));
    VisualEvidence e = gather_evidence(provider, frame, ev.union_box, hflip, &order);
    return fusion.fuse(std::move(e.cameras), e.points);
  }
  std::vector<std::pair<std::size_t, Box3D>> history = ev.track_boxes;
  if (history.empty()) history.emplace_back(current_frame, ev.union_box);
  Embedding sum(fusion.dim(), 0.0);
  int used = 0;
  for (const auto& [f, box] : history) {
    VisualEvidence e = gather_evidence(provider, scene.frames.at(f), box, hflip);
    if (e.empty()) continue;
    const Embedding v = fusion.fuse(std::move(e.cameras), e.points);
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += v[k];
    ++used;
  }
  if (used == 0) throw EmptyEvidence("event has no visual evidence in any window frame");
  return normalized(std::move(sum));
}

}  // namespace detail

/// Classifies an event over its candidate texts; with HFA the distribution is
/// the mean of the original and horizontally flipped views.
inline void classify_event(ComplexEventProposal& ev, EmbeddingProvider& provider, const Scene& scene,
                           std::size_t current_frame, const FusionProjector& fusion, const EventConfig& cfg) {
  if (ev.candidate_texts.empty()) throw ValidationError("classify_event: event has no candidate texts");
  const std::string ref = std::string(event_kind_name(ev.kind)) + ":" + ev.member_classes.front();
  const TextBank bank = make_text_bank(provider, ref, ev.candidate_attrs, ev.candidate_texts);
  Distribution d =
      classify(detail::fused_event_feature(ev, provider, scene, current_frame, fusion, false), bank, cfg.temperature);
  if (cfg.hfa) {
    Distribution flipped =
        classify(detail::fused_event_feature(ev, provider, scene, current_frame, fusion, true), bank, cfg.temperature);
    if (cfg.hfa_swap_lr && ev.kind == EventKind::Spatial) {
      auto find = [&](SpatialRelation r) {
        auto it = std::find(ev.candidate_attrs.begin(), ev.candidate_attrs.end(), relation_text(r));
        return it == ev.candidate_attrs.end() ? std::size_t(-1) : std::size_t(it - ev.candidate_attrs.begin());
      };
      const std::size_t l = find(SpatialRelation::OnLeftOf), r = find(SpatialRelation::OnRightOf);
      if (l != std::size_t(-1) && r != std::size_t(-1)) std::swap(flipped.probs[l], flipped.probs[r]);
    }
    d = hfa_average(d, flipped);
  }
  ev.dist = std::move(d);
  const std::size_t k = ev.dist.argmax();
  ev.predicted_attr = ev.candidate_attrs[k];
  ev.predicted_text = ev.candidate_texts[k];
}

/// Event j carries a novel attribute when its predicted attribute is not a
/// base attribute, its probability exceeds theta_a, and its box overlaps
/// every base-attribute event box with IoU < theta_b.
inline std::set<std::int64_t> discover_novel_attributes(const std::vector<ComplexEventProposal>& events,
                                                        const DiscoveryThresholds& th,
                                                        const std::set<std::string>& base_attributes) {
  std::vector<const ComplexEventProposal*> base;
  for (const auto& e : events)
    if (base_attributes.contains(e.predicted_attr)) base.push_back(&e);
  std::set<std::int64_t> out;
  for (const auto& e : events) {
    if (base_attributes.contains(e.predicted_attr)) continue;
    if (!(e.score() > th.theta_a)) continue;
    const bool isolated = std::all_of(base.begin(), base.end(), [&](const ComplexEventProposal* b) {
      return iou3d(e.union_box, b->union_box) < th.theta_b;
    });
    if (isolated) out.insert(e.event_id);
  }
  return out;
}

}  // namespace ovoda
