#pragma once

// End-to-end detection: proposals -> classification -> novel-object
// discovery -> complex events -> attribute classification -> novel-attribute
// discovery, plus the record formats written by the CLI and the evaluation
// that reads them back.

#include <cstdint>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ovoda/alignment.hpp"
#include "ovoda/embedding.hpp"
#include "ovoda/eval.hpp"
#include "ovoda/events.hpp"
#include "ovoda/json_io.hpp"
#include "ovoda/ovad.hpp"
#include "ovoda/proposals.hpp"
#include "ovoda/scene.hpp"
#include "ovoda/vocabulary.hpp"

namespace ovoda {

struct PipelineConfig {
  DiscoveryThresholds thresholds;
  int T = 2;
  double assoc_gate = 2.0;
  double temperature = 0.05;
  double min_event_score = 0.5;  // objects below this detection score start no events
  bool hfa = true;
  bool hfa_swap_lr = false;
  PromptConfig prompt;
  double view_gain = 0.05;
  std::uint64_t fusion_seed = 0;

  void validate() const {
    thresholds.validate();
    prompt.validate();
    if (T < 0) throw ConfigError("events.T must be non-negative");
    if (!(assoc_gate > 0.0)) throw ConfigError("events.assoc_gate must be positive");
    if (!(temperature > 0.0)) throw ConfigError("alignment.temperature must be positive");
    if (!(min_event_score >= 0.0 && min_event_score <= 1.0)) throw ConfigError("events.min_event_score must lie in [0, 1]");
  }
};

struct FrameOutput {
  std::size_t scene = 0;
  std::size_t frame = 0;
  std::vector<ClassifiedObject> objects;
  std::set<std::int64_t> discovered_objects;
  std::vector<ComplexEventProposal> events;
  std::set<std::int64_t> discovered_attributes;
  std::size_t skipped_proposals = 0;  // no visual evidence at all
  std::size_t skipped_events = 0;
};

class Pipeline {
 public:
  Pipeline(const Vocabulary& vocab, EmbeddingProvider& provider, PipelineConfig cfg)
      : vocab_(vocab),
        provider_(provider),
        cfg_(std::move(cfg)),
        fusion_(cfg_.fusion_seed, provider.dim(), cfg_.view_gain),
        classes_(testing_vocab(vocab, Family::Object)),
        attributes_(testing_vocab(vocab, Family::Attribute)),
        base_classes_(vocab.base_objects.begin(), vocab.base_objects.end()),
        base_attributes_(vocab.base_attributes.begin(), vocab.base_attributes.end()) {
    cfg_.validate();
    object_bank_ = make_text_bank(provider_, "objects:" + vocab.name, classes_, classes_);
  }

  const PipelineConfig& config() const { return cfg_; }
  const std::vector<std::string>& classes() const { return classes_; }

  /// Classifies the proposals of one frame and runs novel-object discovery.
  FrameOutput classify_frame(const Frame& frame, const std::vector<ObjectProposal>& proposals) {
    FrameOutput out;
    for (const auto& p : proposals) {
      VisualEvidence ev = gather_evidence(provider_, frame, p.box, false);
      if (ev.empty()) {
        ++out.skipped_proposals;
        continue;
      }
      ClassifiedObject c;
      c.proposal_id = p.proposal_id;
      c.box = p.box;
      c.objectness = p.objectness;
      c.dist = classify(fusion_.fuse(std::move(ev.cameras), ev.points), object_bank_, cfg_.temperature);
      c.predicted_class = classes_[c.dist.argmax()];
      c.is_novel = !base_classes_.contains(c.predicted_class);
      c.score = c.objectness * c.dist.max_prob();
      out.objects.push_back(std::move(c));
    }
    out.discovered_objects = discover_novel_objects(out.objects, proposals, cfg_.thresholds, base_classes_);
    return out;
  }

  /// Builds and classifies the complex events of the buffer's current frame.
  void run_events(FrameOutput& out, TemporalBuffer& buf, const Scene& scene) {
    std::vector<ComplexEventProposal> events =
        gen_nonspatial(buf, vocab_, attributes_, cfg_.prompt);
    auto spatial = gen_spatial(buf.current().objects, attributes_, cfg_.thresholds, cfg_.prompt);
    events.insert(events.end(), std::make_move_iterator(spatial.begin()), std::make_move_iterator(spatial.end()));
    const EventConfig ecfg{cfg_.temperature, cfg_.hfa, cfg_.hfa_swap_lr};
    std::int64_t next_id = 0;
    for (auto& ev : events) {
      try {
        classify_event(ev, provider_, scene, out.frame, fusion_, ecfg);
      } catch (const EmptyEvidence&) {
        ++out.skipped_events;
        continue;
      }
      ev.event_id = next_id++;
      out.events.push_back(std::move(ev));
    }
    out.discovered_attributes = discover_novel_attributes(out.events, cfg_.thresholds, base_attributes_);
  }

  /// Full detection over a dataset, frame by frame in order.
  std::vector<FrameOutput> detect(const SceneDataset& ds, const ProposalSet& proposals) {
    if (proposals.size() != ds.scenes.size()) throw ValidationError("proposal set does not match the dataset");
    std::vector<FrameOutput> results;
    for (std::size_t s = 0; s < ds.scenes.size(); ++s) {
      const Scene& scene = ds.scenes[s];
      TemporalBuffer buf(cfg_.T, cfg_.assoc_gate);
      for (std::size_t f = 0; f < scene.frames.size(); ++f) {
        FrameOutput out = classify_frame(scene.frames[f], proposals[s].at(f));
        out.scene = s;
        out.frame = f;
        std::vector<ClassifiedObject> eligible;
        for (const auto& c : out.objects)
          if (c.score >= cfg_.min_event_score) eligible.push_back(c);
        buf.push_frame(scene.frames[f].timestamp_us, f, std::move(eligible));
        run_events(out, buf, scene);
        results.push_back(std::move(out));
      }
    }
    return results;
  }

  /// Attribute head alone on ground-truth boxes with ground-truth classes.
  std::vector<FrameOutput> attributes_on_ground_truth(const SceneDataset& ds) {
    std::vector<FrameOutput> results;
    for (std::size_t s = 0; s < ds.scenes.size(); ++s) {
      const Scene& scene = ds.scenes[s];
      TemporalBuffer buf(cfg_.T, cfg_.assoc_gate);
      for (std::size_t f = 0; f < scene.frames.size(); ++f) {
        FrameOutput out;
        out.scene = s;
        out.frame = f;
        const auto& anns = scene.frames[f].annotations;
        for (std::size_t i = 0; i < anns.size(); ++i) {
          ClassifiedObject c;
          c.proposal_id = static_cast<std::int64_t>(i);
          c.box = anns[i].box;
          c.predicted_class = anns[i].class_name;
          c.is_novel = !base_classes_.contains(c.predicted_class);
          c.objectness = 1.0;
          c.score = 1.0;
          c.source_id = anns[i].instance_id;
          out.objects.push_back(std::move(c));
        }
        buf.push_frame(scene.frames[f].timestamp_us, f, out.objects);
        run_events(out, buf, scene);
        results.push_back(std::move(out));
      }
    }
    return results;
  }

 private:
  const Vocabulary& vocab_;
  EmbeddingProvider& provider_;
  PipelineConfig cfg_;
  FusionProjector fusion_;
  std::vector<std::string> classes_;
  std::vector<std::string> attributes_;
  std::set<std::string> base_classes_;
  std::set<std::string> base_attributes_;
  TextBank object_bank_;
};

// ---------------------------------------------------------------------------
// Records

inline std::string frame_key(const std::string& scene, std::size_t frame) { return scene + "/" + std::to_string(frame); }

inline std::string detection_records(const SceneDataset& ds, const std::vector<FrameOutput>& results) {
  std::string out;
  for (const auto& r : results)
    for (const auto& c : r.objects)
      out += canonical_dump({{"scene", ds.scenes[r.scene].token},
                             {"frame", r.frame},
                             {"proposal_id", c.proposal_id},
                             {"box", box_to_json(c.box)},
                             {"class_name", c.predicted_class},
                             {"class_prob", c.dist.max_prob()},
                             {"objectness", c.objectness},
                             {"score", c.score},
                             {"novel_class", c.is_novel},
                             {"discovered", r.discovered_objects.contains(c.proposal_id)}}) +
             "\n";
  return out;
}

inline std::string event_records(const SceneDataset& ds, const std::vector<FrameOutput>& results) {
  std::string out;
  for (const auto& r : results) {
    for (const auto& e : r.events) {
      json boxes = json::array();
      for (const auto& b : e.member_boxes) boxes.push_back(box_to_json(b));
      out += canonical_dump({{"scene", ds.scenes[r.scene].token},
                             {"frame", r.frame},
                             {"event_id", e.event_id},
                             {"kind", event_kind_name(e.kind)},
                             {"member_ids", e.member_ids},
                             {"member_sources", e.member_sources},
                             {"member_classes", e.member_classes},
                             {"member_boxes", boxes},
                             {"union_box", box_to_json(e.union_box)},
                             {"relation", e.geometric_relation ? json(std::string(relation_text(*e.geometric_relation)))
                                                               : json(nullptr)},
                             {"predicted_attribute", e.predicted_attr},
                             {"predicted_text", e.predicted_text},
                             {"prob", e.score()},
                             {"novel_attribute", r.discovered_attributes.contains(e.event_id)}}) +
             "\n";
    }
  }
  return out;
}

inline std::vector<json> parse_jsonl(const std::string& text, const std::string& origin) {
  std::vector<json> out;
  std::istringstream in(text);
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n)
    if (line.find_first_not_of(" \t\r") != std::string::npos)
      out.push_back(parse_json(line, origin + ":" + std::to_string(n)));
  return out;
}

namespace detail {

inline EventRecord event_record_from_json(const json& j, const std::string& where) {
  EventRecord e;
  e.frame_key = frame_key(read_string(require(j, "scene", ""), where), static_cast<std::size_t>(read_int(require(j, "frame", ""), where)));
  e.spatial = read_string(require(j, "kind", ""), where) == "spatial";
  e.classes = read_strings(require(j, "member_classes", ""), where);
  const json& boxes = read_array(require(j, "member_boxes", ""), where);
  for (std::size_t k = 0; k < boxes.size(); ++k) e.boxes.push_back(read_box(boxes[k], where, where));
  e.union_box = read_box(require(j, "union_box", ""), where, where);
  e.attribute = read_string(require(j, "predicted_attribute", ""), where);
  e.prob = read_number(require(j, "prob", ""), where);
  return e;
}

}  // namespace detail

struct EvalSettings {
  MatchConfig match;                 // per-class AP and mAP
  double iou_threshold = 0.5;        // second mAP with the IoU matcher
  double novel_iou = 0.2;            // AP_N
  double tp_center = 2.0;            // TP-error matching radius, meters
  double pair_distance = 15.0;       // ground-truth spatial pairs
  double attribute_threshold = 0.5;  // probability needed for a correct attribute
  double localization_iou = 0.5;
};

/// Scores detection, event and ground-truth-attribute records against the
/// dataset's annotations.
inline EvalReport evaluate_records(const SceneDataset& ds, const Vocabulary& vocab, const std::vector<json>& detections,
                                   const std::vector<json>& events, const std::vector<json>& gt_attribute_events,
                                   const EvalSettings& st) {
  EvalReport rep;
  rep.iou_threshold = st.iou_threshold;
  rep.novel_iou = st.novel_iou;
  const auto classes = testing_vocab(vocab, Family::Object);
  const std::set<std::string> class_set(classes.begin(), classes.end());
  const std::set<std::string> novel(vocab.novel_objects.begin(), vocab.novel_objects.end());

  std::vector<EvalBox> gts, dets;
  std::vector<AttributeItem> attr_items;
  std::vector<EventRecord> gt_events;
  for (const auto& scene : ds.scenes)
    for (std::size_t f = 0; f < scene.frames.size(); ++f) {
      const std::string key = frame_key(scene.token, f);
      for (const auto& a : scene.frames[f].annotations) {
        if (class_set.contains(a.class_name)) gts.push_back({key, a.class_name, a.box, 1.0});
        for (const auto& attr : a.attributes) {
          attr_items.push_back({key + "|" + a.instance_id, attr});
          gt_events.push_back({key, false, {a.class_name}, {a.box}, a.box, attr, 1.0});
        }
      }
    }
  for (const auto& p : build_ovad(ds, st.pair_distance)) {
    const std::string key = frame_key(p.scene, p.frame);
    const std::string rel(relation_text(p.relation));
    attr_items.push_back({key + "|" + p.id_i + "|" + p.id_j, rel});
    gt_events.push_back({key, true, {p.class_i, p.class_j}, {p.box_i, p.box_j}, p.union_box, rel, 1.0});
  }

  struct Found {
    std::string key, cls;
    Box3D box;
  };
  std::vector<Found> discovered;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    const json& j = detections[i];
    const std::string where = "detection record " + std::to_string(i);
    const std::string key = frame_key(read_string(require(j, "scene", ""), where),
                                      static_cast<std::size_t>(read_int(require(j, "frame", ""), where)));
    EvalBox b{key, read_string(require(j, "class_name", ""), where), read_box(require(j, "box", ""), where, where),
              read_number(require(j, "score", ""), where)};
    if (read_bool(require(j, "discovered", ""), where)) discovered.push_back({key, b.class_name, b.box});
    dets.push_back(std::move(b));
  }

  const DetectionEval dist_eval = evaluate_detection(gts, dets, st.match, classes);
  const DetectionEval iou_eval = evaluate_detection(gts, dets, MatchConfig::iou(st.iou_threshold), classes);
  rep.ap = dist_eval.ap;
  rep.skipped = dist_eval.skipped;
  rep.mAP = dist_eval.mAP;
  rep.ap_iou = iou_eval.ap;
  rep.mAP_iou = iou_eval.mAP;
  try {
    rep.ap_novel_value = ap_novel(evaluate_detection(gts, dets, MatchConfig::iou(st.novel_iou), classes).ap, novel);
  } catch (const EmptyNovelSet&) {
    rep.ap_novel_value.reset();
  }
  rep.errors = tp_errors(gts, dets, st.tp_center);
  rep.nds = nds_lite(rep.mAP, {rep.errors.ate, rep.errors.ase, rep.errors.aoe});

  for (const auto& g : gts) {
    if (!novel.contains(g.class_name)) continue;
    ++rep.novel_gt;
    if (std::any_of(discovered.begin(), discovered.end(), [&](const Found& d) {
          return d.key == g.frame_key && d.cls == g.class_name && iou3d(d.box, g.box) >= st.localization_iou;
        }))
      ++rep.novel_found;
  }
  rep.novel_recall = rep.novel_gt ? static_cast<double>(rep.novel_found) / static_cast<double>(rep.novel_gt) : 0.0;

  std::map<std::string, AttributePrediction> ad_only;
  for (std::size_t i = 0; i < gt_attribute_events.size(); ++i) {
    const json& j = gt_attribute_events[i];
    const std::string where = "ground-truth attribute record " + std::to_string(i);
    const EventRecord e = detail::event_record_from_json(j, where);
    std::string key = e.frame_key;
    for (const auto& src : read_strings(require(j, "member_sources", ""), where)) key += "|" + src;
    ad_only[key] = {e.attribute, e.prob};
  }
  rep.sr_ad_only = sr_ad_only(attr_items, ad_only, st.attribute_threshold);

  std::vector<EventRecord> predicted;
  for (std::size_t i = 0; i < events.size(); ++i)
    predicted.push_back(detail::event_record_from_json(events[i], "event record " + std::to_string(i)));
  rep.sr_ad_od = sr_ad_od(gt_events, predicted, st.localization_iou, st.attribute_threshold);

  rep.gt_boxes = gts.size();
  rep.detections = dets.size();
  rep.gt_attribute_items = attr_items.size();
  rep.gt_events = gt_events.size();
  rep.predicted_events = predicted.size();
  return rep;
}

}  // namespace ovoda
