#pragma once

// Detection and attribute metrics: greedy matching, 101-point AP, mAP, AP
// over novel classes, NDS-lite and attribute success rates.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ovoda/errors.hpp"
#include "ovoda/geometry.hpp"
#include "ovoda/json_io.hpp"

namespace ovoda {

struct MatchConfig {
  enum class Kind { CenterDistance, Iou };
  Kind kind = Kind::CenterDistance;
  std::vector<double> thresholds = {0.5, 1.0, 2.0, 4.0};  // meters, or IoU values

  static MatchConfig center_distance(std::vector<double> t = {0.5, 1.0, 2.0, 4.0}) {
    return {Kind::CenterDistance, std::move(t)};
  }
  static MatchConfig iou(double t) { return {Kind::Iou, {t}}; }

  void validate() const {
    if (thresholds.empty()) throw ConfigError("match: at least one threshold is required");
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      if (!(thresholds[i] > 0.0)) throw ConfigError("match: thresholds must be positive");
      if (i > 0 && !(thresholds[i] > thresholds[i - 1])) throw ConfigError("match: thresholds must be ascending");
      if (kind == Kind::Iou && thresholds[i] > 1.0) throw ConfigError("match: IoU thresholds must be <= 1");
    }
  }
};

struct EvalBox {
  std::string frame_key;
  std::string class_name;
  Box3D box;
  double score = 1.0;
};

namespace detail {

inline bool criterion_ok(MatchConfig::Kind kind, double threshold, const Box3D& gt, const Box3D& det, double* quality) {
  if (kind == MatchConfig::Kind::CenterDistance) {
    const double d = bev_center_distance(gt, det);
    *quality = -d;
    return d <= threshold;
  }
  const double v = iou3d(gt, det);
  *quality = v;
  return v >= threshold;
}

inline std::vector<std::size_t> by_descending_score(const std::vector<EvalBox>& dets) {
  std::vector<std::size_t> order(dets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  return order;
}

}  // namespace detail

/// Greedy matching of one frame: detections in descending score order take
/// the best still-unmatched ground truth of their class that satisfies the
/// criterion. Returns the matched ground-truth index per detection, or -1.
inline std::vector<int> match(const std::vector<EvalBox>& gt, const std::vector<EvalBox>& dets,
                              MatchConfig::Kind kind, double threshold) {
  std::vector<int> out(dets.size(), -1);
  std::vector<bool> used(gt.size(), false);
  for (std::size_t d : detail::by_descending_score(dets)) {
    int best = -1;
    double best_q = 0.0;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (used[g] || gt[g].class_name != dets[d].class_name) continue;
      double q = 0.0;
      if (!detail::criterion_ok(kind, threshold, gt[g].box, dets[d].box, &q)) continue;
      if (best < 0 || q > best_q) {
        best = static_cast<int>(g);
        best_q = q;
      }
    }
    if (best >= 0) {
      used[best] = true;
      out[d] = best;
    }
  }
  return out;
}

/// Interpolated AP on the recall grid {0.01, ..., 1.00}:
/// mean over k of max{precision at recall >= k/100}. `ranked` holds
/// (score, is_tp) for every detection of the class.
inline double average_precision(std::vector<std::pair<double, bool>> ranked, std::size_t n_gt) {
  if (n_gt == 0) return 0.0;
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::size_t> tp_at;
  std::vector<double> precision;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (ranked[i].second) ++tp;
    tp_at.push_back(tp);
    precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
  }
  // Suffix maximum gives the interpolated precision.
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0.0;
  std::size_t i = 0;
  for (std::size_t k = 1; k <= 100; ++k) {
    while (i < tp_at.size() && 100 * tp_at[i] < k * n_gt) ++i;
    if (i == tp_at.size()) break;
    sum += precision[i];
  }
  return sum / 100.0;
}

namespace detail {

inline std::map<std::string, std::vector<EvalBox>> by_frame(const std::vector<EvalBox>& boxes) {
  std::map<std::string, std::vector<EvalBox>> out;
  for (const auto& b : boxes) out[b.frame_key].push_back(b);
  return out;
}

}  // namespace detail

struct DetectionEval {
  std::map<std::string, double> ap;  // classes with ground truth
  std::vector<std::string> skipped;  // requested classes without ground truth
  double mAP = 0.0;
};

inline DetectionEval evaluate_detection(const std::vector<EvalBox>& gts, const std::vector<EvalBox>& dets,
                                        const MatchConfig& cfg, const std::vector<std::string>& classes) {
  cfg.validate();
  const auto gt_frames = detail::by_frame(gts);
  const auto det_frames = detail::by_frame(dets);
  std::map<std::string, std::size_t> n_gt;
  for (const auto& g : gts) ++n_gt[g.class_name];

  DetectionEval out;
  std::map<std::string, double> ap_sum;
  for (double t : cfg.thresholds) {
    std::map<std::string, std::vector<std::pair<double, bool>>> ranked;
    for (const auto& [key, fdets] : det_frames) {
      static const std::vector<EvalBox> kNone;
      auto it = gt_frames.find(key);
      const auto& fgt = it == gt_frames.end() ? kNone : it->second;
      const auto m = match(fgt, fdets, cfg.kind, t);
      for (std::size_t d = 0; d < fdets.size(); ++d) ranked[fdets[d].class_name].emplace_back(fdets[d].score, m[d] >= 0);
    }
    for (const auto& c : classes)
      if (n_gt[c] > 0) ap_sum[c] += average_precision(ranked[c], n_gt[c]);
  }
  for (const auto& c : classes) {
    if (n_gt[c] == 0) {
      out.skipped.push_back(c);
      continue;
    }
    out.ap[c] = ap_sum[c] / static_cast<double>(cfg.thresholds.size());
  }
  if (!out.ap.empty()) {
    double s = 0.0;
    for (const auto& [c, v] : out.ap) s += v;
    out.mAP = s / static_cast<double>(out.ap.size());
  }
  return out;
}

/// Mean AP over the novel classes that have ground truth.
inline double ap_novel(const std::map<std::string, double>& ap, const std::set<std::string>& novel) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& [c, v] : ap)
    if (novel.contains(c)) {
      s += v;
      ++n;
    }
  if (n == 0) throw EmptyNovelSet("no novel class has ground truth in the evaluated set");
  return s / static_cast<double>(n);
}

struct TpErrors {
  double ate = 1.0;  // meters, BEV center distance
  double ase = 1.0;  // 1 - IoU of size-aligned boxes
  double aoe = 1.0;  // radians, wrapped yaw difference
  std::size_t tp = 0;
};

inline double aligned_iou(const Box3D& a, const Box3D& b) {
  const Vec3 m = a.size().cwiseMin(b.size());
  const double inter = m.prod();
  return inter / (a.volume() + b.volume() - inter);
}

inline double yaw_difference(double a, double b) { return std::abs(normalize_yaw(a - b)); }

/// Mean TP errors over detections matched at the given center distance.
/// Without true positives every error is 1.
inline TpErrors tp_errors(const std::vector<EvalBox>& gts, const std::vector<EvalBox>& dets, double center_threshold = 2.0) {
  const auto gt_frames = detail::by_frame(gts);
  TpErrors e{0.0, 0.0, 0.0, 0};
  for (const auto& [key, fdets] : detail::by_frame(dets)) {
    auto it = gt_frames.find(key);
    if (it == gt_frames.end()) continue;
    const auto m = match(it->second, fdets, MatchConfig::Kind::CenterDistance, center_threshold);
    for (std::size_t d = 0; d < fdets.size(); ++d) {
      if (m[d] < 0) continue;
      const Box3D& g = it->second[m[d]].box;
      e.ate += bev_center_distance(g, fdets[d].box);
      e.ase += 1.0 - aligned_iou(g, fdets[d].box);
      e.aoe += yaw_difference(g.yaw(), fdets[d].box.yaw());
      ++e.tp;
    }
  }
  if (e.tp == 0) return TpErrors{};
  const double n = static_cast<double>(e.tp);
  e.ate /= n;
  e.ase /= n;
  e.aoe /= n;
  return e;
}

/// (5 * mAP + sum_k (1 - min(1, err_k))) / (5 + number of error terms).
inline double nds_lite(double mAP, const std::vector<double>& errors) {
  double s = 5.0 * mAP;
  for (double e : errors) s += 1.0 - std::min(1.0, std::max(0.0, e));
  return s / (5.0 + static_cast<double>(errors.size()));
}

// ---------------------------------------------------------------------------
// Attribute success rates

struct AttributeItem {
  std::string key;        // identifies the annotated item (frame + instance ids)
  std::string attribute;  // ground-truth attribute id
};

struct AttributePrediction {
  std::string attribute;
  double prob = 0.0;
};

/// Share of annotated items whose predicted attribute is correct with
/// probability above `threshold`. Empty input gives 0.
inline double sr_ad_only(const std::vector<AttributeItem>& gt, const std::map<std::string, AttributePrediction>& pred,
                         double threshold = 0.5) {
  if (gt.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& item : gt) {
    auto it = pred.find(item.key);
    if (it != pred.end() && it->second.attribute == item.attribute && it->second.prob > threshold) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(gt.size());
}

struct EventRecord {
  std::string frame_key;
  bool spatial = false;
  std::vector<std::string> classes;  // subject first for spatial events
  std::vector<Box3D> boxes;
  Box3D union_box;
  std::string attribute;
  double prob = 1.0;
};

/// A ground-truth event succeeds when some predicted event of the same frame
/// and kind has the same member classes, every member box and the union box
/// at IoU >= iou_min, and the correct attribute with probability above
/// `threshold`.
inline bool event_matches(const EventRecord& gt, const EventRecord& p, double iou_min = 0.5, double threshold = 0.5) {
  if (p.frame_key != gt.frame_key || p.spatial != gt.spatial) return false;
  if (p.classes != gt.classes || p.boxes.size() != gt.boxes.size()) return false;
  if (p.attribute != gt.attribute || !(p.prob > threshold)) return false;
  for (std::size_t k = 0; k < gt.boxes.size(); ++k)
    if (iou3d(gt.boxes[k], p.boxes[k]) < iou_min) return false;
  return iou3d(gt.union_box, p.union_box) >= iou_min;
}

inline double sr_ad_od(const std::vector<EventRecord>& gt, const std::vector<EventRecord>& pred, double iou_min = 0.5,
                       double threshold = 0.5) {
  if (gt.empty()) return 0.0;
  std::map<std::string, std::vector<const EventRecord*>> by_frame;
  for (const auto& p : pred) by_frame[p.frame_key].push_back(&p);
  std::size_t ok = 0;
  for (const auto& g : gt) {
    auto it = by_frame.find(g.frame_key);
    if (it == by_frame.end()) continue;
    if (std::any_of(it->second.begin(), it->second.end(),
                    [&](const EventRecord* p) { return event_matches(g, *p, iou_min, threshold); }))
      ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(gt.size());
}

// ---------------------------------------------------------------------------
// Report

struct EvalReport {
  std::map<std::string, double> ap;      // per class, center-distance matcher
  std::map<std::string, double> ap_iou;  // per class, IoU matcher
  std::vector<std::string> skipped;
  double mAP = 0.0;
  double mAP_iou = 0.0;
  double iou_threshold = 0.5;
  std::optional<double> ap_novel_value;  // at novel_iou
  double novel_iou = 0.2;
  TpErrors errors;
  double nds = 0.0;
  double novel_recall = 0.0;
  double sr_ad_only = 0.0;
  double sr_ad_od = 0.0;
  std::size_t gt_boxes = 0, detections = 0, gt_attribute_items = 0, gt_events = 0, predicted_events = 0;
  std::size_t novel_gt = 0, novel_found = 0;
};

inline json eval_report_to_json(const EvalReport& r) {
  return json{{"ap", r.ap},
              {"ap_iou", r.ap_iou},
              {"skipped_classes", r.skipped},
              {"mAP", r.mAP},
              {"mAP_iou", r.mAP_iou},
              {"iou_threshold", r.iou_threshold},
              {"AP_N", r.ap_novel_value ? json(*r.ap_novel_value) : json(nullptr)},
              {"novel_iou", r.novel_iou},
              {"ATE", r.errors.ate},
              {"ASE", r.errors.ase},
              {"AOE", r.errors.aoe},
              {"NDS_lite", r.nds},
              {"novel_recall", r.novel_recall},
              {"SR_ad_only", r.sr_ad_only},
              {"SR_ad_od", r.sr_ad_od},
              {"counts",
               {{"gt_boxes", r.gt_boxes},
                {"detections", r.detections},
                {"gt_attribute_items", r.gt_attribute_items},
                {"gt_events", r.gt_events},
                {"predicted_events", r.predicted_events},
                {"true_positives", r.errors.tp},
                {"novel_gt", r.novel_gt},
                {"novel_found", r.novel_found}}}};
}

inline std::string eval_report_table(const EvalReport& r) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-28s %10s %10s\n", "class", "AP(dist)", "AP(IoU)");
  out += line;
  for (const auto& [c, v] : r.ap) {
    auto it = r.ap_iou.find(c);
    std::snprintf(line, sizeof line, "%-28s %10.4f %10.4f\n", c.c_str(), v, it == r.ap_iou.end() ? 0.0 : it->second);
    out += line;
  }
  std::snprintf(line, sizeof line, "\nmAP (center distance)  %.4f\nmAP (IoU %.2f)         %.4f\n", r.mAP,
                r.iou_threshold, r.mAP_iou);
  out += line;
  if (r.ap_novel_value) {
    std::snprintf(line, sizeof line, "AP_N (IoU %.2f)        %.4f\n", r.novel_iou, *r.ap_novel_value);
    out += line;
  }
  std::snprintf(line, sizeof line, "NDS-lite               %.4f  (ATE %.3f  ASE %.3f  AOE %.3f)\n", r.nds, r.errors.ate,
                r.errors.ase, r.errors.aoe);
  out += line;
  std::snprintf(line, sizeof line, "novel recall           %.4f  (%zu/%zu)\n", r.novel_recall, r.novel_found, r.novel_gt);
  out += line;
  std::snprintf(line, sizeof line, "SR (AD only)           %.4f\nSR (AD & OD)           %.4f\n", r.sr_ad_only,
                r.sr_ad_od);
  out += line;
  return out;
}

}  // namespace ovoda
