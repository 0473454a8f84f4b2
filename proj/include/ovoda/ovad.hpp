#pragma once

// OVAD builder: ground-truth annotation pairs within a distance range, with
// their combined box, spatial relation and label text.

#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "ovoda/geometry.hpp"
#include "ovoda/json_io.hpp"
#include "ovoda/scene.hpp"
#include "ovoda/vocabulary.hpp"

namespace ovoda {

struct OvadPair {
  std::string scene;
  std::size_t frame = 0;
  std::string id_i, id_j;
  std::string class_i, class_j;
  Box3D box_i, box_j;
  Box3D union_box;
  SpatialRelation relation = SpatialRelation::InFrontOf;  // of i as seen from j
  std::string label_text;
};

struct OvadSummary {
  std::size_t frames = 0;
  std::size_t pairs = 0;
  std::size_t skipped_coincident = 0;
  std::map<std::string, std::size_t> relation_counts;
  std::map<std::string, std::size_t> attribute_counts;  // non-spatial annotation attributes
};

/// Unordered annotation pairs (i < j) with BEV center distance in
/// [0, max_distance]. Pairs whose centers coincide have no relation and are
/// counted in `skipped` instead.
inline std::vector<OvadPair> build_ovad_frame(const Frame& frame, const std::string& scene, std::size_t frame_index,
                                              double max_distance = 15.0, std::size_t* skipped = nullptr) {
  std::vector<OvadPair> out;
  const auto& anns = frame.annotations;
  for (std::size_t i = 0; i < anns.size(); ++i) {
    for (std::size_t j = i + 1; j < anns.size(); ++j) {
      if (bev_center_distance(anns[i].box, anns[j].box) > max_distance) continue;
      OvadPair p;
      try {
        p.relation = spatial_relation(anns[i].box, anns[j].box);
      } catch (const CoincidentCenters&) {
        if (skipped) ++*skipped;
        continue;
      }
      p.scene = scene;
      p.frame = frame_index;
      p.id_i = anns[i].instance_id;
      p.id_j = anns[j].instance_id;
      p.class_i = anns[i].class_name;
      p.class_j = anns[j].class_name;
      p.box_i = anns[i].box;
      p.box_j = anns[j].box;
      p.union_box = combine(anns[i].box, anns[j].box);
      p.label_text = render_ovad_label(p.class_i, p.class_j, p.relation);
      out.push_back(std::move(p));
    }
  }
  return out;
}

inline std::vector<OvadPair> build_ovad(const SceneDataset& ds, double max_distance = 15.0,
                                        OvadSummary* summary = nullptr) {
  std::vector<OvadPair> out;
  OvadSummary sum;
  for (const auto& scene : ds.scenes) {
    for (std::size_t f = 0; f < scene.frames.size(); ++f) {
      auto pairs = build_ovad_frame(scene.frames[f], scene.token, f, max_distance, &sum.skipped_coincident);
      for (const auto& p : pairs) ++sum.relation_counts[std::string(relation_text(p.relation))];
      for (const auto& a : scene.frames[f].annotations)
        for (const auto& attr : a.attributes) ++sum.attribute_counts[attr];
      out.insert(out.end(), std::make_move_iterator(pairs.begin()), std::make_move_iterator(pairs.end()));
      ++sum.frames;
    }
  }
  sum.pairs = out.size();
  if (summary) *summary = std::move(sum);
  return out;
}

inline json ovad_pair_to_json(const OvadPair& p) {
  return json{{"scene", p.scene},
              {"frame", p.frame},
              {"id_i", p.id_i},
              {"id_j", p.id_j},
              {"union_box", box_to_json(p.union_box)},
              {"relation", std::string(relation_text(p.relation))},
              {"label_text", p.label_text}};
}

inline json ovad_summary_to_json(const OvadSummary& s) {
  return json{{"frames", s.frames},
              {"pairs", s.pairs},
              {"skipped_coincident", s.skipped_coincident},
              {"relation_counts", s.relation_counts},
              {"attribute_counts", s.attribute_counts}};
}

}  // namespace ovoda
