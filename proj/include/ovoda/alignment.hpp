#pragma once

// Visual feature assembly, softmax classification over text features, HFA
// averaging, CFM concatenation and novel-object discovery.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ovoda/embedding.hpp"
#include "ovoda/errors.hpp"
#include "ovoda/geometry.hpp"
#include "ovoda/proposals.hpp"
#include "ovoda/rng.hpp"

namespace ovoda {

struct Distribution {
  std::vector<double> probs;
  std::string vocab_ref;

  std::size_t argmax() const {
    return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  }
  double max_prob() const { return probs.empty() ? 0.0 : probs[argmax()]; }
  friend bool operator==(const Distribution&, const Distribution&) = default;
};

/// Row-per-label text features for one vocabulary list.
struct TextBank {
  std::string vocab_ref;
  std::vector<std::string> labels;  // what each row stands for (class or attribute id)
  std::vector<std::string> texts;   // the strings that were embedded
  Eigen::MatrixXd features;         // labels.size() x D
};

inline TextBank make_text_bank(EmbeddingProvider& provider, std::string vocab_ref, std::vector<std::string> labels,
                               std::vector<std::string> texts) {
  if (labels.size() != texts.size()) throw ShapeMismatch("text bank: labels and texts differ in length");
  TextBank bank{std::move(vocab_ref), std::move(labels), std::move(texts), {}};
  const auto vecs = provider.embed_text(bank.texts);
  bank.features.resize(static_cast<Eigen::Index>(vecs.size()), static_cast<Eigen::Index>(provider.dim()));
  for (std::size_t k = 0; k < vecs.size(); ++k) {
    if (vecs[k].size() != provider.dim()) throw DimensionMismatch("provider returned a vector of the wrong size");
    for (std::size_t d = 0; d < vecs[k].size(); ++d) bank.features(k, d) = vecs[k][d];
  }
  return bank;
}

/// softmax(text_feats * v / temperature).
inline Distribution classify(const Embedding& v, const Eigen::MatrixXd& text_feats, double temperature,
                             std::string vocab_ref = {}) {
  if (!(temperature > 0.0)) throw ValidationError("classify: temperature must be positive");
  if (text_feats.rows() == 0) throw DimensionMismatch("classify: empty text feature matrix");
  if (static_cast<std::size_t>(text_feats.cols()) != v.size())
    throw DimensionMismatch("classify: feature has " + std::to_string(v.size()) + " entries, text features have " +
                            std::to_string(text_feats.cols()));
  const Eigen::Map<const Eigen::VectorXd> x(v.data(), static_cast<Eigen::Index>(v.size()));
  Eigen::VectorXd logits = text_feats * x / temperature;
  logits.array() -= logits.maxCoeff();
  Eigen::VectorXd e = logits.array().exp();
  e /= e.sum();
  return {std::vector<double>(e.data(), e.data() + e.size()), std::move(vocab_ref)};
}

inline Distribution classify(const Embedding& v, const TextBank& bank, double temperature) {
  return classify(v, bank.features, temperature, bank.vocab_ref);
}

/// Element-wise mean of two distributions over the same vocabulary.
inline Distribution hfa_average(const Distribution& a, const Distribution& b) {
  if (a.vocab_ref != b.vocab_ref || a.probs.size() != b.probs.size())
    throw VocabMismatch("hfa_average: distributions index different vocabularies ('" + a.vocab_ref + "' vs '" +
                        b.vocab_ref + "')");
  Distribution out{std::vector<double>(a.probs.size()), a.vocab_ref};
  for (std::size_t i = 0; i < a.probs.size(); ++i) out.probs[i] = 0.5 * (a.probs[i] + b.probs[i]);
  return out;
}

/// CFM: detector feature followed by the foundation-model feature.
inline std::vector<double> concat_fm_features(const std::vector<double>& detector, const Embedding& fm) {
  std::vector<double> out;
  out.reserve(detector.size() + fm.size());
  out.insert(out.end(), detector.begin(), detector.end());
  out.insert(out.end(), fm.begin(), fm.end());
  return out;
}

// ---------------------------------------------------------------------------
// Multi-view fusion

struct CameraEmbedding {
  std::string camera_id;
  double azimuth = 0.0;  // radians, world frame
  Embedding embedding;
};

/// Maps [img_1 | view_1 | ... | img_C | view_C | points] to D dimensions.
///
/// Camera slots follow the sorted camera ids; absent cameras contribute a
/// zero slot. The projection is W = [I, g*R_1, ..., I, g*R_C, I] where each
/// R_c is a seeded D x 2 matrix with orthonormal columns, so the image and
/// point blocks pass through unchanged and the view encoding (cos, sin) of
/// the azimuth lands in a camera-specific direction. The result is
/// normalized.
class FusionProjector {
 public:
  FusionProjector(std::uint64_t seed, std::size_t dim, double view_gain = 0.05)
      : seed_(seed), dim_(dim), gain_(view_gain) {
    if (dim == 0) throw ConfigError("fusion: dimension must be positive");
    if (!(view_gain >= 0.0) || !std::isfinite(view_gain)) throw ConfigError("fusion: view_gain must be >= 0");
  }

  std::size_t dim() const { return dim_; }

  Embedding fuse(std::vector<CameraEmbedding> cams, const std::optional<Embedding>& points) const {
    if (cams.empty() && !points) throw EmptyEvidence("fuse: no image or point evidence");
    std::sort(cams.begin(), cams.end(),
              [](const CameraEmbedding& a, const CameraEmbedding& b) { return a.camera_id < b.camera_id; });
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim_));
    for (std::size_t i = 0; i < cams.size(); ++i) {
      const auto& c = cams[i];
      if (i > 0 && cams[i - 1].camera_id == c.camera_id)
        throw ValidationError("fuse: camera '" + c.camera_id + "' given twice");
      check_dim(c.embedding, "image");
      out += Eigen::Map<const Eigen::VectorXd>(c.embedding.data(), static_cast<Eigen::Index>(dim_));
      out += gain_ * (view_basis(c.camera_id) * Eigen::Vector2d(std::cos(c.azimuth), std::sin(c.azimuth)));
    }
    if (points) {
      check_dim(*points, "point");
      out += Eigen::Map<const Eigen::VectorXd>(points->data(), static_cast<Eigen::Index>(dim_));
    }
    return normalized(Embedding(out.data(), out.data() + out.size()));
  }

  /// The D x 2 view basis of a camera.
  Eigen::Matrix<double, Eigen::Dynamic, 2> view_basis(const std::string& camera_id) const {
    SplitMix64 rng(derive_seed(seed_, {"view", camera_id}));
    Eigen::Matrix<double, Eigen::Dynamic, 2> r(static_cast<Eigen::Index>(dim_), 2);
    for (Eigen::Index i = 0; i < r.rows(); ++i) r(i, 0) = rng.gaussian();
    for (Eigen::Index i = 0; i < r.rows(); ++i) r(i, 1) = rng.gaussian();
    r.col(0).normalize();
    if (dim_ > 1) {
      r.col(1) -= r.col(0).dot(r.col(1)) * r.col(0);
      r.col(1).normalize();
    } else {
      r.col(1).setZero();
    }
    return r;
  }

 private:
  void check_dim(const Embedding& v, const char* what) const {
    if (v.size() != dim_)
      throw DimensionMismatch(std::string("fuse: ") + what + " embedding has " + std::to_string(v.size()) +
                              " entries, expected " + std::to_string(dim_));
  }

  std::uint64_t seed_;
  std::size_t dim_;
  double gain_;
};

/// Image and point evidence for one box in one frame.
struct VisualEvidence {
  std::vector<CameraEmbedding> cameras;
  std::optional<Embedding> points;
  bool empty() const { return cameras.empty() && !points; }
};

/// Queries the provider for every camera the box is visible in and for the
/// points inside it. `point_indices`, when given, replaces the box crop.
inline VisualEvidence gather_evidence(EmbeddingProvider& provider, const Frame& frame, const Box3D& box, bool hflip,
                                      const std::vector<std::size_t>* point_indices = nullptr) {
  VisualEvidence ev;
  for (const auto& cam : frame.cameras) {
    auto rect = project_box(box, cam.model);
    if (!rect) continue;
    ev.cameras.push_back({cam.model.camera_id, cam.model.azimuth(), provider.embed_image({cam.image, *rect, hflip})});
  }
  const std::vector<std::size_t> crop = point_indices ? *point_indices : crop_points(box, frame.cloud);
  if (!crop.empty()) {
    std::vector<Vec3> pts;
    pts.reserve(crop.size());
    for (std::size_t i : crop) pts.push_back(frame.cloud.points[i]);
    ev.points = provider.embed_points(pts);
  }
  return ev;
}

// ---------------------------------------------------------------------------
// Novel-object discovery

struct DiscoveryThresholds {
  double theta_b = 0.2;   // IoU with base-class boxes
  double theta_o = 0.8;   // objectness
  double theta_s = 0.5;   // class probability
  double theta_a = 0.5;   // attribute probability
  double theta_d = 15.0;  // meters, spatial pairing gate

  void validate() const {
    for (double t : {theta_b, theta_o, theta_s, theta_a})
      if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("thresholds: theta_b/o/s/a must lie in [0, 1]");
    if (!(theta_d > 0.0) || !std::isfinite(theta_d)) throw ConfigError("thresholds: theta_d must be positive");
  }
};

struct ClassifiedObject {
  std::int64_t proposal_id = 0;
  Box3D box;
  Distribution dist;
  std::string predicted_class;
  bool is_novel = false;      // predicted class outside the base set
  double objectness = 1.0;
  double score = 0.0;         // objectness * max class probability
  std::string source_id;      // ground-truth instance id when built from annotations
};

/// Novel-object filter: proposal j is a novel object when
/// (i) it overlaps every base-classified proposal with IoU < theta_b,
/// (ii) objectness > theta_o, (iii) max probability > theta_s and
/// (iv) its predicted class is not a base class.
inline std::set<std::int64_t> discover_novel_objects(const std::vector<ClassifiedObject>& classified,
                                                     const std::vector<ObjectProposal>& proposals,
                                                     const DiscoveryThresholds& th,
                                                     const std::set<std::string>& base_classes) {
  std::map<std::int64_t, double> objectness;
  for (const auto& p : proposals) objectness[p.proposal_id] = p.objectness;
  std::vector<const ClassifiedObject*> base;
  for (const auto& c : classified)
    if (base_classes.contains(c.predicted_class)) base.push_back(&c);

  std::set<std::int64_t> out;
  for (const auto& c : classified) {
    auto q = objectness.find(c.proposal_id);
    if (q == objectness.end())
      throw ValidationError("discover_novel_objects: no proposal with id " + std::to_string(c.proposal_id));
    if (base_classes.contains(c.predicted_class)) continue;
    if (!(q->second > th.theta_o)) continue;
    if (!(c.dist.max_prob() > th.theta_s)) continue;
    const bool isolated = std::all_of(base.begin(), base.end(),
                                      [&](const ClassifiedObject* b) { return iou3d(c.box, b->box) < th.theta_b; });
    if (isolated) out.insert(c.proposal_id);
  }
  return out;
}

}  // namespace ovoda
