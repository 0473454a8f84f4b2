#pragma once

// Embedding providers: the contract every backend implements, the seeded
// synthetic oracle and a memoizing cache.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "ovoda/errors.hpp"
#include "ovoda/geometry.hpp"
#include "ovoda/rng.hpp"
#include "ovoda/scene.hpp"
#include "ovoda/vocabulary.hpp"

namespace ovoda {

using Embedding = std::vector<double>;

inline double dot(const Embedding& a, const Embedding& b) {
  if (a.size() != b.size())
    throw DimensionMismatch("dot: sizes " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// L2-normalized copy; the zero vector is returned unchanged.
inline Embedding normalized(Embedding v) {
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  if (n2 > 0.0) {
    const double inv = 1.0 / std::sqrt(n2);
    for (auto& x : v) x *= inv;
  }
  return v;
}

struct Capabilities {
  bool text = true;
  bool image = true;
  bool points = true;
};

struct ImageQuery {
  std::string image_id;
  Box2D rect;
  bool hflip = false;
};

/// Source of fixed-dimension semantic vectors for text, image regions and
/// point sets. Implementations must be safe to call concurrently and must
/// return unit-norm vectors of length dim().
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;

  virtual std::size_t dim() const = 0;
  virtual Capabilities capabilities() const { return {}; }
  /// Same input gives the same output. Caching is only valid when true.
  virtual bool deterministic() const { return true; }

  virtual std::vector<Embedding> embed_text(const std::vector<std::string>& inputs) = 0;
  virtual Embedding embed_image(const ImageQuery& query) = 0;
  virtual Embedding embed_points(const std::vector<Vec3>& points) = 0;
};

// ---------------------------------------------------------------------------
// Synthetic oracle provider

struct SyntheticProviderConfig {
  std::uint64_t seed = 0;
  std::size_t dim = 256;
  double noise = 0.0;          // epsilon in normalize(content + epsilon * n)
  double min_rect_iou = 0.3;   // image rect to ground-truth region match
  double object_share = 0.8;   // share of annotated points that makes a crop one object
  PromptConfig prompt;

  void validate() const {
    if (dim == 0) throw ConfigError("synthetic provider: dim must be positive");
    if (!(noise >= 0.0) || !std::isfinite(noise)) throw ConfigError("synthetic provider: noise must be >= 0");
    if (!(min_rect_iou > 0.0 && min_rect_iou <= 1.0)) throw ConfigError("synthetic provider: min_rect_iou in (0, 1]");
    if (!(object_share > 0.5 && object_share <= 1.0)) throw ConfigError("synthetic provider: object_share in (0.5, 1]");
  }
};

/// Deterministic provider that knows the ground truth of a dataset.
///
/// Text maps to anchor(seed, text). Visual queries are resolved to a
/// ground-truth region (one annotation, an annotation pair, or background)
/// whose content vector is built from the anchors of the matching prompts;
/// the returned vector is normalize(content + noise * n) with n keyed by the
/// query. The full rules are in docs/synthetic_provider.md.
class SyntheticProvider final : public EmbeddingProvider {
 public:
  explicit SyntheticProvider(SyntheticProviderConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  SyntheticProvider(SyntheticProviderConfig cfg, const SceneDataset& ds, const Vocabulary& vocab)
      : cfg_(std::move(cfg)), vocab_(vocab) {
    cfg_.validate();
    index(ds);
  }

  std::size_t dim() const override { return cfg_.dim; }
  Capabilities capabilities() const override { return {true, !frames_.empty(), !frames_.empty()}; }
  const SyntheticProviderConfig& config() const { return cfg_; }

  std::vector<Embedding> embed_text(const std::vector<std::string>& inputs) override {
    std::vector<Embedding> out;
    out.reserve(inputs.size());
    for (const auto& s : inputs) {
      if (canonical_text(s).empty()) throw ValidationError("embed_text: empty input string");
      out.push_back(anchor(cfg_.seed, s, cfg_.dim));
    }
    return out;
  }

  Embedding embed_image(const ImageQuery& q) override {
    auto it = images_.find(q.image_id);
    if (it == images_.end()) throw ProviderError("unknown image id '" + q.image_id + "'", false);
    const FrameIndex& fr = frames_[it->second.first];
    const auto& regions = fr.regions[it->second.second];
    const Region* best = nullptr;
    double best_iou = 0.0;
    for (const auto& r : regions) {
      const double v = iou2d(q.rect, r.rect);
      if (v > best_iou) {
        best_iou = v;
        best = &r;
      }
    }
    Embedding content;
    if (best && best_iou >= cfg_.min_rect_iou)
      content = best->second < 0 ? object_content(fr, best->first) : pair_image_content(fr, best->first, best->second);
    else
      content = anchor(cfg_.seed, "background", cfg_.dim);
    char key[160];
    std::snprintf(key, sizeof key, "%.6f,%.6f,%.6f,%.6f,%d", q.rect.x_min, q.rect.y_min, q.rect.x_max, q.rect.y_max,
                  q.hflip ? 1 : 0);
    return perturb(content, derive_seed(cfg_.seed, {"image", q.image_id, key}));
  }

  Embedding embed_points(const std::vector<Vec3>& points) override {
    std::uint64_t h = fnv1a64_u64(cfg_.seed);
    std::map<std::size_t, int> frame_votes;
    std::vector<std::pair<std::size_t, int>> owners;  // (frame, annotation or -1)
    for (const auto& p : points) {
      const PointKey k = key_of(p);
      for (long long c : k) h = fnv1a64_u64(static_cast<std::uint64_t>(c), h);
      auto it = point_owner_.find(k);
      if (it == point_owner_.end()) continue;
      owners.push_back(it->second);
      ++frame_votes[it->second.first];
    }
    Embedding content;
    if (frame_votes.empty()) {
      content = anchor(cfg_.seed, "background", cfg_.dim);
    } else {
      std::size_t frame = frame_votes.begin()->first;
      for (const auto& [f, n] : frame_votes)
        if (n > frame_votes[frame]) frame = f;
      std::vector<int> order;
      std::map<int, int> counts;
      int annotated = 0;
      for (const auto& [f, a] : owners) {
        if (f != frame || a < 0) continue;
        if (counts[a]++ == 0) order.push_back(a);
        ++annotated;
      }
      const FrameIndex& fr = frames_[frame];
      if (order.empty()) {
        content = anchor(cfg_.seed, "background", cfg_.dim);
      } else {
        int top = order.front();
        for (int a : order)
          if (counts[a] > counts[top]) top = a;
        if (order.size() == 1 || counts[top] >= cfg_.object_share * annotated)
          content = object_content(fr, top);
        else
          content = pair_content(fr, order[0], order[1]);
      }
    }
    return perturb(content, h);
  }

  /// Content vector of annotation `a` of a frame: class anchor plus the
  /// anchors of its rendered non-spatial attributes, normalized.
  Embedding annotation_content(const Annotation& a) const {
    Embedding v = anchor(cfg_.seed, a.class_name, cfg_.dim);
    for (const auto& attr : a.attributes) {
      const Embedding t = anchor(cfg_.seed, render_nonspatial(vocab_, a.class_name, attr, cfg_.prompt), cfg_.dim);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] += t[i];
    }
    return normalized(std::move(v));
  }

 private:
  using PointKey = std::array<long long, 3>;
  struct PointKeyHash {
    std::size_t operator()(const PointKey& k) const {
      std::uint64_t h = kFnvOffset;
      for (long long c : k) h = fnv1a64_u64(static_cast<std::uint64_t>(c), h);
      return static_cast<std::size_t>(h);
    }
  };
  struct Region {
    Box2D rect;
    int first = -1;
    int second = -1;  // -1 for a single annotation
  };
  struct FrameIndex {
    std::vector<Annotation> annotations;
    std::vector<std::vector<Region>> regions;  // per camera
  };

  static PointKey key_of(const Vec3& p) {
    return {std::llround(p.x() * 1e6), std::llround(p.y() * 1e6), std::llround(p.z() * 1e6)};
  }

  void index(const SceneDataset& ds) {
    for (const auto& scene : ds.scenes) {
      for (const auto& frame : scene.frames) {
        const std::size_t fi = frames_.size();
        FrameIndex idx;
        idx.annotations = frame.annotations;
        const int n = static_cast<int>(frame.annotations.size());
        for (std::size_t c = 0; c < frame.cameras.size(); ++c) {
          const CameraModel& cam = frame.cameras[c].model;
          std::vector<Region> regions;
          for (int i = 0; i < n; ++i)
            if (auto r = project_box(frame.annotations[i].box, cam)) regions.push_back({*r, i, -1});
          for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
              if (auto r = project_box(combine(frame.annotations[i].box, frame.annotations[j].box), cam))
                regions.push_back({*r, i, j});
          idx.regions.push_back(std::move(regions));
          images_[frame.cameras[c].image] = {fi, c};
        }
        std::vector<int> owner(frame.cloud.points.size(), -1);
        for (int i = 0; i < n; ++i)
          for (std::size_t p : crop_points(frame.annotations[i].box, frame.cloud))
            if (owner[p] < 0) owner[p] = i;
        for (std::size_t p = 0; p < owner.size(); ++p)
          point_owner_.try_emplace(key_of(frame.cloud.points[p]), fi, owner[p]);
        frames_.push_back(std::move(idx));
      }
    }
  }

  Embedding object_content(const FrameIndex& fr, int a) const { return annotation_content(fr.annotations[a]); }

  std::string pair_text(const FrameIndex& fr, int subject, int reference) const {
    const Annotation& s = fr.annotations[subject];
    const Annotation& r = fr.annotations[reference];
    try {
      return render_spatial(s.class_name, r.class_name, spatial_relation(s.box, r.box), cfg_.prompt);
    } catch (const CoincidentCenters&) {
      return "background";
    }
  }

  Embedding pair_content(const FrameIndex& fr, int subject, int reference) const {
    return anchor(cfg_.seed, pair_text(fr, subject, reference), cfg_.dim);
  }

  // An image region of a pair does not know which member is the subject, so
  // it carries both perspectives.
  Embedding pair_image_content(const FrameIndex& fr, int i, int j) const {
    Embedding v = pair_content(fr, i, j);
    const Embedding w = pair_content(fr, j, i);
    for (std::size_t k = 0; k < v.size(); ++k) v[k] += w[k];
    return normalized(std::move(v));
  }

  Embedding perturb(Embedding content, std::uint64_t key) const {
    if (cfg_.noise == 0.0) return content;
    SplitMix64 rng(key);
    const double sd = cfg_.noise / std::sqrt(static_cast<double>(cfg_.dim));
    for (auto& x : content) x += sd * rng.gaussian();
    return normalized(std::move(content));
  }

  SyntheticProviderConfig cfg_;
  Vocabulary vocab_;
  std::vector<FrameIndex> frames_;
  std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> images_;
  std::unordered_map<PointKey, std::pair<std::size_t, int>, PointKeyHash> point_owner_;
};

// ---------------------------------------------------------------------------
// Caching

/// Memoizes a deterministic provider by canonical request key.
class CachingProvider final : public EmbeddingProvider {
 public:
  explicit CachingProvider(EmbeddingProvider& inner) : inner_(inner) {
    if (!inner.deterministic()) throw ConfigError("cannot cache a nondeterministic provider");
  }

  std::size_t dim() const override { return inner_.dim(); }
  Capabilities capabilities() const override { return inner_.capabilities(); }

  std::vector<Embedding> embed_text(const std::vector<std::string>& inputs) override {
    std::vector<Embedding> out(inputs.size());
    std::vector<std::string> missing;
    std::vector<std::size_t> slots;
    {
      std::lock_guard lock(mu_);
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (auto it = text_.find(inputs[i]); it != text_.end()) {
          out[i] = it->second;
          ++hits_;
        } else {
          missing.push_back(inputs[i]);
          slots.push_back(i);
        }
      }
    }
    if (!missing.empty()) {
      auto fresh = inner_.embed_text(missing);
      std::lock_guard lock(mu_);
      for (std::size_t k = 0; k < fresh.size(); ++k) {
        text_[missing[k]] = fresh[k];
        out[slots[k]] = std::move(fresh[k]);
        ++misses_;
      }
    }
    return out;
  }

  Embedding embed_image(const ImageQuery& q) override {
    char rect[160];
    std::snprintf(rect, sizeof rect, "|%.9g|%.9g|%.9g|%.9g|%d", q.rect.x_min, q.rect.y_min, q.rect.x_max, q.rect.y_max,
                  q.hflip ? 1 : 0);
    return memo(q.image_id + rect, [&] { return inner_.embed_image(q); });
  }

  Embedding embed_points(const std::vector<Vec3>& points) override {
    std::string key;
    key.reserve(points.size() * 24);
    for (const auto& p : points) {
      char buf[80];
      std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g;", p.x(), p.y(), p.z());
      key += buf;
    }
    return memo("P" + key, [&] { return inner_.embed_points(points); });
  }

  std::size_t hits() const {
    std::lock_guard lock(mu_);
    return hits_;
  }
  std::size_t misses() const {
    std::lock_guard lock(mu_);
    return misses_;
  }

 private:
  template <class F>
  Embedding memo(const std::string& key, F&& compute) {
    {
      std::lock_guard lock(mu_);
      if (auto it = visual_.find(key); it != visual_.end()) {
        ++hits_;
        return it->second;
      }
    }
    Embedding v = compute();
    std::lock_guard lock(mu_);
    ++misses_;
    return visual_.emplace(key, std::move(v)).first->second;
  }

  EmbeddingProvider& inner_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, Embedding> text_;
  std::unordered_map<std::string, Embedding> visual_;
  std::size_t hits_ = 0, misses_ = 0;
};

}  // namespace ovoda
