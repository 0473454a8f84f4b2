#include <catch_amalgamated.hpp>

#include <cmath>

#include "oracles.hpp"
#include "ovoda/alignment.hpp"
#include "ovoda/embedding.hpp"
#include "ovoda/events.hpp"
#include "ovoda/remote_provider.hpp"

using namespace ovoda;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

double norm(const Embedding& v) { return std::sqrt(dot(v, v)); }

SyntheticProviderConfig provider_cfg(std::uint64_t seed, std::size_t dim, double noise = 0.0) {
  SyntheticProviderConfig c;
  c.seed = seed;
  c.dim = dim;
  c.noise = noise;
  return c;
}

struct World {
  SceneDataset ds;
  Vocabulary vocab = nuscenes_ovad_vocabulary();
  SyntheticProvider provider;

  explicit World(std::uint64_t seed, double noise = 0.0, int frames = 3, int objects = 6)
      : ds(make(seed, frames, objects)), provider(provider_cfg(seed, 256, noise), ds, vocab) {}

  static SceneDataset make(std::uint64_t seed, int frames, int objects) {
    SynthConfig c;
    c.frames = frames;
    c.objects = objects;
    c.novel_quota = 2;
    return generate_synthetic(c, seed);
  }
};

ClassifiedObject object_from(const Annotation& a, std::int64_t id) {
  ClassifiedObject o;
  o.proposal_id = id;
  o.box = a.box;
  o.predicted_class = a.class_name;
  o.source_id = a.instance_id;
  o.dist = Distribution{{1.0}, "x"};
  return o;
}

ClassifiedObject at(double x, double y, const std::string& cls, std::int64_t id, double p = 0.9) {
  ClassifiedObject o;
  o.proposal_id = id;
  o.box = Box3D(Vec3(x, y, 0.8), Vec3(4.0, 2.0, 1.6), 0.0);
  o.predicted_class = cls;
  o.dist = Distribution{{p, 1.0 - p}, "x"};
  return o;
}

}  // namespace

// ---------------------------------------------------------------------------
// Providers

TEST_CASE("synthetic provider text is the anchor", "[provider]") {
  SyntheticProvider p(provider_cfg(5, 64));
  const auto v = p.embed_text({"car", "  Car ", "bus"});
  REQUIRE(v[0] == anchor(5, "car", 64));
  REQUIRE(v[1] == v[0]);
  REQUIRE(v[2] != v[0]);
  REQUIRE_THAT(norm(v[2]), WithinAbs(1.0, 1e-12));
  REQUIRE_THROWS_AS(p.embed_text({"   "}), ValidationError);
  REQUIRE_THROWS_AS(p.embed_image({"nope", Box2D{0, 0, 1, 1}, false}), ProviderError);
  REQUIRE_FALSE(p.capabilities().image);
}

TEST_CASE("synthetic provider visual queries", "[provider]") {
  World w(13);
  const Frame& f = w.ds.scenes[0].frames[0];
  FusionProjector fusion(13, 256);
  const TextBank bank = make_text_bank(w.provider, "objects", testing_vocab(w.vocab, Family::Object),
                                       testing_vocab(w.vocab, Family::Object));
  for (const auto& a : f.annotations) {
    const auto crop = crop_points(a.box, f.cloud);
    std::vector<Vec3> pts;
    for (auto i : crop) pts.push_back(f.cloud.points[i]);
    const Embedding pv = w.provider.embed_points(pts);
    REQUIRE_THAT(dot(pv, w.provider.annotation_content(a)), WithinAbs(1.0, 1e-9));

    const VisualEvidence ev = gather_evidence(w.provider, f, a.box, false);
    REQUIRE_FALSE(ev.empty());
    const Distribution d = classify(fusion.fuse(ev.cameras, ev.points), bank, 0.05);
    REQUIRE(bank.labels[d.argmax()] == a.class_name);
  }
  REQUIRE(w.provider.embed_points({Vec3(1e4, 1e4, 1e4)}) == anchor(13, "background", 256));
}

TEST_CASE("synthetic provider noise", "[provider]") {
  World clean(2), noisy(2, 0.3);
  const Frame& f = clean.ds.scenes[0].frames[1];
  const auto& a = f.annotations[0];
  std::vector<Vec3> pts;
  for (auto i : crop_points(a.box, f.cloud)) pts.push_back(f.cloud.points[i]);
  const Embedding c = clean.provider.embed_points(pts);
  const Embedding n1 = noisy.provider.embed_points(pts);
  const Embedding n2 = noisy.provider.embed_points(pts);
  REQUIRE(n1 == n2);
  REQUIRE(n1 != c);
  REQUIRE_THAT(norm(n1), WithinAbs(1.0, 1e-12));
  REQUIRE(dot(n1, c) > 0.8);
  REQUIRE(noisy.provider.embed_text({"car"}) == clean.provider.embed_text({"car"}));
}

TEST_CASE("caching provider returns identical vectors", "[provider]") {
  World w(3);
  CachingProvider cache(w.provider);
  const Frame& f = w.ds.scenes[0].frames[0];
  const auto first = gather_evidence(cache, f, f.annotations[0].box, false);
  const std::size_t misses = cache.misses();
  const auto second = gather_evidence(cache, f, f.annotations[0].box, false);
  REQUIRE(cache.misses() == misses);
  REQUIRE(cache.hits() >= misses);
  REQUIRE(first.points == second.points);
  const auto direct = gather_evidence(w.provider, f, f.annotations[0].box, false);
  REQUIRE(direct.points == first.points);
  for (std::size_t i = 0; i < direct.cameras.size(); ++i)
    REQUIRE(direct.cameras[i].embedding == first.cameras[i].embedding);
  REQUIRE(cache.embed_text({"car", "bus"}) == w.provider.embed_text({"car", "bus"}));
  REQUIRE(cache.embed_text({"car"}).front() == anchor(3, "car", 256));
}

// ---------------------------------------------------------------------------
// Alignment

TEST_CASE("classification examples", "[alignment]") {
  Eigen::MatrixXd t(2, 2);
  t << 1, 0, 0, 1;
  const auto d = classify({1.0, 0.0}, t, 0.05, "v");
  REQUIRE_THAT(d.probs[0], WithinRel(1.0 / (1.0 + std::exp(-20.0)), 1e-12));
  REQUIRE_THAT(d.probs[0] + d.probs[1], WithinAbs(1.0, 1e-15));
  REQUIRE(d.argmax() == 0);

  const auto flat = classify({0.0, 0.0}, t, 0.05, "v");
  REQUIRE(flat.probs == std::vector<double>{0.5, 0.5});

  const auto big = classify({1.0, 0.0}, t * 1e3, 1e-3, "v");
  REQUIRE(std::isfinite(big.probs[1]));
  REQUIRE(big.probs[0] == 1.0);

  REQUIRE_THROWS_AS(classify({1.0, 0.0, 0.0}, t, 0.05), DimensionMismatch);
  REQUIRE_THROWS_AS(classify({1.0, 0.0}, t, 0.0), ValidationError);
}

TEST_CASE("HFA average and feature concatenation", "[alignment]") {
  const Distribution a{{0.6, 0.4}, "v"}, b{{0.2, 0.8}, "v"};
  const auto m = hfa_average(a, b);
  REQUIRE_THAT(m.probs[0], WithinAbs(0.4, 1e-15));
  REQUIRE_THAT(m.probs[1], WithinAbs(0.6, 1e-15));
  REQUIRE(m.argmax() == 1);
  REQUIRE_THROWS_AS(hfa_average(a, Distribution{{0.5, 0.5}, "w"}), VocabMismatch);
  REQUIRE_THROWS_AS(hfa_average(a, Distribution{{1.0}, "v"}), VocabMismatch);

  REQUIRE(concat_fm_features({1, 2}, {3, 4, 5}) == std::vector<double>{1, 2, 3, 4, 5});
}

TEST_CASE("multi-view fusion", "[alignment]") {
  const FusionProjector fp(9, 8);
  const Embedding e1 = anchor(1, "a", 8), e2 = anchor(1, "b", 8), pts = anchor(1, "c", 8);
  const std::vector<CameraEmbedding> cams{{"CAM_B", 0.3, e1}, {"CAM_A", -1.2, e2}};
  const std::vector<CameraEmbedding> swapped{cams[1], cams[0]};
  const Embedding f = fp.fuse(cams, pts);
  REQUIRE(f == fp.fuse(swapped, pts));
  REQUIRE_THAT(norm(f), WithinAbs(1.0, 1e-12));
  REQUIRE(fp.fuse({cams[0]}, pts) != f);
  REQUIRE_THAT(dot(fp.fuse({}, pts), pts), WithinAbs(1.0, 1e-12));
  REQUIRE(FusionProjector(10, 8).fuse(cams, pts) != f);
  REQUIRE_THROWS_AS(fp.fuse({}, std::nullopt), EmptyEvidence);
  REQUIRE_THROWS_AS(fp.fuse({{"CAM_A", 0.0, {1.0}}}, std::nullopt), DimensionMismatch);
  REQUIRE_THROWS_AS(fp.fuse({cams[0], cams[0]}, std::nullopt), ValidationError);

  const auto r = fp.view_basis("CAM_A");
  REQUIRE_THAT(r.col(0).norm(), WithinAbs(1.0, 1e-12));
  REQUIRE_THAT(r.col(1).norm(), WithinAbs(1.0, 1e-12));
  REQUIRE_THAT(r.col(0).dot(r.col(1)), WithinAbs(0.0, 1e-12));
}

TEST_CASE("novel object discovery examples", "[discovery]") {
  const DiscoveryThresholds th;
  const std::set<std::string> base{"car"};
  auto novel = at(40, 0, "tricycle", 1);
  auto base_obj = at(0, 0, "car", 2);
  std::vector<ObjectProposal> props{{1, novel.box, 0.9, {}}, {2, base_obj.box, 0.95, {}}};
  std::vector<ClassifiedObject> cls{novel, base_obj};
  REQUIRE(discover_novel_objects(cls, props, th, base) == std::set<std::int64_t>{1});

  props[0].objectness = 0.8;
  REQUIRE(discover_novel_objects(cls, props, th, base).empty());
  props[0].objectness = 0.9;

  cls[0].dist = Distribution{{0.5, 0.5}, "x"};
  REQUIRE(discover_novel_objects(cls, props, th, base).empty());
  cls[0] = novel;

  // IoU 0.3 with a base-class box.
  cls[0].box = Box3D(Vec3(0, 0, 0.8), Vec3(4.0, 2.0, 1.6), 0.0);
  cls[1].box = Box3D(Vec3(4.0 * (1 - 2 * 0.3 / 1.3), 0, 0.8), Vec3(4.0, 2.0, 1.6), 0.0);
  REQUIRE_THAT(iou3d(cls[0].box, cls[1].box), WithinAbs(0.3, 1e-9));
  REQUIRE(discover_novel_objects(cls, props, th, base).empty());

  REQUIRE_THROWS_AS(discover_novel_objects(cls, {}, th, base), ValidationError);
}

TEST_CASE("novel attribute discovery examples", "[discovery]") {
  const DiscoveryThresholds th;
  ComplexEventProposal a, b;
  a.event_id = 1;
  a.predicted_attr = "pedestrian.sitting_lying_down";
  a.dist = Distribution{{0.7, 0.3}, "x"};
  a.union_box = Box3D(Vec3(0, 0, 0), Vec3(1, 1, 1), 0);
  b.event_id = 2;
  b.predicted_attr = "pedestrian.standing";
  b.dist = Distribution{{0.9, 0.1}, "x"};
  b.union_box = Box3D(Vec3(10, 0, 0), Vec3(1, 1, 1), 0);
  const std::set<std::string> base{"pedestrian.standing"};
  REQUIRE(discover_novel_attributes({a, b}, th, base) == std::set<std::int64_t>{1});
  a.dist = Distribution{{0.5, 0.5}, "x"};
  REQUIRE(discover_novel_attributes({a, b}, th, base).empty());
  a.dist = Distribution{{0.7, 0.3}, "x"};
  b.union_box = a.union_box;
  REQUIRE(discover_novel_attributes({a, b}, th, base).empty());
}

// ---------------------------------------------------------------------------
// Events

TEST_CASE("temporal buffer", "[events]") {
  TemporalBuffer buf(2);
  for (int k = 0; k < 5; ++k) buf.push_frame(k * 500000, static_cast<std::size_t>(k), {at(0.5 * k, 0, "car", k)});
  REQUIRE(buf.window().size() == 3);
  REQUIRE(buf.window().front().frame_index == 2);
  const auto hist = buf.track_history(buf.current().track_ids[0]);
  REQUIRE(hist.size() == 3);
  REQUIRE(buf.current().track_ids[0] == 0);
  REQUIRE_THROWS_AS(buf.push_frame(4 * 500000, 5, {}), OutOfOrderFrame);

  TemporalBuffer zero(0);
  zero.push_frame(1, 0, {at(0, 0, "car", 0)});
  zero.push_frame(2, 1, {at(0, 0, "car", 0)});
  REQUIRE(zero.window().size() == 1);

  TemporalBuffer jump(2, 2.0);
  jump.push_frame(1, 0, {at(0, 0, "car", 0)});
  jump.push_frame(2, 1, {at(5, 0, "car", 0)});
  REQUIRE(jump.current().track_ids[0] == 1);
  REQUIRE_THROWS_AS(TemporalBuffer(-1), ConfigError);
}

TEST_CASE("non-spatial event candidates", "[events]") {
  const auto vocab = nuscenes_ovad_vocabulary();
  TemporalBuffer buf(2);
  buf.push_frame(1, 0, {at(0, 0, "car", 0), at(10, 0, "pedestrian", 1), at(20, 0, "barrier", 2)});
  const auto attrs = testing_vocab(vocab, Family::Attribute);
  const auto evs = gen_nonspatial(buf, vocab, attrs);
  REQUIRE(evs.size() == 2);  // barrier has no attributes
  REQUIRE(evs[0].candidate_attrs == std::vector<std::string>{"vehicle.parked", "vehicle.moving", "vehicle.stopped"});
  REQUIRE(evs[0].candidate_texts[0] == "car parked");
  for (const auto& a : evs[1].candidate_attrs) REQUIRE(a.starts_with("pedestrian."));
  REQUIRE(gen_nonspatial(TemporalBuffer(2), vocab, attrs).empty());
}

TEST_CASE("spatial event generation counts", "[events]") {
  const auto vocab = nuscenes_ovad_vocabulary();
  const auto attrs = testing_vocab(vocab, Family::Attribute);
  const DiscoveryThresholds th;
  const auto two = gen_spatial({at(0, 0, "car", 0), at(5, 0, "truck", 1)}, attrs, th);
  REQUIRE(two.size() == 2);
  REQUIRE(two[0].candidate_attrs.size() == 4);
  REQUIRE(two[0].geometric_relation == SpatialRelation::Behind);
  REQUIRE(two[1].geometric_relation == SpatialRelation::InFrontOf);
  REQUIRE(two[0].member_ids == std::vector<std::int64_t>{0, 1});
  REQUIRE(two[1].member_ids == std::vector<std::int64_t>{1, 0});
  REQUIRE(oracle::covers_corners(two[0].union_box, two[0].member_boxes[0]));
  REQUIRE(two[1].candidate_texts[0] == "From the perspective of car, truck in front of car.");

  REQUIRE(gen_spatial({at(0, 0, "car", 0), at(20, 0, "truck", 1)}, attrs, th).empty());
  REQUIRE(gen_spatial({at(0, 0, "car", 0), at(15, 0, "truck", 1)}, attrs, th).size() == 2);
  REQUIRE(gen_spatial({at(0, 0, "car", 0), at(0, 0, "truck", 1)}, attrs, th).empty());

  std::vector<ClassifiedObject> five;
  for (int i = 0; i < 5; ++i) five.push_back(at(2.0 * i, 1.0 * i, "car", i));
  REQUIRE(gen_spatial(five, attrs, th).size() == 20);
  REQUIRE(gen_spatial(five, {"vehicle.moving"}, th).empty());
}

TEST_CASE("event classification on synthetic scenes", "[events]") {
  World w(17, 0.0, 3, 6);
  const FusionProjector fusion(17, 256);
  const Scene& scene = w.ds.scenes[0];
  const auto attrs = testing_vocab(w.vocab, Family::Attribute);

  TemporalBuffer buf(2);
  for (std::size_t fi = 0; fi < scene.frames.size(); ++fi) {
    std::vector<ClassifiedObject> objs;
    for (std::size_t i = 0; i < scene.frames[fi].annotations.size(); ++i)
      objs.push_back(object_from(scene.frames[fi].annotations[i], static_cast<std::int64_t>(i)));
    buf.push_frame(scene.frames[fi].timestamp_us, fi, objs);
  }
  const std::size_t cur = scene.frames.size() - 1;
  const auto& anns = scene.frames[cur].annotations;

  auto evs = gen_nonspatial(buf, w.vocab, attrs);
  REQUIRE_FALSE(evs.empty());
  for (auto& ev : evs) {
    REQUIRE(ev.track_boxes.size() == 3);
    classify_event(ev, w.provider, scene, cur, fusion, EventConfig{});
    const auto& truth = anns[static_cast<std::size_t>(ev.member_ids[0])].attributes;
    REQUIRE(std::find(truth.begin(), truth.end(), ev.predicted_attr) != truth.end());
    REQUIRE(ev.dist.max_prob() > 0.5);
  }

  auto spatial = gen_spatial(buf.current().objects, attrs, DiscoveryThresholds{});
  REQUIRE_FALSE(spatial.empty());
  for (auto& ev : spatial) {
    classify_event(ev, w.provider, scene, cur, fusion, EventConfig{0.05, false, false});
    REQUIRE(ev.predicted_attr == relation_text(*ev.geometric_relation));
  }

  ComplexEventProposal empty;
  REQUIRE_THROWS_AS(classify_event(empty, w.provider, scene, cur, fusion, EventConfig{}), ValidationError);
}

// ---------------------------------------------------------------------------
// Remote provider over the wire protocol

TEST_CASE("wire payloads", "[remote]") {
  const json img = wire::image_request({"cam0", Box2D{1, 2, 3, 4}, true});
  REQUIRE(img["image_id"] == "cam0");
  REQUIRE(img["rect"] == json::array({1.0, 2.0, 3.0, 4.0}));
  REQUIRE(img["hflip"] == true);
  const ImageQuery q = wire::parse_image_request(img);
  REQUIRE(q.rect.x_max == 3.0);
  REQUIRE(q.hflip);
  REQUIRE(wire::parse_text_request(wire::text_request({"a", "b"})) == std::vector<std::string>{"a", "b"});
  const auto pts = wire::parse_points_request(wire::points_request({Vec3(1, 2, 3)}));
  REQUIRE(pts.size() == 1);
  REQUIRE(pts[0] == Vec3(1, 2, 3));

  REQUIRE_THROWS_AS(wire::parse_image_request(json{{"image_id", "x"}}), SchemaError);
  REQUIRE_THROWS_AS(wire::parse_text_request(json{{"inputs", json::array({1})}}), SchemaError);

  const json ok = wire::vectors_response(2, {{1.0, 0.0}});
  REQUIRE(wire::parse_vectors(ok, 1, 2).front() == Embedding{1.0, 0.0});
  REQUIRE_THROWS_AS(wire::parse_vectors(ok, 2, 2), ProviderError);
  REQUIRE_THROWS_AS(wire::parse_vectors(ok, 1, 3), ProviderError);
  REQUIRE_THROWS_AS(wire::parse_vectors(json{{"dim", 2}}, 1, 2), ProviderError);
}

TEST_CASE("remote provider against an in-process server", "[remote]") {
  World w(23);
  ProviderServer server(w.provider);
  server.start();
  RemoteProvider remote(RemoteProviderConfig{server.url(), 256, 5.0, 2, 1});

  const json h = remote.health();
  REQUIRE(h["status"] == "ok");
  REQUIRE(h["dim"] == 256);

  const std::vector<std::string> texts{"car", "From the perspective of truck, car in front of truck.", "bus"};
  REQUIRE(remote.embed_text(texts) == w.provider.embed_text(texts));

  const Frame& f = w.ds.scenes[0].frames[0];
  const auto local = gather_evidence(w.provider, f, f.annotations[0].box, true);
  const auto over_wire = gather_evidence(remote, f, f.annotations[0].box, true);
  REQUIRE(local.points == over_wire.points);
  REQUIRE(local.cameras.size() == over_wire.cameras.size());
  for (std::size_t i = 0; i < local.cameras.size(); ++i)
    REQUIRE(local.cameras[i].embedding == over_wire.cameras[i].embedding);

  SECTION("transient failures are retried") {
    server.fail_next(2);
    const std::size_t before = remote.requests_sent();
    REQUIRE(remote.embed_text({"car"}).front() == anchor(23, "car", 256));
    REQUIRE(remote.requests_sent() - before == 3);
  }
  SECTION("retries run out") {
    server.fail_next(3);
    try {
      remote.embed_text({"car"});
      FAIL("expected ProviderError");
    } catch (const ProviderError& e) {
      REQUIRE(e.retryable());
    }
  }
  SECTION("provider-side rejection is not retried") {
    const std::size_t before = remote.requests_sent();
    try {
      remote.embed_image({"no-such-image", Box2D{0, 0, 10, 10}, false});
      FAIL("expected ProviderError");
    } catch (const ProviderError& e) {
      REQUIRE_FALSE(e.retryable());
    }
    REQUIRE(remote.requests_sent() - before == 1);
    REQUIRE_THROWS_AS(remote.embed_text({" "}), ProviderError);
  }
  SECTION("dimension disagreement") {
    RemoteProvider wrong(RemoteProviderConfig{server.url(), 128, 5.0, 0, 1});
    REQUIRE_THROWS_AS(wrong.embed_text({"car"}), ProviderError);
  }
  server.stop();
}

TEST_CASE("unreachable remote provider", "[remote]") {
  int port = 0;
  {
    SyntheticProvider p(SyntheticProviderConfig{});
    ProviderServer s(p);
    port = s.start();
  }
  RemoteProvider remote(RemoteProviderConfig{"http://127.0.0.1:" + std::to_string(port), 256, 1.0, 1, 1});
  try {
    remote.embed_text({"car"});
    FAIL("expected ProviderError");
  } catch (const ProviderError& e) {
    REQUIRE(e.retryable());
  }
  REQUIRE(remote.requests_sent() == 2);
}
