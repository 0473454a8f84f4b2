#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "oracles.hpp"
#include "ovoda/config.hpp"
#include "ovoda/ovad.hpp"
#include "ovoda/proposals.hpp"
#include "ovoda/scene.hpp"
#include "ovoda/vocabulary.hpp"

using namespace ovoda;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("ovoda_unit_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

SceneDataset small_dataset(std::uint64_t seed = 7, int frames = 2, int objects = 4) {
  SynthConfig c;
  c.frames = frames;
  c.objects = objects;
  c.novel_quota = 1;
  c.background_points = 50;
  c.points_per_object = 16;
  return generate_synthetic(c, seed);
}

Annotation ann(const std::string& id, const std::string& cls, double x, double y) {
  Annotation a;
  a.instance_id = id;
  a.class_name = cls;
  a.box = Box3D(Vec3(x, y, 0.8), Vec3(4.0, 2.0, 1.6), 0.0);
  return a;
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocabulary and prompts

TEST_CASE("preset vocabularies", "[vocab]") {
  const auto v = nuscenes_ovad_vocabulary();
  REQUIRE_NOTHROW(v.validate());
  REQUIRE(training_vocab(v, Family::Object).size() == 16);
  REQUIRE(testing_vocab(v, Family::Object).size() == 10);
  REQUIRE(testing_vocab(v, Family::Attribute).size() == 12);
  REQUIRE(training_vocab(v, Family::Object) == training_vocab(v, Family::Object));

  const auto train = training_vocab(v, Family::Object);
  for (const auto& c : testing_vocab(v, Family::Object))
    REQUIRE(std::find(train.begin(), train.end(), c) != train.end());
  // Base block first, each block alphabetical.
  REQUIRE(train.front() == "barrier");
  REQUIRE(train[6] == "bus");

  Vocabulary no_extra = v;
  no_extra.extra_objects.clear();
  REQUIRE(training_vocab(no_extra, Family::Object) == testing_vocab(no_extra, Family::Object));

  const auto av2 = argoverse2_ovad_vocabulary();
  REQUIRE_NOTHROW(av2.validate());
  REQUIRE(testing_vocab(av2, Family::Object).size() == 8);
  REQUIRE_FALSE(preset_vocabulary("kitti").has_value());
}

TEST_CASE("vocabulary validation and file round trip", "[vocab]") {
  auto v = nuscenes_ovad_vocabulary();
  const Vocabulary back = vocabulary_from_json(vocabulary_to_json(v));
  REQUIRE(back.base_objects == v.base_objects);
  REQUIRE(back.compat == v.compat);
  REQUIRE(back.class_groups == v.class_groups);

  v.novel_objects.push_back("car");
  REQUIRE_THROWS_AS(v.validate(), ValidationError);
  v = nuscenes_ovad_vocabulary();
  v.novel_attributes.push_back("vehicle.flying");
  REQUIRE_THROWS_WITH(v.validate(), ContainsSubstring("vehicle.flying"));
}

TEST_CASE("non-spatial prompts", "[vocab]") {
  const auto v = nuscenes_ovad_vocabulary();
  REQUIRE(render_nonspatial(v, "pedestrian", "standing") == "pedestrian standing");
  REQUIRE(render_nonspatial(v, "pedestrian", "pedestrian.sitting_lying_down") == "pedestrian sitting lying down");
  REQUIRE(render_nonspatial(v, "bicycle", "without rider") == "bicycle without rider");
  REQUIRE(render_nonspatial(v, "bus", "vehicle.moving") == "bus moving");
  REQUIRE_THROWS_AS(render_nonspatial(v, "car", "with rider"), IncompatibleAttribute);
  REQUIRE_THROWS_AS(render_nonspatial(v, "barrier", "parked"), IncompatibleAttribute);
  REQUIRE_THROWS_AS(render_nonspatial(v, "car", "behind"), IncompatibleAttribute);
}

TEST_CASE("spatial prompts", "[vocab]") {
  REQUIRE(render_spatial("car", "truck", SpatialRelation::InFrontOf) ==
          "From the perspective of truck, car in front of truck.");
  PromptConfig plain;
  plain.perspective_prefix = false;
  REQUIRE(render_spatial("pedestrian", "car", SpatialRelation::OnLeftOf, plain) == "pedestrian on the left of car.");
  REQUIRE(render_ovad_label("car", "truck", SpatialRelation::Behind) == "car behind truck");

  std::set<std::string> labels;
  for (auto r : kAllRelations) labels.insert(render_ovad_label("car", "car", r));
  REQUIRE(labels.size() == 4);

  const std::vector<std::pair<std::string, std::string>> pairs{
      {"car", "truck"}, {"pedestrian", "bus"}, {"traffic cone", "construction vehicle"}, {"bicycle", "bicycle"},
      {"motorcycle", "barrier"}};
  for (const PromptConfig& cfg : {PromptConfig{}, plain})
    for (const auto& [s, r] : pairs)
      for (auto rel : kAllRelations) {
        const auto parsed = parse_spatial(render_spatial(s, r, rel, cfg), cfg);
        REQUIRE(parsed.has_value());
        REQUIRE(*parsed == ParsedSpatial{s, r, rel});
      }
  REQUIRE_FALSE(parse_spatial("car next to truck.", plain).has_value());
}

TEST_CASE("prompt config requires placeholders", "[vocab]") {
  PromptConfig cfg;
  cfg.nonspatial_template = "{class}";
  REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
}

// ---------------------------------------------------------------------------
// Scene I/O and the synthetic generator

TEST_CASE("synthetic generation is deterministic", "[scene]") {
  const auto a = small_dataset(7), b = small_dataset(7), c = small_dataset(8);
  REQUIRE(serialize_dataset(a) == serialize_dataset(b));
  REQUIRE(serialize_dataset(a) != serialize_dataset(c));
  REQUIRE_NOTHROW(validate_dataset(a, nuscenes_ovad_vocabulary()));
}

TEST_CASE("write then load gives an equal dataset", "[scene]") {
  const auto dir = scratch_dir("roundtrip");
  const auto ds = small_dataset(3, 3, 5);
  const std::string path = (dir / "scene.json").string();
  write_dataset(ds, path);
  const auto back = load_dataset(path);
  REQUIRE(back == ds);
  const std::string first = read_text_file(path);
  write_dataset(back, path);
  REQUIRE(read_text_file(path) == first);
}

TEST_CASE("dataset with one annotation has one annotation record", "[scene]") {
  SceneDataset ds;
  ds.vocabulary_ref = "nuscenes-ovad";
  Scene s;
  s.token = "only";
  Frame f;
  f.timestamp_us = 1;
  f.annotations.push_back(ann("a0", "car", 5, 0));
  s.frames.push_back(f);
  ds.scenes.push_back(s);
  const std::string text = serialize_dataset(ds);
  std::size_t n = 0;
  for (auto pos = text.find("\"instance_id\""); pos != std::string::npos; pos = text.find("\"instance_id\"", pos + 1))
    ++n;
  REQUIRE(n == 1);
  REQUIRE(dataset_from_json(parse_json(text, "mem")) == ds);
}

TEST_CASE("loader reports schema and validation errors", "[scene]") {
  const auto ds = small_dataset(5, 2, 3);
  json j = dataset_to_json(ds);

  json bad_yaw = j;
  bad_yaw["scenes"][0]["frames"][1]["annotations"][0]["box"]["yaw"] = "NaN";
  const std::string id = ds.scenes[0].frames[1].annotations[0].instance_id;
  REQUIRE_THROWS_AS(dataset_from_json(bad_yaw), ValidationError);
  REQUIRE_THROWS_WITH(dataset_from_json(bad_yaw), ContainsSubstring(id));

  json missing = j;
  missing["scenes"][0]["frames"][0].erase("cloud");
  REQUIRE_THROWS_AS(dataset_from_json(missing), SchemaError);
  REQUIRE_THROWS_WITH(dataset_from_json(missing), ContainsSubstring("/scenes/0/frames/0"));

  json wrong_type = j;
  wrong_type["scenes"][0]["frames"][0]["timestamp_us"] = "soon";
  REQUIRE_THROWS_AS(dataset_from_json(wrong_type), SchemaError);

  json wrong_schema = j;
  wrong_schema["schema"] = "ovoda-scene/0";
  REQUIRE_THROWS_AS(dataset_from_json(wrong_schema), SchemaError);

  SceneDataset out_of_order = ds;
  out_of_order.scenes[0].frames[1].timestamp_us = out_of_order.scenes[0].frames[0].timestamp_us;
  REQUIRE_THROWS_AS(validate_dataset(out_of_order, nuscenes_ovad_vocabulary()), ValidationError);

  SceneDataset unknown_class = ds;
  unknown_class.scenes[0].frames[0].annotations[0].class_name = "spaceship";
  REQUIRE_THROWS_WITH(validate_dataset(unknown_class, nuscenes_ovad_vocabulary()), ContainsSubstring("spaceship"));

  SceneDataset bad_attr = ds;
  bad_attr.scenes[0].frames[0].annotations[0].class_name = "barrier";
  bad_attr.scenes[0].frames[0].annotations[0].attributes = {"vehicle.parked"};
  REQUIRE_THROWS_AS(validate_dataset(bad_attr, nuscenes_ovad_vocabulary()), ValidationError);

  REQUIRE_THROWS_AS(load_dataset("/nonexistent/scene.json"), IoError);
}

TEST_CASE("synthetic scene properties", "[scene]") {
  SynthConfig c;
  c.frames = 6;
  c.objects = 10;
  c.novel_quota = 3;
  const auto ds = generate_synthetic(c, 21);
  const auto vocab = nuscenes_ovad_vocabulary();
  const auto& frames = ds.scenes[0].frames;
  REQUIRE(frames.size() == 6);
  for (const auto& f : frames) {
    REQUIRE(f.annotations.size() == 10);
    REQUIRE(f.cameras.size() == 6);
    std::size_t novel = 0;
    for (const auto& a : f.annotations) novel += vocab.is_novel_object(a.class_name);
    REQUIRE(novel == 3);
    for (std::size_t i = 0; i < f.annotations.size(); ++i) {
      REQUIRE(crop_points(f.annotations[i].box, f.cloud).size() >= static_cast<std::size_t>(c.points_per_object));
      for (std::size_t j = i + 1; j < f.annotations.size(); ++j)
        REQUIRE(iou3d(f.annotations[i].box, f.annotations[j].box) <= 0.1);
    }
    for (const auto& cam : f.cameras) REQUIRE_NOTHROW(cam.model.validate());
  }
  for (std::size_t k = 1; k < frames.size(); ++k) {
    REQUIRE(frames[k].timestamp_us - frames[k - 1].timestamp_us == 500000);
    for (std::size_t i = 0; i < frames[k].annotations.size(); ++i) {
      const auto& now = frames[k].annotations[i];
      const auto& before = frames[k - 1].annotations[i];
      REQUIRE(now.instance_id == before.instance_id);
      const double step = bev_center_distance(now.box, before.box);
      REQUIRE(now.velocity.has_value());
      REQUIRE_THAT(step, WithinAbs(now.velocity->norm() * c.dt, 1e-5));
      for (const auto& attr : now.attributes) {
        if (attr.ends_with(".moving")) REQUIRE(step > 0.5 * c.dt);
        if (attr.ends_with(".parked") || attr.ends_with(".stopped") || attr.ends_with(".standing"))
          REQUIRE(step <= 0.1 * c.dt);
      }
    }
  }
}

TEST_CASE("synthetic kinematics: 2 m/s for 0.5 s is 1 m", "[scene]") {
  SynthConfig c;
  c.frames = 3;
  c.objects = 12;
  c.novel_quota = 0;
  const auto ds = generate_synthetic(c, 4);
  bool saw_moving = false;
  for (std::size_t i = 0; i < ds.scenes[0].frames[0].annotations.size(); ++i) {
    const auto& a0 = ds.scenes[0].frames[0].annotations[i];
    const auto& a1 = ds.scenes[0].frames[1].annotations[i];
    const double speed = a0.velocity->norm();
    if (speed == 0.0) continue;
    saw_moving = true;
    REQUIRE_THAT(bev_center_distance(a0.box, a1.box) / speed, WithinAbs(0.5, 1e-5));
  }
  REQUIRE(saw_moving);
}

TEST_CASE("synthetic edge cases", "[scene]") {
  SynthConfig c;
  c.objects = 0;
  c.novel_quota = 0;
  c.frames = 2;
  const auto ds = generate_synthetic(c, 1);
  for (const auto& f : ds.scenes[0].frames) {
    REQUIRE(f.annotations.empty());
    REQUIRE(f.cloud.size() == static_cast<std::size_t>(c.background_points));
  }
  SynthConfig crowded;
  crowded.objects = 400;
  crowded.novel_quota = 0;
  crowded.arena_half_size = 5;
  crowded.frames = 1;
  REQUIRE_THROWS_AS(generate_synthetic(crowded, 1), ConfigError);
  SynthConfig bad;
  bad.cameras = 0;
  REQUIRE_THROWS_AS(generate_synthetic(bad, 1), ConfigError);
}

// ---------------------------------------------------------------------------
// Proposals

TEST_CASE("zero-noise proposer reproduces ground truth", "[proposals]") {
  const auto ds = small_dataset(9, 2, 5);
  NoiseConfig n;
  n.background = 3;
  const auto& frame = ds.scenes[0].frames[0];
  const auto props = synth_proposer(frame, n, 1, "k");
  REQUIRE(props.size() == 8);
  for (std::size_t i = 0; i < frame.annotations.size(); ++i) {
    REQUIRE(props[i].box == frame.annotations[i].box);
    REQUIRE(props[i].objectness == 1.0);
    const auto a = anchor(0, frame.annotations[i].class_name, 256);
    for (std::size_t k = 0; k < a.size(); ++k) REQUIRE(std::fabs(props[i].feature[k] - a[k]) <= 5e-7);
  }
  for (std::size_t i = frame.annotations.size(); i < props.size(); ++i) {
    REQUIRE(props[i].objectness <= 0.3);
    for (const auto& a : frame.annotations) REQUIRE(iou3d(props[i].box, a.box) == 0.0);
  }
  REQUIRE(synth_proposer(frame, n, 1, "k") == props);
}

TEST_CASE("proposer center noise statistic", "[proposals]") {
  // 1000 annotations; the mean norm of a 3D isotropic gaussian offset is
  // sigma * 2 * sqrt(2 / pi).
  const Frame f = oracle::random_frame(77, 1000, 200.0, {"car"});
  NoiseConfig n;
  n.center_sigma = 0.2;
  n.background = 0;
  n.det_dim = 4;
  const auto props = synth_proposer(f, n, 5, "stat");
  REQUIRE(props.size() == 128);  // capped
  NoiseConfig uncapped = n;
  double sum = 0.0;
  std::size_t count = 0;
  // Re-run in chunks below the cap so every annotation is measured.
  for (std::size_t start = 0; start < f.annotations.size(); start += 100) {
    Frame chunk;
    chunk.annotations.assign(f.annotations.begin() + start, f.annotations.begin() + start + 100);
    const auto ps = synth_proposer(chunk, uncapped, 5, "stat" + std::to_string(start));
    for (std::size_t i = 0; i < ps.size(); ++i) {
      sum += (ps[i].box.center() - chunk.annotations[i].box.center()).norm();
      ++count;
    }
  }
  REQUIRE(count == 1000);
  const double expected = 0.2 * 2.0 * std::sqrt(2.0 / std::numbers::pi);
  REQUIRE_THAT(sum / 1000.0, WithinRel(expected, 0.1));
}

TEST_CASE("noisy proposals keep overlapping their source", "[proposals]") {
  const auto ds = small_dataset(12, 1, 8);
  NoiseConfig n;
  n.center_sigma = 0.1;
  n.size_sigma = 0.05;
  n.yaw_sigma = 0.05;
  const auto props = synth_proposer(ds.scenes[0].frames[0], n, 3, "x");
  std::set<std::int64_t> ids;
  for (std::size_t i = 0; i < props.size(); ++i) {
    REQUIRE(ids.insert(props[i].proposal_id).second);
    if (i < 8) {
      REQUIRE(iou3d(props[i].box, ds.scenes[0].frames[0].annotations[i].box) > 0.0);
      REQUIRE(props[i].objectness < 1.0);
    }
  }
}

TEST_CASE("proposal JSONL round trip and validation", "[proposals]") {
  const auto ds = small_dataset(2, 2, 3);
  NoiseConfig n;
  n.center_sigma = 0.1;
  n.det_dim = 8;
  const ProposalSet set = synth_proposals(ds, n, 4);
  const std::string text = serialize_proposals(ds, set);
  REQUIRE(parse_proposals(text, ds, 8) == set);

  const std::string token = ds.scenes[0].token;
  const std::string feature = "[0,0,0,0,0,0,0,0]";
  const std::string box = R"({"center":[1,2,0.5],"size":[2,1,1],"yaw":0})";
  const auto rec = [&](int id, double q, int frame = 0, const std::string& f = "") {
    return R"({"scene":")" + token + R"(","frame":)" + std::to_string(frame) + R"(,"proposal_id":)" +
           std::to_string(id) + R"(,"box":)" + box + R"(,"objectness":)" + std::to_string(q) + R"(,"feature":)" +
           (f.empty() ? feature : f) + "}\n";
  };
  const auto three = parse_proposals(rec(0, 0.5) + rec(1, 0.6) + rec(2, 0.7), ds, 8);
  REQUIRE(three[0][0].size() == 3);
  REQUIRE(three[0][1].empty());
  REQUIRE_THROWS_AS(parse_proposals(rec(0, 1.2), ds, 8), ValidationError);
  REQUIRE_THROWS_AS(parse_proposals(rec(0, 0.5, 9), ds, 8), ValidationError);
  REQUIRE_THROWS_AS(parse_proposals(rec(0, 0.5) + rec(0, 0.5), ds, 8), ValidationError);
  REQUIRE_THROWS_AS(parse_proposals(rec(0, 0.5, 0, "[1,2]"), ds, 8), ValidationError);
  REQUIRE_THROWS_AS(parse_proposals("{not json\n", ds, 8), SchemaError);
}

TEST_CASE("proposal cap keeps the highest objectness", "[proposals]") {
  std::vector<ObjectProposal> ps;
  for (int i = 0; i < 200; ++i) ps.push_back({i, Box3D(), (i % 10) / 10.0, {}});
  cap_proposals(ps);
  REQUIRE(ps.size() == kMaxProposalsPerFrame);
  for (const auto& p : ps) REQUIRE(p.objectness >= 0.3);
}

// ---------------------------------------------------------------------------
// OVAD builder

TEST_CASE("OVAD pairs", "[ovad]") {
  Frame f;
  f.annotations = {ann("a", "car", 0, 0), ann("b", "truck", 5, 0), ann("c", "pedestrian", 0, 5)};
  const auto pairs = build_ovad_frame(f, "s", 0);
  REQUIRE(pairs.size() == 3);
  REQUIRE(pairs[0].id_i == "a");
  REQUIRE(pairs[0].id_j == "b");
  REQUIRE(pairs[0].relation == SpatialRelation::Behind);
  REQUIRE(pairs[0].label_text == "car behind truck");
  REQUIRE(pairs[2].label_text == "truck in front of pedestrian");
  REQUIRE(oracle::covers_corners(pairs[0].union_box, f.annotations[0].box));

  Frame edge;
  edge.annotations = {ann("p", "car", 0, 0), ann("q", "car", 15.0, 0), ann("r", "car", -15.5, 0)};
  const auto e = build_ovad_frame(edge, "s", 0);
  REQUIRE(e.size() == 1);
  REQUIRE(e[0].id_j == "q");

  Frame stacked;
  stacked.annotations = {ann("x", "car", 1, 1), ann("y", "bus", 1, 1)};
  std::size_t skipped = 0;
  REQUIRE(build_ovad_frame(stacked, "s", 0, 15.0, &skipped).empty());
  REQUIRE(skipped == 1);
}

TEST_CASE("OVAD over a dataset matches brute force", "[ovad]") {
  SynthConfig c;
  c.frames = 4;
  c.objects = 9;
  const auto ds = generate_synthetic(c, 31);
  OvadSummary sum;
  const auto pairs = build_ovad(ds, 15.0, &sum);
  std::size_t brute = 0;
  for (const auto& f : ds.scenes[0].frames) brute += oracle::ovad_pairs(f, 15.0).size();
  REQUIRE(pairs.size() == brute);
  REQUIRE(sum.pairs == brute);
  REQUIRE(sum.frames == 4);
  std::size_t rel_total = 0;
  for (const auto& [k, v] : sum.relation_counts) rel_total += v;
  REQUIRE(rel_total == brute);
  const json rec = ovad_pair_to_json(pairs.front());
  for (const char* key : {"frame", "id_i", "id_j", "union_box", "relation", "label_text"}) REQUIRE(rec.contains(key));
}

// ---------------------------------------------------------------------------
// Config

TEST_CASE("config defaults and overrides", "[config]") {
  const RunConfig d = resolve_config("", {});
  REQUIRE(d.seed == 7);
  REQUIRE(d.pipeline.T == 2);
  REQUIRE(d.pipeline.temperature == 0.05);
  REQUIRE(d.pipeline.thresholds.theta_o == 0.8);
  REQUIRE(d.provider_seed() == 7);

  const RunConfig o = resolve_config("", {"seed=11", "events.T=3", "provider.noise=0.25", "prompt.psp=false",
                                          "out=\"runs/a\"", "provider.kind=remote", "eval.matcher=iou",
                                          "eval.thresholds=[0.5]"});
  REQUIRE(o.seed == 11);
  REQUIRE(o.pipeline.fusion_seed == 11);
  REQUIRE(o.pipeline.T == 3);
  REQUIRE(o.provider.noise == 0.25);
  REQUIRE_FALSE(o.pipeline.prompt.perspective_prefix);
  REQUIRE(o.out == "runs/a");
  REQUIRE(o.provider.kind == "remote");
  REQUIRE(o.eval.match.kind == MatchConfig::Kind::Iou);

  const json eff = config_to_json(o);
  REQUIRE(eff["seed"] == 11);
  REQUIRE(config_from_json(eff).seed == 11);
}

TEST_CASE("config rejects bad input", "[config]") {
  REQUIRE_THROWS_WITH(resolve_config("", {"colour=red"}), ContainsSubstring("colour"));
  REQUIRE_THROWS_WITH(resolve_config("", {"events.window=3"}), ContainsSubstring("events.window"));
  REQUIRE_THROWS_AS(resolve_config("", {"events.T=\"two\""}), ConfigError);
  REQUIRE_THROWS_AS(resolve_config("", {"thresholds.theta_b=1.5"}), ConfigError);
  REQUIRE_THROWS_AS(resolve_config("", {"provider.kind=magic"}), ConfigError);
  REQUIRE_THROWS_AS(resolve_config("", {"alignment.temperature=0"}), ConfigError);
  REQUIRE_THROWS_AS(resolve_config("", {"losses.w_od=-1"}), ConfigError);
  REQUIRE_THROWS_AS(resolve_config("", {"eval.thresholds=[2, 1]"}), ConfigError);
  REQUIRE_THROWS_AS(resolve_config("", {"noequals"}), ConfigError);
  REQUIRE_THROWS_AS(resolve_config("/nonexistent/config.json", {}), ConfigError);
}

TEST_CASE("config file with overrides on top", "[config]") {
  const auto dir = scratch_dir("config");
  const std::string path = (dir / "run.json").string();
  write_text_file(path, R"({"seed": 3, "events": {"T": 1}, "provider": {"dim": 64}})");
  const RunConfig c = resolve_config(path, {"events.T=4"});
  REQUIRE(c.seed == 3);
  REQUIRE(c.pipeline.T == 4);
  REQUIRE(c.provider.dim == 64);
  REQUIRE(c.pipeline.hfa);
}
