#include <catch_amalgamated.hpp>

#include <cmath>

#include "oracles.hpp"
#include "ovoda/eval.hpp"
#include "ovoda/losses.hpp"

using namespace ovoda;
using Catch::Matchers::WithinAbs;

namespace {

Box3D car_at(double x, double y, double yaw = 0.0) { return Box3D(Vec3(x, y, 0.8), Vec3(4.0, 2.0, 1.6), yaw); }

EvalBox eb(const std::string& frame, const std::string& cls, const Box3D& b, double score = 1.0) {
  return EvalBox{frame, cls, b, score};
}

}  // namespace

// ---------------------------------------------------------------------------
// Matching and AP

TEST_CASE("greedy matching", "[eval]") {
  const std::vector<EvalBox> gt{eb("f", "car", car_at(0, 0)), eb("f", "car", car_at(10, 0)),
                                eb("f", "bus", car_at(20, 0))};
  const std::vector<EvalBox> dets{eb("f", "car", car_at(0.3, 0), 0.5), eb("f", "car", car_at(0.1, 0), 0.9),
                                  eb("f", "car", car_at(20, 0), 0.8), eb("f", "car", car_at(13, 0), 0.7)};
  const auto m = match(gt, dets, MatchConfig::Kind::CenterDistance, 1.0);
  REQUIRE(m == std::vector<int>{-1, 0, -1, -1});
  REQUIRE(match(gt, dets, MatchConfig::Kind::CenterDistance, 4.0) == std::vector<int>{-1, 0, -1, 1});

  const auto mi = match(gt, dets, MatchConfig::Kind::Iou, 0.5);
  REQUIRE(mi[1] == 0);
  REQUIRE(mi[0] == -1);

  // Equal scores keep input order.
  const std::vector<EvalBox> tie{eb("f", "car", car_at(0.2, 0), 0.5), eb("f", "car", car_at(0.1, 0), 0.5)};
  REQUIRE(match({gt[0]}, tie, MatchConfig::Kind::CenterDistance, 1.0) == std::vector<int>{0, -1});
}

TEST_CASE("average precision fixtures", "[eval]") {
  REQUIRE(average_precision({{0.9, true}, {0.8, false}}, 2) == 0.5);
  REQUIRE(average_precision({{0.9, true}, {0.8, true}}, 2) == 1.0);
  REQUIRE(average_precision({{0.9, false}, {0.8, true}}, 1) == 0.5);
  REQUIRE(average_precision({}, 3) == 0.0);
  REQUIRE(average_precision({{0.9, true}}, 0) == 0.0);
  // Order is by score, not by position.
  REQUIRE(average_precision({{0.1, false}, {0.9, true}}, 1) == 1.0);
  // tp/fp/tp over 3 ground truths: 33 grid points at 1, 33 at 2/3, recall stops at 2/3.
  REQUIRE_THAT(average_precision({{0.9, true}, {0.8, false}, {0.7, true}}, 3), WithinAbs(0.55, 1e-12));
}

TEST_CASE("detection evaluation over thresholds and classes", "[eval]") {
  const std::vector<EvalBox> gt{eb("a", "car", car_at(0, 0)), eb("b", "car", car_at(0, 0)),
                                eb("a", "bus", car_at(30, 0))};
  const std::vector<EvalBox> dets{eb("a", "car", car_at(0.7, 0), 0.9), eb("b", "car", car_at(3.0, 0), 0.8),
                                  eb("b", "bus", car_at(30, 0), 0.9)};
  const auto r = evaluate_detection(gt, dets, MatchConfig::center_distance(), {"car", "bus", "truck"});
  // car: threshold 0.5 -> 0, 1.0 -> 0.5, 2.0 -> 0.5, 4.0 -> 1.0
  REQUIRE_THAT(r.ap.at("car"), WithinAbs(0.5, 1e-12));
  REQUIRE(r.ap.at("bus") == 0.0);  // detection is in the wrong frame
  REQUIRE(r.skipped == std::vector<std::string>{"truck"});
  REQUIRE_THAT(r.mAP, WithinAbs(0.25, 1e-12));
  REQUIRE_THROWS_AS(evaluate_detection(gt, dets, MatchConfig{MatchConfig::Kind::Iou, {1.5}}, {"car"}), ConfigError);
}

TEST_CASE("AP over novel classes", "[eval]") {
  const std::map<std::string, double> ap{{"a", 0.2}, {"b", 0.4}, {"c", 0.9}};
  REQUIRE_THAT(ap_novel(ap, {"a", "b"}), WithinAbs(0.3, 1e-15));
  REQUIRE_THAT(ap_novel(ap, {"a", "b", "zz"}), WithinAbs(0.3, 1e-15));
  REQUIRE_THROWS_AS(ap_novel(ap, {"zz"}), EmptyNovelSet);
}

TEST_CASE("NDS-lite and TP errors", "[eval]") {
  REQUIRE(nds_lite(0.5, {0.5, 0.5, 0.5}) == 0.5);
  REQUIRE(nds_lite(1.0, {0.0, 0.0, 0.0}) == 1.0);
  REQUIRE_THAT(nds_lite(0.0, {2.0, 3.0, 0.0}), WithinAbs(1.0 / 8.0, 1e-15));
  REQUIRE(nds_lite(0.4, {}) == 0.4);

  const std::vector<EvalBox> gt{eb("f", "car", car_at(0, 0)), eb("f", "car", car_at(10, 0))};
  const std::vector<EvalBox> dets{eb("f", "car", Box3D(Vec3(0.6, 0.8, 0.8), Vec3(4.0, 2.0, 1.6), 0.2)),
                                  eb("f", "car", Box3D(Vec3(10, 0, 0.8), Vec3(2.0, 2.0, 1.6), -0.4))};
  const TpErrors e = tp_errors(gt, dets);
  REQUIRE(e.tp == 2);
  REQUIRE_THAT(e.ate, WithinAbs(0.5, 1e-12));
  REQUIRE_THAT(e.ase, WithinAbs(0.25, 1e-12));
  REQUIRE_THAT(e.aoe, WithinAbs(0.3, 1e-12));
  REQUIRE_THAT(yaw_difference(3.0, -3.0), WithinAbs(2 * oracle::kPi - 6.0, 1e-12));

  const TpErrors none = tp_errors(gt, {});
  REQUIRE(none.tp == 0);
  REQUIRE(none.ate == 1.0);
}

TEST_CASE("attribute success rates", "[eval]") {
  const std::vector<AttributeItem> gt{{"1", "standing"}, {"2", "moving"}, {"3", "parked"}, {"4", "parked"}};
  std::map<std::string, AttributePrediction> pred{
      {"1", {"standing", 0.9}}, {"2", {"moving", 0.7}}, {"3", {"parked", 0.6}}, {"4", {"moving", 0.9}}};
  REQUIRE(sr_ad_only(gt, pred) == 0.75);
  pred["4"] = {"parked", 0.5};
  REQUIRE(sr_ad_only(gt, pred) == 0.75);  // probability must exceed the threshold
  pred["4"] = {"parked", 0.51};
  REQUIRE(sr_ad_only(gt, pred) == 1.0);
  REQUIRE(sr_ad_only({}, pred) == 0.0);
  REQUIRE(sr_ad_only(gt, {}) == 0.0);
}

TEST_CASE("attribute success with localization", "[eval]") {
  const Box3D a = car_at(0, 0), b = car_at(5, 0);
  EventRecord g{"f", true, {"car", "truck"}, {a, b}, combine(a, b), "behind", 1.0};
  EventRecord p = g;
  p.prob = 0.9;
  REQUIRE(sr_ad_od({g}, {p}) == 1.0);

  EventRecord shifted = p;
  shifted.boxes[1] = car_at(7.5, 0);
  shifted.union_box = combine(shifted.boxes[0], shifted.boxes[1]);
  REQUIRE(iou3d(g.boxes[1], shifted.boxes[1]) < 0.5);
  REQUIRE(sr_ad_od({g}, {shifted}) == 0.0);

  EventRecord swapped = p;
  std::swap(swapped.classes[0], swapped.classes[1]);
  REQUIRE(sr_ad_od({g}, {swapped}) == 0.0);

  EventRecord other_frame = p;
  other_frame.frame_key = "h";
  REQUIRE(sr_ad_od({g}, {other_frame}) == 0.0);

  EventRecord wrong_attr = p;
  wrong_attr.attribute = "in front of";
  REQUIRE(sr_ad_od({g, g}, {wrong_attr, p}) == 1.0);
  REQUIRE(sr_ad_od({g}, {wrong_attr}) == 0.0);

  EventRecord nonspatial{"f", false, {"car"}, {a}, a, "vehicle.parked", 0.8};
  REQUIRE(sr_ad_od({g, nonspatial}, {p}) == 0.5);
}

// ---------------------------------------------------------------------------
// Losses

TEST_CASE("distillation loss values and gradient", "[losses]") {
  FeatureBatch v(2, 2), f(2, 2);
  v << 1, 2, 0, -1;
  f << 0, 4, 0, 1;
  FeatureBatch g;
  REQUIRE(l_od(v, f, &g) == 5.0);
  FeatureBatch expected(2, 2);
  expected << 1, -1, 0, -1;
  REQUIRE(g == expected);
  REQUIRE(l_ad(v, v) == 0.0);
  REQUIRE_THROWS_AS(l_od(v, FeatureBatch(3, 2)), ShapeMismatch);
}

TEST_CASE("classification losses count only boxes inside the base set", "[losses]") {
  const Box3D base = car_at(0, 0);
  const std::vector<Box3D> discovered{car_at(0.2, 0), car_at(30, 0)};
  const std::vector<Distribution> dists{{{0.5, 0.5}, "v"}, {{0.1, 0.9}, "v"}};
  REQUIRE(membership_indicator(discovered, {base}) == std::vector<double>{1.0, 0.0});
  REQUIRE_THAT(l_oc(discovered, {base}, dists, {0, 0}), WithinAbs(std::log(2.0), 1e-15));

  std::vector<Distribution> changed = dists;
  changed[1] = Distribution{{1e-30, 1.0}, "v"};
  REQUIRE(l_oc(discovered, {base}, changed, {0, 0}) == l_oc(discovered, {base}, dists, {0, 0}));
  REQUIRE(l_ac(discovered, {}, dists, {0, 0}) == 0.0);

  // The clamp keeps the loss finite.
  const std::vector<Distribution> zero{{{0.0, 1.0}, "v"}};
  REQUIRE_THAT(weighted_ce(zero, {0}, {1.0}), WithinAbs(-std::log(1e-12), 1e-9));
  REQUIRE_THROWS_AS(weighted_ce(zero, {5}, {1.0}), ShapeMismatch);
  REQUIRE_THROWS_AS(l_oc(discovered, {base}, zero, {0}), ShapeMismatch);
}

TEST_CASE("feature-form cross entropy matches the distribution form", "[losses]") {
  Eigen::MatrixXd text(3, 2);
  text << 1, 0, 0, 1, -1, 0;
  FeatureBatch v(2, 2);
  v << 0.3, 0.1, -0.2, 0.4;
  const std::vector<std::size_t> targets{0, 1};
  const std::vector<double> ind{1.0, 1.0};
  std::vector<Distribution> dists;
  for (int j = 0; j < 2; ++j) dists.push_back(classify({v(j, 0), v(j, 1)}, text, 0.1));
  REQUIRE_THAT(weighted_ce_features(v, text, 0.1, targets, ind), WithinAbs(weighted_ce(dists, targets, ind), 1e-12));
  REQUIRE_THAT(weighted_ce_features(v, text, 0.1, targets, {0.0, 1.0}),
               WithinAbs(-std::log(dists[1].probs[1]), 1e-12));
}

TEST_CASE("total loss and weights", "[losses]") {
  const LossParts p{1.0, 2.0, 3.0, 4.0};
  REQUIRE(total_loss(p, LossWeights{}) == 10.0);
  REQUIRE(total_loss(p, LossWeights{1.0, 0.5, 2.0, 0.25}) == 1.0 + 1.0 + 6.0 + 1.0);
  REQUIRE_THROWS_AS(total_loss(LossParts{NAN, 0, 0, 0}, LossWeights{}), NonFiniteGradient);
  REQUIRE_THROWS_AS(LossWeights{-1.0}.validate(), ConfigError);
}

TEST_CASE("analytic gradients agree with central differences", "[losses]") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const LossProblem p = random_loss_problem(seed, 4, 16, 6, 12);
    const LossGradCheck c = check_loss_gradients(p, LossWeights{1.0, 0.5, 2.0, 0.25});
    INFO("seed " << seed);
    REQUIRE(c.worst() <= 1e-4);
  }
}
