#pragma once

// Oriented 3D box algebra in a shared world frame (z up, yaw about +z).

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "ovoda/errors.hpp"

namespace ovoda {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

/// Wraps an angle into (-pi, pi].
inline double normalize_yaw(double yaw) {
  double r = std::remainder(yaw, 2.0 * std::numbers::pi);
  if (r <= -std::numbers::pi) r += 2.0 * std::numbers::pi;
  return r;
}

/// Oriented box: center, size (length along heading, width, height), yaw.
/// Always valid: the constructor rejects non-finite values and non-positive
/// sizes, and stores yaw normalized into (-pi, pi].
class Box3D {
 public:
  Box3D() : Box3D(Vec3::Zero(), Vec3::Ones(), 0.0) {}

  Box3D(const Vec3& center, const Vec3& size, double yaw) : center_(center), size_(size) {
    if (!center.allFinite()) throw ValidationError("box center is not finite");
    if (!size.allFinite() || (size.array() <= 0.0).any())
      throw ValidationError("box size must be finite and positive");
    if (!std::isfinite(yaw)) throw ValidationError("box yaw is not finite");
    yaw_ = normalize_yaw(yaw);
  }

  const Vec3& center() const { return center_; }
  const Vec3& size() const { return size_; }
  double yaw() const { return yaw_; }
  double length() const { return size_.x(); }
  double width() const { return size_.y(); }
  double height() const { return size_.z(); }
  double volume() const { return size_.prod(); }
  double z_min() const { return center_.z() - 0.5 * size_.z(); }
  double z_max() const { return center_.z() + 0.5 * size_.z(); }

  /// World point expressed in the box frame (x along heading, y left).
  Vec3 to_local(const Vec3& p) const {
    const double c = std::cos(yaw_), s = std::sin(yaw_);
    const Vec3 d = p - center_;
    return {c * d.x() + s * d.y(), -s * d.x() + c * d.y(), d.z()};
  }

  /// Strict interior test.
  bool contains(const Vec3& p) const {
    const Vec3 l = to_local(p);
    return std::abs(l.x()) < 0.5 * size_.x() && std::abs(l.y()) < 0.5 * size_.y() &&
           std::abs(l.z()) < 0.5 * size_.z();
  }

  friend bool operator==(const Box3D& a, const Box3D& b) {
    return a.center_ == b.center_ && a.size_ == b.size_ && a.yaw_ == b.yaw_;
  }

 private:
  Vec3 center_;
  Vec3 size_;
  double yaw_ = 0.0;
};

/// Pixel rectangle.
struct Box2D {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  friend bool operator==(const Box2D&, const Box2D&) = default;
};

inline double iou2d(const Box2D& a, const Box2D& b) {
  const double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  const double inter = w * h;
  return inter / (a.area() + b.area() - inter);
}

/// Pinhole camera. Extrinsics map world to camera coordinates; the camera
/// frame is x right, y down, z forward (depth).
struct CameraModel {
  std::string camera_id;
  Eigen::Matrix3d intrinsics = Eigen::Matrix3d::Identity();
  Eigen::Matrix4d extrinsics = Eigen::Matrix4d::Identity();
  int width = 0;
  int height = 0;

  Vec3 to_camera(const Vec3& p) const {
    return extrinsics.topLeftCorner<3, 3>() * p + extrinsics.topRightCorner<3, 1>();
  }

  /// Heading of the optical axis in the world xy-plane, radians.
  double azimuth() const {
    const Vec3 forward = extrinsics.topLeftCorner<3, 3>().transpose() * Vec3::UnitZ();
    return std::atan2(forward.y(), forward.x());
  }

  /// Throws ValidationError when intrinsics/extrinsics are malformed.
  void validate() const {
    const auto& k = intrinsics;
    if (!k.allFinite() || !extrinsics.allFinite())
      throw ValidationError("camera '" + camera_id + "' has non-finite matrices");
    if (k(1, 0) != 0.0 || k(2, 0) != 0.0 || k(2, 1) != 0.0 || k(2, 2) != 1.0)
      throw ValidationError("camera '" + camera_id + "' intrinsics must be upper-triangular with K[2][2] = 1");
    if (k(0, 0) <= 0.0 || k(1, 1) <= 0.0)
      throw ValidationError("camera '" + camera_id + "' focal lengths must be positive");
    const Eigen::Matrix3d r = extrinsics.topLeftCorner<3, 3>();
    if ((r * r.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-6 ||
        std::abs(r.determinant() - 1.0) > 1e-6)
      throw ValidationError("camera '" + camera_id + "' extrinsic rotation is not a proper rotation");
    if (extrinsics.row(3) != Eigen::RowVector4d(0, 0, 0, 1))
      throw ValidationError("camera '" + camera_id + "' extrinsics last row must be [0 0 0 1]");
    if (width <= 0 || height <= 0)
      throw ValidationError("camera '" + camera_id + "' image size must be positive");
  }

  friend bool operator==(const CameraModel& a, const CameraModel& b) {
    return a.camera_id == b.camera_id && a.intrinsics == b.intrinsics && a.extrinsics == b.extrinsics &&
           a.width == b.width && a.height == b.height;
  }
};

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<double> intensity;  // empty, or one value per point

  std::size_t size() const { return points.size(); }
  friend bool operator==(const PointCloud&, const PointCloud&) = default;
};

enum class SpatialRelation { InFrontOf, Behind, OnLeftOf, OnRightOf };

inline constexpr std::array<SpatialRelation, 4> kAllRelations = {
    SpatialRelation::InFrontOf, SpatialRelation::Behind, SpatialRelation::OnLeftOf,
    SpatialRelation::OnRightOf};

inline std::string_view relation_text(SpatialRelation r) {
  switch (r) {
    case SpatialRelation::InFrontOf: return "in front of";
    case SpatialRelation::Behind: return "behind";
    case SpatialRelation::OnLeftOf: return "on the left of";
    case SpatialRelation::OnRightOf: return "on the right of";
  }
  return "";
}

inline std::optional<SpatialRelation> relation_from_text(std::string_view text) {
  for (auto r : kAllRelations)
    if (relation_text(r) == text) return r;
  return std::nullopt;
}

/// The 8 corners in world coordinates. Bottom face first, counter-clockwise
/// seen from above starting at the front-right corner (+x heading, -y), then
/// the top face in the same order.
inline std::array<Vec3, 8> corners(const Box3D& box) {
  static constexpr std::array<std::array<double, 2>, 4> kFace = {
      {{0.5, -0.5}, {0.5, 0.5}, {-0.5, 0.5}, {-0.5, -0.5}}};
  const double c = std::cos(box.yaw()), s = std::sin(box.yaw());
  std::array<Vec3, 8> out;
  for (int level = 0; level < 2; ++level) {
    const double z = box.center().z() + (level == 0 ? -0.5 : 0.5) * box.height();
    for (int i = 0; i < 4; ++i) {
      const double lx = kFace[i][0] * box.length();
      const double ly = kFace[i][1] * box.width();
      out[level * 4 + i] = {box.center().x() + c * lx - s * ly, box.center().y() + s * lx + c * ly, z};
    }
  }
  return out;
}

/// Footprint in the xy-plane, counter-clockwise.
inline std::array<Vec2, 4> bev_polygon(const Box3D& box) {
  const auto c = corners(box);
  return {Vec2(c[0].x(), c[0].y()), Vec2(c[1].x(), c[1].y()), Vec2(c[2].x(), c[2].y()),
          Vec2(c[3].x(), c[3].y())};
}

namespace detail {

inline double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

inline double polygon_area(const std::vector<Vec2>& poly) {
  double twice = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i)
    twice += cross2(poly[i], poly[(i + 1) % poly.size()]);
  return 0.5 * std::abs(twice);
}

// Sutherland-Hodgman: clips `subject` against the convex CCW polygon `clip`.
template <std::size_t N>
std::vector<Vec2> clip_convex(std::vector<Vec2> subject, const std::array<Vec2, N>& clip) {
  for (std::size_t e = 0; e < N && !subject.empty(); ++e) {
    const Vec2& a = clip[e];
    const Vec2& b = clip[(e + 1) % N];
    const Vec2 edge = b - a;
    auto side = [&](const Vec2& p) { return cross2(edge, p - a); };
    std::vector<Vec2> out;
    out.reserve(subject.size() + 2);
    for (std::size_t i = 0; i < subject.size(); ++i) {
      const Vec2& cur = subject[i];
      const Vec2& prev = subject[(i + subject.size() - 1) % subject.size()];
      const double s_cur = side(cur), s_prev = side(prev);
      if (s_cur >= 0.0) {
        if (s_prev < 0.0) out.push_back(prev + (cur - prev) * (s_prev / (s_prev - s_cur)));
        out.push_back(cur);
      } else if (s_prev >= 0.0) {
        out.push_back(prev + (cur - prev) * (s_prev / (s_prev - s_cur)));
      }
    }
    subject = std::move(out);
  }
  return subject;
}

inline auto ordering_key(const Box3D& b) {
  return std::make_tuple(b.center().x(), b.center().y(), b.center().z(), b.size().x(),
                         b.size().y(), b.size().z(), b.yaw());
}

}  // namespace detail

/// Area of the intersection of the two footprints.
inline double bev_intersection_area(const Box3D& a, const Box3D& b) {
  const auto pa = bev_polygon(a);
  const auto pb = bev_polygon(b);
  return detail::polygon_area(detail::clip_convex(std::vector<Vec2>(pa.begin(), pa.end()), pb));
}

/// Exact 3D IoU of two yaw-rotated boxes: footprint polygon intersection
/// times z-interval overlap. Bitwise symmetric in its arguments.
inline double iou3d(const Box3D& a, const Box3D& b) {
  const bool swap = detail::ordering_key(b) < detail::ordering_key(a);
  const Box3D& first = swap ? b : a;
  const Box3D& second = swap ? a : b;

  const double z_overlap =
      std::min(first.z_max(), second.z_max()) - std::max(first.z_min(), second.z_min());
  if (z_overlap <= 0.0) return 0.0;
  const double dx = first.center().x() - second.center().x();
  const double dy = first.center().y() - second.center().y();
  const double reach = 0.5 * (std::hypot(first.length(), first.width()) +
                              std::hypot(second.length(), second.width()));
  if (dx * dx + dy * dy >= reach * reach) return 0.0;

  const double inter = bev_intersection_area(first, second) * z_overlap;
  const double uni = first.volume() + second.volume() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

/// Distance between the xy-projections of the centers; z is ignored.
inline double bev_center_distance(const Box3D& a, const Box3D& b) {
  return std::hypot(a.center().x() - b.center().x(), a.center().y() - b.center().y());
}

/// Full 3D center distance, for configurations that want the z term.
inline double center_distance_3d(const Box3D& a, const Box3D& b) {
  return (a.center() - b.center()).norm();
}

/// Axis-aligned box spanning both boxes' corners (yaw 0).
inline Box3D combine(const Box3D& a, const Box3D& b) {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const Box3D* box : {&a, &b}) {
    for (const Vec3& c : corners(*box)) {
      lo = lo.cwiseMin(c);
      hi = hi.cwiseMax(c);
    }
  }
  return Box3D(0.5 * (lo + hi), hi - lo, 0.0);
}

/// Relation of `subject` as seen from `reference`: the center offset is
/// rotated into the reference frame (x forward, y left) and the dominant axis
/// decides. Ties go to the front/behind axis.
inline SpatialRelation spatial_relation(const Box3D& subject, const Box3D& reference) {
  const double ox = subject.center().x() - reference.center().x();
  const double oy = subject.center().y() - reference.center().y();
  if (std::hypot(ox, oy) <= 1e-9) throw CoincidentCenters("subject and reference share a BEV center");
  const double c = std::cos(reference.yaw()), s = std::sin(reference.yaw());
  const double dx = c * ox + s * oy;
  const double dy = -s * ox + c * oy;
  if (std::abs(dx) >= std::abs(dy)) return dx > 0.0 ? SpatialRelation::InFrontOf : SpatialRelation::Behind;
  return dy > 0.0 ? SpatialRelation::OnLeftOf : SpatialRelation::OnRightOf;
}

/// Minimum camera-frame depth for a projected corner to count.
inline constexpr double kNearPlane = 0.1;

/// Image rectangle of the box in `cam`, or nothing when it is not visible.
///
/// Corners at depth <= kNearPlane are dropped; fewer than two survivors means
/// not visible. The rectangle spans the surviving projections clamped to the
/// image; a rectangle that clamps to zero width or height is also not visible.
inline std::optional<Box2D> project_box(const Box3D& box, const CameraModel& cam) {
  Box2D r{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
          -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  int survivors = 0;
  for (const Vec3& corner : corners(box)) {
    const Vec3 pc = cam.to_camera(corner);
    if (pc.z() <= kNearPlane) continue;
    const Vec3 uvw = cam.intrinsics * pc;
    const double u = uvw.x() / uvw.z(), v = uvw.y() / uvw.z();
    r.x_min = std::min(r.x_min, u);
    r.y_min = std::min(r.y_min, v);
    r.x_max = std::max(r.x_max, u);
    r.y_max = std::max(r.y_max, v);
    ++survivors;
  }
  if (survivors < 2) return std::nullopt;
  const double w = cam.width, h = cam.height;
  r.x_min = std::clamp(r.x_min, 0.0, w);
  r.x_max = std::clamp(r.x_max, 0.0, w);
  r.y_min = std::clamp(r.y_min, 0.0, h);
  r.y_max = std::clamp(r.y_max, 0.0, h);
  if (r.x_max <= r.x_min || r.y_max <= r.y_min) return std::nullopt;
  return r;
}

/// Indices of the points strictly inside the box, ascending.
inline std::vector<std::size_t> crop_points(const Box3D& box, const PointCloud& cloud) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < cloud.points.size(); ++i)
    if (box.contains(cloud.points[i])) idx.push_back(i);
  return idx;
}

}  // namespace ovoda
