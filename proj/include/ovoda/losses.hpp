#pragma once

// Training losses (feature distillation L1 and indicator-weighted cross
// entropy), their analytic gradients, and a central-difference checker.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ovoda/alignment.hpp"
#include "ovoda/errors.hpp"
#include "ovoda/geometry.hpp"
#include "ovoda/rng.hpp"

namespace ovoda {

using FeatureBatch = Eigen::MatrixXd;  // one row per proposal or event

inline constexpr double kLogClamp = 1e-12;

namespace detail {
inline void require_same_shape(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeMismatch(std::string(what) + ": shapes " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                        " and " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}
}  // namespace detail

/// Sum of absolute differences over all rows and entries. The gradient with
/// respect to `v` is sign(v - f) (zero where equal).
inline double l1_feature_loss(const FeatureBatch& v, const FeatureBatch& f, FeatureBatch* grad_v = nullptr) {
  detail::require_same_shape(v, f, "l1 feature loss");
  const Eigen::MatrixXd d = v - f;
  if (grad_v) *grad_v = d.unaryExpr([](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
  return d.cwiseAbs().sum();
}

/// Object distillation loss between fused visual features and detector features.
inline double l_od(const FeatureBatch& v, const FeatureBatch& f_det, FeatureBatch* grad_v = nullptr) {
  return l1_feature_loss(v, f_det, grad_v);
}

/// Attribute distillation loss between event visual features and point features.
inline double l_ad(const FeatureBatch& v_a, const FeatureBatch& f_c, FeatureBatch* grad_v = nullptr) {
  return l1_feature_loss(v_a, f_c, grad_v);
}

/// 1 for boxes that overlap some reference box with IoU >= iou_min, else 0.
inline std::vector<double> membership_indicator(const std::vector<Box3D>& boxes, const std::vector<Box3D>& reference,
                                                double iou_min = 0.5) {
  std::vector<double> out;
  out.reserve(boxes.size());
  for (const auto& b : boxes)
    out.push_back(std::any_of(reference.begin(), reference.end(),
                              [&](const Box3D& r) { return iou3d(b, r) >= iou_min; })
                      ? 1.0
                      : 0.0);
  return out;
}

/// sum_j indicator_j * -log(max(p_j[target_j], 1e-12)).
inline double weighted_ce(const std::vector<Distribution>& dists, const std::vector<std::size_t>& targets,
                          const std::vector<double>& indicators) {
  if (dists.size() != targets.size() || dists.size() != indicators.size())
    throw ShapeMismatch("weighted_ce: distributions, targets and indicators differ in length");
  double total = 0.0;
  for (std::size_t j = 0; j < dists.size(); ++j) {
    if (indicators[j] == 0.0) continue;
    if (targets[j] >= dists[j].probs.size()) throw ShapeMismatch("weighted_ce: target index out of range");
    total += indicators[j] * -std::log(std::max(dists[j].probs[targets[j]], kLogClamp));
  }
  return total;
}

/// Object classification loss on discovered proposals, counted only when the
/// proposal box lies within the base boxes (IoU >= 0.5 with one of them).
inline double l_oc(const std::vector<Box3D>& discovered_boxes, const std::vector<Box3D>& base_boxes,
                   const std::vector<Distribution>& dists, const std::vector<std::size_t>& targets) {
  if (discovered_boxes.size() != dists.size()) throw ShapeMismatch("l_oc: boxes and distributions differ in length");
  return weighted_ce(dists, targets, membership_indicator(discovered_boxes, base_boxes));
}

/// Attribute classification loss, the same construction over event boxes and
/// base-attribute event boxes.
inline double l_ac(const std::vector<Box3D>& discovered_boxes, const std::vector<Box3D>& base_attr_boxes,
                   const std::vector<Distribution>& dists, const std::vector<std::size_t>& targets) {
  if (discovered_boxes.size() != dists.size()) throw ShapeMismatch("l_ac: boxes and distributions differ in length");
  return weighted_ce(dists, targets, membership_indicator(discovered_boxes, base_attr_boxes));
}

/// Weighted cross entropy computed from visual features: row j of `v` is
/// classified as softmax(text * v_j / tau). Writes d loss / d v when asked.
inline double weighted_ce_features(const FeatureBatch& v, const Eigen::MatrixXd& text, double tau,
                                   const std::vector<std::size_t>& targets, const std::vector<double>& indicators,
                                   FeatureBatch* grad_v = nullptr) {
  if (!(tau > 0.0)) throw ValidationError("weighted_ce_features: temperature must be positive");
  if (v.cols() != text.cols()) throw ShapeMismatch("weighted_ce_features: feature and text dimensions differ");
  if (static_cast<std::size_t>(v.rows()) != targets.size() || targets.size() != indicators.size())
    throw ShapeMismatch("weighted_ce_features: rows, targets and indicators differ in length");
  if (grad_v) *grad_v = FeatureBatch::Zero(v.rows(), v.cols());
  double total = 0.0;
  for (Eigen::Index j = 0; j < v.rows(); ++j) {
    const double w = indicators[j];
    if (w == 0.0) continue;
    const std::size_t t = targets[j];
    if (t >= static_cast<std::size_t>(text.rows())) throw ShapeMismatch("weighted_ce_features: target out of range");
    Eigen::VectorXd logits = text * v.row(j).transpose() / tau;
    logits.array() -= logits.maxCoeff();
    Eigen::VectorXd p = logits.array().exp();
    p /= p.sum();
    const double pt = p(static_cast<Eigen::Index>(t));
    total += w * -std::log(std::max(pt, kLogClamp));
    if (grad_v && pt > kLogClamp) {
      p(static_cast<Eigen::Index>(t)) -= 1.0;
      grad_v->row(j) = w * (text.transpose() * p).transpose() / tau;
    }
  }
  return total;
}

struct LossWeights {
  double w_od = 1.0, w_oc = 1.0, w_ad = 1.0, w_ac = 1.0;

  void validate() const {
    for (double w : {w_od, w_oc, w_ad, w_ac})
      if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and non-negative");
  }
};

struct LossParts {
  double od = 0.0, oc = 0.0, ad = 0.0, ac = 0.0;
};

inline double total_loss(const LossParts& p, const LossWeights& w) {
  for (double x : {p.od, p.oc, p.ad, p.ac})
    if (!std::isfinite(x)) throw NonFiniteGradient("total_loss: non-finite loss part");
  return w.w_od * p.od + w.w_oc * p.oc + w.w_ad * p.ad + w.w_ac * p.ac;
}

/// Everything the four losses read, in feature form.
struct LossProblem {
  FeatureBatch v_obj, f_det;   // N x D
  FeatureBatch v_attr, f_c;    // M x D
  Eigen::MatrixXd text_obj;    // C x D
  Eigen::MatrixXd text_attr;   // E x D
  double tau = 0.05;
  std::vector<std::size_t> obj_targets, attr_targets;
  std::vector<double> obj_indicators, attr_indicators;
};

struct LossGradients {
  FeatureBatch v_obj_od, v_obj_oc, v_attr_ad, v_attr_ac;
};

inline LossParts evaluate_losses(const LossProblem& p, LossGradients* g = nullptr) {
  LossParts parts;
  parts.od = l_od(p.v_obj, p.f_det, g ? &g->v_obj_od : nullptr);
  parts.oc = weighted_ce_features(p.v_obj, p.text_obj, p.tau, p.obj_targets, p.obj_indicators, g ? &g->v_obj_oc : nullptr);
  parts.ad = l_ad(p.v_attr, p.f_c, g ? &g->v_attr_ad : nullptr);
  parts.ac =
      weighted_ce_features(p.v_attr, p.text_attr, p.tau, p.attr_targets, p.attr_indicators, g ? &g->v_attr_ac : nullptr);
  return parts;
}

/// Gradient of the weighted total with respect to (v_obj, v_attr).
inline std::pair<FeatureBatch, FeatureBatch> total_gradient(const LossGradients& g, const LossWeights& w) {
  return {w.w_od * g.v_obj_od + w.w_oc * g.v_obj_oc, w.w_ad * g.v_attr_ad + w.w_ac * g.v_attr_ac};
}

/// Compares an analytic gradient with central differences at `x` and returns
/// max_i |analytic_i - numeric_i| / max(|analytic|_inf, |numeric|_inf).
inline double grad_check(const std::function<double(const Eigen::VectorXd&)>& f,
                         const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad, const Eigen::VectorXd& x,
                         double h = 1e-5) {
  if (!(h > 0.0)) throw ValidationError("grad_check: step must be positive");
  const Eigen::VectorXd analytic = grad(x);
  if (analytic.size() != x.size()) throw ShapeMismatch("grad_check: gradient has the wrong length");
  Eigen::VectorXd numeric(x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp(i) = x(i) + h;
    const double fp = f(xp);
    xp(i) = x(i) - h;
    const double fm = f(xp);
    xp(i) = x(i);
    numeric(i) = (fp - fm) / (2.0 * h);
  }
  if (!analytic.allFinite() || !numeric.allFinite()) throw NonFiniteGradient("grad_check: non-finite gradient");
  const double scale = std::max(analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff());
  if (scale == 0.0) return 0.0;
  return (analytic - numeric).cwiseAbs().maxCoeff() / scale;
}

inline Eigen::VectorXd flatten(const Eigen::MatrixXd& m) {
  return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
}

inline Eigen::MatrixXd unflatten(const Eigen::VectorXd& x, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const Eigen::MatrixXd>(x.data(), rows, cols);
}

struct LossGradCheck {
  double od = 0.0, oc = 0.0, ad = 0.0, ac = 0.0, total = 0.0;

  double worst() const { return std::max({od, oc, ad, ac, total}); }
};

/// Runs grad_check on each loss part and on the weighted total, all as
/// functions of the visual features.
inline LossGradCheck check_loss_gradients(const LossProblem& p, const LossWeights& w, double h = 1e-5) {
  const Eigen::Index n = p.v_obj.rows(), d = p.v_obj.cols();
  const Eigen::Index m = p.v_attr.rows(), da = p.v_attr.cols();
  LossGradCheck out;

  out.od = grad_check([&](const Eigen::VectorXd& x) { return l_od(unflatten(x, n, d), p.f_det); },
                      [&](const Eigen::VectorXd& x) {
                        FeatureBatch g;
                        l_od(unflatten(x, n, d), p.f_det, &g);
                        return Eigen::VectorXd(flatten(g));
                      },
                      flatten(p.v_obj), h);
  out.oc = grad_check(
      [&](const Eigen::VectorXd& x) {
        return weighted_ce_features(unflatten(x, n, d), p.text_obj, p.tau, p.obj_targets, p.obj_indicators);
      },
      [&](const Eigen::VectorXd& x) {
        FeatureBatch g;
        weighted_ce_features(unflatten(x, n, d), p.text_obj, p.tau, p.obj_targets, p.obj_indicators, &g);
        return Eigen::VectorXd(flatten(g));
      },
      flatten(p.v_obj), h);
  out.ad = grad_check([&](const Eigen::VectorXd& x) { return l_ad(unflatten(x, m, da), p.f_c); },
                      [&](const Eigen::VectorXd& x) {
                        FeatureBatch g;
                        l_ad(unflatten(x, m, da), p.f_c, &g);
                        return Eigen::VectorXd(flatten(g));
                      },
                      flatten(p.v_attr), h);
  out.ac = grad_check(
      [&](const Eigen::VectorXd& x) {
        return weighted_ce_features(unflatten(x, m, da), p.text_attr, p.tau, p.attr_targets, p.attr_indicators);
      },
      [&](const Eigen::VectorXd& x) {
        FeatureBatch g;
        weighted_ce_features(unflatten(x, m, da), p.text_attr, p.tau, p.attr_targets, p.attr_indicators, &g);
        return Eigen::VectorXd(flatten(g));
      },
      flatten(p.v_attr), h);

  const auto split = [&](const Eigen::VectorXd& x) {
    LossProblem q = p;
    q.v_obj = unflatten(x.head(n * d), n, d);
    q.v_attr = unflatten(x.tail(m * da), m, da);
    return q;
  };
  Eigen::VectorXd x0(n * d + m * da);
  x0 << flatten(p.v_obj), flatten(p.v_attr);
  out.total = grad_check([&](const Eigen::VectorXd& x) { return total_loss(evaluate_losses(split(x)), w); },
                         [&](const Eigen::VectorXd& x) {
                           LossGradients g;
                           evaluate_losses(split(x), &g);
                           const auto [go, ga] = total_gradient(g, w);
                           Eigen::VectorXd v(x.size());
                           v << flatten(go), flatten(ga);
                           return v;
                         },
                         x0, h);
  return out;
}

/// Random problem away from the L1 kinks (every |v - f| >= 0.05) with
/// moderate logits, so central differences are well conditioned.
inline LossProblem random_loss_problem(std::uint64_t seed, int rows, int dim, int classes, int attributes,
                                       double tau = 0.1) {
  SplitMix64 rng(seed);
  const auto gauss_matrix = [&](int r, int c, double sd) {
    Eigen::MatrixXd out(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) out(i, j) = sd * rng.gaussian();
    return out;
  };
  const auto unit_rows = [&](int r, int c) {
    Eigen::MatrixXd out = gauss_matrix(r, c, 1.0);
    for (int i = 0; i < r; ++i) out.row(i).normalize();
    return out;
  };
  const auto offset = [&](const Eigen::MatrixXd& v) {
    Eigen::MatrixXd f = v;
    for (Eigen::Index i = 0; i < f.size(); ++i) {
      const double mag = rng.uniform(0.05, 0.5);
      f.data()[i] += rng.uniform01() < 0.5 ? -mag : mag;
    }
    return f;
  };
  LossProblem p;
  p.tau = tau;
  const double sd = 0.3 / std::sqrt(static_cast<double>(dim));
  p.v_obj = gauss_matrix(rows, dim, sd);
  p.f_det = offset(p.v_obj);
  p.v_attr = gauss_matrix(rows, dim, sd);
  p.f_c = offset(p.v_attr);
  p.text_obj = unit_rows(classes, dim);
  p.text_attr = unit_rows(attributes, dim);
  for (int i = 0; i < rows; ++i) {
    p.obj_targets.push_back(rng.below(static_cast<std::uint64_t>(classes)));
    p.attr_targets.push_back(rng.below(static_cast<std::uint64_t>(attributes)));
    p.obj_indicators.push_back(i == 0 || rng.uniform01() < 0.7 ? 1.0 : 0.0);
    p.attr_indicators.push_back(i == 0 || rng.uniform01() < 0.7 ? 1.0 : 0.0);
  }
  return p;
}

}  // namespace ovoda
