#pragma once

#include <optional>
#include <string>
#include <vector>

#include "radinv/autodiff/ops.hpp"
#include "radinv/geometry.hpp"
#include "radinv/renderer.hpp"

// Analytic scenes: unions of primitives with exact SDFs and per-primitive
// colors. They render through the same renderer as learned fields and serve
// as ground truth for depth, normals and canonical maps.

namespace radinv {

struct Primitive {
  enum class Kind { kSphere, kBox, kCapsule } kind = Kind::kSphere;
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Ones();  // sphere: radius in x; box: half extents; capsule: radius in x
  Vec3 axis_end = Vec3::Zero();  // capsule: second endpoint (center is the first)
  Vec3 color = Vec3(0.8, 0.8, 0.8);

  /// Signed distance and its gradient at x.
  [[nodiscard]] double sdf(const Vec3& x, Vec3* grad = nullptr) const {
    switch (kind) {
      case Kind::kSphere: {
        const Vec3 r = x - center;
        const double n = r.norm();
        if (grad) *grad = n > 0.0 ? Vec3(r / n) : Vec3::UnitX();
        return n - size(0);
      }
      case Kind::kBox: {
        const Vec3 p = x - center;
        const Vec3 q = p.cwiseAbs() - size;
        const Vec3 qp = q.cwiseMax(0.0);
        const double outside = qp.norm();
        const double inside = std::min(q.maxCoeff(), 0.0);
        if (grad) {
          if (outside > 0.0) {
            *grad = qp.cwiseProduct(p.cwiseSign()) / outside;
          } else {
            int k = 0;
            q.maxCoeff(&k);
            *grad = Vec3::Zero();
            (*grad)(k) = p(k) >= 0.0 ? 1.0 : -1.0;
          }
        }
        return outside + inside;
      }
      case Kind::kCapsule: {
        const Vec3 ab = axis_end - center;
        const double h = std::clamp((x - center).dot(ab) / std::max(ab.squaredNorm(), 1e-300), 0.0, 1.0);
        const Vec3 r = x - (center + h * ab);
        const double n = r.norm();
        if (grad) *grad = n > 0.0 ? Vec3(r / n) : Vec3::UnitX();
        return n - size(0);
      }
    }
    return 0.0;
  }

  static Primitive sphere(const Vec3& c, double r, const Vec3& color) {
    Primitive p;
    p.kind = Kind::kSphere;
    p.center = c;
    p.size = Vec3(r, r, r);
    p.color = color;
    return p;
  }
  static Primitive box(const Vec3& c, const Vec3& half, const Vec3& color) {
    Primitive p;
    p.kind = Kind::kBox;
    p.center = c;
    p.size = half;
    p.color = color;
    return p;
  }
  static Primitive capsule(const Vec3& a, const Vec3& b, double r, const Vec3& color) {
    Primitive p;
    p.kind = Kind::kCapsule;
    p.center = a;
    p.axis_end = b;
    p.size = Vec3(r, r, r);
    p.color = color;
    return p;
  }
};

/// Union (or intersection) of primitives. The SDF is the pointwise minimum
/// (maximum); semantic channel k is a softmax over -d_k / temperature so
/// that colors blend smoothly across primitive junctions.
struct AnalyticScene {
  std::string name;
  std::vector<Primitive> primitives;
  enum class Combine { kUnion, kIntersection } combine = Combine::kUnion;
  double alpha_ = 0.02;
  double beta_ = 0.02;
  double temperature = 0.02;
  PoseDistribution poses;

  [[nodiscard]] int semantic_channels() const { return static_cast<int>(primitives.size()); }
  [[nodiscard]] double alpha() const { return alpha_; }
  [[nodiscard]] double beta() const { return beta_; }

  [[nodiscard]] double sdf(const Vec3& x, Vec3* grad = nullptr) const {
    const bool inter = combine == Combine::kIntersection;
    double best = inter ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
    for (const Primitive& p : primitives) {
      Vec3 g;
      const double d = p.sdf(x, grad ? &g : nullptr);
      if (inter ? d > best : d < best) {
        best = d;
        if (grad) *grad = g;
      }
    }
    return best;
  }

  [[nodiscard]] std::vector<double> sdf(const Mat& points) const {
    std::vector<double> d(static_cast<std::size_t>(points.rows()));
    for (Eigen::Index i = 0; i < points.rows(); ++i) d[static_cast<std::size_t>(i)] = sdf(Vec3(points.row(i).transpose()));
    return d;
  }

  /// Semantic probabilities at x.
  [[nodiscard]] Eigen::VectorXd probs(const Vec3& x) const {
    const auto s = primitives.size();
    Eigen::VectorXd logits(static_cast<Eigen::Index>(s));
    for (std::size_t k = 0; k < s; ++k) logits(static_cast<Eigen::Index>(k)) = -primitives[k].sdf(x) / temperature;
    logits.array() -= logits.maxCoeff();
    Eigen::VectorXd p = logits.array().exp();
    return p / p.sum();
  }

  [[nodiscard]] Mat colors() const {
    Mat v(static_cast<Eigen::Index>(primitives.size()), 3);
    for (std::size_t k = 0; k < primitives.size(); ++k) v.row(static_cast<Eigen::Index>(k)) = primitives[k].color.transpose();
    return v;
  }

  [[nodiscard]] Vec3 color(const Vec3& x) const { return colors().transpose() * probs(x); }

  [[nodiscard]] Mat rgb(const Mat& points) const {
    Mat out(points.rows(), 3);
    for (Eigen::Index i = 0; i < points.rows(); ++i) out.row(i) = color(Vec3(points.row(i).transpose())).transpose();
    return out;
  }

  [[nodiscard]] Mat sdf_gradient(const Mat& points) const {
    Mat out(points.rows(), 3);
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
      Vec3 g;
      (void)sdf(Vec3(points.row(i).transpose()), &g);
      out.row(i) = g.transpose();
    }
    return out;
  }

  SourceBinding bind(ad::Tape& tape, ad::Var points, std::optional<ad::Var> /*ray_dirs*/, int /*samples_per_ray*/,
                     bool /*track*/) const;
};

namespace ad {

/// SDF and semantic probabilities of an analytic scene at points [N,3],
/// returned as [N, 1+S]; differentiable w.r.t. the points.
inline Var analytic_field(const AnalyticScene& scene, Var points) {
  const Mat& x = points.value();
  const auto s = static_cast<Eigen::Index>(scene.primitives.size());
  Mat out(x.rows(), 1 + s);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Vec3 p = x.row(i).transpose();
    out(i, 0) = scene.sdf(p);
    out.row(i).tail(s) = scene.probs(p).transpose();
  }
  return points.tape->push(std::move(out), {points}, [&scene](Tape& t, int self) {
    const int pp = t.parent(self, 0);
    const Mat& x = t.value(pp);
    const Mat& y = t.value(self);
    const Mat& g = t.self_grad(self);
    const auto s = static_cast<Eigen::Index>(scene.primitives.size());
    Mat gx(x.rows(), 3);
    std::vector<Vec3> grads(static_cast<std::size_t>(s));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const Vec3 p = x.row(i).transpose();
      Vec3 gd;
      (void)scene.sdf(p, &gd);
      Vec3 acc = g(i, 0) * gd;
      // dp_k/dx = p_k (-grad_k + sum_j p_j grad_j) / temperature
      Vec3 mean_grad = Vec3::Zero();
      for (Eigen::Index k = 0; k < s; ++k) {
        (void)scene.primitives[static_cast<std::size_t>(k)].sdf(p, &grads[static_cast<std::size_t>(k)]);
        mean_grad += y(i, 1 + k) * grads[static_cast<std::size_t>(k)];
      }
      for (Eigen::Index k = 0; k < s; ++k)
        acc += g(i, 1 + k) * y(i, 1 + k) * (mean_grad - grads[static_cast<std::size_t>(k)]) / scene.temperature;
      gx.row(i) = acc.transpose();
    }
    t.accumulate(pp, gx);
  });
}

}  // namespace ad

inline SourceBinding AnalyticScene::bind(ad::Tape& tape, ad::Var points, std::optional<ad::Var>, int, bool) const {
  const ad::Var f = ad::analytic_field(*this, points);
  SourceBinding b;
  b.d = ad::slice_cols(f, 0, 1);
  b.probs = ad::slice_cols(f, 1, semantic_channels());
  b.colors = tape.constant(colors());
  b.alpha = tape.scalar_constant(alpha_);
  b.beta = tape.scalar_constant(beta_);
  return b;
}

/// Unit sphere at the origin.
inline AnalyticScene sphere_scene(double radius = 1.0, const Vec3& color = Vec3(0.9, 0.5, 0.2)) {
  AnalyticScene s;
  s.name = "sphere";
  s.primitives = {Primitive::sphere(Vec3::Zero(), radius, color)};
  return s;
}

/// A small desk still life: table top, a ball and a mug-like capsule.
inline AnalyticScene desk_scene() {
  AnalyticScene s;
  s.name = "desk";
  s.primitives = {
      Primitive::box(Vec3(0.0, 0.3, 0.0), Vec3(0.8, 0.08, 0.5), Vec3(0.55, 0.35, 0.2)),
      Primitive::sphere(Vec3(-0.35, -0.05, 0.1), 0.28, Vec3(0.2, 0.45, 0.85)),
      Primitive::capsule(Vec3(0.4, 0.15, -0.1), Vec3(0.4, -0.35, -0.1), 0.15, Vec3(0.85, 0.85, 0.8)),
  };
  return s;
}

/// Three stacked spheres.
inline AnalyticScene snowman_scene() {
  AnalyticScene s;
  s.name = "snowman";
  s.primitives = {
      Primitive::sphere(Vec3(0.0, 0.45, 0.0), 0.45, Vec3(0.92, 0.92, 0.95)),
      Primitive::sphere(Vec3(0.0, -0.15, 0.0), 0.32, Vec3(0.8, 0.85, 0.95)),
      Primitive::sphere(Vec3(0.0, -0.58, 0.0), 0.2, Vec3(0.9, 0.3, 0.2)),
  };
  return s;
}

/// A box with a capsule handle.
inline AnalyticScene crate_scene() {
  AnalyticScene s;
  s.name = "crate";
  s.primitives = {
      Primitive::box(Vec3(0.0, 0.1, 0.0), Vec3(0.5, 0.4, 0.4), Vec3(0.3, 0.6, 0.3)),
      Primitive::capsule(Vec3(-0.3, -0.45, 0.0), Vec3(0.3, -0.45, 0.0), 0.1, Vec3(0.9, 0.8, 0.2)),
  };
  return s;
}

/// Intersection of two offset spheres.
inline AnalyticScene lens_scene() {
  AnalyticScene s;
  s.name = "lens";
  s.combine = AnalyticScene::Combine::kIntersection;
  s.primitives = {
      Primitive::sphere(Vec3(-0.45, 0.0, 0.0), 0.85, Vec3(0.3, 0.7, 0.9)),
      Primitive::sphere(Vec3(0.45, 0.0, 0.0), 0.85, Vec3(0.9, 0.6, 0.3)),
  };
  return s;
}

/// Procedural family member: 2-3 primitives whose placement, size and
/// colors vary smoothly with `seed`.
inline AnalyticScene procedural_scene(std::uint64_t seed) {
  Rng rng(hash_combine(seed, 0x5CE7E));
  AnalyticScene s;
  s.name = "procedural-" + std::to_string(seed);
  auto color = [&] { return Vec3(rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95)); };
  s.primitives.push_back(Primitive::box(Vec3(0.0, rng.uniform(0.1, 0.4), 0.0),
                                        Vec3(rng.uniform(0.4, 0.75), rng.uniform(0.06, 0.2), rng.uniform(0.3, 0.6)),
                                        color()));
  s.primitives.push_back(
      Primitive::sphere(Vec3(rng.uniform(-0.4, 0.4), rng.uniform(-0.3, 0.0), rng.uniform(-0.2, 0.2)),
                        rng.uniform(0.2, 0.35), color()));
  const double x = rng.uniform(-0.4, 0.4);
  s.primitives.push_back(Primitive::capsule(Vec3(x, 0.1, rng.uniform(-0.2, 0.2)), Vec3(x, -0.45, 0.0),
                                            rng.uniform(0.08, 0.16), color()));
  return s;
}

/// Built-in scenes by name; throws IoError for unknown names.
inline AnalyticScene builtin_scene(const std::string& name) {
  if (name == "sphere") return sphere_scene();
  if (name == "desk") return desk_scene();
  if (name == "snowman") return snowman_scene();
  if (name == "crate") return crate_scene();
  if (name == "lens") return lens_scene();
  const std::string prefix = "procedural-";
  if (name.rfind(prefix, 0) == 0) {
    try {
      return procedural_scene(std::stoull(name.substr(prefix.size())));
    } catch (const std::logic_error&) {
    }
  }
  throw IoError("unknown scene '" + name + "'");
}

inline std::vector<std::string> builtin_scene_names() { return {"sphere", "desk", "snowman", "crate", "lens"}; }

}  // namespace radinv
