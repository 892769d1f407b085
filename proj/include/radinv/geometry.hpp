#pragma once

#include <array>
#include <cstdio>
#include <vector>

#include "radinv/autodiff/jet.hpp"
#include "radinv/autodiff/tape.hpp"
#include "radinv/core.hpp"

namespace radinv {

// Camera convention: the camera looks down +z, x points right and y points
// down in the image. The image plane spans [-0.5, 0.5]^2 in normalized units
// and the focal length is expressed in the same units.

enum class Projection { kPerspective, kWeakPerspective };

/// Quaternion stored as (w, x, y, z).
using Quat = Eigen::Vector4d;

inline Quat identity_quat() { return Quat(1.0, 0.0, 0.0, 0.0); }

inline Quat canonical_quat(Quat q) {
  q.normalize();
  if (q(0) < 0.0) q = -q;
  return q;
}

template <class T>
std::array<T, 9> quat_to_rotation(const T& w, const T& x, const T& y, const T& z) {
  return {1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z),       2.0 * (x * z + w * y),
          2.0 * (x * y + w * z),       1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
          2.0 * (x * z - w * y),       2.0 * (y * z + w * x),       1.0 - 2.0 * (x * x + y * y)};
}

/// Rotation matrix of q/|q|.
inline Mat3 quaternion_to_matrix(const Quat& q_in) {
  const Quat q = q_in.normalized();
  const auto r = quat_to_rotation(q(0), q(1), q(2), q(3));
  Mat3 m;
  m << r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8];
  return m;
}

/// Unit quaternion with w >= 0.
inline Quat matrix_to_quaternion(const Mat3& r) {
  const Eigen::Quaterniond eq(r);
  return canonical_quat(Quat(eq.w(), eq.x(), eq.y(), eq.z()));
}

inline Quat quat_multiply(const Quat& a, const Quat& b) {
  return Quat(a(0) * b(0) - a(1) * b(1) - a(2) * b(2) - a(3) * b(3),
              a(0) * b(1) + a(1) * b(0) + a(2) * b(3) - a(3) * b(2),
              a(0) * b(2) - a(1) * b(3) + a(2) * b(0) + a(3) * b(1),
              a(0) * b(3) + a(1) * b(2) - a(2) * b(1) + a(3) * b(0));
}

inline Quat axis_angle_quat(const Vec3& axis, double angle_rad) {
  const Vec3 a = axis.normalized();
  const double h = 0.5 * angle_rad;
  return Quat(std::cos(h), std::sin(h) * a(0), std::sin(h) * a(1), std::sin(h) * a(2));
}

inline bool& warnings_enabled() {
  static bool enabled = true;
  return enabled;
}

inline void warn(const char* msg) {
  if (warnings_enabled()) std::fprintf(stderr, "radinv warning: %s\n", msg);
}

/// Geodesic angle between two rotations in degrees, in [0, 180].
inline double rotation_error(Quat q_pred, Quat q_gt) {
  constexpr double kUnitTol = 1e-6;
  if (std::abs(q_pred.norm() - 1.0) > kUnitTol || std::abs(q_gt.norm() - 1.0) > kUnitTol)
    warn("rotation_error: non-unit quaternion normalized");
  q_pred.normalize();
  q_gt.normalize();
  const double c = std::min(1.0, std::abs(q_pred.dot(q_gt)));
  return 2.0 * std::acos(c) * 180.0 / kPi;
}

/// World-to-camera pose in screen-space parameterization.
struct PoseParams {
  Quat q = identity_quat();
  double s = 1.0;
  Eigen::Vector2d t2 = Eigen::Vector2d::Zero();
  double z0 = 0.0;

  [[nodiscard]] double focal() const { return 1.0 + std::exp(z0); }
  [[nodiscard]] Vec3 t3() const { return Vec3(t2(0) / s, t2(1) / s, focal() / s); }

  [[nodiscard]] std::array<double, 8> to_array() const {
    return {q(0), q(1), q(2), q(3), s, t2(0), t2(1), z0};
  }
  static PoseParams from_array(const std::array<double, 8>& a) {
    PoseParams p;
    p.q = Quat(a[0], a[1], a[2], a[3]);
    p.s = a[4];
    p.t2 = Eigen::Vector2d(a[5], a[6]);
    p.z0 = a[7];
    return p;
  }
  [[nodiscard]] Mat to_row() const {
    Mat m(1, 8);
    const auto a = to_array();
    for (int i = 0; i < 8; ++i) m(0, i) = a[static_cast<std::size_t>(i)];
    return m;
  }
  static PoseParams from_row(const Mat& m) {
    std::array<double, 8> a{};
    for (int i = 0; i < 8; ++i) a[static_cast<std::size_t>(i)] = m(0, i);
    return from_array(a);
  }
};

struct Camera {
  Mat3 rotation = Mat3::Identity();  // world-to-camera
  Vec3 translation = Vec3(0, 0, 2);
  double focal = 2.0;
  double scale = 1.0;  // screen scale s, used by weak perspective
  Eigen::Vector2d t2 = Eigen::Vector2d::Zero();
  Projection projection = Projection::kPerspective;

  [[nodiscard]] Eigen::Matrix4d view() const {
    Eigen::Matrix4d v = Eigen::Matrix4d::Identity();
    v.topLeftCorner<3, 3>() = rotation;
    v.topRightCorner<3, 1>() = translation;
    return v;
  }

  [[nodiscard]] Vec3 to_camera(const Vec3& x) const { return rotation * x + translation; }

  /// Normalized image coordinates of a world point.
  [[nodiscard]] Eigen::Vector2d project(const Vec3& x) const {
    const Vec3 c = to_camera(x);
    if (projection == Projection::kWeakPerspective) return Eigen::Vector2d(scale * c(0), scale * c(1));
    return Eigen::Vector2d(focal * c(0) / c(2), focal * c(1) / c(2));
  }
};

/// Number of reals in the flattened camera used on tapes:
/// R (9, row-major), t3 (3), focal, s, t2 (2).
inline constexpr int kCameraVecSize = 16;

// Overload sets so camera_vector_from_pose works on doubles and Jets alike.
inline double sqrt_any(double x) { return std::sqrt(x); }
inline double exp_any(double x) { return std::exp(x); }
template <int N>
ad::Jet<N> sqrt_any(const ad::Jet<N>& x) { return ad::sqrt(x); }
template <int N>
ad::Jet<N> exp_any(const ad::Jet<N>& x) { return ad::exp(x); }

template <class T>
std::array<T, kCameraVecSize> camera_vector_from_pose(const std::array<T, 8>& p, Projection mode) {
  const T n = sqrt_any(p[0] * p[0] + p[1] * p[1] + p[2] * p[2] + p[3] * p[3]);
  const auto r = quat_to_rotation<T>(p[0] / n, p[1] / n, p[2] / n, p[3] / n);
  const T s = p[4];
  const T f = 1.0 + exp_any(p[7]);
  std::array<T, kCameraVecSize> out{};
  for (int i = 0; i < 9; ++i) out[static_cast<std::size_t>(i)] = r[static_cast<std::size_t>(i)];
  out[9] = p[5] / s;
  out[10] = p[6] / s;
  out[11] = mode == Projection::kPerspective ? f / s : T(0.0);
  out[12] = f;
  out[13] = s;
  out[14] = p[5];
  out[15] = p[6];
  return out;
}


inline void check_pose(const PoseParams& p) {
  if (!(p.s > 0.0)) throw InvalidPoseError("pose: screen scale s must be > 0");
  if (!(p.q.norm() > 0.0)) throw InvalidPoseError("pose: quaternion must be non-zero");
}

inline Camera camera_from_vector(const Mat& v, Projection mode) {
  Camera c;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) c.rotation(i, j) = v(0, 3 * i + j);
  c.translation = Vec3(v(0, 9), v(0, 10), v(0, 11));
  c.focal = v(0, 12);
  c.scale = v(0, 13);
  c.t2 = Eigen::Vector2d(v(0, 14), v(0, 15));
  c.projection = mode;
  return c;
}

inline Mat camera_to_vector(const Camera& c) {
  Mat v(1, kCameraVecSize);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) v(0, 3 * i + j) = c.rotation(i, j);
  v(0, 9) = c.translation(0);
  v(0, 10) = c.translation(1);
  v(0, 11) = c.translation(2);
  v(0, 12) = c.focal;
  v(0, 13) = c.scale;
  v(0, 14) = c.t2(0);
  v(0, 15) = c.t2(1);
  return v;
}

/// view = [R(q) | t3], focal = 1 + exp(z0).
inline Camera pose_to_camera(const PoseParams& p, Projection mode = Projection::kPerspective) {
  check_pose(p);
  const auto v = camera_vector_from_pose<double>(p.to_array(), mode);
  Mat row(1, kCameraVecSize);
  for (int i = 0; i < kCameraVecSize; ++i) row(0, i) = v[static_cast<std::size_t>(i)];
  return camera_from_vector(row, mode);
}

/// Inverse of pose_to_camera for perspective cameras (quaternion with w >= 0).
inline PoseParams camera_to_pose(const Camera& c) {
  if (c.projection == Projection::kWeakPerspective) {
    PoseParams p;
    p.q = matrix_to_quaternion(c.rotation);
    p.s = c.scale;
    p.t2 = c.t2;
    p.z0 = std::log(std::max(c.focal - 1.0, 1e-300));
    return p;
  }
  if (!(c.translation(2) > 0.0)) throw InvalidPoseError("camera_to_pose: object must lie in front of the camera");
  if (!(c.focal > 1.0)) throw InvalidPoseError("camera_to_pose: focal must exceed 1");
  PoseParams p;
  p.q = matrix_to_quaternion(c.rotation);
  p.s = c.focal / c.translation(2);
  p.t2 = Eigen::Vector2d(c.translation(0) * p.s, c.translation(1) * p.s);
  p.z0 = std::log(c.focal - 1.0);
  return p;
}

namespace ad {

/// Differentiable pose [1,8] -> camera vector [1,16]. The Jacobian comes
/// from evaluating the same code on 8-direction Jets.
inline Var pose_to_camera(Var pose, Projection mode) {
  const Mat& p = pose.value();
  if (p.rows() != 1 || p.cols() != 8) throw StructuralError("pose_to_camera: pose must be [1,8]");
  if (!(p(0, 4) > 0.0)) throw InvalidPoseError("pose: screen scale s must be > 0");
  std::array<double, 8> pa{};
  for (int i = 0; i < 8; ++i) pa[static_cast<std::size_t>(i)] = p(0, i);
  const auto cv = camera_vector_from_pose<double>(pa, mode);
  Mat out(1, kCameraVecSize);
  for (int i = 0; i < kCameraVecSize; ++i) out(0, i) = cv[static_cast<std::size_t>(i)];
  return pose.tape->push(std::move(out), {pose}, [mode](Tape& t, int self) {
    const int pp = t.parent(self, 0);
    const Mat& pv = t.value(pp);
    std::array<Jet<8>, 8> pj;
    for (int i = 0; i < 8; ++i) pj[static_cast<std::size_t>(i)] = Jet<8>::variable(pv(0, i), i);
    const auto cj = camera_vector_from_pose<Jet<8>>(pj, mode);
    const Mat& g = t.self_grad(self);
    Mat gp = Mat::Zero(1, 8);
    for (int o = 0; o < kCameraVecSize; ++o)
      for (int i = 0; i < 8; ++i) gp(0, i) += g(0, o) * cj[static_cast<std::size_t>(o)].v[static_cast<std::size_t>(i)];
    t.accumulate(pp, gp);
  });
}

}  // namespace ad

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  double t_near = 0.0;
  double t_far = 1.0;
};

/// Normalized coordinates of the centre of pixel (col, row).
inline Eigen::Vector2d pixel_center(int col, int row, int width, int height) {
  return Eigen::Vector2d((col + 0.5) / width - 0.5, (row + 0.5) / height - 0.5);
}

/// Distance of the weak-perspective ray origin plane in front of the object.
inline constexpr double kWeakRayOffset = 4.0;

/// Camera-space point at parameter t along the ray through (u, v).
inline Vec3 camera_ray_point(const Camera& cam, double u, double v, double t) {
  if (cam.projection == Projection::kWeakPerspective)
    return Vec3(u / cam.scale, v / cam.scale, t - kWeakRayOffset);
  return t * Vec3(u, v, cam.focal).normalized();
}

inline Vec3 camera_ray_direction(const Camera& cam, double u, double v) {
  if (cam.projection == Projection::kWeakPerspective) return Vec3::UnitZ();
  return Vec3(u, v, cam.focal).normalized();
}

/// Slab intersection with the cube [-1,1]^3; false when the ray misses.
inline bool intersect_unit_cube(const Vec3& o, const Vec3& d, double& t0, double& t1) {
  t0 = 0.0;
  t1 = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 3; ++k) {
    if (std::abs(d(k)) < 1e-15) {
      if (o(k) < -1.0 || o(k) > 1.0) return false;
      continue;
    }
    double a = (-1.0 - o(k)) / d(k);
    double b = (1.0 - o(k)) / d(k);
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
  }
  return t1 > t0;
}

/// World-space ray for normalized image coordinates (u, v). The ray range
/// is clipped to the bounding cube; rays that miss get t_near == t_far.
inline Ray make_ray(const Camera& cam, double u, double v) {
  Ray r;
  const Mat3 rt = cam.rotation.transpose();
  r.origin = rt * (camera_ray_point(cam, u, v, 0.0) - cam.translation);
  r.direction = rt * camera_ray_direction(cam, u, v);
  double t0 = 0.0, t1 = 0.0;
  if (intersect_unit_cube(r.origin, r.direction, t0, t1)) {
    r.t_near = t0;
    r.t_far = t1;
  } else {
    r.t_near = r.t_far = 0.0;
  }
  return r;
}

/// Row-major grid of rays, one per pixel centre.
inline std::vector<Ray> generate_rays(const Camera& cam, int width, int height) {
  if (width < 1 || height < 1) throw StructuralError("generate_rays: width and height must be >= 1");
  std::vector<Ray> rays;
  rays.reserve(static_cast<std::size_t>(width) * height);
  for (int row = 0; row < height; ++row)
    for (int col = 0; col < width; ++col) {
      const Eigen::Vector2d uv = pixel_center(col, row, width, height);
      rays.push_back(make_ray(cam, uv(0), uv(1)));
    }
  return rays;
}

/// Pose of a camera orbiting the origin: azimuth about the world up axis
/// (+y), elevation above the horizon, both in degrees. The camera looks at
/// the origin and its image y axis points towards world -y.
inline PoseParams look_at_pose(double azimuth_deg, double elevation_deg, double s, double z0) {
  const double az = azimuth_deg * kPi / 180.0;
  const double el = elevation_deg * kPi / 180.0;
  const Vec3 dir_to_cam(std::cos(el) * std::sin(az), std::sin(el), -std::cos(el) * std::cos(az));
  const Vec3 z_axis = -dir_to_cam;
  const Vec3 up(0, 1, 0);
  Vec3 y_axis = -up + up.dot(z_axis) * z_axis;
  if (y_axis.norm() < 1e-9) y_axis = Vec3(0, 0, 1);
  y_axis.normalize();
  const Vec3 x_axis = y_axis.cross(z_axis);
  Mat3 r;
  r.row(0) = x_axis;
  r.row(1) = y_axis;
  r.row(2) = z_axis;
  PoseParams p;
  p.q = matrix_to_quaternion(r);
  p.s = s;
  p.t2 = Eigen::Vector2d::Zero();
  p.z0 = z0;
  return p;
}

/// Rotates the pose by exactly angle_deg about a random axis (applied in
/// camera space, so the rotation error to the input is angle_deg).
inline PoseParams perturb_rotation(const PoseParams& p, double angle_deg, Rng& rng) {
  Vec3 axis(rng.normal(), rng.normal(), rng.normal());
  if (axis.norm() < 1e-12) axis = Vec3::UnitX();
  PoseParams out = p;
  out.q = canonical_quat(quat_multiply(axis_angle_quat(axis, angle_deg * kPi / 180.0), p.q.normalized()));
  return out;
}

/// Ranges for random viewpoints.
struct PoseDistribution {
  double azimuth_min = -180.0, azimuth_max = 180.0;
  double elevation_min = -10.0, elevation_max = 40.0;
  double scale_min = 0.30, scale_max = 0.40;
  double z0_min = 0.0, z0_max = 1.0;
  double t2_range = 0.03;

  PoseParams sample(Rng& rng) const {
    PoseParams p = look_at_pose(rng.uniform(azimuth_min, azimuth_max), rng.uniform(elevation_min, elevation_max),
                                rng.uniform(scale_min, scale_max), rng.uniform(z0_min, z0_max));
    p.t2 = Eigen::Vector2d(rng.uniform(-t2_range, t2_range), rng.uniform(-t2_range, t2_range));
    return p;
  }
};

}  // namespace radinv
