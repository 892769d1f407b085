#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/SVD>

#include "radinv/field.hpp"
#include "radinv/geometry.hpp"
#include "radinv/io.hpp"
#include "radinv/renderer.hpp"

// Pose from a canonical map: 2D-3D correspondences, PnP over a sweep of
// focal lengths, and the synthetic data used to bootstrap inversion.

namespace radinv {

inline constexpr int kMinCorrespondences = 6;

/// Correspondences between normalized image coordinates and canonical
/// points. width/height convert normalized residuals to pixels.
struct CanonicalObservation {
  std::vector<Eigen::Vector2d> pixels;
  std::vector<Vec3> points;
  double mask_threshold = 0.5;
  int width = 1, height = 1;

  [[nodiscard]] std::size_t size() const { return pixels.size(); }
};

struct PnPSolution {
  PoseParams pose;
  Camera camera;
  double reprojection_error = 0.0;  // mean pixel distance
  double focal = 0.0;
  bool converged = true;
};

/// Pixels with mask > threshold and their canonical points. The rendered
/// canonical map is opacity-weighted, so it is divided by the mask.
inline CanonicalObservation extract_observation(const RenderOutput& out, double mask_threshold = 0.5) {
  CanonicalObservation obs;
  obs.mask_threshold = mask_threshold;
  obs.width = out.width;
  obs.height = out.height;
  for (int row = 0; row < out.height; ++row)
    for (int col = 0; col < out.width; ++col) {
      const Eigen::Index p = static_cast<Eigen::Index>(row) * out.width + col;
      const double m = out.mask(p, 0);
      if (!(m > mask_threshold) || m <= 0.0) continue;
      const Vec3 x = (out.canonical.row(p).transpose() / m).cwiseMax(-1.0).cwiseMin(1.0);
      obs.pixels.push_back(pixel_center(col, row, out.width, out.height));
      obs.points.push_back(x);
    }
  if (obs.size() < kMinCorrespondences)
    throw InsufficientDataError("extract_observation: " + std::to_string(obs.size()) +
                                " correspondences above the mask threshold, need at least 6");
  return obs;
}

namespace pnp {

/// Mean pixel distance of the projections under (R, t, f).
inline double reprojection_error(const CanonicalObservation& obs, const Mat3& r, const Vec3& t, double f) {
  double total = 0.0;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const Vec3 c = r * obs.points[i] + t;
    if (!(c(2) > 1e-12)) return std::numeric_limits<double>::infinity();
    const Eigen::Vector2d e = f * c.head<2>() / c(2) - obs.pixels[i];
    total += std::hypot(e(0) * obs.width, e(1) * obs.height);
  }
  return total / static_cast<double>(obs.size());
}

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v(2), v(1), v(2), 0, -v(0), -v(1), v(0), 0;
  return m;
}

inline Mat3 so3_exp(const Vec3& w) {
  const double a = w.norm();
  if (a < 1e-12) return Mat3::Identity() + skew(w);
  return Eigen::AngleAxisd(a, w / a).toRotationMatrix();
}

/// Nearest rotation (in Frobenius norm) to m.
inline Mat3 project_to_rotation(const Mat3& m) {
  const Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

/// Least-squares translation for a fixed rotation (linear in t).
inline Vec3 translation_for_rotation(const CanonicalObservation& obs, const Mat3& r, double f) {
  Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
  Vec3 atb = Vec3::Zero();
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const Vec3 x = r * obs.points[i];
    const double u = obs.pixels[i](0), v = obs.pixels[i](1);
    // f (x0 + t0) - u (x2 + t2) = 0, f (x1 + t1) - v (x2 + t2) = 0
    const Eigen::RowVector3d a1(f, 0, -u), a2(0, f, -v);
    const double b1 = u * x(2) - f * x(0), b2 = v * x(2) - f * x(1);
    ata += a1.transpose() * a1 + a2.transpose() * a2;
    atb += a1.transpose() * b1 + a2.transpose() * b2;
  }
  return ata.ldlt().solve(atb);
}

/// Direct linear transform with Hartley normalization. Throws on
/// rank-deficient correspondence sets.
inline std::pair<Mat3, Vec3> dlt(const CanonicalObservation& obs, double f) {
  const auto n = static_cast<Eigen::Index>(obs.size());
  Vec3 c3 = Vec3::Zero();
  Eigen::Vector2d c2 = Eigen::Vector2d::Zero();
  for (std::size_t i = 0; i < obs.size(); ++i) {
    c3 += obs.points[i];
    c2 += obs.pixels[i] / f;
  }
  c3 /= static_cast<double>(n);
  c2 /= static_cast<double>(n);
  double d3 = 0.0, d2 = 0.0;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    d3 += (obs.points[i] - c3).norm();
    d2 += (obs.pixels[i] / f - c2).norm();
  }
  d3 /= static_cast<double>(n);
  d2 /= static_cast<double>(n);
  if (d3 < 1e-12 || d2 < 1e-12) throw DegenerateConfigurationError("pnp: correspondences collapse to a point");
  const double s3 = std::sqrt(3.0) / d3, s2 = std::sqrt(2.0) / d2;

  Mat a = Mat::Zero(2 * n, 12);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto si = static_cast<std::size_t>(i);
    const Vec3 x = s3 * (obs.points[si] - c3);
    const Eigen::Vector2d u = s2 * (obs.pixels[si] / f - c2);
    const Eigen::Vector4d xh(x(0), x(1), x(2), 1.0);
    a.block<1, 4>(2 * i, 0) = xh.transpose();
    a.block<1, 4>(2 * i, 8) = -u(0) * xh.transpose();
    a.block<1, 4>(2 * i + 1, 4) = xh.transpose();
    a.block<1, 4>(2 * i + 1, 8) = -u(1) * xh.transpose();
  }
  const Eigen::JacobiSVD<Mat> svd(a, Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (sv.size() < 12 || sv(10) < 1e-9 * sv(0))
    throw DegenerateConfigurationError("pnp: correspondences are rank deficient (coplanar or collinear points)");
  const Eigen::VectorXd p = svd.matrixV().col(11);
  Eigen::Matrix<double, 3, 4> pn;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) pn(r, c) = p(4 * r + c);

  // Undo the normalizations: P = T2^-1 Pn T3.
  Eigen::Matrix3d t2_inv = Eigen::Matrix3d::Identity();
  t2_inv(0, 0) = t2_inv(1, 1) = 1.0 / s2;
  t2_inv(0, 2) = c2(0);
  t2_inv(1, 2) = c2(1);
  Eigen::Matrix4d t3 = Eigen::Matrix4d::Identity();
  t3.topLeftCorner<3, 3>() *= s3;
  t3.topRightCorner<3, 1>() = -s3 * c3;
  Eigen::Matrix<double, 3, 4> pm = t2_inv * pn * t3;
  if (pm.leftCols<3>().determinant() < 0) pm = -pm;
  const Eigen::JacobiSVD<Mat3> msvd(pm.leftCols<3>(), Eigen::ComputeFullU | Eigen::ComputeFullV);
  const double scale = msvd.singularValues().mean();
  if (!(scale > 0.0)) throw DegenerateConfigurationError("pnp: degenerate projection matrix");
  const Mat3 r = msvd.matrixU() * msvd.matrixV().transpose();
  return {r, pm.col(3) / scale};
}

struct Refined {
  Mat3 r;
  Vec3 t;
  double error = std::numeric_limits<double>::infinity();  // mean pixel distance
  bool converged = false;
};

/// Levenberg-Marquardt on the mean squared reprojection error over a
/// left-multiplied rotation increment and the translation.
inline Refined refine(const CanonicalObservation& obs, Mat3 r, Vec3 t, double f, int max_iters = 100) {
  const auto n = obs.size();
  const double wx = obs.width, wy = obs.height;
  auto cost = [&](const Mat3& rr, const Vec3& tt) {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const Vec3 p = rr * obs.points[i] + tt;
      if (!(p(2) > 1e-12)) return std::numeric_limits<double>::infinity();
      const Eigen::Vector2d e = f * p.head<2>() / p(2) - obs.pixels[i];
      c += wx * wx * e(0) * e(0) + wy * wy * e(1) * e(1);
    }
    return c;
  };
  double lambda = 1e-3;
  double c0 = cost(r, t);
  bool converged = false;
  for (int it = 0; it < max_iters && std::isfinite(c0); ++it) {
    Eigen::Matrix<double, 6, 6> jtj = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> jtr = Eigen::Matrix<double, 6, 1>::Zero();
    for (std::size_t i = 0; i < n; ++i) {
      const Vec3 rx = r * obs.points[i];
      const Vec3 p = rx + t;
      const double iz = 1.0 / p(2);
      Eigen::Matrix<double, 2, 3> dproj;
      dproj << f * iz, 0, -f * p(0) * iz * iz, 0, f * iz, -f * p(1) * iz * iz;
      dproj.row(0) *= wx;
      dproj.row(1) *= wy;
      Eigen::Matrix<double, 3, 6> dp;
      dp.leftCols<3>() = -skew(rx);
      dp.rightCols<3>() = Mat3::Identity();
      const Eigen::Matrix<double, 2, 6> j = dproj * dp;
      Eigen::Vector2d e = f * p.head<2>() * iz - obs.pixels[i];
      e(0) *= wx;
      e(1) *= wy;
      jtj += j.transpose() * j;
      jtr += j.transpose() * e;
    }
    bool accepted = false;
    for (int tries = 0; tries < 10 && !accepted; ++tries) {
      Eigen::Matrix<double, 6, 6> h = jtj;
      h.diagonal() += lambda * (jtj.diagonal().array() + 1e-12).matrix();
      const Eigen::Matrix<double, 6, 1> delta = -h.ldlt().solve(jtr);
      const Mat3 r1 = so3_exp(delta.head<3>()) * r;
      const Vec3 t1 = t + delta.tail<3>();
      const double c1 = cost(r1, t1);
      if (c1 <= c0) {
        const bool small = delta.norm() < 1e-12 * (1.0 + t.norm()) || c0 - c1 <= 1e-15 * (1.0 + c0);
        r = project_to_rotation(r1);
        t = t1;
        c0 = c1;
        lambda = std::max(lambda * 0.3, 1e-12);
        accepted = true;
        if (small) converged = true;
      } else {
        lambda *= 10.0;
      }
    }
    if (!accepted || converged) {
      converged = true;
      break;
    }
  }
  Refined out{r, t, reprojection_error(obs, r, t, f), converged};
  return out;
}

}  // namespace pnp

struct PnPConfig {
  int restarts = 4;
  int max_iters = 100;
  std::uint64_t seed = 0x9A9;
};

/// Full perspective pose for a fixed focal: DLT initialization, then
/// Levenberg-Marquardt refinement from the DLT estimate and from random
/// rotations; the lowest reprojection error wins.
inline PnPSolution solve_pnp(const CanonicalObservation& obs, double focal, const PnPConfig& cfg = {}) {
  if (obs.pixels.size() != obs.points.size()) throw StructuralError("solve_pnp: pixel and point counts differ");
  if (obs.size() < kMinCorrespondences) throw InsufficientDataError("solve_pnp: need at least 6 correspondences");
  if (!(focal > 1.0)) throw StructuralError("solve_pnp: focal must exceed 1");
  const auto [r0, t0] = pnp::dlt(obs, focal);
  pnp::Refined best = pnp::refine(obs, r0, t0, focal, cfg.max_iters);
  Rng rng(cfg.seed);
  for (int k = 0; k < cfg.restarts; ++k) {
    Quat q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    const Mat3 r = quaternion_to_matrix(q.norm() > 1e-12 ? q.normalized() : identity_quat());
    const pnp::Refined cand = pnp::refine(obs, r, pnp::translation_for_rotation(obs, r, focal), focal, cfg.max_iters);
    if (cand.error < best.error) best = cand;
  }
  if (!std::isfinite(best.error) || !(best.t(2) > 0.0))
    throw DegenerateConfigurationError("solve_pnp: no solution places the object in front of the camera");
  PnPSolution sol;
  sol.camera.rotation = best.r;
  sol.camera.translation = best.t;
  sol.camera.focal = focal;
  sol.camera.scale = focal / best.t(2);
  sol.camera.t2 = best.t.head<2>() * sol.camera.scale;
  sol.pose = camera_to_pose(sol.camera);
  sol.reprojection_error = best.error;
  sol.focal = focal;
  sol.converged = best.converged;
  return sol;
}

/// Runs solve_pnp for every candidate focal (ascending) and keeps the
/// solution with the lowest reprojection error; ties go to the smaller focal.
inline PnPSolution solve_pnp_focal_sweep(const CanonicalObservation& obs, const std::vector<double>& focal_candidates,
                                         const PnPConfig& cfg = {}) {
  if (focal_candidates.empty()) throw StructuralError("focal sweep: no candidates");
  if (!std::is_sorted(focal_candidates.begin(), focal_candidates.end()))
    throw StructuralError("focal sweep: candidates must be sorted ascending");
  const auto n = static_cast<int>(focal_candidates.size());
  std::vector<std::optional<PnPSolution>> sols(focal_candidates.size());
  std::vector<std::string> failures(focal_candidates.size());
  parallel_for(n, [&](int i) {
    const auto si = static_cast<std::size_t>(i);
    try {
      sols[si] = solve_pnp(obs, focal_candidates[si], cfg);
    } catch (const DegenerateConfigurationError& e) {
      failures[si] = e.what();
    }
  });
  const PnPSolution* best = nullptr;
  for (const auto& s : sols)
    if (s && (!best || s->reprojection_error < best->reprojection_error)) best = &*s;
  if (!best) {
    std::string msg = "focal sweep: every candidate is degenerate:";
    for (std::size_t i = 0; i < failures.size(); ++i)
      msg += " [f=" + std::to_string(focal_candidates[i]) + "] " + failures[i];
    throw DegenerateConfigurationError(msg);
  }
  return *best;
}

/// Ten representative focals: the midpoints of the ten decile bins
/// (quantiles 0.05, 0.15, ..., 0.95) of the training focals, ascending.
inline std::vector<double> focal_percentiles(std::vector<double> focals, int count = 10) {
  if (focals.empty()) throw InsufficientDataError("focal_percentiles: no training focals");
  std::sort(focals.begin(), focals.end());
  std::vector<double> out;
  for (int k = 0; k < count; ++k) {
    const double q = (k + 0.5) / count * static_cast<double>(focals.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(q));
    const std::size_t hi = std::min(lo + 1, focals.size() - 1);
    out.push_back(focals[lo] + (q - static_cast<double>(lo)) * (focals[hi] - focals[lo]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bootstrap dataset

struct DatasetRecord {
  LatentCode w;
  PoseParams pose;
  RenderOutput out;  // rgb, mask, canonical (and depth/semantic when rendered)
};

using LatentSampler = std::function<LatentCode(Rng&)>;
using PoseSampler = std::function<PoseParams(Rng&)>;

/// z ~ N(0, I) mapped to W.
inline LatentSampler prior_latent_sampler(const Generator& gen) {
  return [&gen](Rng& rng) { return mapping(gen, rng.normal_mat(1, gen.cfg.dim_z)); };
}

/// Random convex combinations of known codes, for generators fitted to a
/// handful of scenes whose prior is not trained.
inline LatentSampler code_mixture_sampler(std::vector<LatentCode> codes) {
  if (codes.empty()) throw InsufficientDataError("code_mixture_sampler: no codes");
  return [codes = std::move(codes)](Rng& rng) {
    std::vector<double> a(codes.size());
    double total = 0.0;
    for (double& x : a) total += (x = -std::log(rng.uniform()));
    LatentCode out{Mat::Zero(codes.front().w.rows(), codes.front().w.cols())};
    for (std::size_t i = 0; i < codes.size(); ++i) out.w += a[i] / total * codes[i].w;
    return out;
  };
}

inline PoseSampler pose_sampler(PoseDistribution dist) {
  return [dist](Rng& rng) { return dist.sample(rng); };
}

struct BootstrapConfig {
  int width = 32, height = 32;
  RenderConfig render{32, 32, true, 0, 128};
  std::uint64_t seed = 0;
};

/// Renders n_scenes random (latent, viewpoint) pairs. Record i depends only
/// on (seed, i).
inline std::vector<DatasetRecord> generate_bootstrap_dataset(const Generator& gen, int n_scenes,
                                                             const LatentSampler& latents, const PoseSampler& poses,
                                                             const BootstrapConfig& cfg = {}) {
  if (n_scenes < 0) throw StructuralError("bootstrap dataset: n_scenes must be >= 0");
  std::vector<DatasetRecord> records;
  records.reserve(static_cast<std::size_t>(n_scenes));
  for (int i = 0; i < n_scenes; ++i) {
    Rng rng(hash_combine(cfg.seed, static_cast<std::uint64_t>(i)));
    DatasetRecord rec;
    rec.w = latents(rng);
    rec.pose = poses(rng);
    check_pose(rec.pose);
    const TriplaneField field = decode_field(gen, rec.w);
    RenderConfig rc = cfg.render;
    rc.seed = hash_combine(cfg.seed ^ 0xB007, static_cast<std::uint64_t>(i));
    rec.out = render(TriplaneSource(field), pose_to_camera(rec.pose), cfg.width, cfg.height, rc);
    records.push_back(std::move(rec));
  }
  return records;
}

/// One subdirectory per record (scene_00000, ...) holding rgb.ppm,
/// mask.pgm, canonical.raw and meta.
inline void write_dataset(const io::fs::path& dir, const std::vector<DatasetRecord>& records) {
  std::error_code ec;
  io::fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  for (std::size_t i = 0; i < records.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%05zu", i);
    const io::fs::path sub = dir / name;
    const DatasetRecord& r = records[i];
    io::write_ppm(sub / "rgb.ppm", r.out.rgb, r.out.width, r.out.height);
    io::write_pgm16(sub / "mask.pgm", r.out.mask, r.out.width, r.out.height);
    io::write_raw(sub / "canonical.raw", r.out.canonical, r.out.width, r.out.height);
    io::write_meta(sub / "meta", {{"w_rows", {static_cast<double>(r.w.w.rows())}},
                                  {"w", std::vector<double>(r.w.w.data(), r.w.w.data() + r.w.w.size())},
                                  {"pose", io::pose_values(r.pose)}});
  }
}

inline std::vector<DatasetRecord> read_dataset(const io::fs::path& dir) {
  if (!io::fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  std::vector<io::fs::path> subs;
  for (const auto& e : io::fs::directory_iterator(dir))
    if (e.is_directory()) subs.push_back(e.path());
  std::sort(subs.begin(), subs.end());
  std::vector<DatasetRecord> records;
  for (const auto& sub : subs) {
    DatasetRecord r;
    const auto meta = io::read_meta(sub / "meta");
    const auto wr = meta.find("w_rows"), wv = meta.find("w"), pv = meta.find("pose");
    if (wr == meta.end() || wv == meta.end() || pv == meta.end() || wr->second.size() != 1)
      throw IoError("incomplete meta in " + sub.string());
    const auto rows = static_cast<Eigen::Index>(wr->second[0]);
    if (rows < 1 || wv->second.empty() || wv->second.size() % static_cast<std::size_t>(rows) != 0)
      throw IoError("malformed latent in " + sub.string());
    r.w.w = Eigen::Map<const Mat>(wv->second.data(), rows, static_cast<Eigen::Index>(wv->second.size()) / rows);
    r.pose = io::pose_from_values(pv->second);
    const io::Image rgb = io::read_ppm(sub / "rgb.ppm");
    const io::Image mask = io::read_pgm16(sub / "mask.pgm");
    const io::Image can = io::read_raw(sub / "canonical.raw");
    if (mask.width != rgb.width || can.width != rgb.width || mask.height != rgb.height || can.height != rgb.height)
      throw IoError("image sizes disagree in " + sub.string());
    r.out.width = rgb.width;
    r.out.height = rgb.height;
    r.out.rgb = rgb.pixels;
    r.out.mask = mask.pixels;
    r.out.canonical = can.pixels;
    records.push_back(std::move(r));
  }
  return records;
}

// ---------------------------------------------------------------------------
// Losses of the feed-forward predictor

/// ||w_hat - w||^2
inline double latent_loss(const Mat& w_hat, const Mat& w) {
  if (w_hat.rows() != w.rows() || w_hat.cols() != w.cols()) throw StructuralError("latent_loss: shape mismatch");
  return (w_hat - w).squaredNorm();
}

/// Mean absolute mask difference.
inline double mask_loss(const Mat& m_hat, const Mat& m) {
  if (m_hat.rows() != m.rows() || m_hat.cols() != m.cols() || m.size() == 0)
    throw StructuralError("mask_loss: shape mismatch");
  return (m_hat - m).cwiseAbs().mean();
}

/// Mask-weighted mean Euclidean distance between canonical maps [HW,3].
inline double map_loss(const Mat& p_hat, const Mat& p, const Mat& m) {
  if (p_hat.rows() != p.rows() || p_hat.cols() != 3 || p.cols() != 3 || m.rows() != p.rows() || p.rows() == 0)
    throw StructuralError("map_loss: shape mismatch");
  return (m.col(0).array() * (p_hat - p).rowwise().norm().array()).mean();
}

// ---------------------------------------------------------------------------
// Ridge regressor from images to latent codes

/// Box-filtered rgb at side x side, flattened row-major, followed by the
/// mean foreground color and its second moments (less pose dependent).
/// Background pixels are exactly 0. Size side*side*3 + 9.
inline Mat image_features(const Mat& rgb, int width, int height, int side = 8) {
  if (rgb.rows() != static_cast<Eigen::Index>(width) * height || rgb.cols() != 3)
    throw StructuralError("image_features: expected [W*H,3] rgb");
  if (side < 1) throw StructuralError("image_features: side must be >= 1");
  const Eigen::Index grid = static_cast<Eigen::Index>(side) * side * 3;
  Mat f = Mat::Zero(1, grid + 9);
  Mat count = Mat::Zero(1, static_cast<Eigen::Index>(side) * side);
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  Eigen::Matrix3d second = Eigen::Matrix3d::Zero();
  double fg = 0.0;
  for (int row = 0; row < height; ++row)
    for (int col = 0; col < width; ++col) {
      const Eigen::Index p = static_cast<Eigen::Index>(row) * width + col;
      const int cell = (row * side / height) * side + col * side / width;
      for (int k = 0; k < 3; ++k) f(0, 3 * cell + k) += rgb(p, k);
      count(0, cell) += 1.0;
      const Eigen::Vector3d c = rgb.row(p).transpose();
      if (c.sum() > 1e-6) {
        mean += c;
        second += c * c.transpose();
        fg += 1.0;
      }
    }
  for (Eigen::Index c = 0; c < count.cols(); ++c)
    if (count(0, c) > 0)
      for (int k = 0; k < 3; ++k) f(0, 3 * c + k) /= count(0, c);
  if (fg > 0) {
    mean /= fg;
    second /= fg;
  }
  for (int k = 0; k < 3; ++k) f(0, grid + k) = mean(k);
  int j = 3;
  for (int a = 0; a < 3; ++a)
    for (int b = a; b < 3; ++b) f(0, grid + j++) = second(a, b);
  return f;
}

struct LatentRegressor {
  int side = 8;
  Eigen::Index w_rows = 1, w_cols = 0;
  Mat feature_mean;  // [1,F]
  Mat target_mean;   // [1,D]
  Mat coef;          // [F,D]
  double lambda = 0.0;
  double train_mse = 0.0;  // mean squared error per latent entry on the training set

  [[nodiscard]] LatentCode predict(const Mat& rgb, int width, int height) const {
    const Mat f = image_features(rgb, width, height, side);
    if (f.cols() != coef.rows()) throw StructuralError("regressor: feature size mismatch");
    const Mat y = target_mean + (f - feature_mean) * coef;
    return LatentCode{Eigen::Map<const Mat>(y.data(), w_rows, w_cols)};
  }
};

struct RegressorConfig {
  int side = 8;
  double lambda = 1e-3;
  double lambda_floor = 1e-8;  // relative to the mean feature variance
};

/// Ridge regression with an unpenalized intercept on centred features.
inline LatentRegressor fit_latent_regressor(const std::vector<DatasetRecord>& data, const RegressorConfig& cfg = {}) {
  if (data.empty()) throw InsufficientDataError("fit_latent_regressor: empty dataset");
  LatentRegressor reg;
  reg.side = cfg.side;
  reg.w_rows = data.front().w.w.rows();
  reg.w_cols = data.front().w.w.cols();
  const auto n = static_cast<Eigen::Index>(data.size());
  const Eigen::Index fdim = static_cast<Eigen::Index>(cfg.side) * cfg.side * 3 + 9, ddim = reg.w_rows * reg.w_cols;
  Mat x(n, fdim), y(n, ddim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const DatasetRecord& r = data[static_cast<std::size_t>(i)];
    if (r.w.w.rows() != reg.w_rows || r.w.w.cols() != reg.w_cols)
      throw StructuralError("fit_latent_regressor: latent shapes differ across records");
    x.row(i) = image_features(r.out.rgb, r.out.width, r.out.height, cfg.side);
    y.row(i) = Eigen::Map<const Mat>(r.w.w.data(), 1, ddim);
  }
  reg.feature_mean = x.colwise().mean();
  reg.target_mean = y.colwise().mean();
  const Mat xc = x.rowwise() - reg.feature_mean.row(0);
  const Mat yc = y.rowwise() - reg.target_mean.row(0);
  Mat gram = xc.transpose() * xc;
  const double scale = std::max(gram.trace() / static_cast<double>(fdim), 1e-12);
  reg.lambda = std::max(cfg.lambda * scale, cfg.lambda_floor * scale);
  gram.diagonal().array() += reg.lambda;
  reg.coef = gram.ldlt().solve(xc.transpose() * yc);
  if (!reg.coef.allFinite()) throw NumericalAbort("fit_latent_regressor: non-finite coefficients");
  reg.train_mse = (xc * reg.coef - yc).squaredNorm() / static_cast<double>(y.size());
  return reg;
}

/// Regressor plus the focal candidates of its training set, as a meta file.
inline void save_regressor(const io::fs::path& path, const LatentRegressor& reg, const std::vector<double>& focals) {
  auto flat = [](const Mat& m) { return std::vector<double>(m.data(), m.data() + m.size()); };
  io::write_meta(path, {{"side", {static_cast<double>(reg.side)}},
                        {"w_shape", {static_cast<double>(reg.w_rows), static_cast<double>(reg.w_cols)}},
                        {"lambda", {reg.lambda}},
                        {"train_mse", {reg.train_mse}},
                        {"feature_mean", flat(reg.feature_mean)},
                        {"target_mean", flat(reg.target_mean)},
                        {"coef", flat(reg.coef)},
                        {"focals", focals}});
}

inline LatentRegressor load_regressor(const io::fs::path& path, std::vector<double>* focals = nullptr) {
  const auto meta = io::read_meta(path);
  auto entry = [&](const char* key) -> const std::vector<double>& {
    const auto it = meta.find(key);
    if (it == meta.end()) throw IoError("regressor file " + path.string() + ": missing " + key);
    return it->second;
  };
  LatentRegressor reg;
  reg.side = static_cast<int>(entry("side").at(0));
  reg.w_rows = static_cast<Eigen::Index>(entry("w_shape").at(0));
  reg.w_cols = static_cast<Eigen::Index>(entry("w_shape").at(1));
  reg.lambda = entry("lambda").at(0);
  reg.train_mse = entry("train_mse").at(0);
  const Eigen::Index fdim = static_cast<Eigen::Index>(reg.side) * reg.side * 3 + 9, ddim = reg.w_rows * reg.w_cols;
  const auto& fm = entry("feature_mean");
  const auto& tm = entry("target_mean");
  const auto& coef = entry("coef");
  if (static_cast<Eigen::Index>(fm.size()) != fdim || static_cast<Eigen::Index>(tm.size()) != ddim ||
      static_cast<Eigen::Index>(coef.size()) != fdim * ddim)
    throw IoError("regressor file " + path.string() + ": shape mismatch");
  reg.feature_mean = Eigen::Map<const Mat>(fm.data(), 1, fdim);
  reg.target_mean = Eigen::Map<const Mat>(tm.data(), 1, ddim);
  reg.coef = Eigen::Map<const Mat>(coef.data(), fdim, ddim);
  if (focals) *focals = entry("focals");
  return reg;
}

}  // namespace radinv
