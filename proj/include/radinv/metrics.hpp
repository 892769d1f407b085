#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "radinv/geometry.hpp"
#include "radinv/renderer.hpp"

namespace radinv {

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) for images in [0,1]; identical images give kPsnrCap.
inline double psnr(const Mat& pred, const Mat& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) throw StructuralError("psnr: image shapes differ");
  if (pred.size() == 0) throw StructuralError("psnr: empty image");
  const double mse = (pred - gt).squaredNorm() / static_cast<double>(pred.size());
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

/// Intersection over union of masks thresholded at `threshold` (strictly
/// greater counts as foreground). Two empty masks have IoU 1.
inline double mask_iou(const Mat& a, const Mat& b, double threshold = 0.5) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw StructuralError("mask_iou: mask shapes differ");
  std::size_t inter = 0, uni = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const bool fa = a.data()[i] > threshold, fb = b.data()[i] > threshold;
    inter += static_cast<std::size_t>(fa && fb);
    uni += static_cast<std::size_t>(fa || fb);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

struct SceneMetrics {
  std::string name;
  double psnr = 0.0;
  double iou = 0.0;
  double rotation_error_deg = std::numeric_limits<double>::quiet_NaN();
};

struct MetricReport {
  double psnr = 0.0;
  double iou = 0.0;
  double rotation_error_deg = std::numeric_limits<double>::quiet_NaN();
  std::vector<SceneMetrics> scenes;

  /// Means over the per-scene entries (rotation ignores NaN entries).
  void summarize() {
    if (scenes.empty()) return;
    psnr = iou = 0.0;
    double rot = 0.0;
    int n_rot = 0;
    for (const SceneMetrics& s : scenes) {
      psnr += s.psnr;
      iou += s.iou;
      if (!std::isnan(s.rotation_error_deg)) {
        rot += s.rotation_error_deg;
        ++n_rot;
      }
    }
    psnr /= static_cast<double>(scenes.size());
    iou /= static_cast<double>(scenes.size());
    rotation_error_deg = n_rot ? rot / n_rot : std::numeric_limits<double>::quiet_NaN();
  }
};

/// PSNR of the rgb images (background already composited to 0) and mask IoU.
inline SceneMetrics metrics(const RenderOutput& pred, const RenderOutput& gt) {
  if (pred.width != gt.width || pred.height != gt.height) throw StructuralError("metrics: image sizes differ");
  SceneMetrics m;
  m.psnr = psnr(pred.rgb, gt.rgb);
  m.iou = mask_iou(pred.mask, gt.mask);
  return m;
}

inline SceneMetrics metrics(const RenderOutput& pred, const RenderOutput& gt, const PoseParams& pred_pose,
                            const PoseParams& gt_pose) {
  SceneMetrics m = metrics(pred, gt);
  m.rotation_error_deg = rotation_error(pred_pose.q, gt_pose.q);
  return m;
}

}  // namespace radinv
