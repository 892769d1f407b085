#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "radinv/field.hpp"
#include "radinv/metrics.hpp"
#include "radinv/optim.hpp"
#include "radinv/pose_estimation.hpp"
#include "radinv/renderer.hpp"

// Hybrid inversion: a feed-forward guess of (latent, pose), refined by Adam
// on an augmented image distance.

namespace radinv {

// ---------------------------------------------------------------------------
// Image augmentations and distances. Images are [W*H, C] row-major pixels.

struct AugmentConfig {
  double scale_min = 0.8, scale_max = 1.2;
  double translate = 0.1;  // fraction of the image side
  double rotate_deg = 10.0;
};

/// Bilinear resampling as a sparse linear map: output pixel i reads up to
/// four input pixels. Out-of-image taps read zero.
struct Warp {
  int width = 0, height = 0;
  std::vector<std::array<int, 4>> idx;  // -1 for taps outside the image
  std::vector<std::array<double, 4>> wts;
};

/// out(p) = in(T^-1 p) with T(x) = s R(angle) x + t in centred normalized
/// image coordinates.
inline Warp make_warp(int width, int height, double scale, double tx, double ty, double angle_rad) {
  if (width < 1 || height < 1) throw StructuralError("warp: empty image");
  if (!(scale > 0.0)) throw StructuralError("warp: scale must be > 0");
  Warp w;
  w.width = width;
  w.height = height;
  const auto n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  w.idx.resize(n);
  w.wts.resize(n);
  const double c = std::cos(angle_rad), s = std::sin(angle_rad);
  for (int row = 0; row < height; ++row)
    for (int col = 0; col < width; ++col) {
      const Eigen::Vector2d p = pixel_center(col, row, width, height) - Eigen::Vector2d(tx, ty);
      const double sx = (c * p(0) + s * p(1)) / scale, sy = (-s * p(0) + c * p(1)) / scale;
      const double fx = (sx + 0.5) * width - 0.5, fy = (sy + 0.5) * height - 0.5;
      const int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
      const double ax = fx - x0, ay = fy - y0;
      const std::size_t o = static_cast<std::size_t>(row) * static_cast<std::size_t>(width) + static_cast<std::size_t>(col);
      const int xs[4] = {x0, x0 + 1, x0, x0 + 1}, ys[4] = {y0, y0, y0 + 1, y0 + 1};
      const double ws[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
      for (std::size_t k = 0; k < 4; ++k) {
        const bool inside = xs[k] >= 0 && xs[k] < width && ys[k] >= 0 && ys[k] < height;
        w.idx[o][k] = inside ? ys[k] * width + xs[k] : -1;
        w.wts[o][k] = inside ? ws[k] : 0.0;
      }
    }
  return w;
}

inline Warp random_warp(int width, int height, const AugmentConfig& a, Rng& rng) {
  const double scale = rng.uniform(a.scale_min, a.scale_max);
  const double tx = rng.uniform(-a.translate, a.translate), ty = rng.uniform(-a.translate, a.translate);
  const double angle = rng.uniform(-a.rotate_deg, a.rotate_deg) * kPi / 180.0;
  return make_warp(width, height, scale, tx, ty, angle);
}

inline Mat apply_warp(const Warp& w, const Mat& img) {
  if (img.rows() != static_cast<Eigen::Index>(w.idx.size())) throw StructuralError("warp: image size mismatch");
  Mat out = Mat::Zero(img.rows(), img.cols());
  for (std::size_t o = 0; o < w.idx.size(); ++o)
    for (std::size_t k = 0; k < 4; ++k)
      if (w.idx[o][k] >= 0) out.row(static_cast<Eigen::Index>(o)) += w.wts[o][k] * img.row(w.idx[o][k]);
  return out;
}

inline Mat apply_warp_transpose(const Warp& w, const Mat& g) {
  Mat out = Mat::Zero(g.rows(), g.cols());
  for (std::size_t o = 0; o < w.idx.size(); ++o)
    for (std::size_t k = 0; k < 4; ++k)
      if (w.idx[o][k] >= 0) out.row(w.idx[o][k]) += w.wts[o][k] * g.row(static_cast<Eigen::Index>(o));
  return out;
}

/// 2x2 box downsampling; a trailing odd row or column is dropped.
inline Mat downsample2(const Mat& img, int width, int height) {
  const int w2 = width / 2, h2 = height / 2;
  Mat out(static_cast<Eigen::Index>(w2) * h2, img.cols());
  for (int r = 0; r < h2; ++r)
    for (int c = 0; c < w2; ++c) {
      const Eigen::Index a = static_cast<Eigen::Index>(2 * r) * width + 2 * c;
      out.row(static_cast<Eigen::Index>(r) * w2 + c) =
          0.25 * (img.row(a) + img.row(a + 1) + img.row(a + width) + img.row(a + width + 1));
    }
  return out;
}

inline Mat downsample2_transpose(const Mat& g, int width, int height) {
  const int w2 = width / 2, h2 = height / 2;
  Mat out = Mat::Zero(static_cast<Eigen::Index>(width) * height, g.cols());
  for (int r = 0; r < h2; ++r)
    for (int c = 0; c < w2; ++c) {
      const Eigen::Index a = static_cast<Eigen::Index>(2 * r) * width + 2 * c;
      const auto gr = 0.25 * g.row(static_cast<Eigen::Index>(r) * w2 + c);
      out.row(a) += gr;
      out.row(a + 1) += gr;
      out.row(a + width) += gr;
      out.row(a + width + 1) += gr;
    }
  return out;
}

/// Distance between two images; writes d/da into grad_a when non-null.
using ImageDistance = std::function<double(const Mat& a, const Mat& b, int width, int height, Mat* grad_a)>;

/// Mean absolute difference averaged over a pyramid of `levels` 2x
/// downsamplings (fewer when the image gets too small).
inline double multiscale_l1(const Mat& a, const Mat& b, int width, int height, Mat* grad_a, int levels = 3) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() != static_cast<Eigen::Index>(width) * height)
    throw StructuralError("multiscale_l1: image shapes differ");
  std::vector<Mat> diffs = {a - b};
  std::vector<std::pair<int, int>> sizes = {{width, height}};
  while (static_cast<int>(diffs.size()) < levels && sizes.back().first >= 2 && sizes.back().second >= 2) {
    const auto [w, h] = sizes.back();
    diffs.push_back(downsample2(diffs.back(), w, h));
    sizes.emplace_back(w / 2, h / 2);
  }
  const auto n_levels = static_cast<double>(diffs.size());
  double total = 0.0;
  for (const Mat& d : diffs) total += d.cwiseAbs().mean() / n_levels;
  if (grad_a) {
    Mat g = Mat::Zero(diffs.back().rows(), diffs.back().cols());
    for (std::size_t l = diffs.size(); l-- > 0;) {
      const Mat& d = diffs[l];
      g += d.unaryExpr([](double x) { return static_cast<double>((x > 0) - (x < 0)); }) /
           (static_cast<double>(d.size()) * n_levels);
      if (l > 0) g = downsample2_transpose(g, sizes[l - 1].first, sizes[l - 1].second);
    }
    *grad_a = std::move(g);
  }
  return total;
}

struct LossAndGrad {
  double value = 0.0;
  Mat grad;  // d value / d pred
};

/// (1/K) sum_k D(A_k(pred), A_k(target)) with random geometric warps A_k
/// shared between pred and target. The warps depend only on (seed, k).
inline LossAndGrad augmented_loss(const Mat& pred, const Mat& target, int width, int height, int k_aug,
                                  std::uint64_t seed, const AugmentConfig& aug = {}, const ImageDistance& dist = {}) {
  if (k_aug < 1) throw StructuralError("augmented_loss: K must be >= 1");
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw StructuralError("augmented_loss: image shapes differ");
  LossAndGrad out;
  out.grad = Mat::Zero(pred.rows(), pred.cols());
  for (int k = 0; k < k_aug; ++k) {
    Rng rng(hash_combine(seed, static_cast<std::uint64_t>(k)));
    const Warp w = random_warp(width, height, aug, rng);
    const Mat pa = apply_warp(w, pred), ta = apply_warp(w, target);
    Mat g;
    out.value += (dist ? dist(pa, ta, width, height, &g) : multiscale_l1(pa, ta, width, height, &g)) / k_aug;
    out.grad += apply_warp_transpose(w, g) / k_aug;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bootstrapping

struct InitialGuess {
  LatentCode latent;  // expanded to W+
  PoseParams pose;
  std::optional<PnPSolution> pnp;
};

struct OracleNoise {
  double rotation_deg = 0.0;
  double latent_sigma = 0.0;
  std::uint64_t seed = 0;
};

/// Ground truth perturbed by an exact rotation of `rotation_deg` about a
/// random axis and Gaussian noise on every latent entry.
inline InitialGuess bootstrap_oracle(const LatentCode& latent, const PoseParams& pose, const OracleNoise& noise) {
  Rng rng(hash_combine(noise.seed, 0x0AC1E));
  InitialGuess g;
  g.latent = latent;
  if (noise.latent_sigma > 0.0) g.latent.w += rng.normal_mat(latent.w.rows(), latent.w.cols(), noise.latent_sigma);
  g.latent = g.latent.expanded();
  g.pose = noise.rotation_deg != 0.0 ? perturb_rotation(pose, noise.rotation_deg, rng) : pose;
  return g;
}

/// Latent from the regressor, pose from PnP on the canonical map with a
/// focal sweep. PnP errors propagate.
inline InitialGuess bootstrap_regressor(const LatentRegressor& reg, const RenderOutput& image,
                                        const std::vector<double>& focal_candidates, double mask_threshold = 0.5) {
  InitialGuess g;
  g.latent = reg.predict(image.rgb, image.width, image.height).expanded();
  g.pnp = solve_pnp_focal_sweep(extract_observation(image, mask_threshold), focal_candidates);
  g.pose = g.pnp->pose;
  return g;
}

// ---------------------------------------------------------------------------
// Refinement

struct InversionConfig {
  int n_steps = 30;
  double base_lr = 0.02;
  double latent_gain = 5.0;  // latent lr = base_lr * gain; the pose uses base_lr
  double beta1 = 0.9;
  double beta2 = 0.95;
  int n_augment = 16;
  LatentMode latent_mode = LatentMode::kWPlus;
  std::string schedule = "constant";  // or "cosine"
  bool optimize_latent = true;
  bool optimize_pose = true;
  AugmentConfig augment;
  RenderConfig render = default_render();
  std::uint64_t seed = 0;
  ImageDistance distance;  // empty: multiscale_l1

  void validate() const {
    if (n_steps < 0) throw StructuralError("inversion: n_steps must be >= 0");
    if (!(latent_gain >= 1.0)) throw StructuralError("inversion: latent_gain must be >= 1");
    if (!(base_lr > 0.0)) throw StructuralError("inversion: base_lr must be > 0");
    if (n_augment < 1) throw StructuralError("inversion: n_augment must be >= 1");
    if (schedule != "constant" && schedule != "cosine")
      throw StructuralError("inversion: unknown schedule '" + schedule + "'");
    render.validate();
  }

  static RenderConfig default_render() {
    RenderConfig r{32, 32, true, 0, 128};
    r.differentiable_sample_positions = true;
    return r;
  }

  [[nodiscard]] double lr_factor(int step) const {
    if (schedule == "cosine" && n_steps > 0) return 0.5 * (1.0 + std::cos(kPi * step / n_steps));
    return 1.0;
  }
};

struct InversionState {
  LatentCode latent;
  PoseParams pose;
  Adam adam;
  int step = 0;
  // One entry per evaluation: before every update and once at the end.
  std::vector<double> loss_trace;
  std::vector<double> psnr_trace;
  std::vector<double> rotation_error_trace;  // filled when a reference pose is given
  RenderOutput render;                       // last evaluated render
};

struct InversionAborted : NumericalAbort {
  InversionState state;
  InversionAborted(const std::string& msg, InversionState s) : NumericalAbort(msg), state(std::move(s)) {}
};

struct StepEval {
  double loss = 0.0;
  RenderOutput out;
  Mat g_latent;  // empty when not requested
  Mat g_pose;    // [1,8]
};

namespace detail {

inline Mat pose_gradient(const PoseParams& pose, const Mat& camera_grad, Projection mode) {
  ad::Tape tape;
  const ad::Var p = tape.leaf(pose.to_row(), true);
  tape.backward(std::vector<std::pair<ad::Var, Mat>>{{ad::pose_to_camera(p, mode), camera_grad}});
  return tape.grad(p);
}

/// Render, loss and gradients for a fixed source (latent not optimized).
template <class Source>
StepEval evaluate_fixed(const Source& source, const PoseParams& pose, const RenderOutput& target,
                        const InversionConfig& cfg, int step, bool grads) {
  const Camera cam = pose_to_camera(pose);
  const SamplePlan plan = plan_samples(source, cam, target.width, target.height, cfg.render);
  StepEval e;
  e.out = render_planned(source, cam, plan, cfg.render);
  const LossAndGrad l = augmented_loss(e.out.rgb, target.rgb, target.width, target.height, cfg.n_augment,
                                       hash_combine(cfg.seed, static_cast<std::uint64_t>(step)), cfg.augment,
                                       cfg.distance);
  e.loss = l.value;
  if (!grads || !std::isfinite(e.loss)) return e;
  RenderAdjoint adj;
  adj.rgb = l.grad;
  const RenderGrads rg = render_vjp(source, cam, plan, cfg.render, adj);
  e.g_pose = pose_gradient(pose, rg.camera, Projection::kPerspective);
  return e;
}

inline StepEval evaluate_latent(const Generator& gen, const LatentCode& latent, const PoseParams& pose,
                                const RenderOutput& target, const InversionConfig& cfg, int step, bool grads) {
  const TriplaneField field = decode_field(gen, latent);
  const TriplaneSource source(field);
  const Camera cam = pose_to_camera(pose);
  const SamplePlan plan = plan_samples(source, cam, target.width, target.height, cfg.render);
  StepEval e;
  e.out = render_planned(source, cam, plan, cfg.render);
  const LossAndGrad l = augmented_loss(e.out.rgb, target.rgb, target.width, target.height, cfg.n_augment,
                                       hash_combine(cfg.seed, static_cast<std::uint64_t>(step)), cfg.augment,
                                       cfg.distance);
  e.loss = l.value;
  if (!grads || !std::isfinite(e.loss)) return e;
  RenderAdjoint adj;
  adj.rgb = l.grad;
  const RenderGrads rg = render_vjp(source, cam, plan, cfg.render, adj);
  e.g_pose = pose_gradient(pose, rg.camera, Projection::kPerspective);
  if (cfg.optimize_latent && rg.source.empty()) {
    e.g_latent = Mat::Zero(latent.w.rows(), latent.w.cols());  // every ray missed the cube
  } else if (cfg.optimize_latent) {
    ad::Tape tape;
    const GeneratorVars g = bind_generator(tape, gen);
    const ad::Var w = tape.leaf(latent.w, true);
    const ad::Var planes = synthesize_planes(gen.cfg, g, w);
    const ad::Var values = color_values(gen.cfg, g, w);
    tape.backward(std::vector<std::pair<ad::Var, Mat>>{{planes, rg.source[TriplaneSource::kLeafPlanes]},
                                                       {values, rg.source[TriplaneSource::kLeafValues]}});
    e.g_latent = tape.grad(w);
  }
  return e;
}

/// Shared Adam loop. eval(latent, pose, step, need_grads) -> StepEval.
template <class Eval>
InversionState run_inversion(const LatentCode& init_latent, const PoseParams& init_pose, const RenderOutput& target,
                             const InversionConfig& cfg, Eval&& eval, const PoseParams* reference_pose,
                             const std::function<void(const InversionState&)>& on_eval) {
  cfg.validate();
  check_pose(init_pose);
  InversionState st;
  st.latent = init_latent;
  st.pose = init_pose;
  st.pose.q.normalize();
  st.adam = Adam(AdamConfig{cfg.base_lr, cfg.beta1, cfg.beta2, 1e-8});
  auto record = [&](const StepEval& e) {
    st.loss_trace.push_back(e.loss);
    st.psnr_trace.push_back(psnr(e.out.rgb.cwiseMax(0.0).cwiseMin(1.0), target.rgb));
    if (reference_pose) st.rotation_error_trace.push_back(rotation_error(st.pose.q, reference_pose->q));
    st.render = e.out;
    if (on_eval) on_eval(st);
  };
  for (int k = 0; k < cfg.n_steps; ++k) {
    st.step = k;
    StepEval e = eval(st.latent, st.pose, k, true);
    if (!std::isfinite(e.loss)) throw InversionAborted("inversion: non-finite loss at step " + std::to_string(k), st);
    record(e);
    std::vector<Mat> params = {st.latent.w, st.pose.to_row()};
    std::vector<Mat> grads = {e.g_latent.size() ? e.g_latent : Mat::Zero(st.latent.w.rows(), st.latent.w.cols()),
                              e.g_pose};
    for (const Mat& g : grads)
      if (!g.allFinite()) throw InversionAborted("inversion: non-finite gradient at step " + std::to_string(k), st);
    const double f = cfg.lr_factor(k);
    const std::vector<double> lrs = {cfg.optimize_latent ? cfg.base_lr * cfg.latent_gain * f : 0.0,
                                     cfg.optimize_pose ? cfg.base_lr * f : 0.0};
    st.adam.step(params, grads, lrs);
    st.latent.w = params[0];
    PoseParams next = PoseParams::from_row(params[1]);
    // Project back onto valid poses.
    if (!(next.q.norm() > 1e-12)) next.q = st.pose.q;
    next.q.normalize();
    next.s = std::max(next.s, 1e-3);
    st.pose = next;
  }
  st.step = cfg.n_steps;
  const StepEval last = eval(st.latent, st.pose, cfg.n_steps, false);
  if (!std::isfinite(last.loss)) throw InversionAborted("inversion: non-finite final loss", st);
  record(last);
  return st;
}

}  // namespace detail

/// Refines (latent, pose) of a frozen generator against `target`.
inline InversionState invert(const Generator& gen, const RenderOutput& target, const LatentCode& init_latent,
                             const PoseParams& init_pose, const InversionConfig& cfg,
                             const PoseParams* reference_pose = nullptr,
                             const std::function<void(const InversionState&)>& on_eval = {}) {
  LatentCode latent = init_latent;
  if (cfg.latent_mode == LatentMode::kWPlus) {
    latent = latent.expanded();
  } else if (latent.mode() != LatentMode::kW) {
    throw StructuralError("invert: W mode needs a single-row latent");
  }
  check_latent(gen.cfg, latent.w);
  auto eval = [&](const LatentCode& l, const PoseParams& p, int step, bool grads) {
    return detail::evaluate_latent(gen, l, p, target, cfg, step, grads);
  };
  return detail::run_inversion(latent, init_pose, target, cfg, eval, reference_pose, on_eval);
}

/// Pose-only refinement against a fixed radiance source.
template <class Source>
InversionState invert_pose(const Source& source, const RenderOutput& target, const PoseParams& init_pose,
                           InversionConfig cfg, const PoseParams* reference_pose = nullptr) {
  cfg.optimize_latent = false;
  auto eval = [&](const LatentCode&, const PoseParams& p, int step, bool grads) {
    return detail::evaluate_fixed(source, p, target, cfg, step, grads);
  };
  return detail::run_inversion(LatentCode{Mat::Zero(1, 1)}, init_pose, target, cfg, eval, reference_pose, {});
}

// ---------------------------------------------------------------------------
// Gain sweep

struct SweepScene {
  std::string name;
  RenderOutput input;
  RenderOutput heldout;
  PoseParams heldout_pose;
  LatentCode init_latent;
  PoseParams init_pose;
};

struct GainSweepRow {
  std::string scene;  // "mean" for aggregated rows
  double gain = 1.0;
  int step = 0;
  double psnr = 0.0;
  double heldout_psnr = 0.0;
};

/// Inverts every scene at every gain, recording input-view and held-out-view
/// PSNR after each step. Scenes run in parallel.
inline std::vector<GainSweepRow> sweep_gains(const Generator& gen, const std::vector<SweepScene>& scenes,
                                             const std::vector<double>& gains, int steps, InversionConfig cfg) {
  if (scenes.size() < 5) throw InsufficientDataError("sweep_gains: need at least 5 scenes");
  if (gains.empty()) throw StructuralError("sweep_gains: no gains");
  cfg.n_steps = steps;
  const auto n_jobs = static_cast<int>(scenes.size() * gains.size());
  std::vector<std::vector<GainSweepRow>> out(static_cast<std::size_t>(n_jobs));
  parallel_for(n_jobs, [&](int job) {
    const SweepScene& sc = scenes[static_cast<std::size_t>(job) / gains.size()];
    const double gain = gains[static_cast<std::size_t>(job) % gains.size()];
    InversionConfig c = cfg;
    c.latent_gain = gain;
    auto& rows = out[static_cast<std::size_t>(job)];
    invert(gen, sc.input, sc.init_latent, sc.init_pose, c, nullptr, [&](const InversionState& st) {
      const TriplaneField f = decode_field(gen, st.latent);
      const RenderOutput h = render(TriplaneSource(f), pose_to_camera(sc.heldout_pose), sc.heldout.width,
                                    sc.heldout.height, c.render);
      rows.push_back({sc.name, gain, st.step, st.psnr_trace.back(), psnr(h.rgb.cwiseMax(0.0).cwiseMin(1.0), sc.heldout.rgb)});
    });
  });
  std::vector<GainSweepRow> rows;
  for (const auto& r : out) rows.insert(rows.end(), r.begin(), r.end());
  return rows;
}

/// Means over scenes: one row per (gain, step), ordered by gain then step.
inline std::vector<GainSweepRow> mean_by_gain_step(const std::vector<GainSweepRow>& rows) {
  std::map<std::pair<double, int>, std::pair<GainSweepRow, int>> acc;
  for (const GainSweepRow& r : rows) {
    auto& [sum, n] = acc[{r.gain, r.step}];
    sum.scene = "mean";
    sum.gain = r.gain;
    sum.step = r.step;
    sum.psnr += r.psnr;
    sum.heldout_psnr += r.heldout_psnr;
    ++n;
  }
  std::vector<GainSweepRow> out;
  for (auto& [key, v] : acc) {
    v.first.psnr /= v.second;
    v.first.heldout_psnr /= v.second;
    out.push_back(v.first);
  }
  return out;
}

inline void write_sweep_csv(const io::fs::path& path, const std::vector<GainSweepRow>& rows) {
  io::CsvWriter csv(path, {"scene", "gain", "step", "psnr", "heldout_psnr"});
  for (const GainSweepRow& r : rows) csv.row(r.scene, r.gain, r.step, r.psnr, r.heldout_psnr);
}

inline void write_sweep_plot(const io::fs::path& path, const std::vector<GainSweepRow>& mean_rows) {
  std::vector<io::PlotSeries> series;
  std::map<double, std::size_t> slot;
  for (const GainSweepRow& r : mean_rows) {
    if (!slot.count(r.gain)) {
      slot[r.gain] = series.size();
      char label[48];
      std::snprintf(label, sizeof label, "%gx input", r.gain);
      series.push_back({label, {}, {}});
      std::snprintf(label, sizeof label, "%gx held-out", r.gain);
      series.push_back({label, {}, {}});
    }
    const std::size_t s = slot[r.gain];
    series[s].x.push_back(r.step);
    series[s].y.push_back(r.psnr);
    series[s + 1].x.push_back(r.step);
    series[s + 1].y.push_back(r.heldout_psnr);
  }
  io::write_svg_plot(path, "PSNR under latent learning-rate gains", "step", "PSNR (dB)", series);
}

inline void write_trace_csv(const io::fs::path& path, const InversionState& st) {
  io::CsvWriter csv(path, {"step", "loss", "psnr", "rot_err"});
  for (std::size_t i = 0; i < st.loss_trace.size(); ++i)
    csv.row(i, st.loss_trace[i], st.psnr_trace[i],
            i < st.rotation_error_trace.size() ? st.rotation_error_trace[i] : std::nan(""));
}

}  // namespace radinv
