#pragma once

#include <functional>
#include <vector>

#include "radinv/field.hpp"
#include "radinv/optim.hpp"
#include "radinv/renderer.hpp"
#include "radinv/scene.hpp"

// Training loops for the desk-scale generator: unit-sphere SDF
// initialisation and fitting to a family of analytic scenes.

namespace radinv {

/// Which generator slots a loop updates.
inline std::vector<bool> slot_mask(std::initializer_list<GP> slots) {
  std::vector<bool> m(kNumGeneratorParams, false);
  for (GP k : slots) m[static_cast<std::size_t>(k)] = true;
  return m;
}

inline std::vector<bool> sdf_slots() {
  return slot_mask({GP::SynW0, GP::SynB0, GP::SynW1, GP::SynB1, GP::SynW2, GP::SynB2, GP::DecW1, GP::DecB1,
                    GP::DecW2, GP::DecB2, GP::DecWd, GP::DecBd});
}

/// Target of the sphere initialisation: d(x) = |x| - 1.
inline double unit_sphere_sdf(const Vec3& x) { return x.norm() - 1.0; }

struct SpherePretrainConfig {
  int iters = 1000;
  int batch = 1024;
  double lr = 1e-2;
  double final_lr = 1e-4;  // cosine-annealed from lr
  bool freeze_synthesis_weights = true;
  std::uint64_t seed = 0;
  int eval_samples = 8192;
};

struct PretrainReport {
  double initial_loss = 0.0;
  double final_loss = 0.0;  // fresh stratified samples, fresh latent
  std::vector<double> trace;
};

namespace detail {

inline ad::Var sphere_loss(const FieldConfig& cfg, const GeneratorVars& g, ad::Var latent, const Mat& x) {
  ad::Tape& tape = *latent.tape;
  const ad::Var planes = synthesize_planes(cfg, g, latent);
  const ad::Var d = eval_sdf(cfg, decoder_vars(g), planes, tape.constant(x));
  Mat target(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) target(i, 0) = unit_sphere_sdf(x.row(i).transpose());
  return ad::mean(ad::square(ad::sub(d, tape.constant(target))));
}

inline Mat random_latent(const Generator& gen, Rng& rng) {
  return mapping(gen, rng.normal_mat(1, gen.cfg.dim_z)).w;
}

}  // namespace detail

/// Mean of (d(x) - (|x| - 1))^2 at stratified samples for latent w.
inline double sphere_loss(const Generator& gen, const Mat& w, int n_samples, std::uint64_t seed) {
  ad::Tape tape;
  const GeneratorVars g = bind_generator(tape, gen);
  return detail::sphere_loss(gen.cfg, g, tape.constant(w), stratified_cube_samples(n_samples, seed)).scalar();
}

/// Initialises the SDF to the unit sphere by minimising
/// E_x[(d(x) - (|x| - 1))^2] with Adam. Every step draws a fresh prior
/// sample so the sphere holds across the latent space.
inline PretrainReport sphere_pretrain(Generator& gen, const SpherePretrainConfig& cfg = {}) {
  if (cfg.iters < 0 || cfg.batch < 1) throw StructuralError("sphere_pretrain: invalid configuration");
  Rng rng(hash_combine(cfg.seed, 0x5F4E7E));
  std::vector<bool> train = sdf_slots();
  if (cfg.freeze_synthesis_weights)
    for (GP k : {GP::SynW0, GP::SynW1, GP::SynW2}) train[static_cast<std::size_t>(k)] = false;
  std::vector<double> lrs(kNumGeneratorParams, 0.0);
  for (std::size_t i = 0; i < lrs.size(); ++i)
    if (train[i]) lrs[i] = cfg.lr;
  Adam adam(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  PretrainReport rep;
  const Mat eval_w = detail::random_latent(gen, rng);
  rep.initial_loss = sphere_loss(gen, eval_w, cfg.eval_samples, hash_combine(cfg.seed, 0xE7A1));
  double running = -1.0;
  for (int it = 0; it < cfg.iters; ++it) {
    ad::Tape tape;
    const GeneratorVars g = bind_generator(tape, gen, train);
    const ad::Var w = tape.constant(detail::random_latent(gen, rng));
    const Mat x = stratified_cube_samples(cfg.batch, hash_combine(cfg.seed, static_cast<std::uint64_t>(it) + 1));
    const ad::Var loss = detail::sphere_loss(gen.cfg, g, w, x);
    const double l = loss.scalar();
    if (!std::isfinite(l)) throw PretrainingFailure("sphere_pretrain: loss became non-finite at step " + std::to_string(it));
    running = running < 0.0 ? l : 0.9 * running + 0.1 * l;
    if (it >= 10 && running > 10.0 * rep.initial_loss)
      throw PretrainingFailure("sphere_pretrain: loss diverged (10x the initial loss)");
    rep.trace.push_back(l);
    tape.backward(loss);
    const double c = 0.5 * (1.0 + std::cos(kPi * it / std::max(1, cfg.iters)));
    const double lr = cfg.final_lr + (cfg.lr - cfg.final_lr) * c;
    for (std::size_t i = 0; i < lrs.size(); ++i)
      if (train[i]) lrs[i] = lr;
    adam.step(gen.params, collect_grads(tape, g.v), lrs);
  }
  rep.final_loss = sphere_loss(gen, eval_w, cfg.eval_samples, hash_combine(cfg.seed, 0xE7A1));
  return rep;
}

// ---------------------------------------------------------------------------
// Fitting the generator to analytic scenes (auto-decoder style: one free
// latent per scene, shared generator weights).

struct FitConfig {
  int sdf_iters = 600;     // 3D warm start against the analytic SDF and colors
  int render_iters = 150;  // image-space reconstruction
  int batch = 1024;
  int image_size = 24;
  int views_per_scene = 8;
  int eikonal_samples = 512;
  double eikonal_weight = 0.1;
  bool path_length = false;
  int path_length_every = 4;
  double lr = 2e-3;
  double latent_lr = 1e-2;
  double density_lr = 2e-2;
  RenderConfig render{16, 16, true, 0, 128};
  std::uint64_t seed = 0;
};

struct FitResult {
  std::vector<LatentCode> codes;  // one W code per scene
  std::vector<double> sdf_trace;
  std::vector<double> render_trace;
};

namespace detail {

/// Points half uniform, half pulled onto the analytic surface with jitter.
inline Mat surface_biased_samples(const AnalyticScene& scene, int n, std::uint64_t seed) {
  Mat x = stratified_cube_samples(n, seed);
  Rng rng(hash_combine(seed, 0xB1A5));
  for (Eigen::Index i = n / 2; i < x.rows(); ++i) {
    Vec3 p = x.row(i).transpose();
    for (int k = 0; k < 2; ++k) {
      Vec3 g;
      const double d = scene.sdf(p, &g);
      p -= d * g;
    }
    p += 0.03 * Vec3(rng.normal(), rng.normal(), rng.normal());
    x.row(i) = p.cwiseMax(-1.0).cwiseMin(1.0).transpose();
  }
  return x;
}

struct GeneratorStep {
  ParamList grads;
  Mat code_grad;
  double loss = 0.0;
};

}  // namespace detail

/// 3D supervision of one scene: SDF regression, surface colors and the
/// Eikonal term.
inline detail::GeneratorStep sdf_fit_step(const Generator& gen, const AnalyticScene& scene, const Mat& code,
                                          const std::vector<bool>& train, const FitConfig& cfg, std::uint64_t seed) {
  const FieldConfig& fc = gen.cfg;
  ad::Tape tape;
  const GeneratorVars g = bind_generator(tape, gen, train);
  const ad::Var w = tape.leaf(code);
  const ad::Var planes = synthesize_planes(fc, g, w);
  const ad::Var values = color_values(fc, g, w);
  const DecoderVars dec = decoder_vars(g);
  const Mat x = detail::surface_biased_samples(scene, cfg.batch, seed);
  Mat d_gt(x.rows(), 1), c_gt(x.rows(), 3), near(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Vec3 p = x.row(i).transpose();
    d_gt(i, 0) = scene.sdf(p);
    c_gt.row(i) = scene.color(p).transpose();
    near(i, 0) = std::abs(d_gt(i, 0)) < 0.1 ? 1.0 : 0.0;
  }
  const double n_near = std::max(1.0, near.sum());
  const FieldEval e = eval_field(fc, dec, planes, tape.constant(x));
  const ad::Var l_sdf = ad::mean(ad::square(ad::sub(e.d, tape.constant(d_gt))));
  const ad::Var rgb = ad::matmul(e.probs, values);
  const ad::Var l_col = ad::scale(
      ad::sum(ad::mul_colvec(ad::square(ad::sub(rgb, tape.constant(c_gt))), tape.constant(near))), 1.0 / n_near);
  const ad::Var l_eik = eikonal_loss(fc, dec, planes, cfg.eikonal_samples, hash_combine(seed, 0xE1C));
  const ad::Var loss = ad::add(ad::add(l_sdf, l_col), ad::scale(l_eik, cfg.eikonal_weight));
  tape.backward(loss);
  return {collect_grads(tape, g.v), tape.grad(w), loss.scalar()};
}

/// Image-space reconstruction of one view: rgb and mask L2 against the
/// analytic render, plus the Eikonal term, with gradients flowing through
/// the renderer into the decoder, planes, colors and latent.
inline detail::GeneratorStep render_fit_step(const Generator& gen, const Mat& code, const RenderOutput& target,
                                             const Camera& cam, const std::vector<bool>& train,
                                             const FitConfig& cfg, std::uint64_t seed) {
  const FieldConfig& fc = gen.cfg;
  TriplaneField field = decode_field(gen, LatentCode{code});
  const TriplaneSource source(field);
  RenderConfig rc = cfg.render;
  rc.seed = seed;
  const SamplePlan plan = plan_samples(source, cam, target.width, target.height, rc);
  const RenderOutput out = render_planned(source, cam, plan, rc);
  const double n = static_cast<double>(out.rgb.rows());
  RenderAdjoint adj;
  adj.rgb = 2.0 * (out.rgb - target.rgb) / (3.0 * n);
  adj.mask = 2.0 * (out.mask - target.mask) / n;
  const double img_loss =
      (out.rgb - target.rgb).squaredNorm() / (3.0 * n) + (out.mask - target.mask).squaredNorm() / n;
  const RenderGrads rg = render_vjp(source, cam, plan, rc, adj);

  ad::Tape tape;
  const GeneratorVars g = bind_generator(tape, gen, train);
  const ad::Var w = tape.leaf(code);
  const ad::Var planes = synthesize_planes(fc, g, w);
  const ad::Var values = color_values(fc, g, w);
  const ad::Var eik = eikonal_loss(fc, decoder_vars(g), planes, cfg.eikonal_samples, hash_combine(seed, 0xE1C));
  std::vector<std::pair<ad::Var, Mat>> seeds = {{planes, rg.source[TriplaneSource::kLeafPlanes]},
                                                {values, rg.source[TriplaneSource::kLeafValues]},
                                                {eik, Mat::Constant(1, 1, cfg.eikonal_weight)}};
  tape.backward(seeds);
  detail::GeneratorStep step{collect_grads(tape, g.v), tape.grad(w), img_loss + cfg.eikonal_weight * eik.scalar()};
  for (std::size_t k = 0; k < kDecoderSlots.size(); ++k) {
    const auto slot = static_cast<std::size_t>(kDecoderSlots[k]);
    if (train[slot]) step.grads[slot] += rg.source[TriplaneSource::kLeafDecoder + k];
  }
  return step;
}

/// Fits shared generator weights and one latent per scene. Progress is
/// reported through `log` (may be empty).
inline FitResult fit_generator(Generator& gen, const std::vector<AnalyticScene>& scenes, const FitConfig& cfg,
                               const std::function<void(const std::string&)>& log = {}) {
  if (scenes.empty()) throw InsufficientDataError("fit_generator: no scenes");
  const FieldConfig& fc = gen.cfg;
  Rng rng(hash_combine(cfg.seed, 0xF17));
  FitResult res;
  for (std::size_t m = 0; m < scenes.size(); ++m) res.codes.push_back(LatentCode{detail::random_latent(gen, rng)});

  std::vector<GP> slots = {GP::SynW0, GP::SynB0, GP::SynW1, GP::SynB1, GP::SynW2, GP::SynB2, GP::ColW, GP::ColB,
                           GP::Queries, GP::DecW1, GP::DecB1, GP::DecW2, GP::DecB2, GP::DecWd, GP::DecBd,
                           GP::DecWa, GP::DecBa, GP::DecWk, GP::DecBk};
  if (fc.view_dependent)
    for (GP k : {GP::ViewW1, GP::ViewB1, GP::ViewW2, GP::ViewB2}) slots.push_back(k);
  std::vector<bool> train(kNumGeneratorParams, false);
  for (GP k : slots) train[static_cast<std::size_t>(k)] = true;

  // Parameters and codes share one optimiser: generator slots first.
  const std::size_t n_params = gen.params.size();
  auto pack = [&] {
    ParamList all = gen.params;
    for (const LatentCode& c : res.codes) all.push_back(c.w);
    return all;
  };
  auto unpack = [&](ParamList& all) {
    for (std::size_t i = 0; i < n_params; ++i) gen.params[i] = std::move(all[i]);
    for (std::size_t m = 0; m < res.codes.size(); ++m) res.codes[m].w = std::move(all[n_params + m]);
  };
  std::vector<double> lrs(n_params + scenes.size(), 0.0);
  for (std::size_t i = 0; i < n_params; ++i)
    if (train[i]) lrs[i] = cfg.lr;
  for (std::size_t m = 0; m < scenes.size(); ++m) lrs[n_params + m] = cfg.latent_lr;
  Adam adam(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});

  auto apply = [&](std::vector<detail::GeneratorStep>& steps, const std::vector<double>& step_lrs) {
    ParamList grads = zeros_like(pack());
    for (std::size_t m = 0; m < steps.size(); ++m) {
      for (std::size_t i = 0; i < n_params; ++i) grads[i] += steps[m].grads[i];
      grads[n_params + m] = steps[m].code_grad;
    }
    for (std::size_t i = 0; i < n_params; ++i) grads[i] /= static_cast<double>(steps.size());
    ParamList all = pack();
    adam.step(all, grads, step_lrs);
    unpack(all);
    gen.clamp_density_params();
  };

  PathLengthState pl_state;
  for (int it = 0; it < cfg.sdf_iters; ++it) {
    std::vector<detail::GeneratorStep> steps;
    double loss = 0.0;
    for (std::size_t m = 0; m < scenes.size(); ++m) {
      steps.push_back(sdf_fit_step(gen, scenes[m], res.codes[m].w, train, cfg,
                                   hash_combine(cfg.seed, static_cast<std::uint64_t>(it * 7919 + static_cast<int>(m)))));
      loss += steps.back().loss;
    }
    if (cfg.path_length && it % cfg.path_length_every == 0) {
      ad::Tape tape;
      const GeneratorVars g = bind_generator(tape, gen, train);
      const PathLengthResult pl = path_length_penalty(fc, g, LatentMode::kW, rng, pl_state);
      tape.backward(ad::scale(pl.penalty, pl_state.weight * cfg.path_length_every));
      const ParamList pg = collect_grads(tape, g.v);
      // apply() averages generator grads over scenes, so scale up to compensate.
      for (std::size_t i = 0; i < n_params; ++i) steps.front().grads[i] += static_cast<double>(scenes.size()) * pg[i];
    }
    res.sdf_trace.push_back(loss / static_cast<double>(scenes.size()));
    if (!std::isfinite(res.sdf_trace.back())) throw NumericalAbort("fit_generator: non-finite loss in SDF phase");
    apply(steps, lrs);
    if (log && (it % 50 == 0 || it + 1 == cfg.sdf_iters))
      log("sdf step " + std::to_string(it) + " loss " + std::to_string(res.sdf_trace.back()));
  }

  if (cfg.render_iters == 0) return res;
  // Render phase also learns the density parameters.
  std::vector<bool> train_r = train;
  train_r[static_cast<std::size_t>(GP::Alpha)] = train_r[static_cast<std::size_t>(GP::Beta)] = true;
  std::vector<double> lrs_r = lrs;
  lrs_r[static_cast<std::size_t>(GP::Alpha)] = lrs_r[static_cast<std::size_t>(GP::Beta)] = cfg.density_lr;
  RenderConfig target_cfg = cfg.render;
  target_cfg.n_coarse = 64;
  target_cfg.n_fine = 32;
  std::vector<std::vector<std::pair<Camera, RenderOutput>>> views(scenes.size());
  for (std::size_t m = 0; m < scenes.size(); ++m)
    for (int v = 0; v < cfg.views_per_scene; ++v) {
      const Camera cam = pose_to_camera(scenes[m].poses.sample(rng));
      views[m].emplace_back(cam, render(scenes[m], cam, cfg.image_size, cfg.image_size, target_cfg));
    }
  for (int it = 0; it < cfg.render_iters; ++it) {
    std::vector<detail::GeneratorStep> steps;
    double loss = 0.0;
    for (std::size_t m = 0; m < scenes.size(); ++m) {
      const auto& [cam, target] = views[m][static_cast<std::size_t>(it % cfg.views_per_scene)];
      steps.push_back(render_fit_step(gen, res.codes[m].w, target, cam, train_r, cfg,
                                      hash_combine(cfg.seed ^ 0x4E4D, static_cast<std::uint64_t>(it * 131 + static_cast<int>(m)))));
      loss += steps.back().loss;
    }
    res.render_trace.push_back(loss / static_cast<double>(scenes.size()));
    if (!std::isfinite(res.render_trace.back())) throw NumericalAbort("fit_generator: non-finite loss in render phase");
    apply(steps, lrs_r);
    if (log && (it % 10 == 0 || it + 1 == cfg.render_iters))
      log("render step " + std::to_string(it) + " loss " + std::to_string(res.render_trace.back()) + " alpha " +
          std::to_string(gen.alpha()) + " beta " + std::to_string(gen.beta()));
  }
  return res;
}

}  // namespace radinv
