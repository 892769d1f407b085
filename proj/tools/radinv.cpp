// Command-line driver: rendering, generator fitting, bootstrapping, pose
// estimation, inversion, gain sweeps, mesh export and evaluation.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>

#include "radinv/radinv.hpp"

using namespace radinv;
namespace fs = std::filesystem;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

struct Globals {
  std::uint64_t seed = 0;
  std::string config_path;
  io::Config cfg;
};

FieldConfig field_config(const io::Config& c) {
  FieldConfig f;
  f.dim_z = c.get("field.dim_z", f.dim_z);
  f.dim_w = c.get("field.dim_w", f.dim_w);
  f.mapping_hidden = c.get("field.mapping_hidden", f.mapping_hidden);
  f.channels = c.get("field.channels", f.channels);
  f.resolution = c.get("field.resolution", f.resolution);
  f.semantic = c.get("field.semantic", f.semantic);
  f.key_dim = c.get("field.key_dim", f.key_dim);
  f.hidden = c.get("field.hidden", f.hidden);
  f.appearance_dim = c.get("field.appearance_dim", f.appearance_dim);
  f.view_dependent = c.get("field.view_dependent", f.view_dependent);
  f.leaky_slope = c.get("field.leaky_slope", f.leaky_slope);
  return f;
}

RenderConfig render_config(const io::Config& c, std::uint64_t seed) {
  RenderConfig r;
  r.n_coarse = c.get("render.n_coarse", r.n_coarse);
  r.n_fine = c.get("render.n_fine", r.n_fine);
  r.stratified = c.get("render.stratified", r.stratified);
  r.chunk_rays = c.get("render.chunk_rays", r.chunk_rays);
  const std::string mode = c.get("render.color_mode", std::string("after"));
  if (mode == "before") {
    r.color_mode = RenderConfig::ColorMode::kBeforeRendering;
  } else if (mode != "after") {
    throw IoError("config key render.color_mode: expected 'after' or 'before'");
  }
  r.seed = seed;
  r.validate();
  return r;
}

InversionConfig inversion_config(const io::Config& c, std::uint64_t seed) {
  InversionConfig v;
  v.n_steps = c.get("inversion.n_steps", v.n_steps);
  v.base_lr = c.get("inversion.base_lr", v.base_lr);
  v.latent_gain = c.get("inversion.latent_gain", v.latent_gain);
  v.beta1 = c.get("inversion.beta1", v.beta1);
  v.beta2 = c.get("inversion.beta2", v.beta2);
  v.n_augment = c.get("inversion.n_augment", v.n_augment);
  const std::string mode = c.get("inversion.latent_mode", std::string("w_plus"));
  if (mode == "w") {
    v.latent_mode = LatentMode::kW;
  } else if (mode != "w_plus") {
    throw IoError("config key inversion.latent_mode: expected 'w' or 'w_plus'");
  }
  v.schedule = c.get("inversion.schedule", v.schedule);
  v.optimize_latent = c.get("inversion.optimize_latent", v.optimize_latent);
  v.optimize_pose = c.get("inversion.optimize_pose", v.optimize_pose);
  v.augment.scale_min = c.get("inversion.augment_scale_min", v.augment.scale_min);
  v.augment.scale_max = c.get("inversion.augment_scale_max", v.augment.scale_max);
  v.augment.translate = c.get("inversion.augment_translate", v.augment.translate);
  v.augment.rotate_deg = c.get("inversion.augment_rotate_deg", v.augment.rotate_deg);
  v.render = render_config(c, seed);
  v.render.differentiable_sample_positions = true;
  v.seed = seed;
  return v;
}

PoseParams parse_pose(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      v.push_back(std::stod(tok));
    } catch (const std::logic_error&) {
      throw IoError("pose: not a number: '" + tok + "'");
    }
  }
  if (v.size() != 8) throw IoError("pose: expected 8 comma-separated values qw,qx,qy,qz,s,tx,ty,z0");
  PoseParams p = io::pose_from_values(v);
  check_pose(p);
  return p;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      v.push_back(std::stod(tok));
    } catch (const std::logic_error&) {
      throw IoError("not a number: '" + tok + "'");
    }
  }
  return v;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(tok);
  return out;
}

LatentCode read_latent(const fs::path& meta_path) {
  const auto meta = io::read_meta(meta_path);
  const auto wr = meta.find("w_rows"), wv = meta.find("w");
  if (wr == meta.end() || wv == meta.end() || wr->second.size() != 1 || wr->second[0] < 1)
    throw IoError("no latent in " + meta_path.string());
  const auto rows = static_cast<Eigen::Index>(wr->second[0]);
  if (wv->second.size() % static_cast<std::size_t>(rows) != 0) throw IoError("malformed latent in " + meta_path.string());
  return LatentCode{Eigen::Map<const Mat>(wv->second.data(), rows, static_cast<Eigen::Index>(wv->second.size()) / rows)};
}

PoseParams read_pose(const fs::path& meta_path) {
  const auto meta = io::read_meta(meta_path);
  const auto it = meta.find("pose");
  if (it == meta.end()) throw IoError("no pose in " + meta_path.string());
  return io::pose_from_values(it->second);
}

std::vector<double> latent_values(const LatentCode& l) { return {l.w.data(), l.w.data() + l.w.size()}; }

/// Where a radiance source comes from: a built-in analytic scene, or a
/// checkpoint plus a stored code name or a latent file.
struct SourceArgs {
  std::string scene;
  std::string ckpt;
  std::string latent;

  void add(CLI::App* app) {
    app->add_option("--scene", scene, "built-in scene (sphere, desk, ...), or a code name stored in --ckpt");
    app->add_option("--ckpt", ckpt, "generator checkpoint");
    app->add_option("--latent", latent, "meta file with a latent code (needs --ckpt)");
  }
};

struct LoadedSource {
  std::optional<AnalyticScene> analytic;
  std::optional<io::Checkpoint> ck;
  std::optional<TriplaneField> field;
  PoseDistribution poses;

  template <class F>
  auto visit(F&& f) const {
    if (analytic) return f(*analytic);
    return f(TriplaneSource(*field));
  }
};

LoadedSource load_source(const SourceArgs& a) {
  LoadedSource s;
  if (a.ckpt.empty()) {
    if (a.scene.empty()) throw IoError("need --scene or --ckpt");
    if (!a.latent.empty()) throw IoError("--latent needs --ckpt");
    s.analytic = builtin_scene(a.scene);
    s.poses = s.analytic->poses;
    return s;
  }
  s.ck = io::load_checkpoint(a.ckpt);
  LatentCode code;
  if (!a.latent.empty()) {
    code = read_latent(a.latent);
  } else {
    if (s.ck->codes.empty()) throw IoError("checkpoint " + a.ckpt + " stores no codes; pass --latent");
    auto it = s.ck->codes.begin();
    if (!a.scene.empty()) {
      it = std::find_if(s.ck->codes.begin(), s.ck->codes.end(), [&](const io::NamedCode& c) { return c.name == a.scene; });
      if (it == s.ck->codes.end()) throw IoError("unknown scene '" + a.scene + "' in checkpoint " + a.ckpt);
    }
    code = it->code;
  }
  check_latent(s.ck->gen.cfg, code.w);
  s.field = decode_field(s.ck->gen, code);
  return s;
}

// ---------------------------------------------------------------------------

int cmd_render(const Globals& g, const SourceArgs& src, const std::string& pose_str, const std::string& pose_file,
               int size, const std::string& out) {
  const LoadedSource s = load_source(src);
  PoseParams pose;
  if (!pose_str.empty()) {
    pose = parse_pose(pose_str);
  } else if (!pose_file.empty()) {
    pose = read_pose(pose_file);
  } else {
    Rng rng(hash_combine(g.seed, 0x9053));
    pose = s.poses.sample(rng);
  }
  const RenderConfig rc = render_config(g.cfg, g.seed);
  const RenderOutput o = s.visit([&](const auto& source) { return render(source, pose_to_camera(pose), size, size, rc); });
  io::write_render(out, o);
  io::write_meta(fs::path(out) / "meta", {{"pose", io::pose_values(pose)}});
  std::cout << "wrote " << out << "\n";
  return 0;
}

int cmd_pretrain(const Globals& g, const std::string& out, int iters) {
  Generator gen(field_config(g.cfg), g.seed);
  SpherePretrainConfig pc;
  pc.iters = iters;
  pc.batch = g.cfg.get("pretrain.batch", pc.batch);
  pc.lr = g.cfg.get("pretrain.lr", pc.lr);
  pc.seed = g.seed;
  const PretrainReport rep = sphere_pretrain(gen, pc);
  io::save_checkpoint(out, io::Checkpoint{gen, {}});
  std::cout << "initial_loss " << rep.initial_loss << "\nfinal_loss " << rep.final_loss << "\n";
  return 0;
}

int cmd_fit_scene(const Globals& g, const std::string& scenes_arg, const std::string& init, const std::string& out,
                  bool path_length) {
  std::vector<AnalyticScene> scenes;
  for (const std::string& name : split(scenes_arg)) scenes.push_back(builtin_scene(name));
  if (scenes.empty()) throw IoError("fit-scene: no scenes given");
  Generator gen = init.empty() ? Generator(field_config(g.cfg), g.seed) : io::load_checkpoint(init).gen;
  FitConfig fc;
  fc.sdf_iters = g.cfg.get("fit.sdf_iters", fc.sdf_iters);
  fc.render_iters = g.cfg.get("fit.render_iters", fc.render_iters);
  fc.batch = g.cfg.get("fit.batch", fc.batch);
  fc.image_size = g.cfg.get("fit.image_size", fc.image_size);
  fc.views_per_scene = g.cfg.get("fit.views_per_scene", fc.views_per_scene);
  fc.eikonal_samples = g.cfg.get("fit.eikonal_samples", fc.eikonal_samples);
  fc.eikonal_weight = g.cfg.get("fit.eikonal_weight", fc.eikonal_weight);
  fc.path_length = path_length || g.cfg.get("fit.path_length", fc.path_length);
  fc.seed = g.seed;
  const FitResult r = fit_generator(gen, scenes, fc, [](const std::string& m) { std::cerr << m << "\n"; });
  io::Checkpoint ck{gen, {}};
  for (std::size_t i = 0; i < scenes.size(); ++i) ck.codes.push_back({scenes[i].name, r.codes[i]});
  io::save_checkpoint(out, ck);
  std::cout << "wrote " << out << " (" << scenes.size() << " codes)\n";
  return 0;
}

int cmd_gen_dataset(const Globals& g, const std::string& ckpt, int n, int size, bool prior, const std::string& out) {
  const io::Checkpoint ck = io::load_checkpoint(ckpt);
  std::vector<LatentCode> codes;
  for (const auto& c : ck.codes) codes.push_back(c.code);
  const LatentSampler latents = prior || codes.empty() ? prior_latent_sampler(ck.gen) : code_mixture_sampler(codes);
  BootstrapConfig bc;
  bc.width = bc.height = size;
  bc.render = render_config(g.cfg, g.seed);
  bc.seed = g.seed;
  write_dataset(out, generate_bootstrap_dataset(ck.gen, n, latents, pose_sampler({}), bc));
  std::cout << "wrote " << n << " records to " << out << "\n";
  return 0;
}

int cmd_fit_regressor(const Globals& g, const std::string& data_dir, const std::string& out) {
  const auto data = read_dataset(data_dir);
  RegressorConfig rc;
  rc.side = g.cfg.get("regressor.side", rc.side);
  rc.lambda = g.cfg.get("regressor.lambda", rc.lambda);
  const LatentRegressor reg = fit_latent_regressor(data, rc);
  std::vector<double> focals;
  for (const auto& r : data) focals.push_back(r.pose.focal());
  save_regressor(out, reg, focal_percentiles(focals, 10));
  std::cout << "train_mse " << reg.train_mse << "\n";
  return 0;
}

int cmd_estimate_pose(const std::string& regressor, const std::string& input, double threshold, const std::string& out) {
  std::vector<double> focals;
  const LatentRegressor reg = load_regressor(regressor, &focals);
  const RenderOutput image = io::read_render(input);
  const InitialGuess guess = bootstrap_regressor(reg, image, focals, threshold);
  const LatentCode w = reg.predict(image.rgb, image.width, image.height);
  fs::create_directories(out);
  io::write_meta(fs::path(out) / "meta", {{"w_rows", {static_cast<double>(w.w.rows())}},
                                          {"w", latent_values(w)},
                                          {"pose", io::pose_values(guess.pose)},
                                          {"focal", {guess.pnp->focal}},
                                          {"reprojection_error", {guess.pnp->reprojection_error}}});
  std::cout << "focal " << guess.pnp->focal << "\nreprojection_error " << guess.pnp->reprojection_error << "\n";
  return 0;
}

int cmd_invert(const Globals& g, const std::string& ckpt, const std::string& input, const std::string& init,
               const std::string& reference, std::optional<int> steps, std::optional<double> gain,
               const std::string& out) {
  const io::Checkpoint ck = io::load_checkpoint(ckpt);
  const RenderOutput target = io::read_render(input);
  InversionConfig cfg = inversion_config(g.cfg, g.seed);
  if (steps) cfg.n_steps = *steps;
  if (gain) cfg.latent_gain = *gain;
  const LatentCode latent = read_latent(init);
  const PoseParams pose = read_pose(init);
  std::optional<PoseParams> ref;
  if (!reference.empty()) ref = read_pose(reference);
  const InversionState st = invert(ck.gen, target, latent, pose, cfg, ref ? &*ref : nullptr);
  fs::create_directories(out);
  write_trace_csv(fs::path(out) / "trace.csv", st);
  io::write_render(fs::path(out) / "render", st.render);
  io::write_meta(fs::path(out) / "meta", {{"w_rows", {static_cast<double>(st.latent.w.rows())}},
                                          {"w", latent_values(st.latent)},
                                          {"pose", io::pose_values(st.pose)}});
  std::cout << "psnr_initial " << st.psnr_trace.front() << "\npsnr_final " << st.psnr_trace.back() << "\n";
  return 0;
}

int cmd_sweep(const Globals& g, const std::string& ckpt, int n_scenes, const std::string& gains_arg, int steps,
              int size, double rot_noise, double latent_noise, const std::string& out) {
  const io::Checkpoint ck = io::load_checkpoint(ckpt);
  if (static_cast<int>(ck.codes.size()) < n_scenes)
    throw InsufficientDataError("sweep-gains: checkpoint has " + std::to_string(ck.codes.size()) + " codes, need " +
                                std::to_string(n_scenes));
  InversionConfig cfg = inversion_config(g.cfg, g.seed);
  const RenderConfig rc = render_config(g.cfg, hash_combine(g.seed, 0x7A6));
  std::vector<SweepScene> scenes;
  for (int i = 0; i < n_scenes; ++i) {
    const auto u = static_cast<std::uint64_t>(i);
    const LatentCode& gt = ck.codes[u].code;
    Rng rng(hash_combine(g.seed, u));
    PoseDistribution pd;
    const PoseParams pose = pd.sample(rng);
    SweepScene s;
    s.name = ck.codes[u].name;
    s.heldout_pose = pd.sample(rng);
    const TriplaneField f = decode_field(ck.gen, gt);
    s.input = render(TriplaneSource(f), pose_to_camera(pose), size, size, rc);
    s.heldout = render(TriplaneSource(f), pose_to_camera(s.heldout_pose), size, size, rc);
    const InitialGuess guess = bootstrap_oracle(gt, pose, OracleNoise{rot_noise, latent_noise, hash_combine(g.seed, u + 1)});
    s.init_latent = guess.latent;
    s.init_pose = guess.pose;
    scenes.push_back(std::move(s));
  }
  const auto rows = sweep_gains(ck.gen, scenes, parse_list(gains_arg), steps, cfg);
  fs::create_directories(out);
  write_sweep_csv(fs::path(out) / "sweep.csv", rows);
  const auto mean = mean_by_gain_step(rows);
  write_sweep_csv(fs::path(out) / "sweep_mean.csv", mean);
  write_sweep_plot(fs::path(out) / "sweep.svg", mean);
  std::cout << "wrote " << rows.size() << " rows to " << out << "\n";
  return 0;
}

int cmd_extract_mesh(const SourceArgs& src, int resolution, bool binary, const std::string& out) {
  const LoadedSource s = load_source(src);
  const TriMesh mesh = s.visit([&](const auto& source) { return extract_mesh(source, resolution); });
  io::write_ply(out, mesh, binary);
  std::cout << "vertices " << mesh.vertices.size() << "\ntriangles " << mesh.triangles.size() << "\n";
  return 0;
}

int cmd_eval(const std::string& pred_dir, const std::string& gt_dir, const std::string& out) {
  const RenderOutput pred = io::read_render(pred_dir);
  const RenderOutput gt = io::read_render(gt_dir);
  SceneMetrics m;
  const fs::path pm = fs::path(pred_dir) / "meta", gm = fs::path(gt_dir) / "meta";
  if (fs::exists(pm) && fs::exists(gm) && io::read_meta(pm).count("pose") && io::read_meta(gm).count("pose")) {
    m = metrics(pred, gt, read_pose(pm), read_pose(gm));
  } else {
    m = metrics(pred, gt);
  }
  std::ostringstream text;
  text << std::setprecision(10) << "psnr " << m.psnr << "\niou " << m.iou << "\n";
  if (!std::isnan(m.rotation_error_deg)) text << "rotation_error_deg " << m.rotation_error_deg << "\n";
  std::cout << text.str();
  if (!out.empty()) {
    std::ofstream f(out);
    f << text.str();
    if (!f) throw IoError("write failed: " + out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"radinv: triplane radiance fields, pose estimation and hybrid inversion"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "seed for every random choice")->capture_default_str();
  app.add_option("--config", g.config_path, "TOML-style config file")->check(CLI::ExistingFile);

  SourceArgs render_src, mesh_src;
  std::string pose_str, pose_file, out, ckpt, input, init, reference, data_dir, regressor, scenes_arg, gains = "1,5,10,20";
  std::string pred_dir, gt_dir;
  int size = 64, iters = 1000, n = 100, resolution = 64, sweep_steps = 30, n_scenes = 5;
  double threshold = 0.5, rot_noise = 5.0, latent_noise = 0.5;
  bool path_length = false, prior = false, binary = false;
  std::optional<int> steps;
  std::optional<double> gain;

  auto* render_cmd = app.add_subcommand("render", "render rgb, mask, depth and canonical maps");
  render_src.add(render_cmd);
  render_cmd->add_option("--pose", pose_str, "qw,qx,qy,qz,s,tx,ty,z0 (default: sampled)");
  render_cmd->add_option("--pose-file", pose_file, "meta file with a pose entry");
  render_cmd->add_option("--size", size, "image side in pixels")->capture_default_str();
  render_cmd->add_option("--out", out, "output directory")->required();

  auto* pretrain_cmd = app.add_subcommand("pretrain-sphere", "initialize the generator SDF to a unit sphere");
  pretrain_cmd->add_option("--out", out, "checkpoint path")->required();
  pretrain_cmd->add_option("--iters", iters, "iterations")->capture_default_str();

  auto* fit_cmd = app.add_subcommand("fit-scene", "fit a generator to multi-view renders of analytic scenes");
  fit_cmd->add_option("--scene", scenes_arg, "comma-separated scene names")->required();
  fit_cmd->add_option("--init", init, "start from this checkpoint (e.g. a sphere-pretrained one)");
  fit_cmd->add_flag("--path-length", path_length, "add the path length penalty");
  fit_cmd->add_option("--out", out, "checkpoint path")->required();

  auto* data_cmd = app.add_subcommand("gen-dataset", "render a bootstrap dataset from a generator");
  data_cmd->add_option("--ckpt", ckpt, "generator checkpoint")->required();
  data_cmd->add_option("--n", n, "number of records")->capture_default_str();
  data_cmd->add_option("--size", size, "image side in pixels")->capture_default_str();
  data_cmd->add_flag("--prior", prior, "sample latents from the prior instead of mixing stored codes");
  data_cmd->add_option("--out", out, "dataset directory")->required();

  auto* reg_cmd = app.add_subcommand("fit-regressor", "fit the image-to-latent regressor");
  reg_cmd->add_option("--data", data_dir, "dataset directory")->required();
  reg_cmd->add_option("--out", out, "regressor file")->required();

  auto* est_cmd = app.add_subcommand("estimate-pose", "latent from the regressor, pose from PnP with a focal sweep");
  est_cmd->add_option("--regressor", regressor, "regressor file")->required();
  est_cmd->add_option("--input", input, "render directory with rgb.ppm, mask.pgm, canonical.raw")->required();
  est_cmd->add_option("--threshold", threshold, "mask threshold")->capture_default_str();
  est_cmd->add_option("--out", out, "output directory")->required();

  auto* inv_cmd = app.add_subcommand("invert", "refine latent and pose against an image");
  inv_cmd->add_option("--ckpt", ckpt, "generator checkpoint")->required();
  inv_cmd->add_option("--input", input, "render directory of the target")->required();
  inv_cmd->add_option("--init", init, "meta file with the initial latent and pose")->required();
  inv_cmd->add_option("--reference", reference, "meta file with a reference pose for rotation errors");
  inv_cmd->add_option("--steps", steps, "number of steps (default from config, 30)");
  inv_cmd->add_option("--gain", gain, "latent learning-rate gain (default from config, 5)");
  inv_cmd->add_option("--out", out, "output directory")->required();

  auto* sweep_cmd = app.add_subcommand("sweep-gains", "inversion PSNR per gain and step, input and held-out views");
  sweep_cmd->add_option("--ckpt", ckpt, "checkpoint with at least --scenes codes")->required();
  sweep_cmd->add_option("--scenes", n_scenes, "number of stored codes to use")->capture_default_str();
  sweep_cmd->add_option("--gains", gains, "comma-separated gains")->capture_default_str();
  sweep_cmd->add_option("--steps", sweep_steps, "steps per run")->capture_default_str();
  sweep_cmd->add_option("--size", size, "image side in pixels")->capture_default_str();
  sweep_cmd->add_option("--rot-noise", rot_noise, "oracle rotation noise in degrees")->capture_default_str();
  sweep_cmd->add_option("--latent-noise", latent_noise, "oracle latent noise sigma")->capture_default_str();
  sweep_cmd->add_option("--out", out, "output directory")->required();

  auto* mesh_cmd = app.add_subcommand("extract-mesh", "marching cubes of the SDF to a colored PLY");
  mesh_src.add(mesh_cmd);
  mesh_cmd->add_option("--resolution", resolution, "grid cells per axis")->capture_default_str();
  mesh_cmd->add_flag("--binary", binary, "binary little-endian PLY");
  mesh_cmd->add_option("--out", out, "PLY path")->required();

  auto* eval_cmd = app.add_subcommand("eval", "PSNR, mask IoU and rotation error between two render directories");
  eval_cmd->add_option("--pred", pred_dir, "predicted render directory")->required();
  eval_cmd->add_option("--gt", gt_dir, "ground-truth render directory")->required();
  eval_cmd->add_option("--out", out, "optional metrics file");

  CLI11_PARSE(app, argc, argv);

  if (const char* t = std::getenv("RADINV_THREADS")) set_thread_count(std::atoi(t));

  try {
    if (!g.config_path.empty()) g.cfg = io::Config::load(g.config_path);
    if (*render_cmd) return cmd_render(g, render_src, pose_str, pose_file, size, out);
    if (*pretrain_cmd) return cmd_pretrain(g, out, iters);
    if (*fit_cmd) return cmd_fit_scene(g, scenes_arg, init, out, path_length);
    if (*data_cmd) return cmd_gen_dataset(g, ckpt, n, size, prior, out);
    if (*reg_cmd) return cmd_fit_regressor(g, data_dir, out);
    if (*est_cmd) return cmd_estimate_pose(regressor, input, threshold, out);
    if (*inv_cmd) return cmd_invert(g, ckpt, input, init, reference, steps, gain, out);
    if (*sweep_cmd) return cmd_sweep(g, ckpt, n_scenes, gains, sweep_steps, size, rot_noise, latent_noise, out);
    if (*mesh_cmd) return cmd_extract_mesh(mesh_src, resolution, binary, out);
    if (*eval_cmd) return cmd_eval(pred_dir, gt_dir, out);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const NumericalAbort& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return 0;
}
