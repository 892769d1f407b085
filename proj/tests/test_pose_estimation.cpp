#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <iterator>

#include "radinv/fitting.hpp"
#include "radinv/pose_estimation.hpp"
#include "radinv/scene.hpp"

using namespace radinv;

namespace {

constexpr int kSide = 64;

PoseParams random_pose(Rng& rng) {
  PoseDistribution d;
  return d.sample(rng);
}

/// Projects random cube points with an exact camera.
CanonicalObservation synthetic_observation(const Camera& cam, int n, Rng& rng, double noise_px = 0.0) {
  CanonicalObservation obs;
  obs.width = obs.height = kSide;
  for (int i = 0; i < n; ++i) {
    const Vec3 x(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    Eigen::Vector2d u = cam.project(x);
    u(0) += noise_px * rng.normal() / kSide;
    u(1) += noise_px * rng.normal() / kSide;
    obs.points.push_back(x);
    obs.pixels.push_back(u);
  }
  return obs;
}

double translation_error(const Camera& a, const Camera& b) { return (a.translation - b.translation).norm(); }

FieldConfig small_config() {
  FieldConfig c;
  c.dim_z = 8;
  c.dim_w = 8;
  c.mapping_hidden = 16;
  c.channels = 8;
  c.resolution = 16;
  c.semantic = 4;
  c.key_dim = 8;
  c.hidden = 32;
  c.appearance_dim = 16;
  return c;
}

/// Small sphere generator with crisp density, shared by the dataset tests.
const Generator& sphere_generator() {
  static const Generator g = [] {
    Generator gen(small_config(), 3);
    SpherePretrainConfig pc;
    pc.iters = 300;
    pc.batch = 512;
    pc.eval_samples = 1024;
    sphere_pretrain(gen, pc);
    gen[GP::Alpha](0, 0) = 0.02;
    gen[GP::Beta](0, 0) = 0.02;
    return gen;
  }();
  return g;
}

PoseDistribution dataset_poses() {
  PoseDistribution d;
  d.scale_min = 0.32;
  d.scale_max = 0.38;
  return d;
}

BootstrapConfig small_bootstrap(std::uint64_t seed) {
  BootstrapConfig c;
  c.width = c.height = 24;
  c.render = RenderConfig{24, 16, true, 0, 128};
  c.seed = seed;
  return c;
}

std::string slurp(const io::fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

}  // namespace

// --- observations ---------------------------------------------------------

TEST(ExtractObservation, EmptyMaskIsInsufficient) {
  RenderOutput o = RenderOutput::zeros(8, 8, 1);
  EXPECT_THROW(extract_observation(o), InsufficientDataError);
}

TEST(ExtractObservation, ZeroThresholdOnFullMaskKeepsEveryPixel) {
  RenderOutput o = RenderOutput::zeros(6, 5, 1);
  o.mask.setConstant(0.7);
  o.canonical.setConstant(0.35);
  const CanonicalObservation obs = extract_observation(o, 0.0);
  EXPECT_EQ(obs.size(), 30u);
  EXPECT_NEAR(obs.points[3](1), 0.5, 1e-12);
  EXPECT_NEAR(obs.pixels[0](0), 0.5 / 6 - 0.5, 1e-12);
}

TEST(ExtractObservation, SphereRenderLiesOnUnitSphere) {
  const AnalyticScene scene = sphere_scene();
  const PoseParams pose = look_at_pose(30, 20, 0.35, 0.5);
  const RenderOutput o = render(scene, pose_to_camera(pose), 32, 32, RenderConfig{64, 32, true, 0, 128});
  const CanonicalObservation obs = extract_observation(o, 0.5);
  EXPECT_GT(obs.size(), 100u);
  double worst = 0.0;
  for (const Vec3& p : obs.points) worst = std::max(worst, std::abs(p.norm() - 1.0));
  EXPECT_LT(worst, 0.05);
}

// --- PnP -----------------------------------------------------------------

TEST(SolvePnP, NoiselessRecoveryIsExact) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const PoseParams gt = random_pose(rng);
    const Camera cam = pose_to_camera(gt);
    const CanonicalObservation obs = synthetic_observation(cam, 100, rng);
    const PnPSolution sol = solve_pnp(obs, cam.focal);
    EXPECT_LT(rotation_error(sol.pose.q, gt.q), 0.01);
    EXPECT_LT(translation_error(sol.camera, cam), 1e-4);
    EXPECT_LT(sol.reprojection_error, 1e-6);
    EXPECT_NEAR(sol.pose.q.norm(), 1.0, 1e-12);
    EXPECT_NEAR(sol.pose.z0, gt.z0, 1e-9);
  }
}

TEST(SolvePnP, EquivariantUnderWorldRotation) {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const Camera cam = pose_to_camera(random_pose(rng));
    CanonicalObservation obs = synthetic_observation(cam, 100, rng);
    const Mat3 r0 = quaternion_to_matrix(Quat(rng.normal(), rng.normal(), rng.normal(), rng.normal()).normalized());
    const PnPSolution base = solve_pnp(obs, cam.focal);
    for (Vec3& p : obs.points) p = r0 * p;
    const PnPSolution moved = solve_pnp(obs, cam.focal);
    // The moved solution composed with R0 reproduces the original camera.
    Camera composed = moved.camera;
    composed.rotation = moved.camera.rotation * r0;
    EXPECT_LT((composed.rotation - base.camera.rotation).norm(), 1e-8);
    EXPECT_LT((composed.translation - base.camera.translation).norm(), 1e-8);
    CanonicalObservation orig = obs;
    for (Vec3& p : orig.points) p = r0.transpose() * p;
    EXPECT_LT(pnp::reprojection_error(orig, composed.rotation, composed.translation, cam.focal), 1e-6);
  }
}

TEST(SolvePnP, PointsOnOpticalAxisAreDegenerate) {
  CanonicalObservation obs;
  obs.width = obs.height = kSide;
  for (int i = 0; i < 10; ++i) {
    obs.points.emplace_back(0, 0, -0.9 + 0.2 * i);
    obs.pixels.emplace_back(0, 0);
  }
  EXPECT_THROW(solve_pnp(obs, 2.0), DegenerateConfigurationError);
}

TEST(SolvePnP, CoplanarPointsAreDegenerate) {
  Rng rng(3);
  const Camera cam = pose_to_camera(look_at_pose(10, 15, 0.35, 0.5));
  CanonicalObservation obs;
  obs.width = obs.height = kSide;
  for (int i = 0; i < 50; ++i) {
    const Vec3 x(rng.uniform(-1, 1), rng.uniform(-1, 1), 0.3);
    obs.points.push_back(x);
    obs.pixels.push_back(cam.project(x));
  }
  EXPECT_THROW(solve_pnp(obs, cam.focal), DegenerateConfigurationError);
}

TEST(SolvePnP, RejectsBadInput) {
  Rng rng(4);
  const Camera cam = pose_to_camera(random_pose(rng));
  CanonicalObservation obs = synthetic_observation(cam, 5, rng);
  EXPECT_THROW(solve_pnp(obs, cam.focal), InsufficientDataError);
  obs = synthetic_observation(cam, 20, rng);
  EXPECT_THROW(solve_pnp(obs, 0.9), StructuralError);
}

TEST(SolvePnP, RotationErrorShrinksWithNoise) {
  const std::vector<double> sigmas = {0.0, 0.5, 1.0, 2.0};
  std::vector<double> mean_err;
  for (double sigma : sigmas) {
    Rng rng(5);
    double total = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      const PoseParams gt = random_pose(rng);
      const Camera cam = pose_to_camera(gt);
      const CanonicalObservation obs = synthetic_observation(cam, 100, rng, sigma);
      total += rotation_error(solve_pnp(obs, cam.focal).pose.q, gt.q);
    }
    mean_err.push_back(total / 50);
  }
  for (std::size_t i = 1; i < mean_err.size(); ++i) EXPECT_GT(mean_err[i], mean_err[i - 1]);
  EXPECT_LT(mean_err[0], 1e-6);
  EXPECT_LT(mean_err[2], 5.0);
  ::testing::Test::RecordProperty("mean_rotation_error_1px_deg", std::to_string(mean_err[2]));
}

// --- focal sweep ------------------------------------------------------------

TEST(FocalSweep, SelectsTrueFocal) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    PoseParams gt = random_pose(rng);
    std::vector<double> cands;
    for (int k = 0; k < 10; ++k) cands.push_back(1.0 + std::exp(0.1 * k));
    const int pick = rng.uniform_int(10);
    gt.z0 = 0.1 * pick;
    const Camera cam = pose_to_camera(gt);
    const CanonicalObservation obs = synthetic_observation(cam, 100, rng);
    const PnPSolution sol = solve_pnp_focal_sweep(obs, cands);
    EXPECT_EQ(sol.focal, cands[static_cast<std::size_t>(pick)]);
    for (double f : cands) EXPECT_LE(sol.reprojection_error, solve_pnp(obs, f).reprojection_error);
  }
}

TEST(FocalSweep, SingleCandidateEqualsSolvePnP) {
  Rng rng(7);
  const Camera cam = pose_to_camera(random_pose(rng));
  const CanonicalObservation obs = synthetic_observation(cam, 60, rng, 0.5);
  const PnPSolution a = solve_pnp_focal_sweep(obs, {2.5});
  const PnPSolution b = solve_pnp(obs, 2.5);
  EXPECT_EQ(a.reprojection_error, b.reprojection_error);
  EXPECT_EQ(a.pose.to_array(), b.pose.to_array());
}

TEST(FocalSweep, NoisyObservationsStayAccurate) {
  Rng rng(8);
  double total = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const PoseParams gt = random_pose(rng);
    const Camera cam = pose_to_camera(gt);
    const CanonicalObservation obs = synthetic_observation(cam, 100, rng, 1.0);
    std::vector<double> cands;
    for (int k = 0; k < 10; ++k) cands.push_back(2.0 + 0.2 * k);
    total += rotation_error(solve_pnp_focal_sweep(obs, cands).pose.q, gt.q);
  }
  EXPECT_LT(total / 20, 5.0);
}

TEST(FocalSweep, ValidatesCandidates) {
  Rng rng(9);
  const Camera cam = pose_to_camera(random_pose(rng));
  const CanonicalObservation obs = synthetic_observation(cam, 30, rng);
  EXPECT_THROW(solve_pnp_focal_sweep(obs, {}), StructuralError);
  EXPECT_THROW(solve_pnp_focal_sweep(obs, {3.0, 2.0}), StructuralError);
}

TEST(FocalSweep, AllDegenerateAggregates) {
  CanonicalObservation obs;
  obs.width = obs.height = kSide;
  for (int i = 0; i < 10; ++i) {
    obs.points.emplace_back(0, 0, 0.1 * i);
    obs.pixels.emplace_back(0, 0);
  }
  try {
    solve_pnp_focal_sweep(obs, {2.0, 3.0});
    FAIL() << "expected a degenerate-configuration error";
  } catch (const DegenerateConfigurationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("f=2.0"), std::string::npos);
    EXPECT_NE(msg.find("f=3.0"), std::string::npos);
  }
}

TEST(FocalPercentiles, DecileMidpoints) {
  std::vector<double> f;
  for (int i = 0; i <= 100; ++i) f.push_back(100 - i);  // 0..100, unsorted
  const auto p = focal_percentiles(f);
  ASSERT_EQ(p.size(), 10u);
  for (int k = 0; k < 10; ++k) EXPECT_NEAR(p[static_cast<std::size_t>(k)], 5.0 + 10.0 * k, 1e-12);
  EXPECT_EQ(focal_percentiles({2.5}), std::vector<double>(10, 2.5));
  EXPECT_THROW(focal_percentiles({}), InsufficientDataError);
}

// --- bootstrap dataset ------------------------------------------------------

TEST(BootstrapDataset, ZeroScenesIsEmpty) {
  const Generator& gen = sphere_generator();
  EXPECT_TRUE(generate_bootstrap_dataset(gen, 0, prior_latent_sampler(gen), pose_sampler({})).empty());
}

TEST(BootstrapDataset, CanonicalMapsReproduceStoredPoses) {
  const Generator& gen = sphere_generator();
  const auto data = generate_bootstrap_dataset(gen, 6, prior_latent_sampler(gen), pose_sampler(dataset_poses()),
                                               small_bootstrap(11));
  ASSERT_EQ(data.size(), 6u);
  for (const DatasetRecord& r : data) {
    const CanonicalObservation obs = extract_observation(r.out);
    const PnPSolution sol = solve_pnp(obs, r.pose.focal());
    EXPECT_LT(rotation_error(sol.pose.q, r.pose.q), 1.0);
  }
}

TEST(BootstrapDataset, SeededDatasetIsByteIdentical) {
  const Generator& gen = sphere_generator();
  const auto dir = io::fs::temp_directory_path() / "radinv_test_dataset";
  io::fs::remove_all(dir);
  for (const char* run : {"a", "b"}) {
    const auto data = generate_bootstrap_dataset(gen, 2, prior_latent_sampler(gen), pose_sampler(dataset_poses()),
                                                 small_bootstrap(12));
    write_dataset(dir / run, data);
  }
  for (const char* f : {"rgb.ppm", "mask.pgm", "canonical.raw", "meta"}) {
    const std::string a = slurp(dir / "a" / "scene_00001" / f);
    EXPECT_FALSE(a.empty());
    EXPECT_EQ(a, slurp(dir / "b" / "scene_00001" / f)) << f;
  }
  const auto back = read_dataset(dir / "a");
  const auto data = generate_bootstrap_dataset(gen, 2, prior_latent_sampler(gen), pose_sampler(dataset_poses()),
                                               small_bootstrap(12));
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].w.w, data[i].w.w);
    EXPECT_EQ(back[i].pose.to_array(), data[i].pose.to_array());
    EXPECT_LT((back[i].out.canonical - data[i].out.canonical).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((back[i].out.rgb - data[i].out.rgb).cwiseAbs().maxCoeff(), 0.5 / 255 + 1e-12);
    EXPECT_LT((back[i].out.mask - data[i].out.mask).cwiseAbs().maxCoeff(), 0.5 / 65535 + 1e-12);
  }
  io::fs::remove_all(dir);
}

TEST(BootstrapDataset, MissingDirectoryIsIoError) {
  EXPECT_THROW(read_dataset("/nonexistent/radinv/dataset"), IoError);
}

TEST(CodeMixture, StaysInConvexHull) {
  const std::vector<LatentCode> codes = {LatentCode{Mat::Constant(1, 3, 1.0)}, LatentCode{Mat::Constant(1, 3, 3.0)}};
  const LatentSampler s = code_mixture_sampler(codes);
  Rng rng(13);
  for (int i = 0; i < 50; ++i) {
    const LatentCode c = s(rng);
    EXPECT_GE(c.w.minCoeff(), 1.0);
    EXPECT_LE(c.w.maxCoeff(), 3.0);
    EXPECT_NEAR(c.w(0, 0), c.w(0, 2), 1e-12);
  }
}

// --- losses and the regressor ----------------------------------------------

TEST(PredictorLosses, ClosedForms) {
  EXPECT_DOUBLE_EQ(latent_loss(Mat::Constant(1, 4, 1.0), Mat::Zero(1, 4)), 4.0);
  Mat m(4, 1);
  m << 1, 0, 1, 0;
  EXPECT_DOUBLE_EQ(mask_loss(Mat::Constant(4, 1, 0.5), m), 0.5);
  Mat p = Mat::Zero(4, 3), ph = Mat::Zero(4, 3);
  ph.row(0) << 3, 4, 0;  // distance 5, masked in
  ph.row(1) << 1, 0, 0;  // masked out
  EXPECT_DOUBLE_EQ(map_loss(ph, p, m), 5.0 / 4);
  EXPECT_THROW(latent_loss(Mat::Zero(1, 3), Mat::Zero(1, 4)), StructuralError);
}

TEST(ImageFeatures, BoxFilter) {
  Mat rgb(16, 3);
  for (int i = 0; i < 16; ++i) rgb.row(i) << i, 0, 1;
  const Mat f = image_features(rgb, 4, 4, 2);
  ASSERT_EQ(f.cols(), 21);
  EXPECT_DOUBLE_EQ(f(0, 12), 7.5);  // mean over pixels with non-zero color
  EXPECT_DOUBLE_EQ(f(0, 0), (0 + 1 + 4 + 5) / 4.0);
  EXPECT_DOUBLE_EQ(f(0, 9), (10 + 11 + 14 + 15) / 4.0);
  EXPECT_DOUBLE_EQ(f(0, 11), 1.0);
}

TEST(LatentRegressor, SingleSceneFitsExactly) {
  const Generator& gen = sphere_generator();
  const auto data = generate_bootstrap_dataset(gen, 1, prior_latent_sampler(gen), pose_sampler(dataset_poses()),
                                               small_bootstrap(14));
  const LatentRegressor reg = fit_latent_regressor(data);
  EXPECT_LT(reg.train_mse, 1e-20);
  EXPECT_GT(reg.lambda, 0.0);
  const LatentCode w = reg.predict(data[0].out.rgb, data[0].out.width, data[0].out.height);
  EXPECT_LT((w.w - data[0].w.w).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(fit_latent_regressor({}), InsufficientDataError);
}

TEST(LatentRegressor, BeatsVarianceAndRanksHeldOutViews) {
  const Generator& gen = sphere_generator();
  const int n = 150;
  // Mixtures of a few anchor codes, as used for fitted generators.
  Rng anchors(77);
  std::vector<LatentCode> codes;
  for (int i = 0; i < 4; ++i) codes.push_back(mapping(gen, anchors.normal_mat(1, gen.cfg.dim_z)));
  const auto data = generate_bootstrap_dataset(gen, n, code_mixture_sampler(codes), pose_sampler(dataset_poses()),
                                               small_bootstrap(15));
  const LatentRegressor reg = fit_latent_regressor(data);
  Mat ws(n, gen.cfg.dim_w);
  for (int i = 0; i < n; ++i) ws.row(i) = data[static_cast<std::size_t>(i)].w.w;
  const double var = (ws.rowwise() - ws.colwise().mean()).squaredNorm() / static_cast<double>(ws.size());
  EXPECT_LT(reg.train_mse, var);

  // New viewpoints of training codes: the prediction should be closer to
  // the true code than to 90% of the other training codes.
  Rng rng(16);
  int ranked = 0;
  const int n_test = 10;
  for (int k = 0; k < n_test; ++k) {
    const auto& rec = data[static_cast<std::size_t>(k * 7)];
    const TriplaneField field = decode_field(gen, rec.w);
    const RenderOutput o = render(TriplaneSource(field), pose_to_camera(dataset_poses().sample(rng)), 24, 24,
                                  RenderConfig{24, 16, true, 99, 128});
    const Mat pred = reg.predict(o.rgb, 24, 24).w;
    const double own = (pred - rec.w.w).norm();
    int farther = 0;
    for (int i = 0; i < n; ++i)
      if (i != k * 7 && (pred - ws.row(i)).norm() > own) ++farther;
    if (farther >= 0.9 * (n - 1)) ++ranked;
  }
  EXPECT_GE(ranked, 8) << "held-out views ranked correctly: " << ranked << "/" << n_test;
}
