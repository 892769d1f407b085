#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "radinv/field.hpp"
#include "radinv/fitting.hpp"
#include "radinv/mesh.hpp"

using namespace radinv;
using radinv::testing::check_gradients;
using radinv::testing::random_mat;
using radinv::testing::weighted_sum;

namespace {

FieldConfig tiny_config(bool view = false) {
  FieldConfig c;
  c.dim_z = 4;
  c.dim_w = 4;
  c.mapping_hidden = 6;
  c.channels = 3;
  c.resolution = 4;
  c.semantic = 3;
  c.key_dim = 4;
  c.hidden = 6;
  c.appearance_dim = 5;
  c.view_dependent = view;
  return c;
}

// Decoder vars where the listed slots come from `vars` (in order) and the
// rest are constants taken from the generator.
DecoderVars decoder_from(ad::Tape& tape, const Generator& gen, const std::vector<GP>& slots,
                         const std::vector<ad::Var>& vars, std::size_t offset) {
  GeneratorVars g = bind_decoder(tape, gen, false);
  for (std::size_t i = 0; i < slots.size(); ++i) g.v[static_cast<std::size_t>(slots[i])] = vars[offset + i];
  return decoder_vars(g);
}

}  // namespace

TEST(Mapping, ZeroFinalLayerGivesBias) {
  Generator gen(tiny_config(), 1);
  gen[GP::MapW2].setZero();
  gen[GP::MapB2] = random_mat(1, 4, 2);
  const LatentCode w = mapping(gen, Mat::Zero(1, 4));
  EXPECT_EQ(w.w, gen[GP::MapB2]);
}

TEST(Mapping, Deterministic) {
  Generator gen(tiny_config(), 1);
  const Mat z = random_mat(1, 4, 3);
  EXPECT_EQ(mapping(gen, z).w, mapping(gen, z).w);
  EXPECT_EQ(Generator(tiny_config(), 9).params[0], Generator(tiny_config(), 9).params[0]);
}

TEST(Mapping, GradientOfSquaredNormMatchesFiniteDifferences) {
  Generator gen(tiny_config(), 4);
  for (std::uint64_t s = 0; s < 5; ++s) {
    EXPECT_TRUE(check_gradients(
        [&](ad::Tape& t, const auto& v) {
          const GeneratorVars g = bind_generator(t, gen);
          return ad::sum(ad::square(mapping(g, v[0], gen.cfg.leaky_slope)));
        },
        {random_mat(1, 4, 10 + s)}));
  }
}

TEST(Mapping, RejectsBadInput) {
  Generator gen(tiny_config(), 4);
  EXPECT_THROW(mapping(gen, Mat::Zero(1, 5)), StructuralError);
  Mat z = Mat::Zero(1, 4);
  z(0, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(mapping(gen, z), StructuralError);
}

TEST(DecodePlanes, WAndWPlusAgreeWhenRowsCoincide) {
  Generator gen(tiny_config(), 5);
  const LatentCode w{random_mat(1, 4, 6)};
  const TriplaneField a = decode_field(gen, w);
  const TriplaneField b = decode_field(gen, w.expanded());
  EXPECT_EQ(a.planes, b.planes);
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(w.expanded().mode(), LatentMode::kWPlus);
}

TEST(DecodePlanes, ZeroCodeGivesBiasPlanes) {
  Generator gen(tiny_config(), 5);
  const TriplaneField f = decode_field(gen, LatentCode{Mat::Zero(1, 4)});
  const auto n = gen.cfg.texels();
  for (int k = 0; k < 3; ++k) {
    const Mat bias = Eigen::Map<const Mat>(gen[syn_bias(k)].data(), n, gen.cfg.channels);
    EXPECT_EQ(Mat(f.planes.middleRows(k * n, n)), bias);
  }
}

TEST(DecodePlanes, WPlusRowsFeedTheirOwnPlane) {
  Generator gen(tiny_config(), 5);
  Mat w = Mat::Zero(kLatentLayers, 4);
  w.row(1) = random_mat(1, 4, 7);
  const TriplaneField f = decode_field(gen, LatentCode{w});
  const TriplaneField z = decode_field(gen, LatentCode{Mat::Zero(kLatentLayers, 4)});
  const auto n = gen.cfg.texels();
  EXPECT_EQ(Mat(f.planes.middleRows(0, n)), Mat(z.planes.middleRows(0, n)));
  EXPECT_NE(Mat(f.planes.middleRows(n, n)), Mat(z.planes.middleRows(n, n)));
  EXPECT_EQ(f.values, z.values);
}

TEST(DecodePlanes, DimensionMismatchThrows) {
  Generator gen(tiny_config(), 5);
  EXPECT_THROW(decode_field(gen, LatentCode{Mat::Zero(1, 5)}), StructuralError);
  EXPECT_THROW(decode_field(gen, LatentCode{Mat::Zero(2, 4)}), StructuralError);
}

TEST(DecodePlanes, JacobianMatchesFiniteDifferences) {
  Generator gen(tiny_config(), 6);
  for (std::uint64_t s = 0; s < 5; ++s) {
    for (int rows : {1, kLatentLayers}) {
      EXPECT_TRUE(check_gradients(
          [&](ad::Tape& t, const auto& v) {
            const GeneratorVars g = bind_generator(t, gen);
            return ad::add(weighted_sum(synthesize_planes(gen.cfg, g, v[0]), 1),
                           weighted_sum(color_values(gen.cfg, g, v[0]), 2));
          },
          {random_mat(rows, 4, 20 + s)}));
    }
  }
}

TEST(QueryField, UniformKeysGiveMeanColor) {
  Generator gen(tiny_config(), 7);
  gen[GP::Queries].setZero();  // every key scores 0 against every query
  const TriplaneField f = decode_field(gen, LatentCode{random_mat(1, 4, 8)});
  const FieldQuery q = query_field(f, Vec3(0.1, -0.3, 0.2));
  const Vec3 mean = f.values.colwise().mean().transpose();
  EXPECT_LT((q.rgb - mean).norm(), 1e-12);
}

TEST(QueryField, SoftmaxWeightsFormDistribution) {
  Generator gen(tiny_config(), 8);
  const TriplaneField f = decode_field(gen, LatentCode{random_mat(1, 4, 9)});
  ad::Tape t;
  const DecoderVars dec = decoder_vars(bind_decoder(t, gen, false));
  const FieldEval e = eval_field(gen.cfg, dec, t.constant(f.planes), t.constant(random_mat(50, 3, 10)));
  EXPECT_GE(e.probs.value().minCoeff(), 0.0);
  EXPECT_LT((e.probs.value().rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
}

TEST(QueryField, OutOfCubeClampsToBorder) {
  Generator gen(tiny_config(), 8);
  const TriplaneField f = decode_field(gen, LatentCode{random_mat(1, 4, 9)});
  EXPECT_NEAR(query_field(f, Vec3(1.5, 0.2, -2.0)).d, query_field(f, Vec3(1.0, 0.2, -1.0)).d, 1e-12);
}

TEST(QueryField, ColorsAreLinearInValues) {
  Generator gen(tiny_config(), 9);
  TriplaneField f = decode_field(gen, LatentCode{random_mat(1, 4, 11)});
  const std::vector<Vec3> pts = {Vec3(0.1, 0.2, 0.3), Vec3(-0.5, 0.4, 0.0), Vec3(0.9, -0.9, 0.2)};
  const Mat v1 = random_mat(3, 3, 12), v2 = random_mat(3, 3, 13);
  const double a = 0.3, b = -1.7;
  auto colors = [&](const Mat& v) {
    f.values = v;
    return query_field(f, pts);
  };
  const auto c1 = colors(v1), c2 = colors(v2), c12 = colors(a * v1 + b * v2);
  for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_LT((c12[i].rgb - (a * c1[i].rgb + b * c2[i].rgb)).norm(), 1e-12);
}

TEST(QueryField, ViewBranchChangesColorOnlyWhenEnabled) {
  for (bool view : {false, true}) {
    Generator gen(tiny_config(view), 10);
    const TriplaneField f = decode_field(gen, LatentCode{random_mat(1, 4, 14)});
    const Vec3 x(0.2, 0.1, -0.4);
    const FieldQuery a = query_field(f, x, Vec3::UnitZ());
    const FieldQuery b = query_field(f, x, Vec3::UnitX());
    const FieldQuery none = query_field(f, x);
    EXPECT_EQ(a.d, b.d);
    EXPECT_EQ(a.d, none.d);
    if (view)
      EXPECT_GT((a.rgb - b.rgb).norm(), 1e-9);
    else
      EXPECT_EQ(a.rgb, b.rgb);
  }
}

TEST(QueryField, GradientsMatchFiniteDifferences) {
  // d, key and rgb w.r.t. planes, values, decoder weights and query points,
  // with and without the view branch.
  const std::vector<GP> slots = {GP::DecW1, GP::DecB1, GP::DecW2, GP::DecWd, GP::DecWa, GP::DecWk, GP::Queries,
                                 GP::ViewW1, GP::ViewW2};
  for (std::uint64_t s = 0; s < 20; ++s) {
    const bool view = s % 2 == 1;
    Generator gen(tiny_config(view), 100 + s);
    const TriplaneField f = decode_field(gen, LatentCode{random_mat(1, 4, 200 + s)});
    std::vector<Mat> inputs = {f.planes, f.values, random_mat(3, 3, 300 + s, -0.9, 0.9),
                               random_mat(3, 3, 400 + s)};
    for (GP k : slots) inputs.push_back(gen[k]);
    EXPECT_TRUE(check_gradients(
        [&](ad::Tape& t, const std::vector<ad::Var>& v) {
          const DecoderVars dec = decoder_from(t, gen, slots, v, 4);
          const ad::Var dirs = ad::mul_colvec(v[3], ad::row_norm(v[3]));
          const FieldEval e = eval_field(gen.cfg, dec, v[0], v[2], dirs, 1);
          const ad::Var rgb = ad::matmul(e.probs, v[1]);
          return ad::add(ad::add(weighted_sum(e.d, 1), weighted_sum(e.key, 2)), weighted_sum(rgb, 3));
        },
        inputs));
  }
}

TEST(Eikonal, AnalyticSphereIsZero) {
  const double loss = eikonal_loss_analytic(
      [](const Vec3& x) { return Vec3(x.norm() > 0 ? Vec3(x / x.norm()) : Vec3::UnitX()); }, 4096, 1);
  EXPECT_LT(loss, 1e-6);
}

TEST(Eikonal, ScaledSphereIsOne) {
  const double loss = eikonal_loss_analytic([](const Vec3& x) { return Vec3(2.0 * x / x.norm()); }, 4096, 2);
  EXPECT_NEAR(loss, 1.0, 1e-6);
}

TEST(Eikonal, SpatialGradientMatchesFiniteDifferencesOfSdf) {
  Generator gen(tiny_config(), 11);
  const TriplaneField f = decode_field(gen, LatentCode{random_mat(1, 4, 15)});
  const Mat x = random_mat(5, 3, 16, -0.9, 0.9);
  ad::Tape t;
  const DecoderVars dec = decoder_vars(bind_decoder(t, gen, false));
  const ad::Var planes = t.constant(f.planes);
  const FieldEval e = eval_field(gen.cfg, dec, planes, t.constant(x));
  const Mat g = sdf_spatial_gradient(gen.cfg, dec, planes, t.constant(x), e).value();
  const double h = 1e-6;
  for (Eigen::Index n = 0; n < x.rows(); ++n)
    for (int a = 0; a < 3; ++a) {
      Vec3 xp = x.row(n).transpose(), xm = xp;
      xp(a) += h;
      xm(a) -= h;
      const double num = (query_field(f, xp).d - query_field(f, xm).d) / (2 * h);
      EXPECT_TRUE(radinv::testing::grad_close(g(n, a), num));
    }
}

TEST(Eikonal, SecondOrderGradientMatchesFiniteDifferences) {
  const std::vector<GP> slots = {GP::DecW1, GP::DecB1, GP::DecW2, GP::DecWd};
  for (std::uint64_t s = 0; s < 20; ++s) {
    Generator gen(tiny_config(), 500 + s);
    const TriplaneField f = decode_field(gen, LatentCode{random_mat(1, 4, 600 + s)});
    std::vector<Mat> inputs = {f.planes};
    for (GP k : slots) inputs.push_back(gen[k]);
    EXPECT_TRUE(check_gradients(
        [&](ad::Tape& t, const std::vector<ad::Var>& v) {
          return eikonal_loss(gen.cfg, decoder_from(t, gen, slots, v, 1), v[0], 27, 700 + s);
        },
        inputs));
  }
}

TEST(Eikonal, RejectsZeroSamples) {
  Generator gen(tiny_config(), 12);
  EXPECT_THROW(eikonal_loss(decode_field(gen, LatentCode{Mat::Zero(1, 4)}), 0, 1), StructuralError);
}

TEST(PathLength, ZeroJacobianGivesZeroLength) {
  Generator gen(tiny_config(), 13);
  for (int k = 0; k < 3; ++k) gen[syn_weight(k)].setZero();
  ad::Tape t;
  const GeneratorVars g = bind_generator(t, gen);
  Rng rng(1);
  PathLengthState st;
  EXPECT_EQ(path_length_penalty(gen.cfg, g, LatentMode::kW, rng, st).length, 0.0);
}

TEST(PathLength, ScaledOrthogonalGeneratorIsIsometry) {
  FieldConfig c = tiny_config();
  c.resolution = 2;
  c.channels = 1;  // plane size 4 = dim_w, so each layer can be square orthogonal
  Generator gen(c, 14);
  const double scale = 2.5;
  for (int k = 0; k < 3; ++k) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(Eigen::MatrixXd(random_mat(4, 4, 30 + static_cast<std::uint64_t>(k))));
    gen[syn_weight(k)] = scale * Mat(Eigen::MatrixXd(qr.householderQ()));
  }
  ad::Tape t;
  const GeneratorVars g = bind_generator(t, gen);
  Rng rng(2);
  PathLengthState st;
  for (int trial = 0; trial < 5; ++trial) {
    const PathLengthResult r = path_length_penalty(gen.cfg, g, LatentMode::kWPlus, rng, st);
    double ynorm = 0.0;
    for (const Mat& y : r.y) ynorm += y.squaredNorm();
    EXPECT_NEAR(r.length, scale * std::sqrt(ynorm), 1e-12);
  }
}

TEST(PathLength, VjpMatchesFiniteDifferenceJacobian) {
  Generator gen(tiny_config(), 15);
  const Mat w0 = random_mat(1, 4, 40);
  Rng rng(3);
  std::vector<Mat> y;
  for (int k = 0; k < 3; ++k) y.push_back(rng.normal_mat(gen.cfg.plane_size(), 1));
  ad::Tape t;
  const Mat jty = path_length_jty(bind_generator(t, gen), LatentMode::kW, y).value();
  Mat ycat(3 * gen.cfg.plane_size(), 1);
  for (int k = 0; k < 3; ++k) ycat.middleRows(k * gen.cfg.plane_size(), gen.cfg.plane_size()) = y[static_cast<std::size_t>(k)];
  const double h = 1e-6;
  for (int i = 0; i < 4; ++i) {
    Mat wp = w0, wm = w0;
    wp(0, i) += h;
    wm(0, i) -= h;
    const Mat dp = decode_field(gen, LatentCode{wp}).planes, dm = decode_field(gen, LatentCode{wm}).planes;
    const Mat col = (dp - dm) / (2 * h);
    const double num = Eigen::Map<const Eigen::VectorXd>(col.data(), col.size()).dot(
        Eigen::Map<const Eigen::VectorXd>(ycat.data(), ycat.size()));
    EXPECT_TRUE(radinv::testing::grad_close(jty(i, 0), num));
  }
}

TEST(PathLength, PenaltyGradientMatchesFiniteDifferences) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Generator gen(tiny_config(), 800 + s);
    PathLengthState st;
    st.mean = 0.5;
    st.initialized = true;
    EXPECT_TRUE(check_gradients(
        [&](ad::Tape& t, const std::vector<ad::Var>& v) {
          GeneratorVars g = bind_generator(t, gen);
          for (int k = 0; k < 3; ++k) g.v[static_cast<std::size_t>(syn_weight(k))] = v[static_cast<std::size_t>(k)];
          Rng rng(s);
          PathLengthState copy = st;
          return path_length_penalty(gen.cfg, g, s % 2 ? LatentMode::kW : LatentMode::kWPlus, rng, copy).penalty;
        },
        {gen[GP::SynW0], gen[GP::SynW1], gen[GP::SynW2]}));
  }
}

TEST(PathLength, RunningMeanTracksLength) {
  Generator gen(tiny_config(), 16);
  ad::Tape t;
  const GeneratorVars g = bind_generator(t, gen);
  Rng rng(4);
  PathLengthState st;
  const PathLengthResult first = path_length_penalty(gen.cfg, g, LatentMode::kW, rng, st);
  EXPECT_EQ(first.penalty.scalar(), 0.0);
  EXPECT_NEAR(st.mean, first.length, 1e-15);
  const PathLengthResult second = path_length_penalty(gen.cfg, g, LatentMode::kW, rng, st);
  EXPECT_NEAR(st.mean, 0.99 * first.length + 0.01 * second.length, 1e-15);
}

TEST(RemapColors, SameCodeIsIdentity) {
  Generator gen(tiny_config(), 17);
  const LatentCode a{random_mat(1, 4, 50)};
  const TriplaneField f = decode_field(gen, a), r = remap_colors(gen, a, a);
  EXPECT_EQ(f.planes, r.planes);
  EXPECT_EQ(f.values, r.values);
}

TEST(RemapColors, KeysFromIdentityValuesFromColor) {
  Generator gen(tiny_config(), 18);
  const LatentCode a{random_mat(1, 4, 51)}, b{random_mat(1, 4, 52)};
  const TriplaneField r = remap_colors(gen, a, b);
  EXPECT_EQ(r.planes, decode_field(gen, a).planes);
  EXPECT_EQ(r.values, decode_field(gen, b).values);
}

TEST(RemapColors, SwappingValueRowsPermutesChannels) {
  Generator gen(tiny_config(), 19);
  TriplaneField f = decode_field(gen, LatentCode{random_mat(1, 4, 53)});
  const Vec3 x(0.3, -0.1, 0.5);
  ad::Tape t;
  const DecoderVars dec = decoder_vars(bind_decoder(t, gen, false));
  const Mat p = eval_field(gen.cfg, dec, t.constant(f.planes), t.constant(Mat(x.transpose()))).probs.value();
  Mat swapped = f.values;
  swapped.row(0).swap(swapped.row(2));
  f.values = swapped;
  const Vec3 expect = p(0, 0) * swapped.row(0).transpose() + p(0, 1) * swapped.row(1).transpose() +
                      p(0, 2) * swapped.row(2).transpose();
  EXPECT_LT((query_field(f, x).rgb - expect).norm(), 1e-12);
}

TEST(DensityParams, ClampedAtFloor) {
  Generator gen(tiny_config(), 20);
  gen[GP::Alpha](0, 0) = -3.0;
  gen[GP::Beta](0, 0) = 1e-6;
  gen.clamp_density_params();
  EXPECT_EQ(gen.alpha(), 1e-3);
  EXPECT_EQ(gen.beta(), 1e-3);
  EXPECT_EQ(Generator(tiny_config(), 1).alpha(), 1.0);
  EXPECT_EQ(Generator(tiny_config(), 1).beta(), 0.1);
}

TEST(SpherePretrain, TargetFormula) {
  EXPECT_EQ(unit_sphere_sdf(Vec3::Zero()), -1.0);
  EXPECT_NEAR(unit_sphere_sdf(Vec3(0, 0, 0.999999)), 0.0, 1e-5);
}

struct Pretrained {
  Generator gen{FieldConfig{}, 21};
  PretrainReport rep;
  Pretrained() { rep = sphere_pretrain(gen); }
};

const Pretrained& pretrained() {
  static const Pretrained p;
  return p;
}

TEST(SpherePretrain, ConvergesToUnitSphere) {
  const Generator& gen = pretrained().gen;
  const PretrainReport& rep = pretrained().rep;
  EXPECT_EQ(rep.trace.size(), 1000u);
  EXPECT_LT(rep.final_loss, rep.initial_loss);
  EXPECT_LT(rep.final_loss, 1e-2);
  const TriplaneField f = decode_field(gen, mapping(gen, Rng(5).normal_mat(1, gen.cfg.dim_z)));
  EXPECT_NEAR(query_field(f, Vec3::Zero()).d, -1.0, 0.1);
  Rng rng(6);
  for (int i = 0; i < 20; ++i) {
    const Vec3 dir = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
    EXPECT_LT(std::abs(query_field(f, dir).d), 0.05);
  }
  EXPECT_LT(eikonal_loss(f, 4096, 7), 0.1);
}

TEST(SpherePretrain, MeshRadiusWithinTwoVoxels) {
  const Generator& gen = pretrained().gen;
  const TriplaneField f = decode_field(gen, mapping(gen, Rng(8).normal_mat(1, gen.cfg.dim_z)));
  const TriMesh mesh = extract_mesh(TriplaneSource(f), 64);
  ASSERT_GT(mesh.vertices.size(), 100u);
  const double h = 2.0 / 64;
  for (const Vec3& v : mesh.vertices) {
    EXPECT_GT(v.norm(), 1.0 - 2 * h);
    EXPECT_LT(v.norm(), 1.0 + 2 * h);
  }
}
