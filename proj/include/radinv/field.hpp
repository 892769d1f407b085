#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "radinv/autodiff/bilinear.hpp"
#include "radinv/autodiff/ops.hpp"
#include "radinv/core.hpp"

// The invertible scene representation: prior z -> latent w -> three feature
// planes -> SDF, semantic keys and colors.

namespace radinv {

struct FieldConfig {
  int dim_z = 64;
  int dim_w = 64;
  int mapping_hidden = 64;
  int channels = 16;    // C
  int resolution = 32;  // R
  int semantic = 8;     // S
  int key_dim = 16;     // E
  int hidden = 64;
  int appearance_dim = 32;  // width of the late-fusion vector
  bool view_dependent = false;
  double leaky_slope = 0.2;

  [[nodiscard]] Eigen::Index plane_size() const { return static_cast<Eigen::Index>(resolution) * resolution * channels; }
  [[nodiscard]] Eigen::Index texels() const { return static_cast<Eigen::Index>(resolution) * resolution; }
};

inline constexpr double kDensityParamFloor = 1e-3;

enum class LatentMode { kW, kWPlus };

/// W+ has one vector per generator layer: the three plane layers (xy, xz,
/// yz) and the color network, in that order.
inline constexpr int kLatentLayers = 4;
inline constexpr int kColorLayer = 3;

struct LatentCode {
  Mat w;  // [1, dim_w] in W mode, [kLatentLayers, dim_w] in W+ mode

  [[nodiscard]] LatentMode mode() const { return w.rows() == 1 ? LatentMode::kW : LatentMode::kWPlus; }
  [[nodiscard]] LatentCode expanded() const {
    if (mode() == LatentMode::kWPlus) return *this;
    return LatentCode{w.replicate(kLatentLayers, 1)};
  }
  [[nodiscard]] int layer_row(int layer) const { return mode() == LatentMode::kW ? 0 : layer; }
};

// Parameter slots of the generator, in checkpoint order.
enum class GP : int {
  MapW1, MapB1, MapW2, MapB2,
  SynW0, SynB0, SynW1, SynB1, SynW2, SynB2,
  ColW, ColB,
  Queries,
  DecW1, DecB1, DecW2, DecB2, DecWd, DecBd, DecWa, DecBa, DecWk, DecBk,
  ViewW1, ViewB1, ViewW2, ViewB2,
  Alpha, Beta,
  Count
};
inline constexpr int kNumGeneratorParams = static_cast<int>(GP::Count);

inline constexpr std::array<std::string_view, kNumGeneratorParams> kGeneratorParamNames = {
    "map_w1", "map_b1", "map_w2", "map_b2", "syn_w0", "syn_b0", "syn_w1", "syn_b1", "syn_w2", "syn_b2",
    "col_w",  "col_b",  "queries", "dec_w1", "dec_b1", "dec_w2", "dec_b2", "dec_wd", "dec_bd", "dec_wa",
    "dec_ba", "dec_wk", "dec_bk", "view_w1", "view_b1", "view_w2", "view_b2", "alpha", "beta"};

inline constexpr GP syn_weight(int plane) { return static_cast<GP>(static_cast<int>(GP::SynW0) + 2 * plane); }
inline constexpr GP syn_bias(int plane) { return static_cast<GP>(static_cast<int>(GP::SynB0) + 2 * plane); }

using ParamList = std::vector<Mat>;

inline ParamList zeros_like(const ParamList& ps) {
  ParamList out;
  out.reserve(ps.size());
  for (const Mat& m : ps) out.push_back(Mat::Zero(m.rows(), m.cols()));
  return out;
}

inline void add_into(ParamList& acc, const ParamList& g) {
  for (std::size_t i = 0; i < acc.size(); ++i)
    if (g[i].size() > 0) acc[i] += g[i];
}

struct Generator {
  FieldConfig cfg;
  ParamList params;

  Generator() = default;
  explicit Generator(const FieldConfig& c, std::uint64_t seed = 0) : cfg(c) { init(seed); }

  Mat& operator[](GP k) { return params[static_cast<std::size_t>(k)]; }
  const Mat& operator[](GP k) const { return params[static_cast<std::size_t>(k)]; }

  [[nodiscard]] double alpha() const { return (*this)[GP::Alpha](0, 0); }
  [[nodiscard]] double beta() const { return (*this)[GP::Beta](0, 0); }

  void clamp_density_params() {
    (*this)[GP::Alpha](0, 0) = std::max((*this)[GP::Alpha](0, 0), kDensityParamFloor);
    (*this)[GP::Beta](0, 0) = std::max((*this)[GP::Beta](0, 0), kDensityParamFloor);
  }

  void init(std::uint64_t seed) {
    Rng rng(seed);
    const FieldConfig& c = cfg;
    params.assign(kNumGeneratorParams, Mat());
    auto dense = [&](GP w, GP b, int in, int out, double gain = 1.0) {
      (*this)[w] = rng.normal_mat(in, out, gain / std::sqrt(static_cast<double>(in)));
      (*this)[b] = Mat::Zero(1, out);
    };
    dense(GP::MapW1, GP::MapB1, c.dim_z, c.mapping_hidden, std::sqrt(2.0));
    dense(GP::MapW2, GP::MapB2, c.mapping_hidden, c.dim_w);
    for (int k = 0; k < 3; ++k) {
      (*this)[syn_weight(k)] = rng.normal_mat(c.dim_w, c.plane_size(), 0.01 / std::sqrt(static_cast<double>(c.dim_w)));
      (*this)[syn_bias(k)] = rng.normal_mat(1, c.plane_size(), 0.1);
    }
    dense(GP::ColW, GP::ColB, c.dim_w, 3 * c.semantic);
    (*this)[GP::Queries] = rng.normal_mat(c.semantic, c.key_dim, 1.0);
    dense(GP::DecW1, GP::DecB1, c.channels, c.hidden);
    dense(GP::DecW2, GP::DecB2, c.hidden, c.hidden);
    dense(GP::DecWd, GP::DecBd, c.hidden, 1);
    dense(GP::DecWa, GP::DecBa, c.hidden, c.appearance_dim);
    dense(GP::DecWk, GP::DecBk, c.appearance_dim, c.key_dim);
    dense(GP::ViewW1, GP::ViewB1, 3, c.appearance_dim);
    dense(GP::ViewW2, GP::ViewB2, c.appearance_dim, c.appearance_dim, 0.1);
    (*this)[GP::Alpha] = Mat::Constant(1, 1, 1.0);
    (*this)[GP::Beta] = Mat::Constant(1, 1, 0.1);
  }
};

/// Generator parameters bound as leaves of one tape.
struct GeneratorVars {
  std::vector<ad::Var> v;
  ad::Var operator[](GP k) const { return v[static_cast<std::size_t>(k)]; }
};

/// Binds all generator parameters; `trainable` selects which receive grads.
inline GeneratorVars bind_generator(ad::Tape& tape, const Generator& g, const std::vector<bool>& trainable = {}) {
  GeneratorVars vars;
  vars.v.reserve(g.params.size());
  for (std::size_t i = 0; i < g.params.size(); ++i) {
    const bool req = trainable.empty() ? false : trainable[i];
    vars.v.push_back(tape.leaf(g.params[i], req));
  }
  return vars;
}

inline ParamList collect_grads(const ad::Tape& tape, const std::vector<ad::Var>& vars) {
  ParamList out;
  out.reserve(vars.size());
  for (const ad::Var& v : vars) out.push_back(tape.grad(v));
  return out;
}

/// z [1,dim_z] -> w [1,dim_w]; a two-layer leaky MLP.
inline ad::Var mapping(const GeneratorVars& g, ad::Var z, double slope) {
  return ad::linear(ad::leaky_relu(ad::linear(z, g[GP::MapW1], g[GP::MapB1]), slope), g[GP::MapW2], g[GP::MapB2]);
}

inline LatentCode mapping(const Generator& gen, const Mat& z) {
  if (z.rows() != 1 || z.cols() != gen.cfg.dim_z) throw StructuralError("mapping: z must be [1, dim_z]");
  if (!z.allFinite()) throw StructuralError("mapping: z must be finite");
  ad::Tape tape;
  GeneratorVars g;
  g.v.assign(gen.params.size(), ad::Var{});
  for (GP k : {GP::MapW1, GP::MapB1, GP::MapW2, GP::MapB2}) g.v[static_cast<std::size_t>(k)] = tape.constant(gen[k]);
  return LatentCode{mapping(g, tape.constant(z), gen.cfg.leaky_slope).value()};
}

inline void check_latent(const FieldConfig& cfg, const Mat& w) {
  if (w.cols() != cfg.dim_w || (w.rows() != 1 && w.rows() != kLatentLayers))
    throw StructuralError("latent code dimension does not match the generator");
}

/// latent [1 or 4, dim_w] -> planes [3*R*R, C]; one linear layer per plane.
inline ad::Var synthesize_planes(const FieldConfig& cfg, const GeneratorVars& g, ad::Var latent) {
  check_latent(cfg, latent.value());
  std::vector<ad::Var> planes;
  for (int k = 0; k < 3; ++k) {
    const ad::Var row = latent.rows() == 1 ? latent : ad::slice_rows(latent, k, 1);
    const ad::Var flat = ad::linear(row, g[syn_weight(k)], g[syn_bias(k)]);
    planes.push_back(ad::reshape(flat, cfg.texels(), cfg.channels));
  }
  return ad::concat_rows(planes);
}

/// Color network: latent -> values V [S,3] in (0,1).
inline ad::Var color_values(const FieldConfig& cfg, const GeneratorVars& g, ad::Var latent) {
  check_latent(cfg, latent.value());
  const ad::Var row = latent.rows() == 1 ? latent : ad::slice_rows(latent, kColorLayer, 1);
  return ad::reshape(ad::sigmoid(ad::linear(row, g[GP::ColW], g[GP::ColB])), cfg.semantic, 3);
}

/// Generator output for one latent: planes and color values. Decoder,
/// queries and density parameters are read from the generator.
struct TriplaneField {
  const Generator* gen = nullptr;
  Mat planes;  // [3*R*R, C]
  Mat values;  // V [S,3]

  [[nodiscard]] const FieldConfig& cfg() const { return gen->cfg; }
};

inline TriplaneField decode_field(const Generator& gen, const LatentCode& code) {
  ad::Tape tape;
  const GeneratorVars g = bind_generator(tape, gen);
  const ad::Var lat = tape.constant(code.w);
  TriplaneField f;
  f.gen = &gen;
  f.planes = synthesize_planes(gen.cfg, g, lat).value();
  f.values = color_values(gen.cfg, g, lat).value();
  return f;
}

/// Decoder weights as seen by one field evaluation.
struct DecoderVars {
  ad::Var w1, b1, w2, b2, wd, bd, wa, ba, wk, bk;
  ad::Var vw1, vb1, vw2, vb2;
  ad::Var queries, alpha, beta;
};

inline DecoderVars decoder_vars(const GeneratorVars& g) {
  return {g[GP::DecW1],  g[GP::DecB1],  g[GP::DecW2],  g[GP::DecB2],  g[GP::DecWd],   g[GP::DecBd],
          g[GP::DecWa],  g[GP::DecBa],  g[GP::DecWk],  g[GP::DecBk],  g[GP::ViewW1],  g[GP::ViewB1],
          g[GP::ViewW2], g[GP::ViewB2], g[GP::Queries], g[GP::Alpha], g[GP::Beta]};
}

/// Generator slots consumed by field evaluation (everything downstream of
/// the planes and color values), in the order renderers bind them.
inline constexpr std::array<GP, 17> kDecoderSlots = {
    GP::Queries, GP::DecW1,  GP::DecB1,  GP::DecW2,  GP::DecB2,  GP::DecWd, GP::DecBd, GP::DecWa, GP::DecBa,
    GP::DecWk,   GP::DecBk,  GP::ViewW1, GP::ViewB1, GP::ViewW2, GP::ViewB2, GP::Alpha, GP::Beta};

/// Binds only the decoder slots (cheap: the synthesis weights stay off the tape).
inline GeneratorVars bind_decoder(ad::Tape& tape, const Generator& g, bool trainable) {
  GeneratorVars vars;
  vars.v.assign(g.params.size(), ad::Var{});
  for (GP k : kDecoderSlots) vars.v[static_cast<std::size_t>(k)] = tape.leaf(g[k], trainable);
  return vars;
}

struct FieldEval {
  ad::Var pre1, pre2;  // hidden pre-activations, reused by the spatial gradient
  ad::Var d;           // [N,1]
  ad::Var key;         // [N,E]
  ad::Var probs;       // [N,S] softmax(key . Q^T)
};

/// Samples the planes at `points` and decodes SDF and semantic keys.
/// `ray_dirs` ([N/samples_per_dir, 3]) enables the late-fusion view branch:
/// the direction embedding is computed once per ray and added to the
/// appearance vector before the final key layer.
inline FieldEval eval_field(const FieldConfig& cfg, const DecoderVars& dec, ad::Var planes, ad::Var points,
                            std::optional<ad::Var> ray_dirs = std::nullopt, int samples_per_dir = 1) {
  FieldEval e;
  const ad::Var feat = ad::triplane_features(planes, points, cfg.channels, cfg.resolution);
  e.pre1 = ad::linear(feat, dec.w1, dec.b1);
  const ad::Var h1 = ad::softplus(e.pre1);
  e.pre2 = ad::linear(h1, dec.w2, dec.b2);
  const ad::Var h2 = ad::softplus(e.pre2);
  e.d = ad::linear(h2, dec.wd, dec.bd);
  ad::Var app = ad::linear(h2, dec.wa, dec.ba);
  if (cfg.view_dependent && ray_dirs.has_value()) {
    const ad::Var v1 = ad::leaky_relu(ad::linear(*ray_dirs, dec.vw1, dec.vb1), cfg.leaky_slope);
    const ad::Var v2 = ad::linear(v1, dec.vw2, dec.vb2);
    app = ad::add(app, ad::repeat_rows(v2, samples_per_dir));
  }
  e.key = ad::linear(ad::leaky_relu(app, cfg.leaky_slope), dec.wk, dec.bk);
  e.probs = ad::softmax_rows(ad::matmul(e.key, ad::transpose(dec.queries)));
  return e;
}

/// SDF only; skips the appearance branch.
inline ad::Var eval_sdf(const FieldConfig& cfg, const DecoderVars& dec, ad::Var planes, ad::Var points) {
  const ad::Var feat = ad::triplane_features(planes, points, cfg.channels, cfg.resolution);
  const ad::Var h1 = ad::softplus(ad::linear(feat, dec.w1, dec.b1));
  const ad::Var h2 = ad::softplus(ad::linear(h1, dec.w2, dec.b2));
  return ad::linear(h2, dec.wd, dec.bd);
}

/// Analytic spatial gradient d d(x)/dx as [N,3], differentiable w.r.t. the
/// planes and decoder (forward tangents pushed through the MLP as ops).
inline ad::Var sdf_spatial_gradient(const FieldConfig& cfg, const DecoderVars& dec, ad::Var planes, ad::Var points,
                                    const FieldEval& e) {
  const ad::Var t0 = ad::triplane_spatial_grad(planes, points, cfg.channels, cfg.resolution);
  const ad::Var t1 = ad::mul_repeat(ad::sigmoid(e.pre1), ad::matmul(t0, dec.w1), 3);
  const ad::Var t2 = ad::mul_repeat(ad::sigmoid(e.pre2), ad::matmul(t1, dec.w2), 3);
  const ad::Var g = ad::matmul(t2, dec.wd);  // [3N,1]
  return ad::reshape(g, points.rows(), 3);
}

struct FieldQuery {
  double d = 0.0;
  Eigen::VectorXd key;
  Vec3 rgb = Vec3::Zero();
};

inline Mat points_to_mat(const std::vector<Vec3>& pts) {
  Mat m(static_cast<Eigen::Index>(pts.size()), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
  return m;
}

/// Batched forward query: SDF, key and color at points; rows of `view_dirs`
/// (one per point) are used when the view branch is enabled.
inline std::vector<FieldQuery> query_field(const TriplaneField& field, const std::vector<Vec3>& pts,
                                           const std::optional<std::vector<Vec3>>& view_dirs = std::nullopt) {
  ad::Tape tape;
  const DecoderVars dec = decoder_vars(bind_decoder(tape, *field.gen, false));
  const ad::Var planes = tape.constant(field.planes);
  const ad::Var x = tape.constant(points_to_mat(pts));
  std::optional<ad::Var> dirs;
  if (view_dirs) dirs = tape.constant(points_to_mat(*view_dirs));
  const FieldEval e = eval_field(field.cfg(), dec, planes, x, dirs, 1);
  const Mat rgb = e.probs.value() * field.values;
  std::vector<FieldQuery> out(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out[i].d = e.d.value()(r, 0);
    out[i].key = e.key.value().row(r).transpose();
    out[i].rgb = rgb.row(r).transpose();
  }
  return out;
}

inline FieldQuery query_field(const TriplaneField& field, const Vec3& x, const std::optional<Vec3>& view_dir = std::nullopt) {
  std::optional<std::vector<Vec3>> dirs;
  if (view_dir) dirs = std::vector<Vec3>{*view_dir};
  return query_field(field, std::vector<Vec3>{x}, dirs).front();
}

/// Stratified samples over the cube [-1,1]^3: the cube is split into k^3
/// cells (k = round(cbrt(n))) and cells are visited in a seeded order, one
/// jittered sample per cell, wrapping around when n > k^3.
inline Mat stratified_cube_samples(int n, std::uint64_t seed) {
  if (n < 1) throw StructuralError("stratified_cube_samples: n must be >= 1");
  const int k = std::max(1, static_cast<int>(std::lround(std::cbrt(static_cast<double>(n)))));
  const int cells = k * k * k;
  Mat pts(n, 3);
  const auto offset = static_cast<std::uint64_t>(counter_uniform(seed, 0x51u) * cells);
  for (int i = 0; i < n; ++i) {
    const int cell = static_cast<int>((static_cast<std::uint64_t>(i) + offset) % static_cast<std::uint64_t>(cells));
    const int cx = cell % k, cy = (cell / k) % k, cz = cell / (k * k);
    const std::array<int, 3> c = {cx, cy, cz};
    for (int a = 0; a < 3; ++a) {
      const double u = counter_uniform(seed, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(a));
      pts(i, a) = -1.0 + 2.0 * (c[static_cast<std::size_t>(a)] + u) / k;
    }
  }
  return pts;
}

/// Mean of (|g| - 1)^2 over the rows of a spatial-gradient tensor.
inline ad::Var eikonal_from_gradients(ad::Var grads) {
  return ad::mean(ad::square(ad::add_scalar(ad::row_norm(grads), -1.0)));
}

/// Eikonal penalty of the decoded field at n stratified samples; built on
/// the caller's tape so it can be combined with other losses.
inline ad::Var eikonal_loss(const FieldConfig& cfg, const DecoderVars& dec, ad::Var planes, int n_samples,
                            std::uint64_t seed) {
  if (n_samples < 1) throw StructuralError("eikonal_loss: n_samples must be >= 1");
  ad::Tape& tape = *planes.tape;
  const ad::Var x = tape.constant(stratified_cube_samples(n_samples, seed));
  const FieldEval e = eval_field(cfg, dec, planes, x);
  return eikonal_from_gradients(sdf_spatial_gradient(cfg, dec, planes, x, e));
}

/// Eikonal penalty of a fixed field (no parameters tracked).
inline double eikonal_loss(const TriplaneField& field, int n_samples, std::uint64_t seed) {
  ad::Tape tape;
  const DecoderVars dec = decoder_vars(bind_decoder(tape, *field.gen, false));
  return eikonal_loss(field.cfg(), dec, tape.constant(field.planes), n_samples, seed).scalar();
}

/// Eikonal penalty of any SDF given its analytic gradient callback.
template <class GradientFn>
double eikonal_loss_analytic(GradientFn&& gradient, int n_samples, std::uint64_t seed) {
  const Mat x = stratified_cube_samples(n_samples, seed);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Vec3 g = gradient(Vec3(x.row(i).transpose()));
    acc += (g.norm() - 1.0) * (g.norm() - 1.0);
  }
  return acc / static_cast<double>(x.rows());
}

/// Running state of the path-length regularizer.
struct PathLengthState {
  double mean = 0.0;
  double decay = 0.99;
  double weight = 2.0;
  bool initialized = false;
};

struct PathLengthResult {
  ad::Var penalty;  // (|J^T y| - a)^2
  double length = 0.0;
  std::vector<Mat> y;  // projection direction per plane, [R*R*C, 1]
};

/// J^T y for the latent -> planes map with explicit per-plane directions.
/// Since each plane is a linear layer of its latent row, J^T y = W_k y_k per
/// layer (summed over layers in W mode), which keeps the result
/// differentiable w.r.t. the synthesis weights.
inline ad::Var path_length_jty(const GeneratorVars& g, LatentMode mode, const std::vector<Mat>& y) {
  if (y.size() != 3) throw StructuralError("path_length_jty: need one direction per plane");
  ad::Tape& tape = *g[GP::SynW0].tape;
  std::vector<ad::Var> per_layer;
  for (int k = 0; k < 3; ++k)
    per_layer.push_back(ad::matmul(g[syn_weight(k)], tape.constant(y[static_cast<std::size_t>(k)])));  // [dim_w, 1]
  return mode == LatentMode::kW ? ad::add(ad::add(per_layer[0], per_layer[1]), per_layer[2])
                                : ad::concat_rows(per_layer);
}

/// StyleGAN2-style path-length penalty up to the three planes, with a random
/// plane-space direction y ~ N(0, I)/R. The triplane decoder is excluded
/// from the Jacobian. The running target a is initialised to the first
/// observed length and then tracks an exponential moving average.
inline PathLengthResult path_length_penalty(const FieldConfig& cfg, const GeneratorVars& g, LatentMode mode, Rng& rng,
                                            PathLengthState& state) {
  PathLengthResult r;
  for (int k = 0; k < 3; ++k) r.y.push_back(rng.normal_mat(cfg.plane_size(), 1, 1.0 / cfg.resolution));
  const ad::Var jty = path_length_jty(g, mode, r.y);
  const ad::Var len = ad::row_norm(ad::reshape(jty, 1, jty.rows()));
  r.length = len.scalar();
  if (!state.initialized) {
    state.mean = r.length;
    state.initialized = true;
  }
  r.penalty = ad::square(ad::add_scalar(len, -state.mean));
  state.mean = state.decay * state.mean + (1.0 - state.decay) * r.length;
  return r;
}

/// Field with the shape (planes, keys) of one code and the color values of
/// another.
inline TriplaneField remap_colors(const Generator& gen, const LatentCode& identity, const LatentCode& color) {
  TriplaneField f = decode_field(gen, identity);
  f.values = decode_field(gen, color).values;
  return f;
}

}  // namespace radinv
