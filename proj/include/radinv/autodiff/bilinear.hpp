#pragma once

#include <array>
#include <utility>

#include "radinv/autodiff/tape.hpp"

// Fused bilinear sampling kernels. Grids are stored texel-major as [R*R, C]
// tensors (row = y*R + x, column = channel) and sampled on [-1,1]^2 with corner
// alignment, so coordinate -1 hits the first texel centre and +1 the last.
// Coordinates outside the domain are clamped and get zero spatial gradient.

namespace radinv::ad {

namespace detail {

struct AxisSample {
  int i0 = 0;
  double frac = 0.0;
  double dscale = 0.0;  // d(texel coordinate)/d(input), 0 when clamped
};

inline AxisSample axis_sample(double a, int res) {
  const bool inside = a >= -1.0 && a <= 1.0;
  const double ac = std::clamp(a, -1.0, 1.0);
  const double p = (ac + 1.0) * 0.5 * (res - 1);
  int i0 = static_cast<int>(std::floor(p));
  i0 = std::clamp(i0, 0, res - 2);
  return {i0, p - i0, inside ? 0.5 * (res - 1) : 0.0};
}

// Tap indices and weights of one bilinear lookup, plus the weights of its
// partial derivatives along the two grid axes and the mixed second partial.
struct BilinearStencil {
  std::array<int, 4> idx{};
  std::array<double, 4> w{};
  std::array<double, 4> du{};
  std::array<double, 4> dv{};
  double duv = 0.0;  // mixed partial scale; taps weighted (+1,-1,-1,+1)

  BilinearStencil(double u, double v, int res) {
    const AxisSample su = axis_sample(u, res);
    const AxisSample sv = axis_sample(v, res);
    const int base = sv.i0 * res + su.i0;
    idx = {base, base + 1, base + res, base + res + 1};
    const double fx = su.frac, fy = sv.frac;
    w = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
    du = {-(1 - fy) * su.dscale, (1 - fy) * su.dscale, -fy * su.dscale, fy * su.dscale};
    dv = {-(1 - fx) * sv.dscale, -fx * sv.dscale, (1 - fx) * sv.dscale, fx * sv.dscale};
    duv = su.dscale * sv.dscale;
  }
};

inline constexpr std::array<double, 4> kMixedSign = {1.0, -1.0, -1.0, 1.0};

inline void check_grid(const Mat& grid, int res, Eigen::Index n_planes, Eigen::Index channels, const char* op) {
  if (res < 2) throw StructuralError(std::string(op) + ": grid must be at least 2x2");
  if (grid.rows() != n_planes * res * res || grid.cols() != channels)
    throw StructuralError(std::string(op) + ": grid shape mismatch");
}

// Triplane axis assignment: plane 0 = (x,y), plane 1 = (x,z), plane 2 = (y,z).
inline constexpr std::array<std::array<int, 2>, 3> kPlaneAxes = {{{0, 1}, {0, 2}, {1, 2}}};

}  // namespace detail

/// Bilinear lookup of a single [R*R, C] grid at uv [N,2].
/// Returns (features [N,C], d_features/d_uv [2N,C] with rows n*2+{0,1}).
/// Both outputs are differentiable w.r.t. the grid and uv.
inline std::pair<Var, Var> bilinear_sample_with_grad(Var grid, Var uv, int res) {
  const Mat& g = grid.value();
  const Mat& p = uv.value();
  if (p.cols() != 2) throw StructuralError("bilinear_sample_with_grad: uv must be [N,2]");
  detail::check_grid(g, res, 1, g.cols(), "bilinear_sample_with_grad");
  const Eigen::Index n = p.rows(), c = g.cols();
  Mat feat = Mat::Zero(n, c);
  Mat dfeat = Mat::Zero(2 * n, c);
  for (Eigen::Index i = 0; i < n; ++i) {
    const detail::BilinearStencil st(p(i, 0), p(i, 1), res);
    for (int k = 0; k < 4; ++k) {
      feat.row(i) += st.w[k] * g.row(st.idx[k]);
      dfeat.row(2 * i) += st.du[k] * g.row(st.idx[k]);
      dfeat.row(2 * i + 1) += st.dv[k] * g.row(st.idx[k]);
    }
  }
  Tape& t = *grid.tape;
  Var f = t.push(std::move(feat), {grid, uv}, [res](Tape& tp, int self) {
    const int pg = tp.parent(self, 0), pp = tp.parent(self, 1);
    const Mat& gr = tp.value(pg);
    const Mat& coords = tp.value(pp);
    const Mat& adj = tp.self_grad(self);
    const bool want_g = tp.requires_grad(pg), want_p = tp.requires_grad(pp);
    Mat gg, gp;
    if (want_g) gg = Mat::Zero(gr.rows(), gr.cols());
    if (want_p) gp = Mat::Zero(coords.rows(), 2);
    for (Eigen::Index i = 0; i < coords.rows(); ++i) {
      const detail::BilinearStencil st(coords(i, 0), coords(i, 1), res);
      for (int k = 0; k < 4; ++k) {
        if (want_g) gg.row(st.idx[k]) += st.w[k] * adj.row(i);
        if (want_p) {
          const double dotk = adj.row(i).dot(gr.row(st.idx[k]));
          gp(i, 0) += st.du[k] * dotk;
          gp(i, 1) += st.dv[k] * dotk;
        }
      }
    }
    if (want_g) tp.accumulate(pg, gg);
    if (want_p) tp.accumulate(pp, gp);
  });
  Var df = t.push(std::move(dfeat), {grid, uv}, [res](Tape& tp, int self) {
    const int pg = tp.parent(self, 0), pp = tp.parent(self, 1);
    const Mat& gr = tp.value(pg);
    const Mat& coords = tp.value(pp);
    const Mat& adj = tp.self_grad(self);
    const bool want_g = tp.requires_grad(pg), want_p = tp.requires_grad(pp);
    Mat gg, gp;
    if (want_g) gg = Mat::Zero(gr.rows(), gr.cols());
    if (want_p) gp = Mat::Zero(coords.rows(), 2);
    for (Eigen::Index i = 0; i < coords.rows(); ++i) {
      const detail::BilinearStencil st(coords(i, 0), coords(i, 1), res);
      for (int k = 0; k < 4; ++k) {
        if (want_g)
          gg.row(st.idx[k]) += st.du[k] * adj.row(2 * i) + st.dv[k] * adj.row(2 * i + 1);
        if (want_p) {
          // d(df/du)/dv = d(df/dv)/du = mixed partial; the pure second partials vanish.
          const double m = st.duv * detail::kMixedSign[k];
          gp(i, 1) += m * adj.row(2 * i).dot(gr.row(st.idx[k]));
          gp(i, 0) += m * adj.row(2 * i + 1).dot(gr.row(st.idx[k]));
        }
      }
    }
    if (want_g) tp.accumulate(pg, gg);
    if (want_p) tp.accumulate(pp, gp);
  });
  return {f, df};
}

/// Summed triplane features at points [N,3]; planes is [3*R*R, C].
inline Var triplane_features(Var planes, Var points, int channels, int res) {
  const Mat& g = planes.value();
  const Mat& x = points.value();
  if (x.cols() != 3) throw StructuralError("triplane_features: points must be [N,3]");
  detail::check_grid(g, res, 3, channels, "triplane_features");
  const Eigen::Index n = x.rows();
  Mat feat = Mat::Zero(n, channels);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int pl = 0; pl < 3; ++pl) {
      const auto& ax = detail::kPlaneAxes[pl];
      const detail::BilinearStencil st(x(i, ax[0]), x(i, ax[1]), res);
      const Eigen::Index off = static_cast<Eigen::Index>(pl) * res * res;
      for (int k = 0; k < 4; ++k) feat.row(i) += st.w[k] * g.row(off + st.idx[k]);
    }
  }
  return planes.tape->push(std::move(feat), {planes, points}, [channels, res](Tape& tp, int self) {
    const int pg = tp.parent(self, 0), pp = tp.parent(self, 1);
    const Mat& gr = tp.value(pg);
    const Mat& pts = tp.value(pp);
    const Mat& adj = tp.self_grad(self);
    const bool want_g = tp.requires_grad(pg), want_p = tp.requires_grad(pp);
    Mat gg, gp;
    if (want_g) gg = Mat::Zero(gr.rows(), gr.cols());
    if (want_p) gp = Mat::Zero(pts.rows(), 3);
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      for (int pl = 0; pl < 3; ++pl) {
        const auto& ax = detail::kPlaneAxes[pl];
        const detail::BilinearStencil st(pts(i, ax[0]), pts(i, ax[1]), res);
        const Eigen::Index off = static_cast<Eigen::Index>(pl) * res * res;
        for (int k = 0; k < 4; ++k) {
          if (want_g) gg.row(off + st.idx[k]) += st.w[k] * adj.row(i);
          if (want_p) {
            const double dotk = adj.row(i).dot(gr.row(off + st.idx[k]));
            gp(i, ax[0]) += st.du[k] * dotk;
            gp(i, ax[1]) += st.dv[k] * dotk;
          }
        }
      }
    }
    if (want_g) tp.accumulate(pg, gg);
    if (want_p) tp.accumulate(pp, gp);
  });
}

/// Spatial Jacobian of the summed triplane features: [3N, C] with row
/// n*3+k holding d features / d x_k. Itself differentiable w.r.t. the planes
/// (and the points, through the mixed second partials), which is what makes
/// gradient penalties on d(x) trainable.
inline Var triplane_spatial_grad(Var planes, Var points, int channels, int res) {
  const Mat& g = planes.value();
  const Mat& x = points.value();
  if (x.cols() != 3) throw StructuralError("triplane_spatial_grad: points must be [N,3]");
  detail::check_grid(g, res, 3, channels, "triplane_spatial_grad");
  const Eigen::Index n = x.rows();
  Mat jac = Mat::Zero(3 * n, channels);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int pl = 0; pl < 3; ++pl) {
      const auto& ax = detail::kPlaneAxes[pl];
      const detail::BilinearStencil st(x(i, ax[0]), x(i, ax[1]), res);
      const Eigen::Index off = static_cast<Eigen::Index>(pl) * res * res;
      for (int k = 0; k < 4; ++k) {
        jac.row(3 * i + ax[0]) += st.du[k] * g.row(off + st.idx[k]);
        jac.row(3 * i + ax[1]) += st.dv[k] * g.row(off + st.idx[k]);
      }
    }
  }
  return planes.tape->push(std::move(jac), {planes, points}, [channels, res](Tape& tp, int self) {
    const int pg = tp.parent(self, 0), pp = tp.parent(self, 1);
    const Mat& gr = tp.value(pg);
    const Mat& pts = tp.value(pp);
    const Mat& adj = tp.self_grad(self);
    const bool want_g = tp.requires_grad(pg), want_p = tp.requires_grad(pp);
    Mat gg, gp;
    if (want_g) gg = Mat::Zero(gr.rows(), gr.cols());
    if (want_p) gp = Mat::Zero(pts.rows(), 3);
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      for (int pl = 0; pl < 3; ++pl) {
        const auto& ax = detail::kPlaneAxes[pl];
        const detail::BilinearStencil st(pts(i, ax[0]), pts(i, ax[1]), res);
        const Eigen::Index off = static_cast<Eigen::Index>(pl) * res * res;
        for (int k = 0; k < 4; ++k) {
          if (want_g)
            gg.row(off + st.idx[k]) += st.du[k] * adj.row(3 * i + ax[0]) + st.dv[k] * adj.row(3 * i + ax[1]);
          if (want_p) {
            const auto texel = gr.row(off + st.idx[k]);
            const double m = st.duv * detail::kMixedSign[k];
            gp(i, ax[1]) += m * adj.row(3 * i + ax[0]).dot(texel);
            gp(i, ax[0]) += m * adj.row(3 * i + ax[1]).dot(texel);
          }
        }
      }
    }
    if (want_g) tp.accumulate(pg, gg);
    if (want_p) tp.accumulate(pp, gp);
  });
}

}  // namespace radinv::ad
