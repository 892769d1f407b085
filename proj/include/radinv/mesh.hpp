#pragma once

#include <algorithm>
#include <array>
#include <vector>

#include "radinv/core.hpp"

// Marching cubes over [-1,1]^3.
//
// The case table is generated rather than transcribed: for every corner sign
// pattern the iso-segments on each cube face are derived from that face's
// four corners alone (ambiguous faces always separate the inside corners),
// and the segments are chained into closed loops. Because a face's segments
// depend only on values shared with the neighbouring cell, adjacent cells
// always agree and closed surfaces come out watertight.

namespace radinv {

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<Vec3> colors;  // per vertex, in [0,1]
};

namespace mc {

// Corner c of a cell sits at offset (c & 1, (c >> 1) & 1, (c >> 2) & 1).
inline constexpr std::array<std::array<int, 2>, 12> kEdgeCorners = {{
    {0, 1}, {2, 3}, {4, 5}, {6, 7},  // along x
    {0, 2}, {1, 3}, {4, 6}, {5, 7},  // along y
    {0, 4}, {1, 5}, {2, 6}, {3, 7},  // along z
}};

// Corners of each face in cyclic order.
inline constexpr std::array<std::array<int, 4>, 6> kFaceCorners = {{
    {0, 2, 6, 4}, {1, 3, 7, 5},  // x = 0, x = 1
    {0, 1, 5, 4}, {2, 3, 7, 6},  // y = 0, y = 1
    {0, 1, 3, 2}, {4, 5, 7, 6},  // z = 0, z = 1
}};

inline int edge_between(int a, int b) {
  for (int e = 0; e < 12; ++e) {
    const auto& c = kEdgeCorners[static_cast<std::size_t>(e)];
    if ((c[0] == a && c[1] == b) || (c[0] == b && c[1] == a)) return e;
  }
  throw StructuralError("marching cubes: corners do not share an edge");
}

using Loops = std::vector<std::vector<int>>;  // closed loops of edge ids

/// Iso-loops for a corner sign pattern (bit c set = corner c inside).
inline Loops build_case(int mask) {
  auto inside = [mask](int c) { return ((mask >> c) & 1) != 0; };
  std::vector<std::array<int, 2>> segments;
  for (const auto& face : kFaceCorners) {
    std::vector<int> crossing;
    for (int i = 0; i < 4; ++i) {
      const int a = face[static_cast<std::size_t>(i)], b = face[static_cast<std::size_t>((i + 1) % 4)];
      if (inside(a) != inside(b)) crossing.push_back(edge_between(a, b));
    }
    if (crossing.size() == 2) {
      segments.push_back({crossing[0], crossing[1]});
    } else if (crossing.size() == 4) {
      // Saddle face: cut off each inside corner separately.
      for (int i = 0; i < 4; ++i) {
        const int c = face[static_cast<std::size_t>(i)];
        if (!inside(c)) continue;
        const int prev = face[static_cast<std::size_t>((i + 3) % 4)], next = face[static_cast<std::size_t>((i + 1) % 4)];
        segments.push_back({edge_between(prev, c), edge_between(c, next)});
      }
    }
  }
  Loops loops;
  std::vector<bool> used(segments.size(), false);
  for (std::size_t s0 = 0; s0 < segments.size(); ++s0) {
    if (used[s0]) continue;
    used[s0] = true;
    std::vector<int> loop = {segments[s0][0]};
    int cur = segments[s0][1];
    while (cur != loop.front()) {
      loop.push_back(cur);
      bool found = false;
      for (std::size_t s = 0; s < segments.size() && !found; ++s) {
        if (used[s]) continue;
        if (segments[s][0] == cur || segments[s][1] == cur) {
          used[s] = true;
          cur = segments[s][0] == cur ? segments[s][1] : segments[s][0];
          found = true;
        }
      }
      if (!found) throw StructuralError("marching cubes: open iso-loop in case table");
    }
    loops.push_back(std::move(loop));
  }
  return loops;
}

inline const std::array<Loops, 256>& case_table() {
  static const std::array<Loops, 256> table = [] {
    std::array<Loops, 256> t;
    for (int m = 0; m < 256; ++m) t[static_cast<std::size_t>(m)] = build_case(m);
    return t;
  }();
  return table;
}

}  // namespace mc

/// Samples the SDF of `source` on an (n+1)^3 lattice over [-1,1]^3, x fastest.
template <class Source>
std::vector<double> sample_sdf_grid(const Source& source, int n) {
  const int m = n + 1;
  std::vector<double> values(static_cast<std::size_t>(m) * m * m);
  parallel_for(m, [&](int k) {
    Mat pts(static_cast<Eigen::Index>(m) * m, 3);
    for (int j = 0; j < m; ++j)
      for (int i = 0; i < m; ++i)
        pts.row(static_cast<Eigen::Index>(j) * m + i) << -1.0 + 2.0 * i / n, -1.0 + 2.0 * j / n, -1.0 + 2.0 * k / n;
    const std::vector<double> d = source.sdf(pts);
    std::copy(d.begin(), d.end(), values.begin() + static_cast<std::ptrdiff_t>(k) * m * m);
  });
  return values;
}

/// Zero level set of a sampled grid as a triangle mesh (no colors).
inline TriMesh marching_cubes(const std::vector<double>& grid, int n) {
  if (n < 1 || grid.size() != static_cast<std::size_t>(n + 1) * (n + 1) * (n + 1))
    throw StructuralError("marching_cubes: grid size does not match resolution");
  const int m = n + 1;
  const double h = 2.0 / n;
  auto at = [&](int i, int j, int k) { return grid[(static_cast<std::size_t>(k) * m + j) * m + i]; };
  const auto& table = mc::case_table();
  TriMesh mesh;
  std::vector<int> vertex_of(static_cast<std::size_t>(m) * m * m * 3, -1);
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        std::array<double, 8> v{};
        int mask = 0;
        for (int c = 0; c < 8; ++c) {
          v[static_cast<std::size_t>(c)] = at(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
          if (v[static_cast<std::size_t>(c)] < 0.0) mask |= 1 << c;
        }
        if (mask == 0 || mask == 255) continue;
        const mc::Loops& loops = table[static_cast<std::size_t>(mask)];
        // Trilinear gradient at the cell centre orients every loop.
        for (const std::vector<int>& loop : loops) {
          std::vector<int> ids;
          Vec3 centroid_local = Vec3::Zero();
          for (int e : loop) {
            const auto& ec = mc::kEdgeCorners[static_cast<std::size_t>(e)];
            const int c0 = ec[0], c1 = ec[1];
            const int axis = e / 4;
            const int gi = i + (c0 & 1), gj = j + ((c0 >> 1) & 1), gk = k + ((c0 >> 2) & 1);
            const std::size_t key = ((static_cast<std::size_t>(gk) * m + gj) * m + gi) * 3 + static_cast<std::size_t>(axis);
            const double d0 = v[static_cast<std::size_t>(c0)], d1 = v[static_cast<std::size_t>(c1)];
            const double t = std::clamp(d0 / (d0 - d1), 1e-6, 1.0 - 1e-6);
            Vec3 local(c0 & 1, (c0 >> 1) & 1, (c0 >> 2) & 1);
            local(axis) += t;
            centroid_local += local;
            if (vertex_of[key] < 0) {
              vertex_of[key] = static_cast<int>(mesh.vertices.size());
              mesh.vertices.push_back(Vec3(-1.0 + h * (i + local(0)), -1.0 + h * (j + local(1)), -1.0 + h * (k + local(2))));
            }
            ids.push_back(vertex_of[key]);
          }
          centroid_local /= static_cast<double>(loop.size());
          const double u = centroid_local(0), w = centroid_local(1), z = centroid_local(2);
          Vec3 grad = Vec3::Zero();
          for (int c = 0; c < 8; ++c) {
            const double cx = c & 1, cy = (c >> 1) & 1, cz = (c >> 2) & 1;
            const double wx = cx ? u : 1 - u, wy = cy ? w : 1 - w, wz = cz ? z : 1 - z;
            const double val = v[static_cast<std::size_t>(c)];
            grad(0) += val * (cx ? 1.0 : -1.0) * wy * wz;
            grad(1) += val * wx * (cy ? 1.0 : -1.0) * wz;
            grad(2) += val * wx * wy * (cz ? 1.0 : -1.0);
          }
          Vec3 normal = Vec3::Zero();  // Newell's method
          for (std::size_t a = 0; a < ids.size(); ++a) {
            const Vec3& p = mesh.vertices[static_cast<std::size_t>(ids[a])];
            const Vec3& q = mesh.vertices[static_cast<std::size_t>(ids[(a + 1) % ids.size()])];
            normal += p.cross(q);
          }
          if (normal.dot(grad) < 0.0) std::reverse(ids.begin(), ids.end());
          for (std::size_t a = 1; a + 1 < ids.size(); ++a) {
            const std::array<int, 3> tri = {ids[0], ids[a], ids[a + 1]};
            const Vec3& p0 = mesh.vertices[static_cast<std::size_t>(tri[0])];
            const double area = 0.5 * (mesh.vertices[static_cast<std::size_t>(tri[1])] - p0)
                                           .cross(mesh.vertices[static_cast<std::size_t>(tri[2])] - p0)
                                           .norm();
            if (area > 1e-12 * h * h) mesh.triangles.push_back(tri);
          }
        }
      }
  return mesh;
}

/// Marching cubes of `source`'s SDF at `resolution` cells per axis, with
/// vertex colors queried without a view direction.
template <class Source>
TriMesh extract_mesh(const Source& source, int resolution) {
  if (resolution < 8) throw StructuralError("extract_mesh: resolution must be >= 8");
  TriMesh mesh = marching_cubes(sample_sdf_grid(source, resolution), resolution);
  if (mesh.vertices.empty()) return mesh;
  Mat pts(static_cast<Eigen::Index>(mesh.vertices.size()), 3);
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) pts.row(static_cast<Eigen::Index>(i)) = mesh.vertices[i].transpose();
  const Mat rgb = source.rgb(pts);
  mesh.colors.resize(mesh.vertices.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i)
    mesh.colors[i] = rgb.row(static_cast<Eigen::Index>(i)).transpose().cwiseMax(0.0).cwiseMin(1.0);
  return mesh;
}

/// Unit normals from the analytic SDF gradient.
template <class Source>
std::vector<Vec3> surface_normals(const Source& source, const std::vector<Vec3>& points) {
  Mat pts(static_cast<Eigen::Index>(points.size()), 3);
  for (std::size_t i = 0; i < points.size(); ++i) pts.row(static_cast<Eigen::Index>(i)) = points[i].transpose();
  const Mat g = source.sdf_gradient(pts);
  std::vector<Vec3> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3 gi = g.row(static_cast<Eigen::Index>(i)).transpose();
    const double n = gi.norm();
    if (!(n > 1e-12)) throw UndefinedNormalError("surface_normals: SDF gradient vanishes at a query point");
    out[i] = gi / n;
  }
  return out;
}

inline double mesh_area(const TriMesh& mesh) {
  double a = 0.0;
  for (const auto& t : mesh.triangles) {
    const Vec3& p0 = mesh.vertices[static_cast<std::size_t>(t[0])];
    a += 0.5 * (mesh.vertices[static_cast<std::size_t>(t[1])] - p0).cross(mesh.vertices[static_cast<std::size_t>(t[2])] - p0).norm();
  }
  return a;
}

/// Per-triangle unit normal (right-hand rule).
inline Vec3 triangle_normal(const TriMesh& mesh, std::size_t t) {
  const auto& tri = mesh.triangles[t];
  const Vec3& p0 = mesh.vertices[static_cast<std::size_t>(tri[0])];
  return (mesh.vertices[static_cast<std::size_t>(tri[1])] - p0)
      .cross(mesh.vertices[static_cast<std::size_t>(tri[2])] - p0)
      .normalized();
}

}  // namespace radinv
