// Quickhull in two and three dimensions.
//
// Both routines take points as rows of a matrix and report the hull through
// indices into that matrix. Inputs are assumed affinely full-dimensional;
// callers check degeneracy first.

#ifndef CPR_QUICKHULL_HPP_
#define CPR_QUICKHULL_HPP_

#include "cpr/core.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <utility>
#include <vector>

namespace cpr::quickhull {

namespace detail {

inline double cross2(const Matrix& p, Eigen::Index o, Eigen::Index a, Eigen::Index b) {
  return (p(a, 0) - p(o, 0)) * (p(b, 1) - p(o, 1)) - (p(a, 1) - p(o, 1)) * (p(b, 0) - p(o, 0));
}

inline double coordinate_scale(const Matrix& pts) {
  const double s = (pts.colwise().maxCoeff() - pts.colwise().minCoeff()).maxCoeff();
  return s > 0.0 ? s : 1.0;
}

// Appends the hull chain strictly right of a->b (exclusive of a and b),
// ordered from a to b. Right-of-chord chains keep the interior on the left,
// so concatenated chains come out counter-clockwise.
inline void chain_2d(const Matrix& p, Eigen::Index a, Eigen::Index b, const std::vector<Eigen::Index>& cand,
                     double eps, std::vector<Eigen::Index>& out) {
  Eigen::Index far = -1;
  double best = 0.0;
  std::vector<Eigen::Index> right;
  for (auto i : cand) {
    const double d = -cross2(p, a, b, i);
    if (d > eps) {
      right.push_back(i);
      if (d > best) {
        best = d;
        far = i;
      }
    }
  }
  if (far < 0) return;
  chain_2d(p, a, far, right, eps, out);
  out.push_back(far);
  chain_2d(p, far, b, right, eps, out);
}

}  // namespace detail

/// Counter-clockwise hull vertex indices. Points on hull edges are dropped.
inline std::vector<Eigen::Index> hull_2d(const Matrix& pts) {
  if (pts.cols() != 2) throw Error("hull_2d expects 2-D points");
  const auto n = pts.rows();
  if (n < 3) throw Error("hull_2d needs at least three points");
  const double s = detail::coordinate_scale(pts);
  const double eps = 1e-12 * s * s;

  Eigen::Index lo = 0, hi = 0;
  for (Eigen::Index i = 1; i < n; ++i) {
    if (pts(i, 0) < pts(lo, 0) || (pts(i, 0) == pts(lo, 0) && pts(i, 1) < pts(lo, 1))) lo = i;
    if (pts(i, 0) > pts(hi, 0) || (pts(i, 0) == pts(hi, 0) && pts(i, 1) > pts(hi, 1))) hi = i;
  }
  std::vector<Eigen::Index> all(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;

  std::vector<Eigen::Index> hull{lo};
  detail::chain_2d(pts, lo, hi, all, eps, hull);
  hull.push_back(hi);
  detail::chain_2d(pts, hi, lo, all, eps, hull);
  return hull;
}

/// Triangulated 3-D hull. Each face lists its vertex indices counter-clockwise
/// seen from outside, with the matching outward unit normal.
struct Hull3 {
  std::vector<std::array<Eigen::Index, 3>> faces;
  std::vector<Eigen::Vector3d> normals;
  std::vector<Eigen::Index> vertices;  // sorted, unique
};

inline Hull3 hull_3d(const Matrix& pts) {
  if (pts.cols() != 3) throw Error("hull_3d expects 3-D points");
  const auto n = pts.rows();
  if (n < 4) throw Error("hull_3d needs at least four points");
  const double scale = detail::coordinate_scale(pts);
  const double eps = 1e-10 * scale;
  auto P = [&](Eigen::Index i) { return Eigen::Vector3d(pts(i, 0), pts(i, 1), pts(i, 2)); };

  // Initial simplex from extreme points.
  Eigen::Index i0 = 0, i1 = 0;
  {
    double best = -1.0;
    for (Eigen::Index d = 0; d < 3; ++d) {
      Eigen::Index mn = 0, mx = 0;
      for (Eigen::Index i = 1; i < n; ++i) {
        if (pts(i, d) < pts(mn, d)) mn = i;
        if (pts(i, d) > pts(mx, d)) mx = i;
      }
      const double len = (P(mx) - P(mn)).norm();
      if (len > best) {
        best = len;
        i0 = mn;
        i1 = mx;
      }
    }
  }
  Eigen::Index i2 = -1;
  {
    double best = eps;
    const Eigen::Vector3d dir = (P(i1) - P(i0)).normalized();
    for (Eigen::Index i = 0; i < n; ++i) {
      const double d = (P(i) - P(i0)).cross(dir).norm();
      if (d > best) {
        best = d;
        i2 = i;
      }
    }
  }
  if (i2 < 0) throw Error("hull_3d: points are collinear");
  Eigen::Index i3 = -1;
  {
    const Eigen::Vector3d nrm = (P(i1) - P(i0)).cross(P(i2) - P(i0)).normalized();
    double best = eps;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double d = std::abs(nrm.dot(P(i) - P(i0)));
      if (d > best) {
        best = d;
        i3 = i;
      }
    }
  }
  if (i3 < 0) throw Error("hull_3d: points are coplanar");

  struct Face {
    std::array<Eigen::Index, 3> v;
    Eigen::Vector3d normal;
    double offset;
    std::vector<Eigen::Index> outside;
    bool alive = true;
  };
  std::vector<Face> faces;
  std::map<std::pair<Eigen::Index, Eigen::Index>, std::size_t> edge_owner;  // directed edge -> face

  auto add_face = [&](Eigen::Index a, Eigen::Index b, Eigen::Index c) {
    Face f;
    f.v = {a, b, c};
    f.normal = (P(b) - P(a)).cross(P(c) - P(a)).normalized();
    f.offset = f.normal.dot(P(a));
    faces.push_back(std::move(f));
    const auto id = faces.size() - 1;
    edge_owner[{a, b}] = id;
    edge_owner[{b, c}] = id;
    edge_owner[{c, a}] = id;
    return id;
  };

  const Eigen::Vector3d centroid = (P(i0) + P(i1) + P(i2) + P(i3)) / 4.0;
  const std::array<std::array<Eigen::Index, 3>, 4> tet{{{i0, i1, i2}, {i0, i1, i3}, {i0, i2, i3}, {i1, i2, i3}}};
  for (auto t : tet) {
    const Eigen::Vector3d nrm = (P(t[1]) - P(t[0])).cross(P(t[2]) - P(t[0]));
    if (nrm.dot(centroid - P(t[0])) > 0.0) std::swap(t[1], t[2]);
    add_face(t[0], t[1], t[2]);
  }

  auto distance = [&](const Face& f, Eigen::Index i) { return f.normal.dot(P(i)) - f.offset; };

  for (Eigen::Index i = 0; i < n; ++i) {
    if (i == i0 || i == i1 || i == i2 || i == i3) continue;
    for (auto& f : faces)
      if (distance(f, i) > eps) {
        f.outside.push_back(i);
        break;
      }
  }

  for (std::size_t cursor = 0; cursor < faces.size(); ++cursor) {
    if (!faces[cursor].alive || faces[cursor].outside.empty()) continue;

    Eigen::Index apex = -1;
    double best = -1.0;
    for (auto i : faces[cursor].outside) {
      const double d = distance(faces[cursor], i);
      if (d > best) {
        best = d;
        apex = i;
      }
    }

    // Visible region: flood fill through shared edges.
    std::vector<std::size_t> visible{cursor};
    std::vector<char> is_visible(faces.size(), 0);
    is_visible[cursor] = 1;
    for (std::size_t q = 0; q < visible.size(); ++q) {
      const auto& f = faces[visible[q]];
      for (int e = 0; e < 3; ++e) {
        const auto a = f.v[static_cast<std::size_t>(e)], b = f.v[static_cast<std::size_t>((e + 1) % 3)];
        const auto nb = edge_owner.at({b, a});
        if (!is_visible[nb] && faces[nb].alive && distance(faces[nb], apex) > eps) {
          is_visible[nb] = 1;
          visible.push_back(nb);
        }
      }
    }

    std::vector<std::pair<Eigen::Index, Eigen::Index>> horizon;
    std::vector<Eigen::Index> orphans;
    // Horizon first: edge ownership must stay intact until every visible face is checked.
    for (auto id : visible) {
      const auto& f = faces[id];
      for (int e = 0; e < 3; ++e) {
        const auto a = f.v[static_cast<std::size_t>(e)], b = f.v[static_cast<std::size_t>((e + 1) % 3)];
        if (!is_visible[edge_owner.at({b, a})]) horizon.emplace_back(a, b);
      }
    }
    for (auto id : visible) {
      auto& f = faces[id];
      f.alive = false;
      for (auto i : f.outside)
        if (i != apex) orphans.push_back(i);
      f.outside.clear();
      for (int e = 0; e < 3; ++e)
        edge_owner.erase({f.v[static_cast<std::size_t>(e)], f.v[static_cast<std::size_t>((e + 1) % 3)]});
    }

    std::vector<std::size_t> fresh;
    for (auto [a, b] : horizon) fresh.push_back(add_face(a, b, apex));
    for (auto i : orphans)
      for (auto id : fresh)
        if (distance(faces[id], i) > eps) {
          faces[id].outside.push_back(i);
          break;
        }
  }

  Hull3 out;
  for (const auto& f : faces) {
    if (!f.alive) continue;
    out.faces.push_back(f.v);
    out.normals.push_back(f.normal);
    for (auto v : f.v) out.vertices.push_back(v);
  }
  std::sort(out.vertices.begin(), out.vertices.end());
  out.vertices.erase(std::unique(out.vertices.begin(), out.vertices.end()), out.vertices.end());
  return out;
}

}  // namespace cpr::quickhull

#endif  // CPR_QUICKHULL_HPP_
