// Convex shape templates f(z) <= 0 and their minimum-volume fits.
//
//   ellipsoid    f(z) = (z - c)^T Q (z - c) - 1
//   convex hull  f(z) = max_j A_j z - b_j        (unit-norm rows of A)
//   hyperrect    f(z) = max_j max(lo_j - z_j, z_j - hi_j)
//
// Every fit covers all of its input points: score <= 0 for the box and hull
// fits, and <= 1e-6 for the ellipsoid after feasibility repair.

#ifndef CPR_SHAPES_HPP_
#define CPR_SHAPES_HPP_

#include "cpr/cmaes.hpp"
#include "cpr/core.hpp"
#include "cpr/quickhull.hpp"

#include "json.hpp"

#include <cmath>
#include <numbers>
#include <optional>
#include <utility>
#include <variant>
#include <vector>

namespace cpr {

struct Ellipsoid {
  Eigen::MatrixXd Q;  // symmetric positive definite
  Vector c;
};

struct ConvexHull {
  Eigen::MatrixXd A;  // r x p, unit-norm outward facet normals
  Vector b;
  Matrix vertices;    // counter-clockwise in 2-D
};

struct HyperRect {
  Vector lo;
  Vector hi;
};

using Shape = std::variant<Ellipsoid, ConvexHull, HyperRect>;

/// Axis-aligned box, used for sublevel-set bounds.
struct Box {
  Vector lo;
  Vector hi;
};

inline Template template_of(const Shape& s) {
  if (std::holds_alternative<Ellipsoid>(s)) return Template::ellipsoid;
  if (std::holds_alternative<ConvexHull>(s)) return Template::convexhull;
  return Template::hyperrect;
}

inline Eigen::Index shape_dim(const Shape& s) {
  return std::visit(
      [](const auto& v) -> Eigen::Index {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Ellipsoid>) return v.c.size();
        else if constexpr (std::is_same_v<T, ConvexHull>) return v.A.cols();
        else return v.lo.size();
      },
      s);
}

/// Volume of the unit ball in R^p.
inline double unit_ball_volume(Eigen::Index p) {
  const double dp = static_cast<double>(p);
  return std::pow(std::numbers::pi, dp / 2.0) / std::tgamma(dp / 2.0 + 1.0);
}

// ---------------------------------------------------------------------------
// Scores

inline double score(const Ellipsoid& e, const Eigen::Ref<const Vector>& z) {
  const Vector d = z - e.c;
  return d.dot(e.Q * d) - 1.0;
}

inline double score(const ConvexHull& h, const Eigen::Ref<const Vector>& z) {
  return (h.A * z - h.b).maxCoeff();
}

inline double score(const HyperRect& r, const Eigen::Ref<const Vector>& z) {
  return (r.lo - z).cwiseMax(z - r.hi).maxCoeff();
}

inline double shape_score(const Shape& s, const Eigen::Ref<const Vector>& z) {
  if (z.size() != shape_dim(s)) throw Error("shape_score: dimension mismatch");
  return std::visit([&](const auto& v) { return score(v, z); }, s);
}

// ---------------------------------------------------------------------------
// Volumes

inline double volume(const Ellipsoid& e) {
  return unit_ball_volume(e.c.size()) / std::sqrt(e.Q.determinant());
}

inline double volume(const HyperRect& r) { return (r.hi - r.lo).prod(); }

inline double volume(const ConvexHull& h) {
  const auto p = h.A.cols();
  const auto& v = h.vertices;
  if (p == 1) return v.col(0).maxCoeff() - v.col(0).minCoeff();
  if (p == 2) {
    double twice = 0.0;
    const auto n = v.rows();
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto j = (i + 1) % n;
      twice += v(i, 0) * v(j, 1) - v(j, 0) * v(i, 1);
    }
    return std::abs(twice) / 2.0;
  }
  if (p == 3) {
    const auto hull = quickhull::hull_3d(v);
    const Eigen::Vector3d o = v.row(0).transpose();
    double six = 0.0;
    for (const auto& f : hull.faces) {
      const Eigen::Vector3d a = v.row(f[0]).transpose() - o;
      const Eigen::Vector3d b = v.row(f[1]).transpose() - o;
      const Eigen::Vector3d c = v.row(f[2]).transpose() - o;
      six += a.dot(b.cross(c));
    }
    return std::abs(six) / 6.0;
  }
  throw Error("hull dimension unsupported");
}

inline double shape_volume(const Shape& s) {
  return std::visit([](const auto& v) { return volume(v); }, s);
}

// ---------------------------------------------------------------------------
// Bounds of the sublevel set {z | f(z) <= t}; nullopt when it is empty.

inline std::optional<Box> sublevel_bounds(const Ellipsoid& e, double t) {
  const double r2 = 1.0 + t;
  if (r2 < 0.0) return std::nullopt;
  const Vector half = (r2 * e.Q.inverse().diagonal().array()).sqrt();
  return Box{e.c - half, e.c + half};
}

inline std::optional<Box> sublevel_bounds(const HyperRect& r, double t) {
  Box b{r.lo.array() - t, r.hi.array() + t};
  if ((b.lo.array() > b.hi.array()).any()) return std::nullopt;
  return b;
}

inline std::optional<Box> sublevel_bounds(const ConvexHull& h, double t) {
  const auto p = h.A.cols();
  const auto r = h.A.rows();
  const Vector rhs = h.b.array() + t;
  const double tol = 1e-9 * (1.0 + rhs.cwiseAbs().maxCoeff());
  if (p <= 2) {
    // Exact: enumerate vertices as intersections of p facet planes.
    Box box{Vector::Constant(p, std::numeric_limits<double>::infinity()),
            Vector::Constant(p, -std::numeric_limits<double>::infinity())};
    bool any = false;
    auto consider = [&](const Vector& x) {
      if (((h.A * x - rhs).array() <= tol).all()) {
        box.lo = box.lo.cwiseMin(x);
        box.hi = box.hi.cwiseMax(x);
        any = true;
      }
    };
    for (Eigen::Index i = 0; i < r; ++i) {
      if (p == 1) {
        consider(Vector::Constant(1, rhs(i) / h.A(i, 0)));
        continue;
      }
      for (Eigen::Index j = i + 1; j < r; ++j) {
        Eigen::Matrix2d M;
        M << h.A(i, 0), h.A(i, 1), h.A(j, 0), h.A(j, 1);
        if (std::abs(M.determinant()) < 1e-12) continue;
        consider(M.partialPivLu().solve(Eigen::Vector2d(rhs(i), rhs(j))));
      }
    }
    if (!any) return std::nullopt;
    return box;
  }
  // Outer bound: {A(z-o) <= s + t} lies inside o + (1 + t/min s)(P - o).
  const Vector o = h.vertices.colwise().mean().transpose();
  const Vector slack = h.b - h.A * o;
  const double smin = slack.minCoeff();
  if (t < -smin) return std::nullopt;
  const double k = t > 0.0 ? 1.0 + t / smin : 1.0;
  Box box{o, o};
  for (Eigen::Index i = 0; i < h.vertices.rows(); ++i) {
    const Vector x = o + k * (h.vertices.row(i).transpose() - o);
    box.lo = box.lo.cwiseMin(x);
    box.hi = box.hi.cwiseMax(x);
  }
  return box;
}

inline std::optional<Box> sublevel_bounds(const Shape& s, double t) {
  return std::visit([&](const auto& v) { return sublevel_bounds(v, t); }, s);
}

// ---------------------------------------------------------------------------
// Fits

namespace detail {

/// Affine rank of the rows of `pts` with a relative singular-value cutoff.
inline Eigen::Index affine_rank(const Matrix& pts) {
  if (pts.rows() < 2) return 0;
  const Eigen::MatrixXd centered = pts.rowwise() - pts.colwise().mean();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) <= 0.0) return 0;
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > 1e-9 * sv(0)) ++rank;
  return rank;
}

// Tighten b so that every input point scores <= 0 under the same arithmetic
// used by score().
inline void tighten_offsets(ConvexHull& h, const Matrix& pts) {
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const Vector z = pts.row(i).transpose();
    const Vector s = h.A * z - h.b;
    for (Eigen::Index j = 0; j < s.size(); ++j)
      if (s(j) > 0.0) h.b(j) += s(j);
  }
}

}  // namespace detail

/// Element-wise extrema; zero-extent dimensions are widened by
/// 1e-6 * (1 + |value|) on each side.
inline HyperRect fit_hyperrect(const Matrix& cluster) {
  if (cluster.rows() < 1) throw Error("fit_hyperrect: empty cluster");
  HyperRect r{cluster.colwise().minCoeff().transpose(), cluster.colwise().maxCoeff().transpose()};
  for (Eigen::Index d = 0; d < r.lo.size(); ++d) {
    if (r.hi(d) > r.lo(d)) continue;
    const double eps = 1e-6 * (1.0 + std::abs(r.lo(d)));
    r.lo(d) -= eps;
    r.hi(d) += eps;
  }
  return r;
}

/// Quickhull facet representation for p in {1,2,3}. Affinely degenerate
/// clusters fall back to the hyperrectangle fit with a warning.
inline Shape fit_convex_hull(const Matrix& cluster, Warnings* warnings = nullptr) {
  const auto p = cluster.cols();
  const auto m = cluster.rows();
  if (m < 1) throw Error("fit_convex_hull: empty cluster");
  if (p < 1 || p > 3) throw Error("hull dimension unsupported");
  if (m < p + 1 || detail::affine_rank(cluster) < p) {
    warn(warnings, "convex hull: affinely degenerate cluster of " + std::to_string(m) +
                       " points; using hyperrectangle fit");
    return fit_hyperrect(cluster);
  }

  ConvexHull h;
  if (p == 1) {
    const double lo = cluster.col(0).minCoeff(), hi = cluster.col(0).maxCoeff();
    h.A.resize(2, 1);
    h.A << 1.0, -1.0;
    h.b.resize(2);
    h.b << hi, -lo;
    h.vertices.resize(2, 1);
    h.vertices << lo, hi;
  } else if (p == 2) {
    const auto idx = quickhull::hull_2d(cluster);
    const auto r = static_cast<Eigen::Index>(idx.size());
    h.vertices.resize(r, 2);
    for (Eigen::Index i = 0; i < r; ++i) h.vertices.row(i) = cluster.row(idx[static_cast<std::size_t>(i)]);
    h.A.resize(r, 2);
    h.b.resize(r);
    for (Eigen::Index i = 0; i < r; ++i) {
      const Eigen::Vector2d a = h.vertices.row(i).transpose();
      const Eigen::Vector2d c = h.vertices.row((i + 1) % r).transpose();
      const Eigen::Vector2d nrm = Eigen::Vector2d(c.y() - a.y(), a.x() - c.x()).normalized();
      h.A.row(i) = nrm.transpose();
      h.b(i) = nrm.dot(a);
    }
  } else {
    const auto hull = quickhull::hull_3d(cluster);
    const auto r = static_cast<Eigen::Index>(hull.faces.size());
    h.A.resize(r, 3);
    h.b.resize(r);
    for (Eigen::Index i = 0; i < r; ++i) {
      h.A.row(i) = hull.normals[static_cast<std::size_t>(i)].transpose();
      h.b(i) = hull.normals[static_cast<std::size_t>(i)].dot(cluster.row(hull.faces[static_cast<std::size_t>(i)][0]).transpose());
    }
    h.vertices.resize(static_cast<Eigen::Index>(hull.vertices.size()), 3);
    for (std::size_t i = 0; i < hull.vertices.size(); ++i)
      h.vertices.row(static_cast<Eigen::Index>(i)) = cluster.row(hull.vertices[i]);
  }
  detail::tighten_offsets(h, cluster);
  return h;
}

struct EllipsoidFitOptions {
  int budget = 5000;             // CMA-ES function evaluations
  double penalty_factor = 1e3;   // penalty weight in units of the unit-ball volume
  double sigma0 = 0.1;
};

namespace detail {

inline double max_mahalanobis(const Eigen::MatrixXd& Q, const Vector& c, const Matrix& pts) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const Vector d = pts.row(i).transpose() - c;
    worst = std::max(worst, d.dot(Q * d));
  }
  return worst;
}

// Scales Q so the farthest point lies on the boundary when any point is outside.
inline void repair(Eigen::MatrixXd& Q, const Vector& c, const Matrix& pts) {
  const double worst = max_mahalanobis(Q, c, pts);
  if (worst > 1.0) Q /= worst;
}

}  // namespace detail

/// Minimum-volume covering ellipsoid by CMA-ES over (Cholesky factor of Q, c).
/// Work happens in coordinates centered on the cluster mean and scaled by its
/// radius; the objective there is volume + w * sum_i max(0, f(z_i))^2.
inline Ellipsoid fit_ellipsoid(const Matrix& cluster, std::uint64_t seed, const EllipsoidFitOptions& opt = {},
                               Warnings* warnings = nullptr) {
  const auto m = cluster.rows();
  const auto p = cluster.cols();
  if (m < 1) throw Error("fit_ellipsoid: empty cluster");
  const Vector mu = cluster.colwise().mean().transpose();
  double radius = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) radius = std::max(radius, (cluster.row(i).transpose() - mu).norm());

  if (!(radius > 0.0)) {
    const double eps = 1e-6 * (1.0 + mu.norm());
    return Ellipsoid{Eigen::MatrixXd::Identity(p, p) / (eps * eps), mu};
  }

  const Matrix y = (cluster.rowwise() - mu.transpose()) / radius;
  const Eigen::MatrixXd cov = (y.transpose() * y) / static_cast<double>(m);
  const double trace = cov.trace();
  const double ridge = 1e-6 * trace / static_cast<double>(p);
  Eigen::MatrixXd Q0 = (cov + ridge * Eigen::MatrixXd::Identity(p, p)).inverse();
  Q0 /= detail::max_mahalanobis(Q0, Vector::Zero(p), y);

  auto to_original = [&](Eigen::MatrixXd Q, const Vector& c) {
    Ellipsoid e{Q / (radius * radius), mu + radius * c};
    e.Q = 0.5 * (e.Q + e.Q.transpose());
    detail::repair(e.Q, e.c, cluster);
    return e;
  };

  if (detail::affine_rank(cluster) < p) {
    warn(warnings, "ellipsoid: affinely degenerate cluster of " + std::to_string(m) +
                       " points; using ridge-regularized covariance ellipsoid");
    return to_original(Q0, Vector::Zero(p));
  }

  const Eigen::Index n_chol = p * (p + 1) / 2;
  const Eigen::MatrixXd L0 = Q0.llt().matrixL();
  Vector x0(n_chol + p);
  {
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < p; ++i) x0(k++) = std::log(L0(i, i));
    for (Eigen::Index i = 0; i < p; ++i)
      for (Eigen::Index j = 0; j < i; ++j) x0(k++) = L0(i, j);
    x0.tail(p).setZero();
  }
  auto decode = [p](const Vector& x, Eigen::MatrixXd& L, Vector& c) {
    L = Eigen::MatrixXd::Zero(p, p);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < p; ++i) L(i, i) = std::exp(x(k++));
    for (Eigen::Index i = 0; i < p; ++i)
      for (Eigen::Index j = 0; j < i; ++j) L(i, j) = x(k++);
    c = x.tail(p);
  };

  const double vp = unit_ball_volume(p);
  const double weight = opt.penalty_factor * vp;
  auto objective = [&](const Vector& x) {
    Eigen::MatrixXd L;
    Vector c;
    decode(x, L, c);
    const double vol = vp * std::exp(-x.head(p).sum());
    double pen = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      const Vector u = L.transpose() * (y.row(i).transpose() - c);
      const double f = u.squaredNorm() - 1.0;
      if (f > 0.0) pen += f * f;
    }
    return vol + weight * pen;
  };

  CmaesOptions copt;
  copt.max_evaluations = opt.budget;
  copt.seed = seed;
  const auto res = cmaes_minimize(objective, x0, opt.sigma0, copt);

  Eigen::MatrixXd L;
  Vector c;
  decode(res.x, L, c);
  Eigen::MatrixXd Q = L * L.transpose();
  const double violation = detail::max_mahalanobis(Q, c, y) - 1.0;
  if (violation > 1e-3)
    warn(warnings, "ellipsoid: optimizer ended infeasible by " + std::to_string(violation) +
                       " after " + std::to_string(res.evaluations) + " evaluations; repaired by scaling");
  detail::repair(Q, c, y);

  // Never return something worse than the covering covariance ellipsoid.
  if (Q.determinant() < Q0.determinant()) return to_original(Q0, Vector::Zero(p));
  return to_original(Q, c);
}

inline Shape fit_shape(Template t, const Matrix& cluster, std::uint64_t seed, int ellipsoid_budget = 5000,
                       Warnings* warnings = nullptr) {
  switch (t) {
    case Template::hyperrect: return fit_hyperrect(cluster);
    case Template::convexhull: return fit_convex_hull(cluster, warnings);
    case Template::ellipsoid: {
      EllipsoidFitOptions opt;
      opt.budget = ellipsoid_budget;
      return fit_ellipsoid(cluster, seed, opt, warnings);
    }
  }
  throw Error("unknown template");
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline nlohmann::json to_json_vec(const Vector& v) {
  auto a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

template <class M>
nlohmann::json to_json_mat(const M& m) {
  auto a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    auto row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    a.push_back(std::move(row));
  }
  return a;
}

inline Vector vec_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw Error("expected a JSON array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

inline Eigen::MatrixXd mat_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) throw Error("expected a non-empty JSON array of rows");
  const auto cols = j[0].size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_array() || j[i].size() != cols) throw Error("ragged matrix in JSON");
    for (std::size_t k = 0; k < cols; ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = j[i][k].get<double>();
  }
  return m;
}

}  // namespace detail

inline nlohmann::json shape_to_json(const Shape& s) {
  return std::visit(
      [](const auto& v) -> nlohmann::json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Ellipsoid>) {
          return {{"type", "ellipsoid"}, {"Q", detail::to_json_mat(v.Q)}, {"c", detail::to_json_vec(v.c)}};
        } else if constexpr (std::is_same_v<T, ConvexHull>) {
          return {{"type", "convexhull"},
                  {"A", detail::to_json_mat(v.A)},
                  {"b", detail::to_json_vec(v.b)},
                  {"vertices", detail::to_json_mat(v.vertices)}};
        } else {
          return {{"type", "hyperrect"}, {"b_min", detail::to_json_vec(v.lo)}, {"b_max", detail::to_json_vec(v.hi)}};
        }
      },
      s);
}

inline Shape shape_from_json(const nlohmann::json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "ellipsoid") {
    Ellipsoid e{detail::mat_from_json(j.at("Q")), detail::vec_from_json(j.at("c"))};
    if (e.Q.rows() != e.Q.cols() || e.Q.rows() != e.c.size()) throw Error("ellipsoid: Q/c dimension mismatch");
    if (!e.Q.isApprox(e.Q.transpose(), 1e-12) || e.Q.llt().info() != Eigen::Success)
      throw Error("ellipsoid: Q must be symmetric positive definite");
    return e;
  }
  if (type == "convexhull") {
    ConvexHull h{detail::mat_from_json(j.at("A")), detail::vec_from_json(j.at("b")), detail::mat_from_json(j.at("vertices"))};
    if (h.A.rows() != h.b.size() || h.vertices.cols() != h.A.cols()) throw Error("convexhull: dimension mismatch");
    for (Eigen::Index i = 0; i < h.A.rows(); ++i)
      if (std::abs(h.A.row(i).norm() - 1.0) > 1e-9) throw Error("convexhull: facet normals must be unit length");
    return h;
  }
  if (type == "hyperrect") {
    HyperRect r{detail::vec_from_json(j.at("b_min")), detail::vec_from_json(j.at("b_max"))};
    if (r.lo.size() != r.hi.size() || (r.lo.array() > r.hi.array()).any()) throw Error("hyperrect: need b_min <= b_max");
    return r;
  }
  throw Error("unknown shape type '" + type + "'");
}

}  // namespace cpr

#endif  // CPR_SHAPES_HPP_
