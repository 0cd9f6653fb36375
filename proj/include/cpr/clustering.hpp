// Flat-kernel mean-shift clustering of the high-density point set.

#ifndef CPR_CLUSTERING_HPP_
#define CPR_CLUSTERING_HPP_

#include "cpr/core.hpp"
#include "cpr/density.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace cpr {

/// Mean over all points of the distance to the ceil(quantile * |L|)-th nearest
/// other point (clamped to |L| - 1).
inline Bandwidth estimate_ms_bandwidth(const Matrix& points, double quantile, Warnings* warnings = nullptr) {
  if (!(quantile > 0.0 && quantile <= 1.0)) throw Error("bandwidth quantile must lie in (0,1]");
  const auto n = points.rows();
  if (n < 2) throw Error("bandwidth estimation needs at least two points");
  auto k = static_cast<Eigen::Index>(std::ceil(quantile * static_cast<double>(n)));
  k = std::clamp<Eigen::Index>(k, 1, n - 1);

  std::vector<double> dist(static_cast<std::size_t>(n - 1));
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::size_t c = 0;
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) dist[c++] = (points.row(i) - points.row(j)).norm();
    std::nth_element(dist.begin(), dist.begin() + (k - 1), dist.end());
    total += dist[static_cast<std::size_t>(k - 1)];
  }
  const double b = total / static_cast<double>(n);
  if (b > 0.0 && std::isfinite(b)) return Bandwidth(b);
  const double fallback = 1e-6 * (1.0 + points.row(0).norm());
  warn(warnings, "mean-shift bandwidth estimate is zero (identical points); using fallback " + std::to_string(fallback));
  return Bandwidth(fallback);
}

struct MeanShiftOptions {
  double tol_fraction = 1e-4;   // convergence tolerance as a fraction of b
  int max_iter = 300;
  double merge_fraction = 0.5;  // converged positions closer than this * b share a mode
};

/// Partition of the input points, one cluster per mode.
struct ClusterSet {
  std::vector<Matrix> clusters;
  Matrix modes;                      // K x p
  std::vector<std::size_t> labels;   // cluster index of each input point

  [[nodiscard]] std::size_t K() const { return clusters.size(); }
};

/// Flat-kernel mean shift. Every point moves to the mean of the input points
/// within radius b of its current position until the step is below tol.
/// Converged positions are merged by single linkage at merge_fraction * b,
/// the mode is the mean of the merged positions, and modes are ordered
/// lexicographically so the output does not depend on input order.
inline ClusterSet mean_shift(const Matrix& points, Bandwidth bandwidth, const MeanShiftOptions& opt = {}) {
  const auto n = points.rows();
  const auto p = points.cols();
  if (n < 1) throw Error("mean_shift needs at least one point");
  const double b = bandwidth.value();
  const double b2 = b * b;
  const double tol = opt.tol_fraction * b;

  Matrix converged(n, p);
  Eigen::RowVectorXd x(p), next(p);
  for (Eigen::Index i = 0; i < n; ++i) {
    x = points.row(i);
    for (int it = 0; it < opt.max_iter; ++it) {
      next.setZero();
      Eigen::Index count = 0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if ((points.row(j) - x).squaredNorm() <= b2) {
          next += points.row(j);
          ++count;
        }
      }
      if (count == 0) break;  // drifted off every point; keep the last position
      next /= static_cast<double>(count);
      const double step = (next - x).norm();
      x = next;
      if (step < tol) break;
    }
    converged.row(i) = x;
  }

  // Single-linkage components of converged positions.
  const double merge2 = (opt.merge_fraction * b) * (opt.merge_fraction * b);
  std::vector<std::size_t> parent(static_cast<std::size_t>(n));
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      if ((converged.row(i) - converged.row(j)).squaredNorm() <= merge2) {
        const auto ri = find(static_cast<std::size_t>(i));
        const auto rj = find(static_cast<std::size_t>(j));
        if (ri != rj) parent[std::max(ri, rj)] = std::min(ri, rj);
      }

  std::vector<std::size_t> roots;
  std::vector<std::size_t> comp(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
    const auto r = find(i);
    auto it = std::find(roots.begin(), roots.end(), r);
    comp[i] = static_cast<std::size_t>(it - roots.begin());
    if (it == roots.end()) roots.push_back(r);
  }
  const std::size_t K = roots.size();
  Matrix modes = Matrix::Zero(static_cast<Eigen::Index>(K), p);
  std::vector<Eigen::Index> sizes(K, 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    modes.row(static_cast<Eigen::Index>(comp[static_cast<std::size_t>(i)])) += converged.row(i);
    ++sizes[comp[static_cast<std::size_t>(i)]];
  }
  for (std::size_t k = 0; k < K; ++k) modes.row(static_cast<Eigen::Index>(k)) /= static_cast<double>(sizes[k]);

  std::vector<std::size_t> order(K);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) {
    for (Eigen::Index d = 0; d < p; ++d) {
      const double va = modes(static_cast<Eigen::Index>(a), d), vc = modes(static_cast<Eigen::Index>(c), d);
      if (va != vc) return va < vc;
    }
    return a < c;
  });
  std::vector<std::size_t> rank(K);
  for (std::size_t r = 0; r < K; ++r) rank[order[r]] = r;

  ClusterSet out;
  out.modes.resize(static_cast<Eigen::Index>(K), p);
  for (std::size_t k = 0; k < K; ++k) out.modes.row(static_cast<Eigen::Index>(rank[k])) = modes.row(static_cast<Eigen::Index>(k));
  out.labels.resize(static_cast<std::size_t>(n));
  std::vector<Eigen::Index> fill(K, 0);
  out.clusters.resize(K);
  for (std::size_t k = 0; k < K; ++k) out.clusters[rank[k]].resize(sizes[k], p);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = rank[comp[static_cast<std::size_t>(i)]];
    out.labels[static_cast<std::size_t>(i)] = k;
    out.clusters[k].row(fill[k]++) = points.row(i);
  }
  return out;
}

}  // namespace cpr

#endif  // CPR_CLUSTERING_HPP_
