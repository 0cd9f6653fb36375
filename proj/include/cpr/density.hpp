// Gaussian kernel density estimate over residuals, a regular grid over the
// residual domain, and greedy selection of the high-density cell set that
// carries at least 1 - delta of the estimated probability mass.

#ifndef CPR_DENSITY_HPP_
#define CPR_DENSITY_HPP_

#include "cpr/core.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>

namespace cpr {

/// Positive, finite smoothing scale in residual units.
class Bandwidth {
 public:
  explicit Bandwidth(double value) : value_(value) {
    if (!(value > 0.0) || !std::isfinite(value)) throw Error("bandwidth must be positive and finite");
  }
  [[nodiscard]] double value() const { return value_; }

 private:
  double value_;
};

/// Multivariate rule of thumb b = adjust * s * (n (p + 2) / 4)^(-1 / (p + 4)),
/// where s is the mean of the per-dimension sample standard deviations.
inline Bandwidth silverman_bandwidth(const ResidualSet& z, double adjust) {
  if (!(adjust > 0.0)) throw Error("bandwidth adjust must be > 0");
  const auto n = z.count();
  const auto p = z.dim();
  if (n < 2) throw Error("silverman bandwidth needs at least two residuals");
  const auto& pts = z.points();
  const Eigen::RowVectorXd mean = pts.colwise().mean();
  double sigma_sum = 0.0;
  for (Eigen::Index d = 0; d < p; ++d) {
    const double ss = (pts.col(d).array() - mean(d)).square().sum();
    sigma_sum += std::sqrt(ss / static_cast<double>(n - 1));
  }
  const double sigma = sigma_sum / static_cast<double>(p);
  if (!(sigma > 0.0)) throw Error("zero spread");
  const double dn = static_cast<double>(n);
  const double dp = static_cast<double>(p);
  return Bandwidth(adjust * sigma * std::pow(dn * (dp + 2.0) / 4.0, -1.0 / (dp + 4.0)));
}

namespace detail {

inline double kde_at(const double* z, const Matrix& pts, double b) {
  const auto n = pts.rows();
  const auto p = pts.cols();
  const double inv2b2 = 1.0 / (2.0 * b * b);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double* row = pts.data() + i * p;
    double d2 = 0.0;
    for (Eigen::Index d = 0; d < p; ++d) {
      const double diff = z[d] - row[d];
      d2 += diff * diff;
    }
    acc += std::exp(-d2 * inv2b2);
  }
  const double dp = static_cast<double>(p);
  const double norm = std::pow(2.0 * std::numbers::pi, -dp / 2.0) / (static_cast<double>(n) * std::pow(b, dp));
  return norm * acc;
}

}  // namespace detail

/// Radial Gaussian KDE: (1 / (n b^p)) sum_i (2 pi)^(-p/2) exp(-|z - Z_i|^2 / (2 b^2)).
inline double kde_density(const Vector& z, const ResidualSet& data, Bandwidth b) {
  if (z.size() != data.dim()) throw Error("kde_density: dimension mismatch");
  return detail::kde_at(z.data(), data.points(), b.value());
}

/// Regular grid over a padded residual bounding box. Cells are enumerated in
/// row-major order of their multi-index (last dimension fastest).
struct DensityGrid {
  Vector lower;
  Vector upper;
  int cells_per_dim = 0;
  Matrix centers;  // one row per cell
  double cell_volume = 0.0;
  std::vector<double> mass;
  std::vector<bool> selected;

  [[nodiscard]] std::size_t size() const { return mass.size(); }
  [[nodiscard]] Eigen::Index dim() const { return lower.size(); }
  [[nodiscard]] double total_mass() const {
    // Neumaier summation keeps totals stable for large grids.
    double sum = 0.0, comp = 0.0;
    for (double m : mass) {
      const double t = sum + m;
      comp += std::abs(sum) >= std::abs(m) ? (sum - t) + m : (m - t) + sum;
      sum = t;
    }
    return sum + comp;
  }
};

inline DensityGrid build_grid(const ResidualSet& z, Bandwidth b, const Config& cfg) {
  const auto p = z.dim();
  const int k = cfg.grid_cells_per_dim;
  if (k < 1) throw Error("grid needs at least one cell per dimension");
  const double cells = std::pow(static_cast<double>(k), static_cast<double>(p));
  if (cells > cfg.grid_cell_cap) throw Error("grid too large");

  DensityGrid g;
  g.cells_per_dim = k;
  const double pad = cfg.grid_padding_bandwidths * b.value();
  g.lower = z.points().colwise().minCoeff().transpose().array() - pad;
  g.upper = z.points().colwise().maxCoeff().transpose().array() + pad;
  for (Eigen::Index d = 0; d < p; ++d) {
    if (!(g.upper(d) > g.lower(d))) {
      g.lower(d) -= 0.5 * b.value();
      g.upper(d) += 0.5 * b.value();
    }
  }
  const Vector width = (g.upper - g.lower) / static_cast<double>(k);
  g.cell_volume = width.prod();

  const auto J = static_cast<Eigen::Index>(cells);
  g.centers.resize(J, p);
  std::vector<int> idx(static_cast<std::size_t>(p), 0);
  for (Eigen::Index j = 0; j < J; ++j) {
    for (Eigen::Index d = 0; d < p; ++d)
      g.centers(j, d) = g.lower(d) + (static_cast<double>(idx[static_cast<std::size_t>(d)]) + 0.5) * width(d);
    for (auto d = p - 1; d >= 0; --d) {
      if (++idx[static_cast<std::size_t>(d)] < k) break;
      idx[static_cast<std::size_t>(d)] = 0;
    }
  }

  g.mass.resize(static_cast<std::size_t>(J));
  for (Eigen::Index j = 0; j < J; ++j)
    g.mass[static_cast<std::size_t>(j)] =
        detail::kde_at(g.centers.data() + j * p, z.points(), b.value()) * g.cell_volume;
  g.selected.assign(static_cast<std::size_t>(J), false);
  return g;
}

/// The discrete point set L: centers of the selected grid cells.
struct HighDensitySet {
  Matrix points;
  std::vector<std::size_t> cell_index;
  DensityGrid grid;  // copy of the source grid with `selected` filled in
  double selected_mass = 0.0;
  bool truncated = false;
};

/// Greedy selection: cells by mass descending (ties by ascending index) until
/// the cumulative mass reaches 1 - delta. Comparisons carry a 1e-12 slack so
/// that sums of representable masses hit exact targets such as 0.9.
inline HighDensitySet select_high_density(DensityGrid grid, double delta, Warnings* warnings = nullptr) {
  if (!(delta > 0.0 && delta < 1.0)) throw Error("delta must lie in (0,1)");
  constexpr double slack = 1e-12;
  const double target = 1.0 - delta;
  const std::size_t J = grid.size();
  std::vector<std::size_t> order(J);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return grid.mass[a] > grid.mass[b]; });

  HighDensitySet out;
  grid.selected.assign(J, false);
  double sum = 0.0, comp = 0.0;
  bool reached = false;
  for (std::size_t r = 0; r < J; ++r) {
    const std::size_t j = order[r];
    grid.selected[j] = true;
    out.cell_index.push_back(j);
    const double m = grid.mass[j];
    const double t = sum + m;
    comp += std::abs(sum) >= std::abs(m) ? (sum - t) + m : (m - t) + sum;
    sum = t;
    if (sum + comp >= target - slack) {
      reached = true;
      break;
    }
  }
  out.selected_mass = sum + comp;
  if (!reached) {
    out.truncated = true;
    warn(warnings, "grid mass " + std::to_string(out.selected_mass) + " is below 1-delta; all cells selected (truncation)");
  }
  std::sort(out.cell_index.begin(), out.cell_index.end());
  out.points.resize(static_cast<Eigen::Index>(out.cell_index.size()), grid.dim());
  for (std::size_t i = 0; i < out.cell_index.size(); ++i)
    out.points.row(static_cast<Eigen::Index>(i)) = grid.centers.row(static_cast<Eigen::Index>(out.cell_index[i]));
  out.grid = std::move(grid);
  return out;
}

/// Debug export: center_0..center_{p-1},mass,selected
inline void write_grid_csv(std::ostream& out, const DensityGrid& g) {
  for (Eigen::Index d = 0; d < g.dim(); ++d) out << "center_" << d << ',';
  out << "mass,selected\n";
  for (std::size_t j = 0; j < g.size(); ++j) {
    for (Eigen::Index d = 0; d < g.dim(); ++d)
      out << detail::format_double(g.centers(static_cast<Eigen::Index>(j), d)) << ',';
    out << detail::format_double(g.mass[j]) << ',' << (g.selected[j] ? 1 : 0) << '\n';
  }
}

}  // namespace cpr

#endif  // CPR_DENSITY_HPP_
