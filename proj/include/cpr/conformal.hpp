// Shape-based nonconformity scores and split conformal calibration.
//
// Each fitted shape k is normalized by alpha_k = 1 / (q_{1-delta}(R_k) - min R_k)
// with R_k its scores over D_cal,1. The joint score is min_k alpha_k f_k(z),
// and the region {y | joint(y - y_hat) <= C} is the union of the sublevel
// sets {f_k <= C / alpha_k}, with C calibrated on D_cal,2.

#ifndef CPR_CONFORMAL_HPP_
#define CPR_CONFORMAL_HPP_

#include "cpr/clustering.hpp"
#include "cpr/core.hpp"
#include "cpr/density.hpp"
#include "cpr/shapes.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace cpr {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

namespace detail {

// ceil(x) that ignores representation error just above an integer, so that
// e.g. 10 * (1 - 0.1) indexes 9 rather than 10.
inline std::size_t ceil_index(double x) {
  return static_cast<std::size_t>(std::ceil(x - 1e-12 * std::max(1.0, std::abs(x))));
}

}  // namespace detail

/// Plain empirical quantile used for normalization: the
/// min(ceil(m (1 - delta)), m)-th smallest value (1-based).
inline double empirical_quantile(std::vector<double> values, double delta) {
  if (values.empty()) throw Error("empirical_quantile: no values");
  if (!(delta > 0.0 && delta < 1.0)) throw Error("delta must lie in (0,1)");
  const std::size_t m = values.size();
  std::size_t idx = std::min(detail::ceil_index(static_cast<double>(m) * (1.0 - delta)), m);
  idx = std::max<std::size_t>(idx, 1);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(idx - 1), values.end());
  return values[idx - 1];
}

/// Split conformal quantile: the p-th smallest of {R_1..R_n, +inf} with
/// p = ceil((n + 1)(1 - delta)); +inf when p > n.
inline double conformal_quantile(std::vector<double> scores, double delta, Warnings* warnings = nullptr) {
  if (!(delta > 0.0 && delta < 1.0)) throw Error("delta must lie in (0,1)");
  if (scores.empty()) {
    warn(warnings, "conformal quantile of an empty score set is +inf");
    return kInf;
  }
  for (double s : scores)
    if (!std::isfinite(s)) throw Error("conformal_quantile: scores must be finite");
  const std::size_t n = scores.size();
  const std::size_t p = detail::ceil_index(static_cast<double>(n + 1) * (1.0 - delta));
  if (p > n) {
    warn(warnings, "insufficient calibration data: need n >= ceil((n+1)(1-delta)) (n=" + std::to_string(n) + ")");
    return kInf;
  }
  const std::size_t idx = std::max<std::size_t>(p, 1) - 1;
  std::nth_element(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(idx), scores.end());
  return scores[idx];
}

struct NormalizedShape {
  Shape shape;
  double alpha = 1.0;
};

/// alpha_k from shape k's scores over all of D_cal,1.
inline double normalization_constant(const std::vector<double>& scores, double delta, Warnings* warnings = nullptr) {
  const double q = empirical_quantile(scores, delta);
  const double lo = *std::min_element(scores.begin(), scores.end());
  const double denom = q - lo;
  if (!(denom > 0.0) || !std::isfinite(1.0 / denom)) {
    warn(warnings, "flat score distribution: normalization constant set to 1");
    return 1.0;
  }
  return 1.0 / denom;
}

inline std::vector<double> normalization_constants(const std::vector<Shape>& shapes, const ResidualSet& cal1,
                                                   double delta, Warnings* warnings = nullptr) {
  if (shapes.empty()) throw Error("normalization_constants: no shapes");
  std::vector<double> alphas;
  alphas.reserve(shapes.size());
  std::vector<double> r(static_cast<std::size_t>(cal1.count()));
  for (const auto& s : shapes) {
    if (shape_dim(s) != cal1.dim()) throw Error("normalization_constants: dimension mismatch");
    for (Eigen::Index i = 0; i < cal1.count(); ++i)
      r[static_cast<std::size_t>(i)] = shape_score(s, cal1.points().row(i).transpose());
    alphas.push_back(normalization_constant(r, delta, warnings));
  }
  return alphas;
}

inline std::vector<NormalizedShape> normalize(const std::vector<Shape>& shapes, const std::vector<double>& alphas) {
  if (shapes.size() != alphas.size()) throw Error("normalize: shapes/alphas size mismatch");
  std::vector<NormalizedShape> out;
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    if (!(alphas[k] > 0.0) || !std::isfinite(alphas[k])) throw Error("normalization constants must be positive and finite");
    out.push_back({shapes[k], alphas[k]});
  }
  return out;
}

/// min_k alpha_k f_k(z)
inline double joint_score(const std::vector<NormalizedShape>& shapes, const Eigen::Ref<const Vector>& z) {
  if (shapes.empty()) throw Error("joint_score: no shapes");
  double best = kInf;
  for (const auto& s : shapes) best = std::min(best, s.alpha * shape_score(s.shape, z));
  return best;
}

inline std::vector<double> joint_scores(const std::vector<NormalizedShape>& shapes, const ResidualSet& z) {
  std::vector<double> out(static_cast<std::size_t>(z.count()));
  for (Eigen::Index i = 0; i < z.count(); ++i)
    out[static_cast<std::size_t>(i)] = joint_score(shapes, z.points().row(i).transpose());
  return out;
}

class ConformalRegion {
 public:
  ConformalRegion(std::vector<NormalizedShape> shapes, double C, double delta, std::size_t n2)
      : shapes_(std::move(shapes)), C_(C), delta_(delta), n2_(n2) {
    if (shapes_.empty()) throw Error("conformal region needs at least one shape");
    if (!(delta > 0.0 && delta < 1.0)) throw Error("delta must lie in (0,1)");
    if (std::isnan(C) || C == -kInf) throw Error("threshold C must be a number or +inf");
    const auto p = shape_dim(shapes_.front().shape);
    for (const auto& s : shapes_)
      if (shape_dim(s.shape) != p) throw Error("conformal region shapes differ in dimension");
  }

  [[nodiscard]] const std::vector<NormalizedShape>& shapes() const { return shapes_; }
  [[nodiscard]] double C() const { return C_; }
  [[nodiscard]] double delta() const { return delta_; }
  [[nodiscard]] std::size_t n2() const { return n2_; }
  [[nodiscard]] std::size_t K() const { return shapes_.size(); }
  [[nodiscard]] Eigen::Index dim() const { return shape_dim(shapes_.front().shape); }
  [[nodiscard]] bool bounded() const { return std::isfinite(C_); }

  /// Residual membership: some shape k has f_k(z) <= C / alpha_k. Evaluated
  /// as alpha_k f_k(z) <= C so it agrees bit-for-bit with joint_score <= C.
  [[nodiscard]] bool contains_residual(const Eigen::Ref<const Vector>& z) const {
    if (z.size() != dim()) throw Error("region_contains: dimension mismatch");
    if (!bounded()) return true;
    for (const auto& s : shapes_)
      if (s.alpha * shape_score(s.shape, z) <= C_) return true;
    return false;
  }

 private:
  std::vector<NormalizedShape> shapes_;
  double C_;
  double delta_;
  std::size_t n2_;
};

inline bool region_contains(const ConformalRegion& region, const Eigen::Ref<const Vector>& y,
                            const Eigen::Ref<const Vector>& y_hat) {
  if (y.size() != y_hat.size()) throw Error("region_contains: dimension mismatch");
  return region.contains_residual(y - y_hat);
}

inline ConformalRegion calibrate(const std::vector<Shape>& shapes, const std::vector<double>& alphas,
                                 const ResidualSet& cal2, double delta, Warnings* warnings = nullptr) {
  auto normalized = normalize(shapes, alphas);
  const double C = conformal_quantile(joint_scores(normalized, cal2), delta, warnings);
  return ConformalRegion(std::move(normalized), C, delta, static_cast<std::size_t>(cal2.count()));
}

inline ConformalRegion calibrate(std::vector<NormalizedShape> shapes, const ResidualSet& cal2, double delta,
                                 Warnings* warnings = nullptr) {
  const double C = conformal_quantile(joint_scores(shapes, cal2), delta, warnings);
  return ConformalRegion(std::move(shapes), C, delta, static_cast<std::size_t>(cal2.count()));
}

/// Bounding box of the union of inflated shapes; nullopt when every one is empty.
inline std::optional<Box> region_bounds(const ConformalRegion& region) {
  std::optional<Box> box;
  for (const auto& s : region.shapes()) {
    const auto b = sublevel_bounds(s.shape, region.C() / s.alpha);
    if (!b) continue;
    if (!box) {
      box = *b;
    } else {
      box->lo = box->lo.cwiseMin(b->lo);
      box->hi = box->hi.cwiseMax(b->hi);
    }
  }
  return box;
}

/// Grid-counting estimate of the region's volume: cells of the union's
/// bounding box whose centers are members. Overlaps count once.
inline double region_volume(const ConformalRegion& region, int cells_per_dim) {
  if (!region.bounded()) return kInf;
  const auto p = region.dim();
  if (p > 3) throw Error("region_volume supports p <= 3");
  if (cells_per_dim < 1) throw Error("region_volume needs at least one cell per dimension");
  const auto box = region_bounds(region);
  if (!box) return 0.0;
  const Vector width = (box->hi - box->lo) / static_cast<double>(cells_per_dim);
  const double cell_volume = width.prod();
  if (!(cell_volume > 0.0)) return 0.0;

  std::size_t total = 1;
  for (Eigen::Index d = 0; d < p; ++d) total *= static_cast<std::size_t>(cells_per_dim);
  std::vector<int> idx(static_cast<std::size_t>(p), 0);
  Vector z(p);
  std::size_t inside = 0;
  for (std::size_t j = 0; j < total; ++j) {
    for (Eigen::Index d = 0; d < p; ++d) z(d) = box->lo(d) + (idx[static_cast<std::size_t>(d)] + 0.5) * width(d);
    if (region.contains_residual(z)) ++inside;
    for (auto d = p - 1; d >= 0; --d) {
      if (++idx[static_cast<std::size_t>(d)] < cells_per_dim) break;
      idx[static_cast<std::size_t>(d)] = 0;
    }
  }
  return static_cast<double>(inside) * cell_volume;
}

/// L2-norm baseline: a ball of radius C_L2 around the prediction.
struct L2Baseline {
  double radius = 0.0;
  Eigen::Index dim = 0;
  [[nodiscard]] double volume() const {
    return std::isfinite(radius) ? unit_ball_volume(dim) * std::pow(radius, static_cast<double>(dim)) : kInf;
  }
  [[nodiscard]] bool contains_residual(const Eigen::Ref<const Vector>& z) const { return z.norm() <= radius; }
};

inline L2Baseline l2_baseline(const ResidualSet& cal2, double delta, Warnings* warnings = nullptr) {
  std::vector<double> norms(static_cast<std::size_t>(cal2.count()));
  for (Eigen::Index i = 0; i < cal2.count(); ++i) norms[static_cast<std::size_t>(i)] = cal2.points().row(i).norm();
  return {conformal_quantile(std::move(norms), delta, warnings), cal2.dim()};
}

// ---------------------------------------------------------------------------
// Pipeline

struct StageTimes {
  double density = 0.0;
  double clustering = 0.0;
  double shape_fit = 0.0;
  double normalization = 0.0;
  double calibration = 0.0;
};

struct FitReport {
  std::size_t K = 0;
  double kde_bandwidth = 0.0;
  double ms_bandwidth = 0.0;
  std::size_t grid_cells = 0;
  std::size_t selected_cells = 0;
  StageTimes seconds;
  Warnings warnings;
};

/// Everything the cal1 half of the pipeline produces.
struct ShapeModel {
  std::vector<NormalizedShape> shapes;
  Matrix high_density_points;
  ClusterSet clusters;
};

namespace detail {

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - start_).count();
    start_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace detail

/// density -> high-density set -> mean shift -> per-cluster template fit ->
/// normalization constants, all on D_cal,1.
inline ShapeModel fit_shapes(const ResidualSet& cal1, const Config& cfg, FitReport* report = nullptr) {
  cfg.validate();
  FitReport local;
  FitReport& rep = report != nullptr ? *report : local;
  detail::Stopwatch clock;

  const Bandwidth kde_b = silverman_bandwidth(cal1, cfg.kde_bandwidth_adjust);
  auto grid = build_grid(cal1, kde_b, cfg);
  rep.grid_cells = grid.size();
  auto hd = select_high_density(std::move(grid), cfg.delta, &rep.warnings);
  rep.kde_bandwidth = kde_b.value();
  rep.selected_cells = hd.cell_index.size();
  rep.seconds.density = clock.lap();

  ShapeModel model;
  model.high_density_points = hd.points;
  if (hd.points.rows() >= 2) {
    const Bandwidth ms_b = estimate_ms_bandwidth(hd.points, cfg.ms_bandwidth_quantile, &rep.warnings);
    rep.ms_bandwidth = ms_b.value();
    model.clusters = mean_shift(hd.points, ms_b);
  } else {
    model.clusters.clusters = {hd.points};
    model.clusters.modes = hd.points;
    model.clusters.labels = {0};
  }
  rep.K = model.clusters.K();
  rep.seconds.clustering = clock.lap();

  std::vector<Shape> shapes;
  for (std::size_t k = 0; k < model.clusters.K(); ++k)
    shapes.push_back(fit_shape(cfg.shape_template, model.clusters.clusters[k],
                               derive_seed(cfg.seed, "shape", k), cfg.ellipsoid_budget, &rep.warnings));
  rep.seconds.shape_fit = clock.lap();

  const auto alphas = normalization_constants(shapes, cal1, cfg.delta, &rep.warnings);
  model.shapes = normalize(shapes, alphas);
  rep.seconds.normalization = clock.lap();
  return model;
}

struct FittedRegion {
  ConformalRegion region;
  ShapeModel model;
  FitReport report;
};

inline FittedRegion fit_pipeline(const CalibrationSplit& split, const Config& cfg) {
  if (split.cal1.dim() != split.cal2.dim()) throw Error("calibration halves differ in dimension");
  FitReport report;
  auto model = fit_shapes(split.cal1, cfg, &report);
  detail::Stopwatch clock;
  auto region = calibrate(model.shapes, split.cal2, cfg.delta, &report.warnings);
  report.seconds.calibration = clock.lap();
  return {std::move(region), std::move(model), std::move(report)};
}

/// Redraws the calibration/test partition of `pool` (scores of the pooled
/// D_cal,2 and test points) and returns the test coverage of each redraw.
inline std::vector<double> reshuffle_coverage(const std::vector<double>& pool, std::size_t n_cal, double delta,
                                              int reshuffles, std::uint64_t seed) {
  if (n_cal == 0 || n_cal >= pool.size()) throw Error("reshuffle_coverage: need non-empty calibration and test parts");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(reshuffles));
  std::vector<double> cal(n_cal);
  for (int r = 0; r < reshuffles; ++r) {
    const auto perm = seeded_permutation(pool.size(), derive_seed(seed, "reshuffle", static_cast<std::uint64_t>(r)));
    for (std::size_t i = 0; i < n_cal; ++i) cal[i] = pool[perm[i]];
    const double C = conformal_quantile(cal, delta);
    std::size_t hit = 0;
    for (std::size_t i = n_cal; i < pool.size(); ++i)
      if (pool[perm[i]] <= C) ++hit;
    out.push_back(static_cast<double>(hit) / static_cast<double>(pool.size() - n_cal));
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON. C = +inf is written as the string "inf".

inline nlohmann::json threshold_to_json(double C) {
  if (std::isinf(C)) return "inf";
  return C;
}

inline double threshold_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "inf") return kInf;
    throw Error("threshold C must be a number or \"inf\"");
  }
  return j.get<double>();
}

inline nlohmann::json shapes_to_json(const std::vector<NormalizedShape>& shapes) {
  auto a = nlohmann::json::array();
  for (const auto& s : shapes) a.push_back({{"alpha", s.alpha}, {"shape", shape_to_json(s.shape)}});
  return a;
}

inline std::vector<NormalizedShape> shapes_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) throw Error("region JSON needs a non-empty shapes array");
  std::vector<NormalizedShape> out;
  for (const auto& e : j) {
    const double alpha = e.at("alpha").get<double>();
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw Error("alpha must be positive and finite");
    out.push_back({shape_from_json(e.at("shape")), alpha});
  }
  return out;
}

inline nlohmann::json region_to_json(const ConformalRegion& r) {
  return {{"delta", r.delta()}, {"C", threshold_to_json(r.C())}, {"shapes", shapes_to_json(r.shapes())}, {"n2", r.n2()}};
}

inline ConformalRegion region_from_json(const nlohmann::json& j) {
  return ConformalRegion(shapes_from_json(j.at("shapes")), threshold_from_json(j.at("C")), j.at("delta").get<double>(),
                         j.at("n2").get<std::size_t>());
}

}  // namespace cpr

#endif  // CPR_CONFORMAL_HPP_
