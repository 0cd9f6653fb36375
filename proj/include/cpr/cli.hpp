// Command-line front end: simulate, fit, eval, plot.
//
// Exit codes: 0 success, 2 usage or input error, 3 the calibrated threshold
// is +inf (too little calibration data for the requested delta).

#ifndef CPR_CLI_HPP_
#define CPR_CLI_HPP_

#include "cpr/conformal.hpp"
#include "cpr/core.hpp"
#include "cpr/scenario.hpp"
#include "cpr/shapes.hpp"
#include "cpr/timeseries.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace cpr::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitUnbounded = 3;

/// Per-run summary. Wall times are only serialized on request so that
/// reports stay byte-identical across reruns.
struct RunReport {
  std::vector<StageTimes> seconds;  // one entry per fitted step
  std::vector<std::size_t> K;
  std::optional<double> region_volume;
  std::optional<double> baseline_volume;
  std::optional<double> coverage;
  Warnings warnings;
  nlohmann::json extra = nlohmann::json::object();

  [[nodiscard]] nlohmann::json to_json(bool with_timings) const;
};

namespace detail {

// JSON has no infinity; +inf becomes "inf" like the region threshold.
inline nlohmann::json number(double v) {
  if (std::isnan(v)) return nullptr;
  return threshold_to_json(v);
}

inline nlohmann::json number(const std::optional<double>& v) { return v ? number(*v) : nlohmann::json(nullptr); }

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << text;
  if (!out) throw Error("failed writing '" + path + "'");
}

inline nlohmann::json parse_json_file(const std::string& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

inline double reduction_percent(double region, double baseline) { return 100.0 * (1.0 - region / baseline); }

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

inline nlohmann::json reshuffle_summary(const std::vector<double>& cov) {
  return {{"reshuffles", cov.size()},
          {"mean", mean(cov)},
          {"std", stddev(cov)},
          {"min", *std::min_element(cov.begin(), cov.end())},
          {"max", *std::max_element(cov.begin(), cov.end())}};
}

}  // namespace detail

inline nlohmann::json RunReport::to_json(bool with_timings) const {
  nlohmann::json j = extra;
  j["K"] = K.size() == 1 ? nlohmann::json(K.front()) : nlohmann::json(K);
  j["region_volume"] = detail::number(region_volume);
  j["baseline_volume"] = detail::number(baseline_volume);
  if (region_volume && baseline_volume && std::isfinite(*region_volume) && std::isfinite(*baseline_volume) &&
      *baseline_volume > 0.0)
    j["reduction_percent"] = detail::reduction_percent(*region_volume, *baseline_volume);
  j["coverage"] = detail::number(coverage);
  j["warnings"] = warnings;
  if (with_timings) {
    auto t = nlohmann::json::array();
    for (const auto& s : seconds)
      t.push_back({{"density", s.density},
                   {"clustering", s.clustering},
                   {"shape_fit", s.shape_fit},
                   {"normalization", s.normalization},
                   {"calibration", s.calibration}});
    j["stage_seconds"] = std::move(t);
  }
  return j;
}

// ---------------------------------------------------------------------------
// Options

struct FitSettings {
  double delta = 0.1;
  std::string shape_template = "convexhull";
  int grid_cells = 40;
  double grid_padding = 3.0;
  double kde_adjust = 0.2;
  double ms_quantile = 0.3;
  int ellipsoid_budget = 5000;

  [[nodiscard]] Config config(std::uint64_t seed) const {
    Config c;
    c.delta = delta;
    c.shape_template = parse_template(shape_template);
    c.grid_cells_per_dim = grid_cells;
    c.grid_padding_bandwidths = grid_padding;
    c.kde_bandwidth_adjust = kde_adjust;
    c.ms_bandwidth_quantile = ms_quantile;
    c.ellipsoid_budget = ellipsoid_budget;
    c.seed = seed;
    c.validate();
    return c;
  }
};

struct SimulateOptions {
  std::string scenario = "intersection";
  std::size_t n = 10000;
  std::uint64_t seed = 0;
  std::string out = ".";
  int tau = 0;  // 0 selects the last step
  scenario::IntersectionParams params;
  int modes = 3;
  double separation = 10.0;
  double sigma = 1.0;
};

struct FitOptions {
  std::string residuals;
  std::string out = "region.json";
  std::string report;
  std::uint64_t seed = 0;
  double split = 0.0;  // > 0: redraw cal1/cal2 with this cal1 fraction
  bool timeseries = false;
  std::vector<int> taus;
  int volume_cells = 200;
  bool timings = false;
  FitSettings fit;
};

struct EvalOptions {
  std::string region;
  std::string test;
  std::string out;
  std::uint64_t seed = 0;
  int reshuffles = 0;
  int volume_cells = 200;
};

struct PlotOptions {
  std::string region;
  std::string residuals;
  std::string out = "region.svg";
  std::vector<int> taus;
  int panel_size = 420;
};

// ---------------------------------------------------------------------------
// Data selection

namespace detail {

inline LabeledResiduals load_residuals(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  return read_residual_csv(in);
}

inline LabeledTrajectoryResiduals load_trajectories(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  return read_trajectory_residual_csv(in);
}

inline std::vector<std::size_t> rows_labeled(const std::vector<std::string>& split,
                                             std::initializer_list<std::string_view> labels) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < split.size(); ++i)
    if (std::find(labels.begin(), labels.end(), split[i]) != labels.end()) idx.push_back(i);
  return idx;
}

/// Indices of cal1 and cal2 rows: the file's labels, or a seeded redraw of
/// the non-test rows when `fraction` > 0.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> choose_split(const std::vector<std::string>& split,
                                                                                  std::size_t n, double fraction,
                                                                                  std::uint64_t seed) {
  if (fraction > 0.0) {
    std::vector<std::size_t> pool = split.empty() ? std::vector<std::size_t>{} : rows_labeled(split, {"cal1", "cal2"});
    if (pool.empty()) {
      pool.resize(n);
      std::iota(pool.begin(), pool.end(), std::size_t{0});
    }
    if (!(fraction < 1.0)) throw Error("--split must lie in (0,1)");
    const std::size_t n1 = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(pool.size())));
    if (n1 == 0 || n1 >= pool.size()) throw Error("degenerate split: --split leaves a calibration half empty");
    const auto perm = seeded_permutation(pool.size(), derive_seed(seed, "split"));
    std::vector<std::size_t> a, b;
    for (std::size_t i = 0; i < pool.size(); ++i) (i < n1 ? a : b).push_back(pool[perm[i]]);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    return {a, b};
  }
  if (split.empty()) throw Error("residual file has no split column; pass --split FRACTION");
  auto a = rows_labeled(split, {"cal1"});
  auto b = rows_labeled(split, {"cal2"});
  if (a.empty() || b.empty()) throw Error("residual file needs rows labeled cal1 and cal2, or pass --split FRACTION");
  return {a, b};
}

inline TrajectoryResiduals select_taus(const TrajectoryResiduals& z, const std::vector<int>& taus) {
  if (taus.empty()) return z;
  std::vector<ResidualSet> steps;
  for (int tau : taus) {
    const auto it = std::find(z.taus.begin(), z.taus.end(), tau);
    if (it == z.taus.end()) throw Error("tau=" + std::to_string(tau) + " is not present in the residual file");
    steps.push_back(z.steps[static_cast<std::size_t>(it - z.taus.begin())]);
  }
  return {taus, std::move(steps)};
}

inline std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  for (const auto& cell : cpr::detail::split_csv_line(text)) {
    const double v = cpr::detail::parse_double(cell);
    if (v != std::floor(v) || v < 1.0) throw Error("expected a list of positive integers, got '" + text + "'");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// simulate

inline int cmd_simulate(const SimulateOptions& o, std::ostream& out) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(o.out, ec);
  if (ec) throw Error("cannot create output directory '" + o.out + "': " + ec.message());
  const fs::path dir(o.out);

  if (o.scenario == "intersection") {
    const auto ds = scenario::gen_intersection_dataset(o.n, o.seed, o.params);
    const int tau = o.tau > 0 ? o.tau : o.params.horizon_steps;
    std::ostringstream traj, res, all;
    scenario::write_trajectory_csv(traj, ds);
    write_residual_csv(res, ds.residuals_at(tau), ds.split);
    std::vector<int> taus(static_cast<std::size_t>(o.params.horizon_steps));
    std::iota(taus.begin(), taus.end(), 1);
    write_trajectory_residual_csv(all, ds.trajectory_residuals(taus), ds.split);
    detail::write_text((dir / "trajectories.csv").string(), traj.str());
    detail::write_text((dir / "residuals.csv").string(), res.str());
    detail::write_text((dir / "residuals_ts.csv").string(), all.str());
    out << "wrote " << ds.size() << " trajectories to " << o.out << " (residuals.csv at tau=" << tau << ")\n";
  } else if (o.scenario == "mixture") {
    const auto spec = scenario::symmetric_mixture(o.modes, o.separation, o.sigma);
    const auto z = scenario::gen_multimodal_residuals(o.n, o.seed, spec);
    std::ostringstream res;
    write_residual_csv(res, z, scenario::default_split_labels(o.n));
    detail::write_text((dir / "residuals.csv").string(), res.str());
    out << "wrote " << o.n << " residuals from a " << o.modes << "-mode mixture to " << o.out << "\n";
  } else {
    throw Error("unknown scenario '" + o.scenario + "' (expected intersection or mixture)");
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// fit

inline int cmd_fit(const FitOptions& o, std::ostream& out, std::ostream& err) {
  const Config cfg = o.fit.config(o.seed);
  RunReport rep;
  bool bounded = true;

  if (!o.timeseries) {
    const auto data = detail::load_residuals(o.residuals);
    const auto [i1, i2] =
        detail::choose_split(data.split, static_cast<std::size_t>(data.residuals.count()), o.split, o.seed);
    CalibrationSplit split{data.residuals.subset(i1), data.residuals.subset(i2), i1, i2, o.seed};
    const auto fr = fit_pipeline(split, cfg);
    detail::write_text(o.out, detail::dump(region_to_json(fr.region)));

    rep.K = {fr.report.K};
    rep.seconds = {fr.report.seconds};
    rep.warnings = fr.report.warnings;
    const auto base = l2_baseline(split.cal2, cfg.delta, &rep.warnings);
    if (fr.region.dim() <= 3) rep.region_volume = region_volume(fr.region, o.volume_cells);
    rep.baseline_volume = base.volume();
    rep.extra = {{"template", to_string(cfg.shape_template)},
                 {"delta", cfg.delta},
                 {"C", threshold_to_json(fr.region.C())},
                 {"n1", split.cal1.count()},
                 {"n2", split.cal2.count()},
                 {"kde_bandwidth", fr.report.kde_bandwidth},
                 {"ms_bandwidth", fr.report.ms_bandwidth},
                 {"grid_cells", fr.report.grid_cells},
                 {"selected_cells", fr.report.selected_cells},
                 {"baseline_radius", detail::number(base.radius)}};
    bounded = fr.region.bounded();
    out << "K=" << fr.report.K << " C=" << cpr::detail::format_double(fr.region.C()) << " -> " << o.out << "\n";
  } else {
    const auto data = detail::load_trajectories(o.residuals);
    const auto z = detail::select_taus(data.residuals, o.taus);
    const auto [i1, i2] = detail::choose_split(data.split, static_cast<std::size_t>(z.count()), o.split, o.seed);
    const auto cal1 = z.subset(i1);
    const auto cal2 = z.subset(i2);
    const auto model = ts_fit(cal1, cfg);
    cpr::detail::Stopwatch clock;
    const auto region = ts_calibrate(model, cal2, cfg.delta, &rep.warnings);
    const double calib_seconds = clock.lap();
    detail::write_text(o.out, detail::dump(ts_region_to_json(region)));

    auto betas = nlohmann::json::array();
    for (std::size_t t = 0; t < model.steps.size(); ++t) {
      rep.K.push_back(model.reports[t].K);
      rep.seconds.push_back(model.reports[t].seconds);
      for (const auto& w : model.reports[t].warnings) rep.warnings.push_back("tau=" + std::to_string(z.taus[t]) + ": " + w);
      betas.push_back(model.steps[t].beta);
    }
    rep.seconds.back().calibration = calib_seconds;
    const auto base = ts_l2_baseline(cal1, cal2, cfg.delta, &rep.warnings);
    if (z.dim() <= 3) rep.region_volume = ts_region_volume(region, o.volume_cells);
    rep.baseline_volume = base.total_volume();
    rep.extra = {{"template", to_string(cfg.shape_template)},
                 {"delta", cfg.delta},
                 {"C", threshold_to_json(region.C())},
                 {"taus", z.taus},
                 {"beta", std::move(betas)},
                 {"n1", cal1.count()},
                 {"n2", cal2.count()}};
    bounded = region.bounded();
    out << "steps=" << z.horizon() << " C=" << cpr::detail::format_double(region.C()) << " -> " << o.out << "\n";
  }

  for (const auto& w : rep.warnings) err << "warning: " << w << "\n";
  if (!o.report.empty()) detail::write_text(o.report, detail::dump(rep.to_json(o.timings)));
  if (!bounded) {
    err << "warning: calibrated threshold is +inf; the region covers everything\n";
    return kExitUnbounded;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

inline int cmd_eval(const EvalOptions& o, std::ostream& out) {
  const auto j = detail::parse_json_file(o.region);
  RunReport rep;
  bool bounded = true;

  if (j.contains("steps")) {
    const auto region = ts_region_from_json(j);
    std::vector<int> taus;
    for (const auto& s : region.steps()) taus.push_back(s.tau);
    const auto data = detail::load_trajectories(o.test);
    const auto z = detail::select_taus(data.residuals, taus);
    const auto dim = shape_dim(region.steps().front().shapes.front().shape);
    if (z.dim() != dim) throw Error("test residuals have dimension " + std::to_string(z.dim()) + ", region has " + std::to_string(dim));

    const auto test = data.split.empty() ? z : z.subset(detail::rows_labeled(data.split, {"test"}));
    if (test.steps.empty() || test.count() == 0) throw Error("no test trajectories in '" + o.test + "'");
    rep.coverage = scenario::coverage_eval([&](const std::vector<Vector>& v) { return ts_region_contains_residual(region, v); }, test);
    if (dim <= 3) rep.region_volume = ts_region_volume(region, o.volume_cells);
    const auto i1 = detail::rows_labeled(data.split, {"cal1"});
    const auto i2 = detail::rows_labeled(data.split, {"cal2"});
    if (!i1.empty() && !i2.empty()) {
      const auto base = ts_l2_baseline(z.subset(i1), z.subset(i2), region.delta(), &rep.warnings);
      rep.baseline_volume = base.total_volume();
      rep.extra["baseline_coverage"] = scenario::coverage_eval([&](const std::vector<Vector>& v) { return base.contains_residual(v); }, test);
    }
    if (o.reshuffles > 0) {
      if (i2.empty()) throw Error("--reshuffles needs rows labeled cal2 in the test file");
      auto pool = ts_joint_scores(region.steps(), z.subset(i2));
      const auto ts = ts_joint_scores(region.steps(), test);
      pool.insert(pool.end(), ts.begin(), ts.end());
      rep.extra["reshuffle"] = detail::reshuffle_summary(
          reshuffle_coverage(pool, i2.size(), region.delta(), o.reshuffles, derive_seed(o.seed, "eval")));
    }
    for (const auto& s : region.steps()) rep.K.push_back(s.shapes.size());
    rep.extra["C"] = threshold_to_json(region.C());
    rep.extra["n_test"] = test.count();
    bounded = region.bounded();
  } else {
    const auto region = region_from_json(j);
    const auto data = detail::load_residuals(o.test);
    if (data.residuals.dim() != region.dim())
      throw Error("test residuals have dimension " + std::to_string(data.residuals.dim()) + ", region has " +
                  std::to_string(region.dim()));
    const auto test_idx = detail::rows_labeled(data.split, {"test"});
    if (!data.split.empty() && test_idx.empty()) throw Error("no rows labeled test in '" + o.test + "'");
    const auto test = data.split.empty() ? data.residuals : data.residuals.subset(test_idx);
    rep.coverage = scenario::coverage_eval([&](const Vector& v) { return region.contains_residual(v); }, test);
    if (region.dim() <= 3) rep.region_volume = region_volume(region, o.volume_cells);
    const auto cal2 = rows_with_label(data, "cal2");
    if (cal2) {
      const auto base = l2_baseline(*cal2, region.delta(), &rep.warnings);
      rep.baseline_volume = base.volume();
      rep.extra["baseline_radius"] = detail::number(base.radius);
      rep.extra["baseline_coverage"] = scenario::coverage_eval([&](const Vector& v) { return base.contains_residual(v); }, test);
    }
    if (o.reshuffles > 0) {
      if (!cal2) throw Error("--reshuffles needs rows labeled cal2 in the test file");
      auto pool = joint_scores(region.shapes(), *cal2);
      const auto ts = joint_scores(region.shapes(), test);
      pool.insert(pool.end(), ts.begin(), ts.end());
      rep.extra["reshuffle"] = detail::reshuffle_summary(reshuffle_coverage(
          pool, static_cast<std::size_t>(cal2->count()), region.delta(), o.reshuffles, derive_seed(o.seed, "eval")));
    }
    rep.K = {region.K()};
    rep.extra["C"] = threshold_to_json(region.C());
    rep.extra["n_test"] = test.count();
    bounded = region.bounded();
  }

  const auto text = detail::dump(rep.to_json(false));
  if (o.out.empty()) {
    out << text;
  } else {
    detail::write_text(o.out, text);
  }
  return bounded ? kExitOk : kExitUnbounded;
}

// ---------------------------------------------------------------------------
// plot

namespace detail {

using Polyline = std::vector<Eigen::Vector2d>;

/// Boundary of {f <= t} for a 2-D shape, or nothing when the set is empty.
inline std::optional<Polyline> boundary(const Ellipsoid& e, double t) {
  const double level = 1.0 + t;
  if (!(level > 0.0)) return std::nullopt;
  const Eigen::Matrix2d L = Eigen::Matrix2d(e.Q).llt().matrixL();
  const Eigen::Matrix2d M = L.transpose().inverse() * std::sqrt(level);
  Polyline out;
  constexpr int segments = 96;
  for (int k = 0; k < segments; ++k) {
    const double a = 2.0 * std::numbers::pi * k / segments;
    out.push_back(Eigen::Vector2d(e.c(0), e.c(1)) + M * Eigen::Vector2d(std::cos(a), std::sin(a)));
  }
  return out;
}

inline std::optional<Polyline> boundary(const HyperRect& r, double t) {
  const Eigen::Vector2d lo(r.lo(0) - t, r.lo(1) - t), hi(r.hi(0) + t, r.hi(1) + t);
  if (lo(0) > hi(0) || lo(1) > hi(1)) return std::nullopt;
  return Polyline{lo, {hi(0), lo(1)}, hi, {lo(0), hi(1)}};
}

inline std::optional<Polyline> boundary(const ConvexHull& h, double t) {
  const Vector rhs = h.b.array() + t;
  const double tol = 1e-9 * (1.0 + rhs.cwiseAbs().maxCoeff());
  Polyline pts;
  for (Eigen::Index i = 0; i < h.A.rows(); ++i)
    for (Eigen::Index j = i + 1; j < h.A.rows(); ++j) {
      Eigen::Matrix2d M;
      M << h.A(i, 0), h.A(i, 1), h.A(j, 0), h.A(j, 1);
      if (std::abs(M.determinant()) < 1e-12) continue;
      const Eigen::Vector2d x = M.partialPivLu().solve(Eigen::Vector2d(rhs(i), rhs(j)));
      if (((h.A * Vector(x) - rhs).array() <= tol).all()) pts.push_back(x);
    }
  if (pts.size() < 3) return std::nullopt;
  Eigen::Vector2d mid = Eigen::Vector2d::Zero();
  for (const auto& p : pts) mid += p;
  mid /= static_cast<double>(pts.size());
  std::sort(pts.begin(), pts.end(), [&](const auto& a, const auto& b) {
    return std::atan2(a(1) - mid(1), a(0) - mid(0)) < std::atan2(b(1) - mid(1), b(0) - mid(0));
  });
  Polyline out;
  for (const auto& p : pts)
    if (out.empty() || (p - out.back()).norm() > tol) out.push_back(p);
  if (out.size() > 1 && (out.front() - out.back()).norm() <= tol) out.pop_back();
  return out;
}

inline std::optional<Polyline> boundary(const Shape& s, double t) {
  return std::visit([&](const auto& v) { return boundary(v, t); }, s);
}

struct Panel {
  std::string title;
  std::optional<Matrix> points;
  std::vector<NormalizedShape> shapes;
  double C = 0.0;  // threshold on alpha * f for this panel
  std::optional<double> baseline_radius;
};

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string render_svg(const std::vector<Panel>& panels, int size) {
  const int header = 28;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size * static_cast<int>(panels.size()) << "\" height=\""
      << size + header << "\" font-family=\"sans-serif\" font-size=\"13\">\n";
  svg << "<style>.pt{fill:#4a6fa5;fill-opacity:0.35}.fit{fill:none;stroke:#444;stroke-dasharray:4 3}"
         ".region{fill:#e07b39;fill-opacity:0.15;stroke:#e07b39;stroke-width:2}"
         ".baseline{fill:none;stroke:#2a9d4b;stroke-width:1.5}</style>\n";

  for (std::size_t k = 0; k < panels.size(); ++k) {
    const auto& pn = panels[k];
    std::vector<std::pair<std::string, Polyline>> paths;
    for (const auto& s : pn.shapes) {
      if (auto b = boundary(s.shape, 0.0)) paths.emplace_back("fit", std::move(*b));
      if (std::isfinite(pn.C))
        if (auto b = boundary(s.shape, pn.C / s.alpha)) paths.emplace_back("region", std::move(*b));
    }

    Eigen::Vector2d lo = Eigen::Vector2d::Constant(kInf), hi = Eigen::Vector2d::Constant(-kInf);
    auto grow = [&](const Eigen::Vector2d& p) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    };
    if (pn.points)
      for (Eigen::Index i = 0; i < pn.points->rows(); ++i) grow(pn.points->row(i).transpose());
    for (const auto& [cls, poly] : paths)
      for (const auto& p : poly) grow(p);
    if (pn.baseline_radius && std::isfinite(*pn.baseline_radius)) {
      grow(Eigen::Vector2d::Constant(-*pn.baseline_radius));
      grow(Eigen::Vector2d::Constant(*pn.baseline_radius));
    }
    if (!std::isfinite(lo(0))) lo = hi = Eigen::Vector2d::Zero();
    const Eigen::Vector2d centre = 0.5 * (lo + hi);
    const double span = std::max(1e-9, 1.1 * (hi - lo).maxCoeff());
    const double scale = (size - 20) / span;
    auto px = [&](const Eigen::Vector2d& p) {
      return Eigen::Vector2d(size / 2.0 + (p(0) - centre(0)) * scale, size / 2.0 - (p(1) - centre(1)) * scale);
    };

    svg << "<g transform=\"translate(" << size * static_cast<int>(k) << "," << header << ")\">\n";
    svg << "<rect x=\"0.5\" y=\"0.5\" width=\"" << size - 1 << "\" height=\"" << size - 1
        << "\" fill=\"white\" stroke=\"#ccc\"/>\n";
    svg << "<text x=\"" << size / 2 << "\" y=\"-8\" text-anchor=\"middle\">" << pn.title
        << (std::isfinite(pn.C) ? "" : " (C = +inf)") << "</text>\n";
    if (pn.points) {
      svg << "<g class=\"pt\">\n";
      for (Eigen::Index i = 0; i < pn.points->rows(); ++i) {
        const auto q = px(pn.points->row(i).transpose());
        svg << "<circle cx=\"" << fmt(q(0)) << "\" cy=\"" << fmt(q(1)) << "\" r=\"1.5\"/>\n";
      }
      svg << "</g>\n";
    }
    for (const auto& [cls, poly] : paths) {
      svg << "<path class=\"" << cls << "\" d=\"";
      for (std::size_t i = 0; i < poly.size(); ++i) {
        const auto q = px(poly[i]);
        svg << (i ? " L" : "M") << fmt(q(0)) << "," << fmt(q(1));
      }
      svg << " Z\"/>\n";
    }
    if (pn.baseline_radius && std::isfinite(*pn.baseline_radius)) {
      const auto q = px(Eigen::Vector2d::Zero());
      svg << "<circle class=\"baseline\" cx=\"" << fmt(q(0)) << "\" cy=\"" << fmt(q(1)) << "\" r=\""
          << fmt(*pn.baseline_radius * scale) << "\"/>\n";
    }
    svg << "</g>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace detail

inline int cmd_plot(const PlotOptions& o, std::ostream& out) {
  const auto j = detail::parse_json_file(o.region);
  std::vector<detail::Panel> panels;
  bool bounded = true;

  if (j.contains("steps")) {
    const auto region = ts_region_from_json(j);
    bounded = region.bounded();
    std::vector<int> all;
    for (const auto& s : region.steps()) all.push_back(s.tau);
    const auto taus = o.taus.empty() ? all : o.taus;

    std::optional<LabeledTrajectoryResiduals> data;
    std::optional<TsL2Baseline> base;
    std::optional<TrajectoryResiduals> z;
    if (!o.residuals.empty()) {
      data = detail::load_trajectories(o.residuals);
      z = detail::select_taus(data->residuals, all);
      const auto i1 = detail::rows_labeled(data->split, {"cal1"});
      const auto i2 = detail::rows_labeled(data->split, {"cal2"});
      if (!i1.empty() && !i2.empty()) base = ts_l2_baseline(z->subset(i1), z->subset(i2), region.delta());
    }
    for (int tau : taus) {
      const auto it = std::find(all.begin(), all.end(), tau);
      if (it == all.end()) throw Error("tau=" + std::to_string(tau) + " is not a step of the region");
      const auto t = static_cast<std::size_t>(it - all.begin());
      const auto& step = region.steps()[t];
      if (shape_dim(step.shapes.front().shape) != 2) throw Error("plotting requires 2-D");
      detail::Panel pn{"tau = " + std::to_string(tau), std::nullopt, step.shapes,
                       bounded ? region.C() / step.beta : kInf, std::nullopt};
      if (z) {
        const auto test = detail::rows_labeled(data->split, {"test"});
        pn.points = test.empty() ? z->steps[t].points() : z->steps[t].subset(test).points();
      }
      if (base) pn.baseline_radius = base->radii[t];
      panels.push_back(std::move(pn));
    }
  } else {
    const auto region = region_from_json(j);
    if (region.dim() != 2) throw Error("plotting requires 2-D");
    bounded = region.bounded();
    detail::Panel pn{"K = " + std::to_string(region.K()), std::nullopt, region.shapes(), region.C(), std::nullopt};
    if (!o.residuals.empty()) {
      const auto data = detail::load_residuals(o.residuals);
      if (data.residuals.dim() != 2) throw Error("plotting requires 2-D");
      const auto test = rows_with_label(data, "test");
      pn.points = test ? test->points() : data.residuals.points();
      if (const auto cal2 = rows_with_label(data, "cal2")) pn.baseline_radius = l2_baseline(*cal2, region.delta()).radius;
    }
    panels.push_back(std::move(pn));
  }

  detail::write_text(o.out, detail::render_svg(panels, o.panel_size));
  out << "wrote " << panels.size() << " panel(s) to " << o.out << "\n";
  return bounded ? kExitOk : kExitUnbounded;
}

// ---------------------------------------------------------------------------
// Entry point

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Multi-modal conformal prediction regions from fitted shape templates"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value configuration file; command-line flags take precedence");

  auto add_seed = [](CLI::App* sub, std::uint64_t& seed) {
    sub->add_option("--seed", seed, "Random seed")->envname("CR_SEED");
  };

  SimulateOptions sim;
  auto* s = app.add_subcommand("simulate", "Generate trajectory and residual CSV files");
  s->add_option("--scenario", sim.scenario, "intersection or mixture")->check(CLI::IsMember({"intersection", "mixture"}));
  s->add_option("--n", sim.n, "Number of trajectories or residuals")->check(CLI::Range(3, 100000000));
  s->add_option("--out", sim.out, "Output directory");
  s->add_option("--tau", sim.tau, "Step written to residuals.csv (default: last)")->check(CLI::NonNegativeNumber);
  s->add_option("--speed-min", sim.params.speed_min, "Minimum speed, m/s");
  s->add_option("--speed-max", sim.params.speed_max, "Maximum speed, m/s");
  s->add_option("--noise", sim.params.noise_sigma, "Position noise std, m")->check(CLI::NonNegativeNumber);
  s->add_option("--horizon", sim.params.horizon_steps, "Future steps")->check(CLI::PositiveNumber);
  s->add_option("--modes", sim.modes, "Mixture components")->check(CLI::PositiveNumber);
  s->add_option("--separation", sim.separation, "Distance between adjacent mixture means")->check(CLI::NonNegativeNumber);
  s->add_option("--sigma", sim.sigma, "Mixture component std")->check(CLI::PositiveNumber);
  add_seed(s, sim.seed);

  auto add_fit_settings = [](CLI::App* sub, FitSettings& f) {
    sub->add_option("--delta", f.delta, "Miscoverage level in (0,1)")->check(CLI::Range(0.0, 1.0));
    sub->add_option("--template", f.shape_template, "ellipsoid, convexhull or hyperrect")
        ->check(CLI::IsMember({"ellipsoid", "convexhull", "hyperrect"}));
    sub->add_option("--grid-cells", f.grid_cells, "Density grid cells per dimension")->check(CLI::PositiveNumber);
    sub->add_option("--grid-padding", f.grid_padding, "Grid padding in KDE bandwidths")->check(CLI::NonNegativeNumber);
    sub->add_option("--kde-adjust", f.kde_adjust, "Silverman bandwidth multiplier")->check(CLI::PositiveNumber);
    sub->add_option("--ms-quantile", f.ms_quantile, "Mean-shift bandwidth quantile")->check(CLI::Range(0.0, 1.0));
    sub->add_option("--ellipsoid-budget", f.ellipsoid_budget, "CMA-ES evaluations per ellipsoid")->check(CLI::PositiveNumber);
  };

  FitOptions fit;
  std::string fit_taus;
  auto* f = app.add_subcommand("fit", "Fit and calibrate a region from residuals");
  f->add_option("--residuals", fit.residuals, "Residual CSV")->required();
  f->add_option("--out", fit.out, "Region JSON output");
  f->add_option("--report", fit.report, "Run report JSON output");
  f->add_option("--split", fit.split, "Redraw cal1/cal2 with this cal1 fraction")->check(CLI::Range(0.0, 1.0));
  f->add_flag("--timeseries", fit.timeseries, "Residual file is long format (traj_id,tau,z...)");
  f->add_option("--taus", fit_taus, "Comma-separated steps to fit (time series)");
  f->add_option("--volume-cells", fit.volume_cells, "Grid cells per dimension for volume estimates")->check(CLI::PositiveNumber);
  f->add_flag("--timings", fit.timings, "Include wall times in the report");
  add_fit_settings(f, fit.fit);
  add_seed(f, fit.seed);

  EvalOptions ev;
  auto* e = app.add_subcommand("eval", "Coverage, volume and L2-baseline comparison");
  e->add_option("--region", ev.region, "Region JSON")->required();
  e->add_option("--test", ev.test, "Residual CSV (rows labeled test are evaluated; cal2 rows feed the baseline)")->required();
  e->add_option("--out", ev.out, "Report JSON output (default: stdout)");
  e->add_option("--reshuffles", ev.reshuffles, "Redraw cal2/test partitions this many times")->check(CLI::NonNegativeNumber);
  e->add_option("--volume-cells", ev.volume_cells, "Grid cells per dimension for volume estimates")->check(CLI::PositiveNumber);
  add_seed(e, ev.seed);

  PlotOptions pl;
  std::string plot_taus;
  auto* p = app.add_subcommand("plot", "Render a 2-D region as SVG");
  p->add_option("--region", pl.region, "Region JSON")->required();
  p->add_option("--residuals", pl.residuals, "Residual CSV to scatter (and for the L2 baseline)");
  p->add_option("--out", pl.out, "SVG output");
  p->add_option("--tau", plot_taus, "Comma-separated steps to draw (time series)");
  p->add_option("--panel-size", pl.panel_size, "Panel width in pixels")->check(CLI::Range(100, 4000));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (s->parsed()) return cmd_simulate(sim, out);
    if (f->parsed()) {
      if (!fit_taus.empty()) fit.taus = detail::parse_int_list(fit_taus);
      return cmd_fit(fit, out, err);
    }
    if (e->parsed()) return cmd_eval(ev, out);
    if (p->parsed()) {
      if (!plot_taus.empty()) pl.taus = detail::parse_int_list(plot_taus);
      return cmd_plot(pl, out);
    }
  } catch (const Error& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const nlohmann::json::exception& ex) {
    err << "error: malformed JSON: " << ex.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("cpr");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace cpr::cli

#endif  // CPR_CLI_HPP_
