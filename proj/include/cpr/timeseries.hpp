// Multi-step prediction regions. Each future step tau gets its own
// shape model; step scores are rescaled by beta_tau and combined with a max,
// so one calibrated threshold covers all steps simultaneously.

#ifndef CPR_TIMESERIES_HPP_
#define CPR_TIMESERIES_HPP_

#include "cpr/conformal.hpp"
#include "cpr/core.hpp"

#include "json.hpp"

#include <cmath>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace cpr {

/// Residuals of n trajectories at a set of future steps; steps[t] holds the
/// n x p residuals at step taus[t], rows aligned across steps.
struct TrajectoryResiduals {
  std::vector<int> taus;
  std::vector<ResidualSet> steps;

  TrajectoryResiduals() = default;
  TrajectoryResiduals(std::vector<int> t, std::vector<ResidualSet> s) : taus(std::move(t)), steps(std::move(s)) {
    if (taus.empty() || taus.size() != steps.size()) throw Error("trajectory residuals: taus/steps mismatch");
    for (const auto& st : steps)
      if (st.count() != steps.front().count() || st.dim() != steps.front().dim())
        throw Error("trajectory residuals: all steps must share count and dimension");
  }

  [[nodiscard]] Eigen::Index count() const { return steps.front().count(); }
  [[nodiscard]] Eigen::Index dim() const { return steps.front().dim(); }
  [[nodiscard]] std::size_t horizon() const { return steps.size(); }

  [[nodiscard]] TrajectoryResiduals subset(const std::vector<std::size_t>& index) const {
    std::vector<ResidualSet> s;
    for (const auto& st : steps) s.push_back(st.subset(index));
    return {taus, std::move(s)};
  }

  /// Residual trajectory i as one vector per step.
  [[nodiscard]] std::vector<Vector> trajectory(Eigen::Index i) const {
    std::vector<Vector> out;
    for (const auto& st : steps) out.push_back(st.point(i));
    return out;
  }
};

struct TimeSeriesStep {
  int tau = 0;
  double beta = 1.0;
  std::vector<NormalizedShape> shapes;
};

struct TimeSeriesModel {
  std::vector<TimeSeriesStep> steps;
  std::vector<FitReport> reports;
};

namespace detail {

inline double step_score(const TimeSeriesStep& s, const Eigen::Ref<const Vector>& z) { return s.beta * joint_score(s.shapes, z); }

inline double max_step_score(const std::vector<TimeSeriesStep>& steps, const std::vector<Vector>& z) {
  if (z.size() != steps.size()) throw Error("trajectory length does not match the region horizon");
  double worst = -kInf;
  for (std::size_t t = 0; t < steps.size(); ++t) worst = std::max(worst, step_score(steps[t], z[t]));
  return worst;
}

}  // namespace detail

class TimeSeriesRegion {
 public:
  TimeSeriesRegion(std::vector<TimeSeriesStep> steps, double C, double delta, std::size_t n2)
      : steps_(std::move(steps)), C_(C), delta_(delta), n2_(n2) {
    if (steps_.empty()) throw Error("time-series region needs at least one step");
    if (!(delta > 0.0 && delta < 1.0)) throw Error("delta must lie in (0,1)");
    if (std::isnan(C) || C == -kInf) throw Error("threshold C must be a number or +inf");
    for (const auto& s : steps_)
      if (!(s.beta > 0.0) || !std::isfinite(s.beta)) throw Error("beta must be positive and finite");
  }

  [[nodiscard]] const std::vector<TimeSeriesStep>& steps() const { return steps_; }
  [[nodiscard]] double C() const { return C_; }
  [[nodiscard]] double delta() const { return delta_; }
  [[nodiscard]] std::size_t n2() const { return n2_; }
  [[nodiscard]] bool bounded() const { return std::isfinite(C_); }

  /// Per-step region {z | alpha_k f_k(z) <= C / beta_tau for some k}.
  [[nodiscard]] ConformalRegion step_region(std::size_t t) const {
    const auto& s = steps_.at(t);
    return ConformalRegion(s.shapes, bounded() ? C_ / s.beta : kInf, delta_, n2_);
  }

 private:
  std::vector<TimeSeriesStep> steps_;
  double C_;
  double delta_;
  std::size_t n2_;
};

/// Independent per-step pipelines on D_cal,1 followed by beta_tau from each
/// step's joint scores (same quantile convention as alpha_k).
inline TimeSeriesModel ts_fit(const TrajectoryResiduals& cal1, const Config& cfg) {
  TimeSeriesModel model;
  for (std::size_t t = 0; t < cal1.horizon(); ++t) {
    const int tau = cal1.taus[t];
    try {
      Config step_cfg = cfg;
      step_cfg.seed = derive_seed(cfg.seed, "tau", static_cast<std::uint64_t>(tau));
      FitReport report;
      auto shapes = fit_shapes(cal1.steps[t], step_cfg, &report).shapes;
      const auto scores = joint_scores(shapes, cal1.steps[t]);
      const double beta = normalization_constant(scores, cfg.delta, &report.warnings);
      model.steps.push_back({tau, beta, std::move(shapes)});
      model.reports.push_back(std::move(report));
    } catch (const Error& e) {
      throw Error("tau=" + std::to_string(tau) + ": " + e.what());
    }
  }
  return model;
}

/// max_tau beta_tau * min_k alpha_{tau,k} f_{tau,k}(z_tau)
inline double ts_joint_score(const TimeSeriesRegion& region, const std::vector<Vector>& z) {
  return detail::max_step_score(region.steps(), z);
}

inline double ts_joint_score(const TimeSeriesModel& model, const std::vector<Vector>& z) {
  return detail::max_step_score(model.steps, z);
}

inline std::vector<double> ts_joint_scores(const std::vector<TimeSeriesStep>& steps, const TrajectoryResiduals& z) {
  if (z.horizon() != steps.size()) throw Error("trajectory length does not match the region horizon");
  std::vector<double> out(static_cast<std::size_t>(z.count()), -kInf);
  for (std::size_t t = 0; t < steps.size(); ++t)
    for (Eigen::Index i = 0; i < z.count(); ++i) {
      auto& o = out[static_cast<std::size_t>(i)];
      o = std::max(o, detail::step_score(steps[t], z.steps[t].points().row(i).transpose()));
    }
  return out;
}

inline TimeSeriesRegion ts_calibrate(const TimeSeriesModel& model, const TrajectoryResiduals& cal2, double delta,
                                     Warnings* warnings = nullptr) {
  const double C = conformal_quantile(ts_joint_scores(model.steps, cal2), delta, warnings);
  return TimeSeriesRegion(model.steps, C, delta, static_cast<std::size_t>(cal2.count()));
}

/// Every step's residual lies in its inflated per-step union:
/// for all tau there is k with beta_tau alpha_k f_k(z_tau) <= C.
inline bool ts_region_contains_residual(const TimeSeriesRegion& region, const std::vector<Vector>& z) {
  const auto& steps = region.steps();
  if (z.size() != steps.size()) throw Error("trajectory length does not match the region horizon");
  if (!region.bounded()) return true;
  for (std::size_t t = 0; t < steps.size(); ++t) {
    bool inside = false;
    for (const auto& s : steps[t].shapes)
      if (steps[t].beta * (s.alpha * shape_score(s.shape, z[t])) <= region.C()) {
        inside = true;
        break;
      }
    if (!inside) return false;
  }
  return true;
}

inline bool ts_region_contains(const TimeSeriesRegion& region, const std::vector<Vector>& y,
                               const std::vector<Vector>& y_hat) {
  if (y_hat.size() != y.size()) throw Error("trajectory length mismatch");
  std::vector<Vector> z;
  for (std::size_t t = 0; t < y.size(); ++t) z.push_back(y[t] - y_hat[t]);
  return ts_region_contains_residual(region, z);
}

/// Sum of the per-step region volumes.
inline double ts_region_volume(const TimeSeriesRegion& region, int cells_per_dim) {
  if (!region.bounded()) return kInf;
  double total = 0.0;
  for (std::size_t t = 0; t < region.steps().size(); ++t) total += region_volume(region.step_region(t), cells_per_dim);
  return total;
}

/// Max-normalized L2 baseline: per-step balls of radius C / beta_tau.
struct TsL2Baseline {
  std::vector<double> betas;
  std::vector<double> radii;
  double C = 0.0;
  Eigen::Index dim = 0;

  [[nodiscard]] double total_volume() const {
    double v = 0.0;
    for (double r : radii) v += L2Baseline{r, dim}.volume();
    return v;
  }
  [[nodiscard]] bool contains_residual(const std::vector<Vector>& z) const {
    if (z.size() != radii.size()) throw Error("trajectory length does not match the baseline horizon");
    if (!std::isfinite(C)) return true;
    for (std::size_t t = 0; t < z.size(); ++t)
      if (betas[t] * z[t].norm() > C) return false;
    return true;
  }
};

inline TsL2Baseline ts_l2_baseline(const TrajectoryResiduals& cal1, const TrajectoryResiduals& cal2, double delta,
                                   Warnings* warnings = nullptr) {
  if (cal1.horizon() != cal2.horizon()) throw Error("ts_l2_baseline: horizon mismatch");
  TsL2Baseline out;
  out.dim = cal1.dim();
  for (const auto& st : cal1.steps) {
    std::vector<double> norms(static_cast<std::size_t>(st.count()));
    for (Eigen::Index i = 0; i < st.count(); ++i) norms[static_cast<std::size_t>(i)] = st.points().row(i).norm();
    out.betas.push_back(normalization_constant(norms, delta, warnings));
  }
  std::vector<double> scores(static_cast<std::size_t>(cal2.count()), -kInf);
  for (std::size_t t = 0; t < cal2.horizon(); ++t)
    for (Eigen::Index i = 0; i < cal2.count(); ++i) {
      auto& s = scores[static_cast<std::size_t>(i)];
      s = std::max(s, out.betas[t] * cal2.steps[t].points().row(i).norm());
    }
  out.C = conformal_quantile(std::move(scores), delta, warnings);
  for (double b : out.betas) out.radii.push_back(out.C / b);
  return out;
}

// ---------------------------------------------------------------------------
// Long-format residual CSV: traj_id,tau,z0,...,z{p-1}[,split], one row per
// (trajectory, step). Every trajectory must list the same steps.

struct LabeledTrajectoryResiduals {
  TrajectoryResiduals residuals;
  std::vector<long long> traj_ids;  // ascending
  std::vector<std::string> split;   // per trajectory; empty when unlabeled

  /// Trajectories whose split label equals `label`.
  [[nodiscard]] std::optional<TrajectoryResiduals> with_label(std::string_view label) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < split.size(); ++i)
      if (split[i] == label) idx.push_back(i);
    if (idx.empty()) return std::nullopt;
    return residuals.subset(idx);
  }
};

inline LabeledTrajectoryResiduals read_trajectory_residual_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error("trajectory residual CSV is empty");
  const auto header = detail::split_csv_line(line);
  if (header.size() < 3 || header[0] != "traj_id" || header[1] != "tau")
    throw Error("trajectory residual CSV header must start with traj_id,tau");
  std::size_t p = 0;
  int split_col = -1;
  for (std::size_t c = 2; c < header.size(); ++c) {
    if (header[c] == "split" && split_col < 0) {
      split_col = static_cast<int>(c);
    } else if (header[c] == "z" + std::to_string(p) && split_col < 0) {
      ++p;
    } else {
      throw Error("unexpected trajectory residual CSV column '" + header[c] + "'");
    }
  }
  if (p == 0) throw Error("trajectory residual CSV has no z columns");

  struct Row {
    std::map<int, std::vector<double>> by_tau;
    std::string label;
  };
  std::map<long long, Row> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw Error("trajectory residual CSV row " + std::to_string(lineno) + " has mixed arity");
    const double id = detail::parse_double(cells[0]);
    const double tau = detail::parse_double(cells[1]);
    if (id != std::floor(id) || tau != std::floor(tau) || tau < 1.0)
      throw Error("trajectory residual CSV row " + std::to_string(lineno) + ": traj_id/tau must be integers, tau >= 1");
    auto& r = rows[static_cast<long long>(id)];
    std::vector<double> z;
    for (std::size_t d = 0; d < p; ++d) z.push_back(detail::parse_double(cells[2 + d]));
    if (!r.by_tau.emplace(static_cast<int>(tau), std::move(z)).second)
      throw Error("trajectory residual CSV row " + std::to_string(lineno) + ": duplicate (traj_id, tau)");
    if (split_col >= 0) {
      const auto& lab = cells[static_cast<std::size_t>(split_col)];
      if (r.by_tau.size() > 1 && lab != r.label)
        throw Error("trajectory residual CSV row " + std::to_string(lineno) + ": split label changes within a trajectory");
      r.label = lab;
    }
  }
  if (rows.empty()) throw Error("trajectory residual CSV has no rows");

  std::vector<int> taus;
  for (const auto& [tau, z] : rows.begin()->second.by_tau) taus.push_back(tau);
  std::vector<Matrix> steps(taus.size(), Matrix(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(p)));
  LabeledTrajectoryResiduals out;
  Eigen::Index i = 0;
  for (const auto& [id, r] : rows) {
    if (r.by_tau.size() != taus.size())
      throw Error("trajectory " + std::to_string(id) + " does not list the same steps as the others");
    std::size_t t = 0;
    for (const auto& [tau, z] : r.by_tau) {
      if (tau != taus[t]) throw Error("trajectory " + std::to_string(id) + " does not list the same steps as the others");
      for (std::size_t d = 0; d < p; ++d) steps[t](i, static_cast<Eigen::Index>(d)) = z[d];
      ++t;
    }
    out.traj_ids.push_back(id);
    if (split_col >= 0) out.split.push_back(r.label);
    ++i;
  }
  std::vector<ResidualSet> sets;
  for (auto& m : steps) sets.emplace_back(std::move(m));
  out.residuals = TrajectoryResiduals(std::move(taus), std::move(sets));
  return out;
}

inline void write_trajectory_residual_csv(std::ostream& out, const TrajectoryResiduals& z,
                                          const std::vector<std::string>& split = {}) {
  out << "traj_id,tau";
  for (Eigen::Index d = 0; d < z.dim(); ++d) out << ",z" << d;
  if (!split.empty()) out << ",split";
  out << '\n';
  for (Eigen::Index i = 0; i < z.count(); ++i)
    for (std::size_t t = 0; t < z.horizon(); ++t) {
      out << i << ',' << z.taus[t];
      for (Eigen::Index d = 0; d < z.dim(); ++d) out << ',' << detail::format_double(z.steps[t].points()(i, d));
      if (!split.empty()) out << ',' << split[static_cast<std::size_t>(i)];
      out << '\n';
    }
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json ts_region_to_json(const TimeSeriesRegion& r) {
  auto steps = nlohmann::json::array();
  for (const auto& s : r.steps()) steps.push_back({{"tau", s.tau}, {"beta", s.beta}, {"shapes", shapes_to_json(s.shapes)}});
  return {{"delta", r.delta()}, {"C", threshold_to_json(r.C())}, {"steps", std::move(steps)}, {"n2", r.n2()}};
}

inline TimeSeriesRegion ts_region_from_json(const nlohmann::json& j) {
  std::vector<TimeSeriesStep> steps;
  for (const auto& s : j.at("steps"))
    steps.push_back({s.at("tau").get<int>(), s.at("beta").get<double>(), shapes_from_json(s.at("shapes"))});
  return TimeSeriesRegion(std::move(steps), threshold_from_json(j.at("C")), j.at("delta").get<double>(),
                          j.value("n2", std::size_t{0}));
}

}  // namespace cpr

#endif  // CPR_TIMESERIES_HPP_
