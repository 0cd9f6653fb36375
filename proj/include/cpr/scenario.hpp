// Synthetic data: a kinematic vehicle at an intersection observed by a
// constant-turn-rate-and-velocity predictor, plus a Gaussian-mixture residual
// generator, and coverage evaluation helpers.

#ifndef CPR_SCENARIO_HPP_
#define CPR_SCENARIO_HPP_

#include "cpr/core.hpp"
#include "cpr/timeseries.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <ostream>
#include <random>
#include <string>
#include <vector>

namespace cpr::scenario {

/// Heading angle wrapped to (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  if (a > std::numbers::pi) a -= two_pi;
  return a;
}

struct VehicleState {
  double x = 0.0;      // m
  double y = 0.0;      // m
  double theta = 0.0;  // rad
  double v = 0.0;      // m/s
};

struct ControlInput {
  double omega = 0.0;  // steering angle, rad
  double a = 0.0;      // m/s^2
};

enum class Behavior { straight, left, right };

inline std::string_view to_string(Behavior b) {
  switch (b) {
    case Behavior::straight: return "straight";
    case Behavior::left: return "left";
    case Behavior::right: return "right";
  }
  return "unknown";
}

struct Trajectory {
  std::vector<VehicleState> states;  // uniform dt, initial state first
  Behavior label = Behavior::straight;
};

namespace detail {

using State4 = Eigen::Vector4d;

inline State4 pack(const VehicleState& s) { return {s.x, s.y, s.theta, s.v}; }
inline VehicleState unpack(const State4& s) { return {s(0), s(1), wrap_angle(s(2)), s(3)}; }

template <class Deriv>
State4 rk4_step(const State4& s, double dt, Deriv&& f) {
  const State4 k1 = f(s);
  const State4 k2 = f(s + 0.5 * dt * k1);
  const State4 k3 = f(s + 0.5 * dt * k2);
  const State4 k4 = f(s + dt * k3);
  return s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace detail

/// Kinematic model x' = v cos(theta), y' = v sin(theta),
/// theta' = v tan(omega) / L, v' = a, integrated with fixed-step RK4.
/// Returns the initial state followed by one state per control.
inline Trajectory simulate_vehicle(const VehicleState& s0, const std::vector<ControlInput>& controls, double dt,
                                   double wheelbase) {
  if (!(dt > 0.0)) throw Error("simulate_vehicle: dt must be positive");
  if (!(wheelbase > 0.0)) throw Error("simulate_vehicle: wheelbase must be positive");
  Trajectory traj;
  traj.states.reserve(controls.size() + 1);
  traj.states.push_back(s0);
  detail::State4 s = detail::pack(s0);
  for (const auto& u : controls) {
    if (!(std::abs(u.omega) < std::numbers::pi / 2.0)) throw Error("simulate_vehicle: |omega| must be < pi/2");
    const double tan_w = std::tan(u.omega);
    s = detail::rk4_step(s, dt, [&](const detail::State4& q) {
      return detail::State4(q(3) * std::cos(q(2)), q(3) * std::sin(q(2)), q(3) * tan_w / wheelbase, u.a);
    });
    s(3) = std::max(s(3), 0.0);
    traj.states.push_back(detail::unpack(s));
    s(2) = traj.states.back().theta;
  }
  return traj;
}

/// CTRV prediction: the turn rate is the mean heading change per second over
/// the history; the last state is rolled forward at constant turn rate and
/// speed. Returns `horizon_steps` predicted positions.
inline std::vector<Eigen::Vector2d> ctrv_predict(const std::vector<VehicleState>& history, int horizon_steps,
                                                 double dt = 0.1) {
  if (history.size() < 2) throw Error("ctrv_predict: history needs at least two states");
  if (horizon_steps < 0) throw Error("ctrv_predict: negative horizon");
  if (!(dt > 0.0)) throw Error("ctrv_predict: dt must be positive");
  double dtheta = 0.0;
  for (std::size_t i = 1; i < history.size(); ++i) dtheta += wrap_angle(history[i].theta - history[i - 1].theta);
  const double rate = dtheta / static_cast<double>(history.size() - 1) / dt;

  std::vector<Eigen::Vector2d> out;
  out.reserve(static_cast<std::size_t>(horizon_steps));
  detail::State4 s = detail::pack(history.back());
  for (int k = 0; k < horizon_steps; ++k) {
    s = detail::rk4_step(s, dt, [&](const detail::State4& q) {
      return detail::State4(q(3) * std::cos(q(2)), q(3) * std::sin(q(2)), rate, 0.0);
    });
    out.emplace_back(s(0), s(1));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Intersection scenario

struct IntersectionParams {
  double dt = 0.1;
  double wheelbase = 2.5;
  int history_steps = 5;   // 0.5 s of straight driving before the prediction time
  int horizon_steps = 50;  // 5 s of behavior after it
  double speed_min = 4.5;
  double speed_max = 5.5;
  double turn_min = 0.25;  // |steering| for left/right turns, rad
  double turn_max = 0.35;
  double straight_sigma = 0.01;  // steering drift while going straight, rad
  double noise_sigma = 0.05;     // position observation noise, m
};

struct TrajectoryDataset {
  IntersectionParams params;
  std::vector<Trajectory> trajectories;  // observed states, history first
  std::vector<std::vector<Eigen::Vector2d>> predictions;
  std::vector<Matrix> residuals;         // one n x 2 matrix per future step tau = 1..horizon
  std::vector<std::string> split;        // cal1 / cal2 / test by index

  [[nodiscard]] std::size_t size() const { return trajectories.size(); }

  [[nodiscard]] ResidualSet residuals_at(int tau) const {
    if (tau < 1 || tau > static_cast<int>(residuals.size())) throw Error("tau out of range");
    return ResidualSet(residuals[static_cast<std::size_t>(tau - 1)]);
  }

  [[nodiscard]] std::vector<std::size_t> indices_of(std::string_view part) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < split.size(); ++i)
      if (split[i] == part) idx.push_back(i);
    return idx;
  }

  [[nodiscard]] TrajectoryResiduals trajectory_residuals(const std::vector<int>& taus) const {
    std::vector<ResidualSet> steps;
    for (int tau : taus) steps.push_back(residuals_at(tau));
    return {taus, std::move(steps)};
  }
};

/// Default split labels: floor(n/3) cal1, floor(n/3) cal2, remainder test.
inline std::vector<std::string> default_split_labels(std::size_t n) {
  const std::size_t third = n / 3;
  std::vector<std::string> s(n, "test");
  for (std::size_t i = 0; i < 2 * third; ++i) s[i] = i < third ? "cal1" : "cal2";
  return s;
}

inline TrajectoryDataset gen_intersection_dataset(std::size_t n, std::uint64_t seed, const IntersectionParams& prm = {}) {
  if (n < 3) throw Error("gen_intersection_dataset: need at least three trajectories");
  if (prm.history_steps < 1 || prm.horizon_steps < 1) throw Error("gen_intersection_dataset: bad step counts");
  TrajectoryDataset ds;
  ds.params = prm;
  ds.trajectories.reserve(n);
  ds.predictions.reserve(n);
  ds.residuals.assign(static_cast<std::size_t>(prm.horizon_steps), Matrix(static_cast<Eigen::Index>(n), 2));

  for (std::size_t i = 0; i < n; ++i) {
    std::mt19937_64 rng(derive_seed(seed, "trajectory", i));
    std::uniform_int_distribution<int> pick(0, 2);
    std::uniform_real_distribution<double> speed(prm.speed_min, prm.speed_max);
    std::uniform_real_distribution<double> turn(prm.turn_min, prm.turn_max);
    std::normal_distribution<double> drift(0.0, prm.straight_sigma);
    std::normal_distribution<double> noise(0.0, prm.noise_sigma);

    const auto label = static_cast<Behavior>(pick(rng));
    const double v = speed(rng);
    const double omega0 = drift(rng);
    double omega = omega0;
    if (label == Behavior::left) omega = turn(rng);
    if (label == Behavior::right) omega = -turn(rng);

    std::vector<ControlInput> controls(static_cast<std::size_t>(prm.history_steps), ControlInput{omega0, 0.0});
    controls.resize(static_cast<std::size_t>(prm.history_steps + prm.horizon_steps), ControlInput{omega, 0.0});
    auto traj = simulate_vehicle(VehicleState{0.0, 0.0, 0.0, v}, controls, prm.dt, prm.wheelbase);
    traj.label = label;
    for (auto& s : traj.states) {
      s.x += noise(rng);
      s.y += noise(rng);
    }

    const std::vector<VehicleState> history(traj.states.begin(), traj.states.begin() + prm.history_steps + 1);
    auto pred = ctrv_predict(history, prm.horizon_steps, prm.dt);
    for (int tau = 1; tau <= prm.horizon_steps; ++tau) {
      const auto& truth = traj.states[static_cast<std::size_t>(prm.history_steps + tau)];
      const auto& p = pred[static_cast<std::size_t>(tau - 1)];
      auto& r = ds.residuals[static_cast<std::size_t>(tau - 1)];
      r(static_cast<Eigen::Index>(i), 0) = truth.x - p.x();
      r(static_cast<Eigen::Index>(i), 1) = truth.y - p.y();
    }
    ds.trajectories.push_back(std::move(traj));
    ds.predictions.push_back(std::move(pred));
  }
  ds.split = default_split_labels(n);
  return ds;
}

/// traj_id,step,x,y,theta,v,label,split with step = index - history_steps,
/// so future steps carry step = tau >= 1.
inline void write_trajectory_csv(std::ostream& out, const TrajectoryDataset& ds) {
  using cpr::detail::format_double;
  out << "traj_id,step,x,y,theta,v,label,split\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& t = ds.trajectories[i];
    for (std::size_t k = 0; k < t.states.size(); ++k) {
      const auto& s = t.states[k];
      out << i << ',' << static_cast<long>(k) - ds.params.history_steps << ',' << format_double(s.x) << ','
          << format_double(s.y) << ',' << format_double(s.theta) << ',' << format_double(s.v) << ','
          << to_string(t.label) << ',' << ds.split[i] << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Gaussian mixture residuals

struct MixtureSpec {
  std::vector<double> weights;
  std::vector<Vector> means;
  std::vector<Eigen::MatrixXd> covariances;

  void validate() const {
    if (weights.empty() || weights.size() != means.size() || weights.size() != covariances.size())
      throw Error("mixture: weights, means and covariances must have equal non-zero length");
    double total = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0)) throw Error("mixture: weights must be non-negative");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) throw Error("mixture: weights must sum to 1");
    const auto p = means.front().size();
    for (std::size_t k = 0; k < means.size(); ++k) {
      if (means[k].size() != p || covariances[k].rows() != p || covariances[k].cols() != p)
        throw Error("mixture: inconsistent component dimensions");
      if (covariances[k].llt().info() != Eigen::Success) throw Error("mixture: covariances must be positive definite");
    }
  }
};

/// `modes` isotropic components on a circle of radius `separation`/2 (two
/// modes sit `separation` apart), each with standard deviation `sigma`.
inline MixtureSpec symmetric_mixture(int modes, double separation, double sigma) {
  if (modes < 1) throw Error("mixture: need at least one mode");
  MixtureSpec spec;
  for (int k = 0; k < modes; ++k) {
    const double ang = 2.0 * std::numbers::pi * k / modes;
    Vector m(2);
    m << (modes == 1 ? 0.0 : 0.5 * separation * std::cos(ang)), (modes == 1 ? 0.0 : 0.5 * separation * std::sin(ang));
    spec.weights.push_back(1.0 / modes);
    spec.means.push_back(m);
    spec.covariances.push_back(sigma * sigma * Eigen::MatrixXd::Identity(2, 2));
  }
  return spec;
}

inline ResidualSet gen_multimodal_residuals(std::size_t n, std::uint64_t seed, const MixtureSpec& spec) {
  spec.validate();
  if (n < 1) throw Error("gen_multimodal_residuals: n must be >= 1");
  const auto p = spec.means.front().size();
  std::vector<Eigen::MatrixXd> chol;
  for (const auto& c : spec.covariances) chol.push_back(c.llt().matrixL());
  std::mt19937_64 rng(seed);
  std::discrete_distribution<std::size_t> comp(spec.weights.begin(), spec.weights.end());
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix out(static_cast<Eigen::Index>(n), p);
  Vector u(p);
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = comp(rng);
    for (Eigen::Index d = 0; d < p; ++d) u(d) = gauss(rng);
    out.row(static_cast<Eigen::Index>(i)) = (spec.means[k] + chol[k] * u).transpose();
  }
  return ResidualSet(std::move(out));
}

// ---------------------------------------------------------------------------
// Coverage

/// Fraction of test residuals accepted by `contains`.
template <class Membership>
double coverage_eval(Membership&& contains, const ResidualSet& test) {
  if (test.count() < 1) throw Error("coverage_eval: empty test set");
  std::size_t hit = 0;
  for (Eigen::Index i = 0; i < test.count(); ++i)
    if (contains(Vector(test.points().row(i).transpose()))) ++hit;
  return static_cast<double>(hit) / static_cast<double>(test.count());
}

/// Fraction of test trajectories accepted by `contains` at every step.
template <class Membership>
double coverage_eval(Membership&& contains, const TrajectoryResiduals& test) {
  if (test.count() < 1) throw Error("coverage_eval: empty test set");
  std::size_t hit = 0;
  for (Eigen::Index i = 0; i < test.count(); ++i)
    if (contains(test.trajectory(i))) ++hit;
  return static_cast<double>(hit) / static_cast<double>(test.count());
}

}  // namespace cpr::scenario

#endif  // CPR_SCENARIO_HPP_
