#include "cpr/timeseries.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace cpr;

namespace {

Vector v2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

// Two-mode residuals whose spread grows with tau by `growth`.
TrajectoryResiduals synthetic(int n, const std::vector<int>& taus, double growth, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<int> pick(0, 1);
  std::vector<int> mode(static_cast<std::size_t>(n));
  for (auto& m : mode) m = pick(rng);
  std::vector<ResidualSet> steps;
  for (int tau : taus) {
    const double s = 1.0 + growth * tau;
    Matrix m(n, 2);
    for (int i = 0; i < n; ++i) m.row(i) << s * (6.0 * mode[static_cast<std::size_t>(i)] + g(rng)), s * 0.5 * g(rng);
    steps.emplace_back(m);
  }
  return {taus, std::move(steps)};
}

std::vector<std::size_t> range(std::size_t lo, std::size_t hi) {
  std::vector<std::size_t> i(hi - lo);
  std::iota(i.begin(), i.end(), lo);
  return i;
}

}  // namespace

TEST(TrajectoryResiduals, Validation) {
  EXPECT_THROW(TrajectoryResiduals({1, 2}, {ResidualSet(Matrix::Zero(3, 2))}), Error);
  EXPECT_THROW(TrajectoryResiduals({1, 2}, {ResidualSet(Matrix::Zero(3, 2)), ResidualSet(Matrix::Zero(4, 2))}), Error);
}

TEST(TsJointScore, HandExample) {
  const Shape h = HyperRect{v2(-1, -1), v2(1, 1)};
  // Step scores: f = 0.3 at step 1, f = -0.1 at step 2.
  const std::vector<TimeSeriesStep> steps{{1, 1.0, {{h, 1.0}}}, {2, 2.0, {{h, 1.0}}}};
  const TimeSeriesRegion r(steps, -0.1, 0.1, 10);
  const std::vector<Vector> z{v2(1.3, 0), v2(0.9, 0)};
  EXPECT_NEAR(ts_joint_score(r, z), 0.3, 1e-15);

  const std::vector<Vector> inside{v2(0.8, 0), v2(0.9, 0)};
  EXPECT_NEAR(ts_joint_score(r, inside), -0.2, 1e-15);
  EXPECT_TRUE(ts_region_contains_residual(r, inside));
  EXPECT_FALSE(ts_region_contains_residual(r, z));

  const std::vector<Vector> far{v2(0, 0), v2(50, 0)};
  EXPECT_NEAR(ts_joint_score(r, far), 2.0 * 49.0, 1e-12);
  EXPECT_THROW(ts_joint_score(r, {v2(0, 0)}), Error);
}

TEST(TsRegionContains, CentersInsideAndOneViolation) {
  const auto z = synthetic(900, {1, 2, 3}, 0.5, 1);
  const auto model = ts_fit(z.subset(range(0, 300)), Config{});
  const auto region = ts_calibrate(model, z.subset(range(300, 600)), 0.1);
  std::vector<Vector> centers, y_hat;
  for (const auto& s : region.steps()) {
    const auto& hull = std::get<ConvexHull>(s.shapes.front().shape);
    centers.push_back(hull.vertices.colwise().mean().transpose());
    y_hat.push_back(v2(1, 1));
  }
  std::vector<Vector> y = centers;
  for (auto& v : y) v += v2(1, 1);
  EXPECT_TRUE(ts_region_contains(region, y, y_hat));
  y[1] += v2(1e3, 0);
  EXPECT_FALSE(ts_region_contains(region, y, y_hat));
}

TEST(TsRegionContains, EquivalentToJointScore) {
  const auto z = synthetic(900, {2, 4, 6}, 0.3, 2);
  for (auto t : {Template::convexhull, Template::hyperrect, Template::ellipsoid}) {
    Config cfg;
    cfg.shape_template = t;
    const auto model = ts_fit(z.subset(range(0, 300)), cfg);
    const auto region = ts_calibrate(model, z.subset(range(300, 600)), 0.1);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int k = 0; k < 20000; ++k) {
      std::vector<Vector> q;
      for (int tau : {2, 4, 6}) q.push_back(v2((1.0 + 0.3 * tau) * (3.0 + 3.0 * g(rng)), (1.0 + 0.3 * tau) * g(rng)));
      EXPECT_EQ(ts_region_contains_residual(region, q), ts_joint_score(region, q) <= region.C());
    }
  }
}

TEST(TsFit, HorizonOneMatchesSingleStep) {
  const auto z = synthetic(800, {5}, 0.2, 4);
  const auto cal1 = z.subset(range(0, 400)), cal2 = z.subset(range(400, 800));
  Config cfg;
  const auto model = ts_fit(cal1, cfg);
  Config step_cfg = cfg;
  step_cfg.seed = derive_seed(cfg.seed, "tau", 5);
  const auto single = fit_shapes(cal1.steps[0], step_cfg);
  ASSERT_EQ(model.steps[0].shapes.size(), single.shapes.size());
  const double beta = model.steps[0].beta;
  EXPECT_EQ(beta, normalization_constant(joint_scores(single.shapes, cal1.steps[0]), cfg.delta));

  const auto ts_region = ts_calibrate(model, cal2, 0.1);
  std::vector<double> scaled = joint_scores(single.shapes, cal2.steps[0]);
  for (auto& s : scaled) s *= beta;
  EXPECT_EQ(ts_region.C(), conformal_quantile(scaled, 0.1));

  // horizon-1 L2 baseline reduces to the plain one up to the beta factor
  const auto tb = ts_l2_baseline(cal1, cal2, 0.1);
  EXPECT_NEAR(tb.radii[0], l2_baseline(cal2.steps[0], 0.1).radius, 1e-9 * tb.radii[0]);
}

TEST(TsFit, IdenticalStepsGiveEqualBetas) {
  const auto z = synthetic(2000, {1, 2, 3, 4}, 0.0, 5);
  const auto model = ts_fit(z.subset(range(0, 1000)), Config{});
  for (const auto& s : model.steps) EXPECT_NEAR(s.beta / model.steps[0].beta, 1.0, 0.15);
  const auto base = ts_l2_baseline(z.subset(range(0, 1000)), z.subset(range(1000, 2000)), 0.1);
  for (double r : base.radii) EXPECT_NEAR(r / base.radii[0], 1.0, 0.1);
}

TEST(TsFit, ScaledStepScoreScalesItsBeta) {
  const auto z = synthetic(600, {1, 2}, 0.0, 6);
  const auto model = ts_fit(z, Config{});
  // A step whose joint score is lambda times larger gets beta / lambda.
  auto shapes = model.steps[1].shapes;
  for (auto& s : shapes) s.alpha *= 4.0;
  EXPECT_EQ(normalization_constant(joint_scores(shapes, z.steps[1]), 0.1), model.steps[1].beta / 4.0);

  // Rescaling the residuals themselves is absorbed by alpha; beta is unchanged.
  auto scaled_steps = z.steps;
  scaled_steps[1] = ResidualSet(4.0 * z.steps[1].points());
  const auto scaled = ts_fit(TrajectoryResiduals(z.taus, scaled_steps), Config{});
  EXPECT_NEAR(scaled.steps[1].beta, model.steps[1].beta, 1e-9 * model.steps[1].beta);
  EXPECT_NEAR(scaled.steps[1].shapes[0].alpha, model.steps[1].shapes[0].alpha / 4.0, 1e-9);
  EXPECT_EQ(scaled.steps[0].beta, model.steps[0].beta);
}

TEST(TsCalibrate, OracleAndPermutationInvariance) {
  const auto z = synthetic(900, {1, 3}, 0.4, 7);
  const auto model = ts_fit(z.subset(range(0, 300)), Config{});
  const auto cal2 = z.subset(range(300, 600));
  const auto region = ts_calibrate(model, cal2, 0.1);
  auto scores = ts_joint_scores(model.steps, cal2);
  std::sort(scores.begin(), scores.end());
  EXPECT_EQ(region.C(), scores[static_cast<std::size_t>(std::ceil(301 * 0.9)) - 1]);

  auto rev = range(300, 600);
  std::reverse(rev.begin(), rev.end());
  EXPECT_EQ(ts_calibrate(model, z.subset(rev), 0.1).C(), region.C());
}

TEST(TsCoverage, SimultaneousOverReshuffles) {
  const auto z = synthetic(3000, {1, 2, 3, 4, 5}, 0.5, 8);
  const auto model = ts_fit(z.subset(range(0, 1000)), Config{});
  const auto pool = ts_joint_scores(model.steps, z.subset(range(1000, 3000)));
  const auto cov = reshuffle_coverage(pool, 1000, 0.1, 100, 9);
  double mean = 0.0;
  for (double c : cov) mean += c;
  mean /= static_cast<double>(cov.size());
  EXPECT_GE(mean, 0.88);

  const auto region = ts_calibrate(model, z.subset(range(1000, 2000)), 0.1);
  EXPECT_TRUE(std::isfinite(ts_region_volume(region, 100)));
  for (std::size_t t = 0; t < region.steps().size(); ++t) {
    const auto step = region.step_region(t);
    EXPECT_EQ(step.K(), region.steps()[t].shapes.size());
  }
}

TEST(TsJson, RoundTrip) {
  const auto z = synthetic(600, {1, 2}, 0.2, 10);
  const auto model = ts_fit(z.subset(range(0, 300)), Config{});
  const auto region = ts_calibrate(model, z.subset(range(300, 600)), 0.1);
  const auto text = ts_region_to_json(region).dump(2);
  const auto back = ts_region_from_json(nlohmann::json::parse(text));
  EXPECT_EQ(ts_region_to_json(back).dump(2), text);
  EXPECT_EQ(back.C(), region.C());
}

TEST(TsCsv, RoundTripAndValidation) {
  const auto z = synthetic(5, {1, 3}, 0.1, 11);
  const std::vector<std::string> split{"cal1", "cal1", "cal2", "test", "test"};
  std::ostringstream out;
  write_trajectory_residual_csv(out, z, split);
  std::istringstream in(out.str());
  const auto back = read_trajectory_residual_csv(in);
  EXPECT_EQ(back.residuals.taus, z.taus);
  EXPECT_EQ(back.split, split);
  for (std::size_t t = 0; t < z.horizon(); ++t) EXPECT_EQ(back.residuals.steps[t].points(), z.steps[t].points());
  EXPECT_EQ(back.with_label("test")->count(), 2);

  auto parse = [](const std::string& s) {
    std::istringstream i(s);
    return read_trajectory_residual_csv(i);
  };
  EXPECT_THROW(parse("traj,tau,z0\n0,1,2\n"), Error);
  EXPECT_THROW(parse("traj_id,tau,z0\n0,1,2\n1,2,3\n"), Error);            // different step sets
  EXPECT_THROW(parse("traj_id,tau,z0\n0,1,2\n0,1,3\n"), Error);            // duplicate
  EXPECT_THROW(parse("traj_id,tau,z0,split\n0,1,2,cal1\n0,2,3,test\n"), Error);
  EXPECT_THROW(parse("traj_id,tau,z0\n0,0,2\n"), Error);
}
