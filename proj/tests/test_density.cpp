#include "cpr/density.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using cpr::Bandwidth;
using cpr::Config;
using cpr::Error;
using cpr::Matrix;
using cpr::ResidualSet;
using cpr::Vector;

namespace {

ResidualSet gaussian_cloud(int n, int p, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(n, p);
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < p; ++d) m(i, d) = g(rng);
  return ResidualSet(m);
}

// Independent KDE: explicit sum of Gaussian bumps with the p-variate constant.
double kde_oracle(const Vector& z, const Matrix& pts, double b) {
  const auto p = static_cast<double>(pts.cols());
  double s = 0.0;
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const double r2 = (z.transpose() - pts.row(i)).squaredNorm() / (b * b);
    s += std::exp(-0.5 * r2) / std::pow(2.0 * std::numbers::pi, p / 2.0);
  }
  return s / (static_cast<double>(pts.rows()) * std::pow(b, p));
}

}  // namespace

TEST(Silverman, UnitSpreadHundredPoints) {
  // Exact per-dimension sample std of 1: +-a pattern with matching n.
  Matrix m(100, 2);
  const double a = std::sqrt(99.0 / 100.0);
  for (int i = 0; i < 100; ++i) {
    m(i, 0) = (i % 2 ? a : -a);
    m(i, 1) = ((i / 2) % 2 ? a : -a);
  }
  const ResidualSet z(m);
  EXPECT_NEAR(cpr::silverman_bandwidth(z, 1.0).value(), std::pow(100.0, -1.0 / 6.0), 1e-12);
  EXPECT_NEAR(cpr::silverman_bandwidth(z, 1.0).value(), 0.46416, 1e-5);
  EXPECT_NEAR(cpr::silverman_bandwidth(z, 0.2).value(), 0.09283, 1e-5);
}

TEST(Silverman, ZeroSpreadThrows) {
  Matrix m(2, 2);
  m << 1, 1, 1, 1;
  try {
    cpr::silverman_bandwidth(ResidualSet(m), 0.2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("zero spread"), std::string::npos);
  }
}

TEST(Bandwidth, RejectsNonPositive) {
  EXPECT_THROW(Bandwidth(0.0), Error);
  EXPECT_THROW(Bandwidth(-1.0), Error);
  EXPECT_THROW(Bandwidth(std::numeric_limits<double>::infinity()), Error);
}

TEST(Kde, AnalyticPeaks) {
  Matrix one(1, 1);
  one << 0.0;
  EXPECT_NEAR(cpr::kde_density(Vector::Zero(1), ResidualSet(one), Bandwidth(1.0)), 1.0 / std::sqrt(2.0 * std::numbers::pi),
              1e-15);
  Matrix two(2, 1);
  two << -1.0, 1.0;
  EXPECT_NEAR(cpr::kde_density(Vector::Zero(1), ResidualSet(two), Bandwidth(1.0)),
              std::exp(-0.5) / std::sqrt(2.0 * std::numbers::pi), 1e-15);
  EXPECT_NEAR(cpr::kde_density(Vector::Zero(1), ResidualSet(two), Bandwidth(1.0)), 0.24197, 1e-5);
  Matrix origin = Matrix::Zero(1, 2);
  EXPECT_NEAR(cpr::kde_density(Vector::Zero(2), ResidualSet(origin), Bandwidth(1.0)), 1.0 / (2.0 * std::numbers::pi), 1e-15);
}

TEST(Kde, MatchesIndependentSum) {
  const auto z = gaussian_cloud(200, 2, 3);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int t = 0; t < 50; ++t) {
    Vector q(2);
    q << u(rng), u(rng);
    const double got = cpr::kde_density(q, z, Bandwidth(0.3));
    EXPECT_NEAR(got, kde_oracle(q, z.points(), 0.3), 1e-14 + 1e-12 * got);
  }
}

TEST(Kde, PermutationAndTranslation) {
  const auto z = gaussian_cloud(50, 2, 8);
  Matrix rev = z.points().colwise().reverse();
  Vector t(2);
  t << 3.5, -2.25;
  Matrix shifted = z.points().rowwise() + t.transpose();
  Vector q(2);
  q << 0.2, -0.1;
  const double base = cpr::kde_density(q, z, Bandwidth(0.4));
  EXPECT_NEAR(cpr::kde_density(q, ResidualSet(rev), Bandwidth(0.4)), base, 1e-15);
  EXPECT_NEAR(cpr::kde_density(q + t, ResidualSet(shifted), Bandwidth(0.4)), base, 1e-13);
}

TEST(Grid, UnitSquareLayout) {
  Matrix m(2, 2);
  m << 0, 0, 1, 1;
  Config cfg;
  cfg.grid_cells_per_dim = 10;
  cfg.grid_padding_bandwidths = 0.0;
  const auto g = cpr::build_grid(ResidualSet(m), Bandwidth(0.5), cfg);
  EXPECT_EQ(g.size(), 100u);
  EXPECT_NEAR(g.cell_volume, 0.01, 1e-15);
  // Row-major, last dimension fastest.
  EXPECT_NEAR(g.centers(0, 0), 0.05, 1e-15);
  EXPECT_NEAR(g.centers(1, 1), 0.15, 1e-15);
  EXPECT_NEAR(g.centers(10, 0), 0.15, 1e-15);
}

TEST(Grid, TooLargeThrows) {
  const auto z = gaussian_cloud(10, 4, 1);
  Config cfg;
  cfg.grid_cells_per_dim = 100;
  try {
    cpr::build_grid(z, Bandwidth(1.0), cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("grid too large"), std::string::npos);
  }
}

TEST(Grid, MassIsNumericIntegral) {
  // Six-bandwidth padding captures essentially all of the mass.
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const int n = std::uniform_int_distribution<int>(1, 1000)(rng);
    const auto z = gaussian_cloud(n, 2, seed + 100, 1.0 + static_cast<double>(seed));
    const Bandwidth b = n > 1 ? cpr::silverman_bandwidth(z, 0.2) : Bandwidth(0.5);
    Config cfg;
    cfg.grid_padding_bandwidths = 6.0;
    cfg.grid_cells_per_dim = 200;
    const double total = cpr::build_grid(z, b, cfg).total_mass();
    EXPECT_GE(total, 0.97) << "seed " << seed;
    EXPECT_LE(total, 1.005) << "seed " << seed;
  }
  const auto z1 = gaussian_cloud(300, 1, 5);
  Config cfg;
  cfg.grid_padding_bandwidths = 6.0;
  cfg.grid_cells_per_dim = 400;
  const double total = cpr::build_grid(z1, cpr::silverman_bandwidth(z1, 0.2), cfg).total_mass();
  EXPECT_NEAR(total, 1.0, 0.01);
}

TEST(Select, EqualMassesPickLowestIndexFirst) {
  cpr::DensityGrid g;
  g.lower = Vector::Zero(1);
  g.upper = Vector::Ones(1);
  g.cells_per_dim = 100;
  g.centers = Matrix(100, 1);
  for (int j = 0; j < 100; ++j) g.centers(j, 0) = j;
  g.mass.assign(100, 0.01);
  g.cell_volume = 0.01;
  const auto hd = cpr::select_high_density(g, 0.1);
  ASSERT_EQ(hd.cell_index.size(), 90u);
  for (std::size_t i = 0; i < 90; ++i) EXPECT_EQ(hd.cell_index[i], i);
  EXPECT_FALSE(hd.truncated);

  const auto one = cpr::select_high_density(g, 0.99);
  EXPECT_EQ(one.cell_index, std::vector<std::size_t>{0});
}

TEST(Select, TruncationWarns) {
  cpr::DensityGrid g;
  g.lower = Vector::Zero(1);
  g.upper = Vector::Ones(1);
  g.cells_per_dim = 8;
  g.centers = Matrix::Zero(8, 1);
  g.mass.assign(8, 0.1);
  cpr::Warnings w;
  const auto hd = cpr::select_high_density(g, 0.1, &w);
  EXPECT_EQ(hd.cell_index.size(), 8u);
  EXPECT_TRUE(hd.truncated);
  ASSERT_EQ(w.size(), 1u);
  EXPECT_NE(w.front().find("truncation"), std::string::npos);
}

TEST(Select, GreedyMinimalAndMonotoneInDelta) {
  const auto z = gaussian_cloud(400, 2, 11);
  const auto g = cpr::build_grid(z, cpr::silverman_bandwidth(z, 0.2), Config{});
  std::vector<std::vector<bool>> sets;
  for (double delta : {0.05, 0.1, 0.2, 0.4}) {
    const auto hd = cpr::select_high_density(g, delta);
    ASSERT_FALSE(hd.truncated);
    // Minimality: dropping the lightest selected cell falls short of the target.
    double lightest = 1e300;
    for (auto j : hd.cell_index) lightest = std::min(lightest, g.mass[j]);
    EXPECT_LT(hd.selected_mass - lightest, 1.0 - delta);
    EXPECT_GE(hd.selected_mass, 1.0 - delta - 1e-12);
    // Every unselected cell is no heavier than the lightest selected one.
    for (std::size_t j = 0; j < g.size(); ++j)
      if (!hd.grid.selected[j]) {
        EXPECT_LE(g.mass[j], lightest);
      }
    sets.push_back(hd.grid.selected);
  }
  for (std::size_t s = 1; s < sets.size(); ++s)
    for (std::size_t j = 0; j < g.size(); ++j)
      if (sets[s][j]) {
        EXPECT_TRUE(sets[s - 1][j]) << "cell " << j;
      }
}

TEST(GridCsv, HeaderAndRows) {
  Matrix m(2, 2);
  m << 0, 0, 1, 1;
  Config cfg;
  cfg.grid_cells_per_dim = 8;
  auto hd = cpr::select_high_density(cpr::build_grid(ResidualSet(m), Bandwidth(0.5), cfg), 0.5);
  std::ostringstream out;
  cpr::write_grid_csv(out, hd.grid);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "center_0,center_1,mass,selected");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 64);
}
