#include "cpr/clustering.hpp"

#include <gtest/gtest.h>

#include <random>

using cpr::Bandwidth;
using cpr::Matrix;

namespace {

Matrix blobs(const std::vector<Eigen::Vector2d>& centers, int per_blob, double radius, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix m(static_cast<Eigen::Index>(centers.size()) * per_blob, 2);
  Eigen::Index r = 0;
  for (const auto& c : centers)
    for (int i = 0; i < per_blob; ++i) {
      Eigen::Vector2d d;
      do d << u(rng), u(rng);
      while (d.norm() > 1.0);
      m.row(r++) = (c + radius * d).transpose();
    }
  return m;
}

Eigen::RowVectorXd window_mean(const Matrix& pts, const Eigen::RowVectorXd& x, double b) {
  Eigen::RowVectorXd s = Eigen::RowVectorXd::Zero(pts.cols());
  int c = 0;
  for (Eigen::Index j = 0; j < pts.rows(); ++j)
    if ((pts.row(j) - x).norm() <= b) {
      s += pts.row(j);
      ++c;
    }
  return s / c;
}

}  // namespace

TEST(MsBandwidth, HandEvaluatedExamples) {
  Matrix two(2, 1);
  two << 0, 1;
  EXPECT_DOUBLE_EQ(cpr::estimate_ms_bandwidth(two, 0.5).value(), 1.0);
  Matrix three(3, 1);
  three << 0, 1, 2;
  EXPECT_NEAR(cpr::estimate_ms_bandwidth(three, 1.0).value(), 5.0 / 3.0, 1e-15);
}

TEST(MsBandwidth, IdenticalPointsFallBack) {
  Matrix same(4, 2);
  same.rowwise() = Eigen::RowVector2d(3.0, 4.0);
  cpr::Warnings w;
  const auto b = cpr::estimate_ms_bandwidth(same, 0.3, &w);
  EXPECT_DOUBLE_EQ(b.value(), 1e-6 * (1.0 + 5.0));
  EXPECT_EQ(w.size(), 1u);
}

TEST(MsBandwidth, RejectsBadInput) {
  EXPECT_THROW(cpr::estimate_ms_bandwidth(Matrix::Zero(1, 2), 0.3), cpr::Error);
  EXPECT_THROW(cpr::estimate_ms_bandwidth(Matrix::Zero(3, 2), 0.0), cpr::Error);
}

TEST(MeanShift, TwoSeparatedBlobs) {
  const Matrix pts = blobs({{0, 0}, {10, 0}}, 30, 0.1, 1);
  const auto cs = cpr::mean_shift(pts, Bandwidth(1.0));
  ASSERT_EQ(cs.K(), 2u);
  EXPECT_LT((cs.modes.row(0) - Eigen::RowVector2d(0, 0)).norm(), 0.2);
  EXPECT_LT((cs.modes.row(1) - Eigen::RowVector2d(10, 0)).norm(), 0.2);
  EXPECT_EQ(cs.clusters[0].rows() + cs.clusters[1].rows(), pts.rows());
  for (Eigen::Index i = 0; i < pts.rows(); ++i) EXPECT_EQ(cs.labels[static_cast<std::size_t>(i)], i < 30 ? 0u : 1u);
}

TEST(MeanShift, IdenticalPointsGiveOneMode) {
  Matrix same(5, 2);
  same.rowwise() = Eigen::RowVector2d(-1.5, 2.0);
  const auto cs = cpr::mean_shift(same, Bandwidth(0.1));
  ASSERT_EQ(cs.K(), 1u);
  EXPECT_EQ(cs.modes.row(0), Eigen::RowVector2d(-1.5, 2.0));
}

TEST(MeanShift, WideBandwidthSingleBlob) {
  const Matrix pts = blobs({{2, 3}}, 40, 0.5, 2);
  const auto cs = cpr::mean_shift(pts, Bandwidth(1.5));
  ASSERT_EQ(cs.K(), 1u);
  EXPECT_LT((cs.modes.row(0) - pts.colwise().mean()).norm(), 1e-3);
}

TEST(MeanShift, PartitionFixedPointsAndEquivariance) {
  const Matrix pts = blobs({{0, 0}, {6, 1}, {3, 7}}, 25, 1.0, 3);
  const Bandwidth b = cpr::estimate_ms_bandwidth(pts, 0.3);
  const auto cs = cpr::mean_shift(pts, b);
  ASSERT_EQ(cs.K(), 3u);

  Eigen::Index total = 0;
  for (std::size_t k = 0; k < cs.K(); ++k) {
    EXPECT_GT(cs.clusters[k].rows(), 0);
    total += cs.clusters[k].rows();
    const Eigen::RowVectorXd m = cs.modes.row(static_cast<Eigen::Index>(k));
    EXPECT_LT((window_mean(pts, m, b.value()) - m).norm(), 1e-2 * b.value());
  }
  EXPECT_EQ(total, pts.rows());

  // Reversed input: same modes, labels follow the points.
  const Matrix rev = pts.colwise().reverse();
  const auto cr = cpr::mean_shift(rev, b);
  ASSERT_EQ(cr.K(), cs.K());
  EXPECT_LT((cr.modes - cs.modes).cwiseAbs().maxCoeff(), 1e-4 * b.value());
  for (Eigen::Index i = 0; i < pts.rows(); ++i)
    EXPECT_EQ(cr.labels[static_cast<std::size_t>(pts.rows() - 1 - i)], cs.labels[static_cast<std::size_t>(i)]);

  const Eigen::RowVector2d t(-4.25, 12.5);
  const Matrix shifted = pts.rowwise() + t;
  const auto ct = cpr::mean_shift(shifted, b);
  ASSERT_EQ(ct.K(), cs.K());
  EXPECT_LT(((ct.modes.rowwise() - t) - cs.modes).cwiseAbs().maxCoeff(), 1e-4 * b.value());
}

TEST(MeanShift, ModesSortedLexicographically) {
  const Matrix pts = blobs({{5, 0}, {0, 5}, {0, -5}}, 10, 0.2, 4);
  const auto cs = cpr::mean_shift(pts, Bandwidth(1.0));
  ASSERT_EQ(cs.K(), 3u);
  for (Eigen::Index k = 1; k < cs.modes.rows(); ++k) {
    const bool ordered = cs.modes(k - 1, 0) < cs.modes(k, 0) ||
                         (cs.modes(k - 1, 0) == cs.modes(k, 0) && cs.modes(k - 1, 1) <= cs.modes(k, 1));
    EXPECT_TRUE(ordered);
  }
}
