#include "cpr/core.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <sstream>

using cpr::Error;
using cpr::Matrix;
using cpr::ResidualSet;

namespace {

ResidualSet iota_set(Eigen::Index n, Eigen::Index p = 2) {
  Matrix m(n, p);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index d = 0; d < p; ++d) m(i, d) = static_cast<double>(i * p + d);
  return ResidualSet(m);
}

}  // namespace

TEST(ResidualSet, RejectsEmptyAndNonFinite) {
  EXPECT_THROW(ResidualSet(Matrix(0, 2)), Error);
  EXPECT_THROW(ResidualSet(Matrix(3, 0)), Error);
  Matrix m = Matrix::Zero(2, 2);
  m(1, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(ResidualSet{m}, Error);
  m(1, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(ResidualSet{m}, Error);
  EXPECT_THROW(ResidualSet::from_rows({{1.0, 2.0}, {3.0}}), Error);
}

TEST(SplitCalibration, TenPointsHalfAndHalf) {
  const auto z = iota_set(10);
  const auto s = cpr::split_calibration(z, 0.5, 7);
  EXPECT_EQ(s.cal1.count(), 5);
  EXPECT_EQ(s.cal2.count(), 5);
  std::set<std::size_t> all(s.cal1_index.begin(), s.cal1_index.end());
  for (auto i : s.cal2_index) EXPECT_TRUE(all.insert(i).second) << "index " << i << " in both halves";
  EXPECT_EQ(all.size(), 10u);
}

TEST(SplitCalibration, DegenerateFractionThrows) {
  const auto z = iota_set(3);
  try {
    cpr::split_calibration(z, 0.01, 1);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("degenerate split"), std::string::npos);
  }
  EXPECT_THROW(cpr::split_calibration(iota_set(1), 0.5, 1), Error);
  EXPECT_THROW(cpr::split_calibration(z, 0.0, 1), Error);
  EXPECT_THROW(cpr::split_calibration(z, 1.0, 1), Error);
}

TEST(SplitCalibration, DeterministicPartition) {
  const auto z = iota_set(101, 3);
  const auto a = cpr::split_calibration(z, 0.37, 99);
  const auto b = cpr::split_calibration(z, 0.37, 99);
  EXPECT_EQ(a.cal1_index, b.cal1_index);
  EXPECT_EQ(a.cal2_index, b.cal2_index);
  EXPECT_EQ(a.cal1.points(), b.cal1.points());
  const auto c = cpr::split_calibration(z, 0.37, 100);
  EXPECT_NE(a.cal1_index, c.cal1_index);

  // Partition as multisets, rows carried verbatim.
  std::vector<std::size_t> merged = a.cal1_index;
  merged.insert(merged.end(), a.cal2_index.begin(), a.cal2_index.end());
  std::sort(merged.begin(), merged.end());
  for (std::size_t i = 0; i < merged.size(); ++i) EXPECT_EQ(merged[i], i);
  for (std::size_t i = 0; i < a.cal1_index.size(); ++i)
    EXPECT_EQ(a.cal1.point(static_cast<Eigen::Index>(i)), z.point(static_cast<Eigen::Index>(a.cal1_index[i])));
}

TEST(Seeds, DerivedSeedsDifferByTagAndIndex) {
  EXPECT_NE(cpr::derive_seed(1, "shape"), cpr::derive_seed(1, "tau"));
  EXPECT_NE(cpr::derive_seed(1, "shape", 0), cpr::derive_seed(1, "shape", 1));
  EXPECT_NE(cpr::derive_seed(1, "shape"), cpr::derive_seed(2, "shape"));
  EXPECT_EQ(cpr::derive_seed(5, "x", 3), cpr::derive_seed(5, "x", 3));
}

TEST(Config, Validation) {
  cpr::Config c;
  EXPECT_NO_THROW(c.validate());
  c.delta = 0.0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.delta = 1.0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.grid_cells_per_dim = 7;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.kde_bandwidth_adjust = 0.0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.ms_bandwidth_quantile = 1.0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Template, ParseAndPrint) {
  for (auto t : {cpr::Template::ellipsoid, cpr::Template::convexhull, cpr::Template::hyperrect})
    EXPECT_EQ(cpr::parse_template(cpr::to_string(t)), t);
  EXPECT_THROW(cpr::parse_template("sphere"), Error);
}

TEST(ResidualCsv, RoundTripIsLossless) {
  Matrix m(3, 2);
  m << 0.1, -1e-300, 1.0 / 3.0, 12345.678901234567, -0.0, 2.5e17;
  const ResidualSet z(m);
  std::ostringstream out;
  cpr::write_residual_csv(out, z, {"cal1", "cal2", "test"});
  std::istringstream in(out.str());
  const auto back = cpr::read_residual_csv(in);
  EXPECT_EQ(back.residuals.points(), m);
  EXPECT_EQ(back.split, (std::vector<std::string>{"cal1", "cal2", "test"}));

  std::ostringstream again;
  cpr::write_residual_csv(again, back.residuals, back.split);
  EXPECT_EQ(again.str(), out.str());
}

TEST(ResidualCsv, RejectsMalformedInput) {
  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return cpr::read_residual_csv(in);
  };
  EXPECT_THROW(parse(""), Error);
  EXPECT_THROW(parse("z0,z1\n1,2\n3\n"), Error);   // mixed arity
  EXPECT_THROW(parse("z0,z2\n1,2\n"), Error);       // out of order
  EXPECT_THROW(parse("zx\n1\n"), Error);            // not a z index
  EXPECT_THROW(parse("a,b\n1,2\n"), Error);
  EXPECT_THROW(parse("z0\nabc\n"), Error);
  EXPECT_THROW(parse("z0\n1.5x\n"), Error);
  EXPECT_THROW(parse("z0,z1\n"), Error);            // no rows
  EXPECT_NO_THROW(parse("z0,z1\r\n1,2\r\n"));
}

TEST(ResidualCsv, SplitLabelsSelectRows) {
  std::istringstream in("z0,split\n1,cal1\n2,cal2\n3,cal1\n");
  const auto data = cpr::read_residual_csv(in);
  const auto c1 = cpr::rows_with_label(data, "cal1");
  ASSERT_TRUE(c1.has_value());
  EXPECT_EQ(c1->count(), 2);
  EXPECT_DOUBLE_EQ(c1->points()(1, 0), 3.0);
  EXPECT_FALSE(cpr::rows_with_label(data, "test").has_value());
}

TEST(FormatDouble, ShortestRoundTrip) {
  EXPECT_EQ(cpr::detail::format_double(0.1), "0.1");
  EXPECT_EQ(cpr::detail::format_double(2.0), "2");
  EXPECT_EQ(cpr::detail::format_double(std::numeric_limits<double>::infinity()), "inf");
  const double third = 1.0 / 3.0;
  EXPECT_EQ(std::stod(cpr::detail::format_double(third)), third);
}
