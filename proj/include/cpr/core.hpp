// Shared domain types for convex prediction regions: residual sets,
// calibration splits, pipeline configuration and seed derivation.

#ifndef CPR_CORE_HPP_
#define CPR_CORE_HPP_

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cpr {

/// Dense row-major point matrix, one point per row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Raised for contract violations and unrecoverable input problems.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-fatal diagnostics accumulated by the pipeline stages.
using Warnings = std::vector<std::string>;

inline void warn(Warnings* sink, std::string message) {
  if (sink != nullptr) sink->push_back(std::move(message));
}

/// Immutable set of residual vectors Z_i = Y_i - h(X_i).
class ResidualSet {
 public:
  ResidualSet() = default;

  explicit ResidualSet(Matrix points) : points_(std::move(points)) {
    if (points_.rows() < 1) throw Error("residual set must contain at least one point");
    if (points_.cols() < 1) throw Error("residual dimension must be >= 1");
    if (!points_.allFinite()) throw Error("residual set contains non-finite values");
  }

  static ResidualSet from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw Error("residual set must contain at least one point");
    const auto p = rows.front().size();
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(p));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != p) throw Error("residual rows have mixed dimension");
      for (std::size_t d = 0; d < p; ++d) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = rows[i][d];
    }
    return ResidualSet(std::move(m));
  }

  [[nodiscard]] Eigen::Index dim() const { return points_.cols(); }
  [[nodiscard]] Eigen::Index count() const { return points_.rows(); }
  [[nodiscard]] const Matrix& points() const { return points_; }
  [[nodiscard]] Vector point(Eigen::Index i) const { return points_.row(i).transpose(); }

  [[nodiscard]] ResidualSet subset(const std::vector<std::size_t>& index) const {
    Matrix m(static_cast<Eigen::Index>(index.size()), dim());
    for (std::size_t i = 0; i < index.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = points_.row(static_cast<Eigen::Index>(index[i]));
    return ResidualSet(std::move(m));
  }

 private:
  Matrix points_;
};

/// Disjoint partition of one calibration set into D_cal,1 (shape fitting)
/// and D_cal,2 (conformal calibration).
struct CalibrationSplit {
  ResidualSet cal1;
  ResidualSet cal2;
  std::vector<std::size_t> cal1_index;
  std::vector<std::size_t> cal2_index;
  std::uint64_t seed = 0;
};

enum class Template { ellipsoid, convexhull, hyperrect };

inline std::string_view to_string(Template t) {
  switch (t) {
    case Template::ellipsoid: return "ellipsoid";
    case Template::convexhull: return "convexhull";
    case Template::hyperrect: return "hyperrect";
  }
  return "unknown";
}

inline Template parse_template(std::string_view name) {
  if (name == "ellipsoid") return Template::ellipsoid;
  if (name == "convexhull") return Template::convexhull;
  if (name == "hyperrect") return Template::hyperrect;
  throw Error("unknown template '" + std::string(name) + "'");
}

struct Config {
  double delta = 0.1;
  int grid_cells_per_dim = 40;
  double grid_padding_bandwidths = 3.0;
  double kde_bandwidth_adjust = 0.2;
  double ms_bandwidth_quantile = 0.3;
  Template shape_template = Template::convexhull;
  std::uint64_t seed = 0;
  double grid_cell_cap = 1e7;
  int ellipsoid_budget = 5000;

  void validate() const {
    if (!(delta > 0.0 && delta < 1.0)) throw Error("delta must lie in (0,1)");
    if (grid_cells_per_dim < 8) throw Error("grid_cells_per_dim must be >= 8");
    if (!(grid_padding_bandwidths >= 0.0)) throw Error("grid_padding_bandwidths must be >= 0");
    if (!(kde_bandwidth_adjust > 0.0)) throw Error("kde_bandwidth_adjust must be > 0");
    if (!(ms_bandwidth_quantile > 0.0 && ms_bandwidth_quantile < 1.0))
      throw Error("ms_bandwidth_quantile must lie in (0,1)");
    if (ellipsoid_budget < 1) throw Error("ellipsoid_budget must be >= 1");
  }
};

// splitmix64 finalizer; mixes the parent seed with a stage tag so one
// top-level seed fixes every randomized stage.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag) {
  std::uint64_t h = 0xCBF29CE484222325ull;  // FNV-1a over the tag
  for (char ch : tag) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001B3ull;
  }
  return mix64(parent ^ mix64(h));
}

inline std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag, std::uint64_t index) {
  return mix64(derive_seed(parent, tag) + index);
}

/// Seeded uniform permutation of 0..n-1.
inline std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

/// cal1 receives floor(fraction * n) points chosen by a seeded shuffle;
/// cal2 receives the rest. Both keep the parent's row order.
inline CalibrationSplit split_calibration(const ResidualSet& parent, double fraction, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(parent.count());
  if (n < 2) throw Error("degenerate split");
  if (!(fraction > 0.0 && fraction < 1.0)) throw Error("degenerate split");
  const auto n1 = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  if (n1 == 0 || n1 >= n) throw Error("degenerate split");

  auto perm = seeded_permutation(n, seed);
  std::vector<std::size_t> a(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n1));
  std::vector<std::size_t> b(perm.begin() + static_cast<std::ptrdiff_t>(n1), perm.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CalibrationSplit split{parent.subset(a), parent.subset(b), std::move(a), std::move(b), seed};
  return split;
}

// ---------------------------------------------------------------------------
// Residual CSV: header z0,z1,...,z{p-1}; an optional `split` column carries
// cal1/cal2/test labels.

struct LabeledResiduals {
  ResidualSet residuals;
  std::vector<std::string> split;  // empty when the file has no split column
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw Error("malformed number '" + s + "'");
  }
  if (used != s.size()) throw Error("malformed number '" + s + "'");
  return v;
}

/// Shortest decimal text that round-trips to the same double.
inline std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

inline LabeledResiduals read_residual_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error("residual CSV is empty");
  const auto header = detail::split_csv_line(line);
  std::vector<int> zcol;
  int split_col = -1;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto& h = header[c];
    if (h == "split") {
      split_col = static_cast<int>(c);
    } else if (h == "z" + std::to_string(zcol.size())) {
      zcol.push_back(static_cast<int>(c));
    } else {
      throw Error("unexpected residual CSV column '" + h + "'");
    }
  }
  if (zcol.empty()) throw Error("residual CSV has no z columns");

  std::vector<std::vector<double>> rows;
  std::vector<std::string> labels;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw Error("residual CSV row " + std::to_string(lineno) + " has mixed arity");
    std::vector<double> row;
    row.reserve(zcol.size());
    for (int c : zcol) row.push_back(detail::parse_double(cells[static_cast<std::size_t>(c)]));
    rows.push_back(std::move(row));
    if (split_col >= 0) labels.push_back(cells[static_cast<std::size_t>(split_col)]);
  }
  if (rows.empty()) throw Error("residual CSV has no rows");
  return {ResidualSet::from_rows(rows), std::move(labels)};
}

inline void write_residual_csv(std::ostream& out, const ResidualSet& z,
                               const std::vector<std::string>& split = {}) {
  for (Eigen::Index d = 0; d < z.dim(); ++d) out << (d ? "," : "") << 'z' << d;
  if (!split.empty()) out << ",split";
  out << '\n';
  for (Eigen::Index i = 0; i < z.count(); ++i) {
    for (Eigen::Index d = 0; d < z.dim(); ++d) out << (d ? "," : "") << detail::format_double(z.points()(i, d));
    if (!split.empty()) out << ',' << split[static_cast<std::size_t>(i)];
    out << '\n';
  }
}

/// Rows whose split label equals `label`.
inline std::optional<ResidualSet> rows_with_label(const LabeledResiduals& data, std::string_view label) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < data.split.size(); ++i)
    if (data.split[i] == label) idx.push_back(i);
  if (idx.empty()) return std::nullopt;
  return data.residuals.subset(idx);
}

}  // namespace cpr

#endif  // CPR_CORE_HPP_
