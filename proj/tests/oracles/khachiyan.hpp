// Khachiyan's barycentric coordinate ascent for the minimum-volume enclosing
// ellipsoid. Test oracle only.

#pragma once

#include <Eigen/Dense>

#include <cmath>

namespace oracle {

struct Mvee {
  Eigen::MatrixXd A;  // {x | (x - c)^T A (x - c) <= 1}
  Eigen::VectorXd c;
  int iterations = 0;
};

// `points` holds one point per row and must span the full dimension.
inline Mvee khachiyan_mvee(const Eigen::MatrixXd& points, double tol = 1e-10, int max_iter = 200000) {
  const auto n = points.rows();
  const auto d = points.cols();
  const Eigen::MatrixXd P = points.transpose();
  Eigen::MatrixXd Q(d + 1, n);
  Q.topRows(d) = P;
  Q.row(d).setOnes();

  Eigen::VectorXd u = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  Mvee out;
  for (; out.iterations < max_iter; ++out.iterations) {
    const Eigen::MatrixXd X = Q * u.asDiagonal() * Q.transpose();
    const Eigen::MatrixXd XinvQ = X.ldlt().solve(Q);
    const Eigen::VectorXd M = (Q.array() * XinvQ.array()).colwise().sum().transpose();
    Eigen::Index j = 0;
    const double mj = M.maxCoeff(&j);
    const double step = (mj - static_cast<double>(d) - 1.0) / ((static_cast<double>(d) + 1.0) * (mj - 1.0));
    Eigen::VectorXd next = (1.0 - step) * u;
    next(j) += step;
    const double change = (next - u).norm();
    u = next;
    if (change < tol) break;
  }
  out.c = P * u;
  const Eigen::MatrixXd S = P * u.asDiagonal() * P.transpose() - out.c * out.c.transpose();
  out.A = S.inverse() / static_cast<double>(d);
  return out;
}

// Scale A down just enough that every point satisfies the constraint; the
// iteration stops slightly inside the optimum.
inline void make_covering(Mvee& e, const Eigen::MatrixXd& points) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const Eigen::VectorXd v = points.row(i).transpose() - e.c;
    worst = std::max(worst, v.dot(e.A * v));
  }
  if (worst > 1.0) e.A /= worst;
}

inline double ellipsoid_volume(const Eigen::MatrixXd& A) {
  const auto d = A.rows();
  const double vp = std::pow(M_PI, d / 2.0) / std::tgamma(d / 2.0 + 1.0);
  return vp / std::sqrt(A.determinant());
}

}  // namespace oracle
