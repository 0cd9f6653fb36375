// (mu/mu_w, lambda)-CMA-ES with rank-one and rank-mu covariance updates and
// cumulative step-size adaptation. Default strategy parameters follow
// Hansen's tutorial settings.

#ifndef CPR_CMAES_HPP_
#define CPR_CMAES_HPP_

#include "cpr/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

namespace cpr {

struct CmaesOptions {
  int max_evaluations = 5000;
  int population = 0;          // 0 selects 4 + floor(3 ln n)
  double tol_x = 1e-12;        // stop once sigma * max axis falls below this
  double tol_fun = 1e-14;      // stop once recent best values stagnate within this
  std::uint64_t seed = 0;
};

struct CmaesResult {
  Vector x;
  double value = std::numeric_limits<double>::infinity();
  int evaluations = 0;
  int generations = 0;
};

class Cmaes {
 public:
  using Objective = std::function<double(const Vector&)>;

  Cmaes(Vector x0, double sigma0, CmaesOptions opt) : opt_(opt), mean_(std::move(x0)), sigma_(sigma0) {
    n_ = static_cast<int>(mean_.size());
    if (n_ < 1) throw Error("CMA-ES needs at least one parameter");
    if (!(sigma0 > 0.0)) throw Error("CMA-ES initial step size must be positive");
    const double dn = n_;
    lambda_ = opt.population > 0 ? opt.population : 4 + static_cast<int>(std::floor(3.0 * std::log(dn)));
    mu_ = lambda_ / 2;
    weights_.resize(mu_);
    for (int i = 0; i < mu_; ++i) weights_(i) = std::log(mu_ + 0.5) - std::log(i + 1.0);
    weights_ /= weights_.sum();
    mueff_ = 1.0 / weights_.squaredNorm();

    cc_ = (4.0 + mueff_ / dn) / (dn + 4.0 + 2.0 * mueff_ / dn);
    cs_ = (mueff_ + 2.0) / (dn + mueff_ + 5.0);
    c1_ = 2.0 / ((dn + 1.3) * (dn + 1.3) + mueff_);
    cmu_ = std::min(1.0 - c1_, 2.0 * (mueff_ - 2.0 + 1.0 / mueff_) / ((dn + 2.0) * (dn + 2.0) + mueff_));
    damps_ = 1.0 + 2.0 * std::max(0.0, std::sqrt((mueff_ - 1.0) / (dn + 1.0)) - 1.0) + cs_;
    chin_ = std::sqrt(dn) * (1.0 - 1.0 / (4.0 * dn) + 1.0 / (21.0 * dn * dn));

    pc_ = Vector::Zero(n_);
    ps_ = Vector::Zero(n_);
    B_ = Eigen::MatrixXd::Identity(n_, n_);
    D_ = Vector::Ones(n_);
    C_ = Eigen::MatrixXd::Identity(n_, n_);
  }

  CmaesResult minimize(const Objective& f) {
    std::mt19937_64 rng(opt_.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    CmaesResult best;
    best.x = mean_;

    Eigen::MatrixXd arz(n_, lambda_), ary(n_, lambda_);
    std::vector<double> fit(static_cast<std::size_t>(lambda_));
    std::vector<int> order(static_cast<std::size_t>(lambda_));
    std::vector<double> history;
    int evals = 0;
    int gen = 0;
    int eigen_gen = 0;

    while (evals + lambda_ <= opt_.max_evaluations) {
      for (int k = 0; k < lambda_; ++k) {
        for (int i = 0; i < n_; ++i) arz(i, k) = gauss(rng);
        ary.col(k) = B_ * (D_.asDiagonal() * arz.col(k));
        const Vector x = mean_ + sigma_ * ary.col(k);
        fit[static_cast<std::size_t>(k)] = f(x);
        ++evals;
        if (fit[static_cast<std::size_t>(k)] < best.value) {
          best.value = fit[static_cast<std::size_t>(k)];
          best.x = x;
        }
      }
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](int a, int b) { return fit[static_cast<std::size_t>(a)] < fit[static_cast<std::size_t>(b)]; });

      Vector yw = Vector::Zero(n_), zw = Vector::Zero(n_);
      for (int i = 0; i < mu_; ++i) {
        yw += weights_(i) * ary.col(order[static_cast<std::size_t>(i)]);
        zw += weights_(i) * arz.col(order[static_cast<std::size_t>(i)]);
      }
      mean_ += sigma_ * yw;

      ps_ = (1.0 - cs_) * ps_ + std::sqrt(cs_ * (2.0 - cs_) * mueff_) * (B_ * zw);
      const double psn = ps_.norm();
      const double hsig_thresh = (1.4 + 2.0 / (n_ + 1.0)) * chin_;
      const bool hsig = psn / std::sqrt(1.0 - std::pow(1.0 - cs_, 2.0 * (gen + 1))) < hsig_thresh;
      pc_ = (1.0 - cc_) * pc_ + (hsig ? std::sqrt(cc_ * (2.0 - cc_) * mueff_) : 0.0) * yw;

      Eigen::MatrixXd rank_mu = Eigen::MatrixXd::Zero(n_, n_);
      for (int i = 0; i < mu_; ++i) {
        const Vector y = ary.col(order[static_cast<std::size_t>(i)]);
        rank_mu += weights_(i) * y * y.transpose();
      }
      const double hsig_corr = hsig ? 0.0 : c1_ * cc_ * (2.0 - cc_);
      C_ = (1.0 - c1_ - cmu_ + hsig_corr) * C_ + c1_ * pc_ * pc_.transpose() + cmu_ * rank_mu;
      sigma_ *= std::exp((cs_ / damps_) * (psn / chin_ - 1.0));
      ++gen;

      if (gen - eigen_gen >= 1) {
        eigen_gen = gen;
        C_ = 0.5 * (C_ + C_.transpose());
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C_);
        B_ = es.eigenvectors();
        D_ = es.eigenvalues().cwiseMax(1e-300).cwiseSqrt();
      }

      history.push_back(fit[static_cast<std::size_t>(order[0])]);
      if (sigma_ * D_.maxCoeff() < opt_.tol_x) break;
      const std::size_t window = 10 + static_cast<std::size_t>(30 * n_ / lambda_);
      if (history.size() > window) {
        const auto first = history.end() - static_cast<std::ptrdiff_t>(window);
        const auto [lo, hi] = std::minmax_element(first, history.end());
        if (*hi - *lo < opt_.tol_fun * std::max(1.0, std::abs(*lo))) break;
      }
      if (!std::isfinite(sigma_) || D_.maxCoeff() / D_.minCoeff() > 1e14) break;
    }
    best.evaluations = evals;
    best.generations = gen;
    return best;
  }

  [[nodiscard]] int population() const { return lambda_; }

 private:
  CmaesOptions opt_;
  int n_ = 0;
  int lambda_ = 0;
  int mu_ = 0;
  Vector weights_;
  double mueff_ = 0, cc_ = 0, cs_ = 0, c1_ = 0, cmu_ = 0, damps_ = 0, chin_ = 0;
  Vector mean_;
  double sigma_;
  Vector pc_, ps_;
  Eigen::MatrixXd B_, C_;
  Vector D_;
};

inline CmaesResult cmaes_minimize(const Cmaes::Objective& f, Vector x0, double sigma0, const CmaesOptions& opt) {
  return Cmaes(std::move(x0), sigma0, opt).minimize(f);
}

}  // namespace cpr

#endif  // CPR_CMAES_HPP_
