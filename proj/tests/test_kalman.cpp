#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "oracles.hpp"
#include "tpaws/kalman.hpp"

using namespace tpaws;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd scalar(double v) { return MatrixXd::Constant(1, 1, v); }
VectorXd vec1(double v) { return VectorXd::Constant(1, v); }

}  // namespace

TEST_CASE("conjugate normal update") {
  const KalmanState<double> s{vec1(0.0), scalar(1.0)};
  const auto step = kalman_step<double>(s, scalar(1.0), scalar(1.0), scalar(0.0), scalar(1.0), vec1(1.0));
  CHECK(step.updated);
  CHECK(step.posterior.mean[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(step.posterior.covariance(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(step.forecast_covariance(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("missing observation is a pure prediction") {
  const KalmanState<double> s{vec1(2.0), scalar(0.3)};
  const auto step = kalman_step<double>(s, scalar(1.0), scalar(0.9), scalar(0.1), scalar(1.0), std::nullopt);
  CHECK_FALSE(step.updated);
  CHECK(step.posterior.mean[0] == doctest::Approx(1.8));
  CHECK(step.posterior.covariance(0, 0) == doctest::Approx(0.9 * 0.9 * 0.3 + 0.1));
  CHECK(step.posterior.mean == step.prior.mean);
}

TEST_CASE("dimension checks") {
  const KalmanState<double> s{VectorXd::Zero(2), MatrixXd::Identity(2, 2)};
  CHECK_THROWS_AS(kalman_step<double>(s, scalar(1.0), MatrixXd::Identity(2, 2), MatrixXd::Identity(2, 2),
                                      scalar(1.0), vec1(0.0)),
                  Error);
}

TEST_CASE("scalar random walk matches the grid Bayes filter") {
  const double W = 0.09, V = 0.25, m0 = 0.0, c0 = 1.0;
  Rng rng(8);
  std::vector<double> ys;
  double x = m0 + rng.normal();
  for (int t = 0; t < 20; ++t) {
    x += std::sqrt(W) * rng.normal();
    ys.push_back(x + std::sqrt(V) * rng.normal());
  }
  const auto ref = oracle::grid_filter(m0, c0, W, V, ys, -10.0, 10.0, 20001);

  KalmanState<double> s{vec1(m0), scalar(c0)};
  for (std::size_t t = 0; t < ys.size(); ++t) {
    s = kalman_step<double>(s, scalar(1.0), scalar(1.0), scalar(W), scalar(V), vec1(ys[t])).posterior;
    CHECK(std::abs(s.mean[0] - ref.mean[t]) <= 1e-6);
    CHECK(std::abs(s.covariance(0, 0) - ref.var[t]) <= 1e-6);
  }
}

TEST_CASE("gaussian log density") {
  const double got = gaussian_log_density<double>(vec1(1.0), vec1(0.0), scalar(4.0));
  const double ref = -0.5 * (0.25 + std::log(4.0) + std::log(2.0 * std::numbers::pi));
  CHECK(got == doctest::Approx(ref).epsilon(1e-14));
}

TEST_CASE("long double instantiation") {
  using S = KalmanState<long double>;
  const S s{S::Vector::Zero(1), S::Matrix::Identity(1, 1)};
  const auto step = kalman_step<long double>(s, S::Matrix::Identity(1, 1), S::Matrix::Identity(1, 1),
                                             S::Matrix::Zero(1, 1), S::Matrix::Identity(1, 1),
                                             S::Vector::Constant(1, 1.0L));
  CHECK(static_cast<double>(step.posterior.mean[0]) == doctest::Approx(0.5));
}
