#pragma once

// Reference computations shared by the unit tests and the acceptance run.
// They are written independently of the library code they check.

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "tpaws/core.hpp"
#include "tpaws/solvers.hpp"

namespace tpaws::oracle {

inline Eigen::MatrixXd random_matrix(Rng& rng, int n, int p) {
  Eigen::MatrixXd X(n, p);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) X(i, j) = rng.normal();
  return X;
}

// Population-scale standardisation, done here rather than by the library.
inline Eigen::MatrixXd standardize(const Eigen::MatrixXd& X) {
  Eigen::MatrixXd Xs = X.rowwise() - X.colwise().mean();
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const double sd = std::sqrt(Xs.col(j).squaredNorm() / static_cast<double>(X.rows()));
    Xs.col(j) /= sd;
  }
  return Xs;
}

/// Largest violation of the lasso optimality conditions in standardised space.
inline double kkt_residual(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const LassoModel& m) {
  const Eigen::MatrixXd Xs = standardize(X);
  const Eigen::VectorXd b = m.standardized_coefficients();
  const Eigen::VectorXd r = (y.array() - y.mean()).matrix() - Xs * b;
  const Eigen::VectorXd g = Xs.transpose() * r / static_cast<double>(X.rows());
  double worst = 0.0;
  for (Eigen::Index j = 0; j < b.size(); ++j) {
    if (b[j] != 0.0)
      worst = std::max(worst, std::abs(g[j] - m.lambda * (b[j] > 0 ? 1.0 : -1.0)));
    else
      worst = std::max(worst, std::max(0.0, std::abs(g[j]) - m.lambda));
  }
  return worst;
}

inline double lasso_objective_1d(const Eigen::VectorXd& x, const Eigen::VectorXd& y, double lambda, double beta) {
  return (y - beta * x).squaredNorm() / (2.0 * static_cast<double>(x.size())) + lambda * std::abs(beta);
}

inline double soft_threshold(double z, double lambda) {
  return (z > 0 ? 1.0 : -1.0) * std::max(std::abs(z) - lambda, 0.0);
}

struct GridMoments {
  std::vector<double> mean, var;
};

// Bayes filter on a fixed lattice: predict by convolution with the random-walk
// kernel, update by pointwise multiplication with the likelihood.
inline GridMoments grid_filter(double m0, double c0, double W, double V, const std::vector<double>& ys, double lo,
                               double hi, int points) {
  const double h = (hi - lo) / (points - 1);
  std::vector<double> x(points), p(points), q(points);
  for (int i = 0; i < points; ++i) {
    x[i] = lo + i * h;
    p[i] = std::exp(-0.5 * (x[i] - m0) * (x[i] - m0) / c0);
  }
  const int half = static_cast<int>(std::ceil(10.0 * std::sqrt(W) / h));
  std::vector<double> kernel(2 * half + 1);
  for (int k = -half; k <= half; ++k) kernel[k + half] = std::exp(-0.5 * (k * h) * (k * h) / W);

  GridMoments out;
  for (double y : ys) {
    for (int i = 0; i < points; ++i) {
      double s = 0.0;
      const int a = std::max(0, i - half), b = std::min(points - 1, i + half);
      for (int j = a; j <= b; ++j) s += p[j] * kernel[i - j + half];
      q[i] = s;
    }
    double z = 0.0;
    for (int i = 0; i < points; ++i) {
      p[i] = q[i] * std::exp(-0.5 * (y - x[i]) * (y - x[i]) / V);
      z += p[i];
    }
    double m = 0.0, m2 = 0.0;
    for (int i = 0; i < points; ++i) {
      p[i] /= z;
      m += p[i] * x[i];
    }
    for (int i = 0; i < points; ++i) m2 += p[i] * (x[i] - m) * (x[i] - m);
    out.mean.push_back(m);
    out.var.push_back(m2);
  }
  return out;
}

/// Physical limits as tabulated for Australia, written out case by case.
struct Limits {
  double lower, upper;
};

inline Limits physical_limits(Variable v, double elevation_m, const double* tmin, const double* tmax) {
  const double cold = elevation_m > 1000.0 ? -40.0 : -30.0;
  if (v == Variable::Tmax) return {tmin ? *tmin : cold, 60.0};
  if (v == Variable::Tmin) return {cold, tmax && *tmax < 60.0 ? *tmax : 60.0};
  if (v == Variable::Rain) return {0.0, 2000.0};
  if (v == Variable::WindGust) return {3.6, 540.0};
  return {0.0, 100.0};
}

}  // namespace tpaws::oracle
