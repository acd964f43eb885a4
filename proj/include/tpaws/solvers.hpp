#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "tpaws/core.hpp"

namespace tpaws {

// ---------------------------------------------------------------------------
// Normal distribution

double normal_pdf(double x, double mu = 0.0, double sigma = 1.0);
double normal_cdf(double x, double mu = 0.0, double sigma = 1.0);
/// Inverse standard normal CDF, refined to near machine precision.
double normal_quantile(double p);

// ---------------------------------------------------------------------------
// Robust location/scale

double median(std::span<const double> values);
/// Raw median absolute deviation (no consistency factor).
double mad(std::span<const double> values);

inline constexpr double kMadToSigma = 1.4826;

struct GaussianErrorModel {
  double mu = 0.0;
  double sigma = kSigmaFloor;
  bool operator==(const GaussianErrorModel&) const = default;
};

inline constexpr std::size_t kMinErrorModelSamples = 30;

/// mu = median, sigma = max(1.4826 * MAD, sigma_floor).
GaussianErrorModel robust_gaussian_fit(std::span<const double> residuals);

// ---------------------------------------------------------------------------
// LASSO by cyclic coordinate descent with covariance updates
//
// Minimises (1/2n)||y - b0 - Xs*beta||^2 + lambda*||beta||_1 where Xs holds the
// standardised predictors (population scale). Coefficients are reported on
// the original predictor scale.

struct LassoModel {
  double intercept = 0.0;
  Eigen::VectorXd coefficients;
  double lambda = 0.0;
  Eigen::VectorXd predictor_means;
  Eigen::VectorXd predictor_scales;  ///< 0 marks a dropped zero-variance column
  int sweeps = 0;

  double predict(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  Eigen::VectorXd predict_rows(const Eigen::Ref<const Eigen::MatrixXd>& X) const;
  /// Coefficients on the standardised scale.
  Eigen::VectorXd standardized_coefficients() const;
};

inline constexpr int kLassoMaxSweeps = 10000;
inline constexpr std::size_t kLassoMinRows = 10;

LassoModel lasso_fit(const Eigen::Ref<const Eigen::MatrixXd>& X,
                     const Eigen::Ref<const Eigen::VectorXd>& y, double lambda,
                     double tol = 1e-10, int max_sweeps = kLassoMaxSweeps);

double lasso_lambda_max(const Eigen::Ref<const Eigen::MatrixXd>& X,
                        const Eigen::Ref<const Eigen::VectorXd>& y);

struct LassoCvOptions {
  int folds = 5;
  int n_lambda = 30;
  double min_ratio = 1e-3;
  bool one_se_rule = true;
  std::optional<double> fixed_lambda;  ///< skips the search when set
  double tol = 1e-9;
};

struct LassoCvResult {
  LassoModel model;                ///< refit on all rows at the chosen lambda
  Eigen::VectorXd lambdas;         ///< descending grid (empty when fixed)
  Eigen::VectorXd cv_mse;
  Eigen::VectorXd cv_se;
  Eigen::VectorXd oof_predictions; ///< out-of-fold predictions at the chosen lambda
};

/// K-fold cross-validation with deterministic folds (row index mod K).
LassoCvResult lasso_cv(const Eigen::Ref<const Eigen::MatrixXd>& X,
                       const Eigen::Ref<const Eigen::VectorXd>& y,
                       const LassoCvOptions& options = {});

// ---------------------------------------------------------------------------
// Gaussian-mixture Bayesian model averaging fitted by EM

struct BmaWeights {
  Eigen::VectorXd weights;
  Eigen::VectorXd sigmas;
};

struct BmaFit {
  BmaWeights bma;
  std::vector<double> log_likelihood;  ///< one entry per EM iteration, starting at the initial point
};

inline constexpr int kBmaMaxIterations = 500;
inline constexpr double kBmaTolerance = 1e-8;

BmaFit bma_fit_trace(const Eigen::Ref<const Eigen::MatrixXd>& member_means,
                     const Eigen::Ref<const Eigen::VectorXd>& actuals,
                     int max_iterations = kBmaMaxIterations, double tol = kBmaTolerance);

inline BmaWeights bma_fit(const Eigen::Ref<const Eigen::MatrixXd>& member_means,
                          const Eigen::Ref<const Eigen::VectorXd>& actuals) {
  return bma_fit_trace(member_means, actuals).bma;
}

double bma_log_likelihood(const BmaWeights& bma, const Eigen::Ref<const Eigen::MatrixXd>& member_means,
                          const Eigen::Ref<const Eigen::VectorXd>& actuals);

double mixture_cdf(double x, const Eigen::Ref<const Eigen::VectorXd>& weights,
                   const Eigen::Ref<const Eigen::VectorXd>& means,
                   const Eigen::Ref<const Eigen::VectorXd>& sigmas);
double mixture_quantile(double p, const Eigen::Ref<const Eigen::VectorXd>& weights,
                        const Eigen::Ref<const Eigen::VectorXd>& means,
                        const Eigen::Ref<const Eigen::VectorXd>& sigmas);

// ---------------------------------------------------------------------------
// Derivative-free minimisation

struct NelderMeadOptions {
  double initial_step = 0.1;
  double f_tol = 1e-10;
  double x_tol = 1e-8;
  int max_iterations = 2000;
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double fx = 0.0;
  int iterations = 0;
};

NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                             const Eigen::VectorXd& start, const NelderMeadOptions& options = {});

// ---------------------------------------------------------------------------
// Small regression utilities

struct LinearTrend {
  double intercept = 0.0;
  double slope = 0.0;
  double slope_se = 0.0;
};

/// Ordinary least squares y = intercept + slope * x with the slope standard error.
LinearTrend fit_linear_trend(std::span<const double> x, std::span<const double> y);

/// Studentized range distribution (Tukey HSD), k groups and df error degrees
/// of freedom; df = +inf is accepted.
double studentized_range_cdf(double q, int k, double df);
double studentized_range_quantile(double p, int k, double df);

}  // namespace tpaws
