#include "tpaws/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace tpaws {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Normal distribution

double normal_pdf(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
}

double normal_cdf(double x, double mu, double sigma) {
  if (!(sigma > 0.0)) throw Error(ErrorCode::InvalidArgument, "normal_cdf: sigma must be positive");
  return 0.5 * std::erfc(-(x - mu) / (sigma * std::numbers::sqrt2));
}

double normal_quantile(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::OutOfRange, "normal_quantile: p outside [0,1]");
  if (p == 0.0) return -std::numeric_limits<double>::infinity();
  if (p == 1.0) return std::numeric_limits<double>::infinity();
  if (p > 0.5) return -normal_quantile(1.0 - p);

  // Acklam's rational approximation for the lower half, then one Halley step.
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  double x;
  if (p < 0.02425) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

// ---------------------------------------------------------------------------
// Robust statistics

double median(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::TooFewSamples, "median of empty sample");
  std::vector<double> v(values.begin(), values.end());
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

double mad(std::span<const double> values) {
  const double m = median(values);
  std::vector<double> dev(values.size());
  std::transform(values.begin(), values.end(), dev.begin(),
                 [m](double v) { return std::abs(v - m); });
  return median(dev);
}

GaussianErrorModel robust_gaussian_fit(std::span<const double> residuals) {
  if (residuals.size() < kMinErrorModelSamples)
    throw Error(ErrorCode::TooFewSamples, "error model needs at least 30 residuals");
  GaussianErrorModel m;
  m.mu = median(residuals);
  m.sigma = std::max(kMadToSigma * mad(residuals), kSigmaFloor);
  return m;
}

// ---------------------------------------------------------------------------
// LASSO

double LassoModel::predict(const Eigen::Ref<const VectorXd>& x) const {
  return intercept + coefficients.dot(x);
}

VectorXd LassoModel::predict_rows(const Eigen::Ref<const MatrixXd>& X) const {
  return (X * coefficients).array() + intercept;
}

VectorXd LassoModel::standardized_coefficients() const {
  return coefficients.cwiseProduct(predictor_scales);
}

namespace {

constexpr double kZeroScale = 1e-12;

struct StandardizedProblem {
  VectorXd means;
  VectorXd scales;  // 0 for dropped columns
  double y_mean = 0.0;
  double y_sd = 0.0;
  MatrixXd gram;    // Xs' Xs / n
  VectorXd corr;    // Xs' (y - ybar) / n
};

StandardizedProblem standardize(const Eigen::Ref<const MatrixXd>& X,
                                const Eigen::Ref<const VectorXd>& y) {
  const double n = static_cast<double>(X.rows());
  StandardizedProblem sp;
  sp.means = X.colwise().mean().transpose();
  MatrixXd Xs = X.rowwise() - sp.means.transpose();
  sp.scales = (Xs.colwise().squaredNorm() / n).cwiseSqrt().transpose();
  for (Eigen::Index j = 0; j < Xs.cols(); ++j) {
    if (sp.scales[j] <= kZeroScale * (1.0 + std::abs(sp.means[j]))) {
      sp.scales[j] = 0.0;
      Xs.col(j).setZero();
    } else {
      Xs.col(j) /= sp.scales[j];
    }
  }
  sp.y_mean = y.mean();
  const VectorXd yc = y.array() - sp.y_mean;
  sp.y_sd = std::sqrt(yc.squaredNorm() / n);
  sp.gram = Xs.transpose() * Xs / n;
  sp.corr = Xs.transpose() * yc / n;
  return sp;
}

double soft_threshold(double z, double lambda) {
  if (z > lambda) return z - lambda;
  if (z < -lambda) return z + lambda;
  return 0.0;
}

// Cyclic coordinate descent on the standardised problem, warm-started from beta.
int coordinate_descent(const StandardizedProblem& sp, double lambda, VectorXd& beta, double tol,
                       int max_sweeps) {
  const Eigen::Index p = sp.gram.rows();
  VectorXd grad = sp.corr - sp.gram * beta;
  const double threshold = tol * std::max(sp.y_sd, std::numeric_limits<double>::min());
  for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
    double max_delta = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (sp.scales[j] == 0.0) continue;
      const double gjj = sp.gram(j, j);
      const double old = beta[j];
      const double updated = soft_threshold(grad[j] + gjj * old, lambda) / gjj;
      if (updated != old) {
        const double delta = updated - old;
        grad.noalias() -= sp.gram.col(j) * delta;
        beta[j] = updated;
        max_delta = std::max(max_delta, std::abs(delta));
      }
    }
    if (max_delta <= threshold) return sweep;
  }
  throw Error(ErrorCode::NotConverged, "lasso coordinate descent did not converge");
}

LassoModel to_model(const StandardizedProblem& sp, const VectorXd& beta, double lambda, int sweeps) {
  LassoModel m;
  m.lambda = lambda;
  m.sweeps = sweeps;
  m.predictor_means = sp.means;
  m.predictor_scales = sp.scales;
  m.coefficients = VectorXd::Zero(beta.size());
  for (Eigen::Index j = 0; j < beta.size(); ++j)
    if (sp.scales[j] > 0.0) m.coefficients[j] = beta[j] / sp.scales[j];
  m.intercept = sp.y_mean - m.coefficients.dot(sp.means);
  return m;
}

void check_lasso_inputs(const Eigen::Ref<const MatrixXd>& X, const Eigen::Ref<const VectorXd>& y) {
  if (X.rows() != y.size()) throw Error(ErrorCode::InvalidArgument, "lasso: X rows != y size");
  if (static_cast<std::size_t>(X.rows()) < kLassoMinRows)
    throw Error(ErrorCode::TooFewSamples, "lasso needs at least 10 rows");
  if (!X.allFinite() || !y.allFinite())
    throw Error(ErrorCode::InvalidArgument, "lasso: non-finite input");
}

double lambda_max_of(const StandardizedProblem& sp) {
  return sp.corr.size() == 0 ? 0.0 : sp.corr.cwiseAbs().maxCoeff();
}

}  // namespace

LassoModel lasso_fit(const Eigen::Ref<const MatrixXd>& X, const Eigen::Ref<const VectorXd>& y,
                     double lambda, double tol, int max_sweeps) {
  check_lasso_inputs(X, y);
  if (!(lambda >= 0.0)) throw Error(ErrorCode::InvalidArgument, "lasso: lambda must be >= 0");
  const StandardizedProblem sp = standardize(X, y);
  VectorXd beta = VectorXd::Zero(X.cols());
  const int sweeps = coordinate_descent(sp, lambda, beta, tol, max_sweeps);
  return to_model(sp, beta, lambda, sweeps);
}

double lasso_lambda_max(const Eigen::Ref<const MatrixXd>& X, const Eigen::Ref<const VectorXd>& y) {
  check_lasso_inputs(X, y);
  return lambda_max_of(standardize(X, y));
}

LassoCvResult lasso_cv(const Eigen::Ref<const MatrixXd>& X, const Eigen::Ref<const VectorXd>& y,
                       const LassoCvOptions& opt) {
  check_lasso_inputs(X, y);
  const Eigen::Index n = X.rows();
  const int K = opt.folds;
  if (K < 2 || n < static_cast<Eigen::Index>(K) * 3)
    throw Error(ErrorCode::TooFewSamples, "lasso_cv: too few rows for the fold count");

  LassoCvResult out;
  VectorXd grid;
  if (opt.fixed_lambda) {
    grid = VectorXd::Constant(1, *opt.fixed_lambda);
  } else {
    const double lmax = lasso_lambda_max(X, y);
    if (lmax > 0.0) {
      grid.resize(opt.n_lambda);
      for (int i = 0; i < opt.n_lambda; ++i)
        grid[i] = lmax * std::pow(opt.min_ratio, static_cast<double>(i) / (opt.n_lambda - 1));
    } else {
      grid = VectorXd::Zero(1);
    }
  }
  const Eigen::Index L = grid.size();

  MatrixXd oof(n, L);
  MatrixXd fold_mse(K, L);
  for (int f = 0; f < K; ++f) {
    std::vector<Eigen::Index> train, test;
    for (Eigen::Index i = 0; i < n; ++i) (i % K == f ? test : train).push_back(i);
    const MatrixXd Xtr = X(train, Eigen::all);
    const VectorXd ytr = y(train);
    const MatrixXd Xte = X(test, Eigen::all);
    const VectorXd yte = y(test);
    const StandardizedProblem sp = standardize(Xtr, ytr);
    VectorXd beta = VectorXd::Zero(X.cols());
    for (Eigen::Index l = 0; l < L; ++l) {
      const int sweeps = coordinate_descent(sp, grid[l], beta, opt.tol, kLassoMaxSweeps);
      const LassoModel m = to_model(sp, beta, grid[l], sweeps);
      const VectorXd pred = m.predict_rows(Xte);
      for (std::size_t t = 0; t < test.size(); ++t) oof(test[t], l) = pred[static_cast<Eigen::Index>(t)];
      fold_mse(f, l) = (yte - pred).squaredNorm() / static_cast<double>(test.size());
    }
  }

  out.cv_mse = fold_mse.colwise().mean().transpose();
  out.cv_se.resize(L);
  for (Eigen::Index l = 0; l < L; ++l) {
    const double mu = out.cv_mse[l];
    const double var = (fold_mse.col(l).array() - mu).square().sum() / (K - 1);
    out.cv_se[l] = std::sqrt(var / K);
  }
  Eigen::Index best = 0;
  out.cv_mse.minCoeff(&best);
  Eigen::Index chosen = best;
  if (opt.one_se_rule) {
    const double limit = out.cv_mse[best] + out.cv_se[best];
    for (Eigen::Index l = 0; l <= best; ++l)
      if (out.cv_mse[l] <= limit) {
        chosen = l;
        break;
      }
  }
  if (!opt.fixed_lambda) out.lambdas = grid;
  out.oof_predictions = oof.col(chosen);
  out.model = lasso_fit(X, y, grid[chosen], opt.tol);
  return out;
}

// ---------------------------------------------------------------------------
// Bayesian model averaging

namespace {

double log_normal_density(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return -0.5 * z * z - std::log(sigma) - 0.5 * std::log(2.0 * std::numbers::pi);
}

}  // namespace

double bma_log_likelihood(const BmaWeights& bma, const Eigen::Ref<const MatrixXd>& means,
                          const Eigen::Ref<const VectorXd>& actuals) {
  const Eigen::Index n = means.rows(), K = means.cols();
  double ll = 0.0;
  VectorXd lp(K);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < K; ++k)
      lp[k] = bma.weights[k] > 0.0
                  ? std::log(bma.weights[k]) + log_normal_density(actuals[i], means(i, k), bma.sigmas[k])
                  : -std::numeric_limits<double>::infinity();
    const double mx = lp.maxCoeff();
    ll += mx + std::log((lp.array() - mx).exp().sum());
  }
  return ll;
}

BmaFit bma_fit_trace(const Eigen::Ref<const MatrixXd>& means, const Eigen::Ref<const VectorXd>& actuals,
                     int max_iterations, double tol) {
  const Eigen::Index n = means.rows(), K = means.cols();
  if (K < 2) throw Error(ErrorCode::InvalidArgument, "bma_fit needs at least 2 members");
  if (n < 50) throw Error(ErrorCode::TooFewSamples, "bma_fit needs at least 50 rows");
  if (actuals.size() != n) throw Error(ErrorCode::InvalidArgument, "bma_fit: size mismatch");
  if (!means.allFinite() || !actuals.allFinite())
    throw Error(ErrorCode::InvalidArgument, "bma_fit: non-finite input");

  BmaFit fit;
  BmaWeights& w = fit.bma;
  w.weights = VectorXd::Constant(K, 1.0 / static_cast<double>(K));
  w.sigmas.resize(K);
  for (Eigen::Index k = 0; k < K; ++k) {
    std::vector<double> r(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) r[static_cast<std::size_t>(i)] = actuals[i] - means(i, k);
    w.sigmas[k] = std::max(kMadToSigma * mad(r), kSigmaFloor);
  }
  fit.log_likelihood.push_back(bma_log_likelihood(w, means, actuals));

  MatrixXd resp(n, K);
  VectorXd lp(K);
  for (int it = 0; it < max_iterations; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index k = 0; k < K; ++k)
        lp[k] = w.weights[k] > 0.0
                    ? std::log(w.weights[k]) + log_normal_density(actuals[i], means(i, k), w.sigmas[k])
                    : -std::numeric_limits<double>::infinity();
      const double mx = lp.maxCoeff();
      const VectorXd e = (lp.array() - mx).exp();
      resp.row(i) = (e / e.sum()).transpose();
    }
    for (Eigen::Index k = 0; k < K; ++k) {
      const double nk = resp.col(k).sum();
      w.weights[k] = nk / static_cast<double>(n);
      if (nk > 0.0) {
        const double ss = (resp.col(k).array() * (actuals - means.col(k)).array().square()).sum();
        w.sigmas[k] = std::max(std::sqrt(ss / nk), kSigmaFloor);
      }
    }
    w.weights /= w.weights.sum();
    const double ll = bma_log_likelihood(w, means, actuals);
    const double prev = fit.log_likelihood.back();
    fit.log_likelihood.push_back(ll);
    if (ll - prev < tol) break;
  }
  return fit;
}

double mixture_cdf(double x, const Eigen::Ref<const VectorXd>& weights,
                   const Eigen::Ref<const VectorXd>& means, const Eigen::Ref<const VectorXd>& sigmas) {
  double p = 0.0;
  for (Eigen::Index k = 0; k < weights.size(); ++k) p += weights[k] * normal_cdf(x, means[k], sigmas[k]);
  return std::clamp(p, 0.0, 1.0);
}

double mixture_quantile(double p, const Eigen::Ref<const VectorXd>& weights,
                        const Eigen::Ref<const VectorXd>& means, const Eigen::Ref<const VectorXd>& sigmas) {
  if (!(p > 0.0 && p < 1.0)) throw Error(ErrorCode::OutOfRange, "mixture_quantile: p outside (0,1)");
  double lo = (means - 40.0 * sigmas).minCoeff();
  double hi = (means + 40.0 * sigmas).maxCoeff();
  for (int i = 0; i < 200 && hi - lo > 1e-15 * (1.0 + std::abs(lo) + std::abs(hi)); ++i) {
    const double mid = 0.5 * (lo + hi);
    (mixture_cdf(mid, weights, means, sigmas) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Nelder-Mead

NelderMeadResult nelder_mead(const std::function<double(const VectorXd&)>& f, const VectorXd& start,
                             const NelderMeadOptions& opt) {
  const Eigen::Index d = start.size();
  std::vector<VectorXd> pts(static_cast<std::size_t>(d + 1), start);
  std::vector<double> fv(static_cast<std::size_t>(d + 1));
  for (Eigen::Index i = 0; i < d; ++i) pts[static_cast<std::size_t>(i + 1)][i] += opt.initial_step;
  for (std::size_t i = 0; i < pts.size(); ++i) fv[i] = f(pts[i]);

  std::vector<std::size_t> order(pts.size());
  int it = 0;
  for (; it < opt.max_iterations; ++it) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return fv[a] < fv[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[order.size() - 2];

    double size = 0.0;
    for (const auto& p : pts) size = std::max(size, (p - pts[best]).cwiseAbs().maxCoeff());
    if (std::isfinite(fv[worst]) &&
        std::abs(fv[worst] - fv[best]) <= opt.f_tol * (1.0 + std::abs(fv[best])) && size <= opt.x_tol)
      break;

    VectorXd centroid = VectorXd::Zero(d);
    for (std::size_t i : order)
      if (i != worst) centroid += pts[i];
    centroid /= static_cast<double>(d);

    const VectorXd xr = centroid + (centroid - pts[worst]);
    const double fr = f(xr);
    if (fr < fv[best]) {
      const VectorXd xe = centroid + 2.0 * (centroid - pts[worst]);
      const double fe = f(xe);
      if (fe < fr) {
        pts[worst] = xe;
        fv[worst] = fe;
      } else {
        pts[worst] = xr;
        fv[worst] = fr;
      }
    } else if (fr < fv[second]) {
      pts[worst] = xr;
      fv[worst] = fr;
    } else {
      const bool outside = fr < fv[worst];
      const VectorXd xc = outside ? VectorXd(centroid + 0.5 * (xr - centroid))
                                  : VectorXd(centroid + 0.5 * (pts[worst] - centroid));
      const double fc = f(xc);
      if (fc < (outside ? fr : fv[worst])) {
        pts[worst] = xc;
        fv[worst] = fc;
      } else {
        for (std::size_t i = 0; i < pts.size(); ++i) {
          if (i == best) continue;
          pts[i] = pts[best] + 0.5 * (pts[i] - pts[best]);
          fv[i] = f(pts[i]);
        }
      }
    }
  }
  const auto best = static_cast<std::size_t>(std::min_element(fv.begin(), fv.end()) - fv.begin());
  return {pts[best], fv[best], it};
}

// ---------------------------------------------------------------------------

LinearTrend fit_linear_trend(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 3)
    throw Error(ErrorCode::TooFewSamples, "linear trend needs at least 3 paired points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw Error(ErrorCode::FitDegenerate, "linear trend: constant abscissa");
  LinearTrend t;
  t.slope = sxy / sxx;
  t.intercept = my - t.slope * mx;
  double sse = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - t.intercept - t.slope * x[i];
    sse += r * r;
  }
  t.slope_se = std::sqrt(sse / (n - 2.0) / sxx);
  return t;
}

// ---------------------------------------------------------------------------
// Studentized range

namespace {

template <typename F>
double simpson(F&& f, double a, double b, int intervals) {
  if (intervals % 2) ++intervals;
  const double h = (b - a) / intervals;
  double s = f(a) + f(b);
  for (int i = 1; i < intervals; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

// P(range of k iid standard normals < w).
double normal_range_cdf(double w, int k) {
  if (w <= 0.0) return 0.0;
  auto integrand = [&](double z) {
    const double inner = normal_cdf(z) - normal_cdf(z - w);
    return normal_pdf(z) * std::pow(std::max(inner, 0.0), k - 1);
  };
  return std::min(1.0, k * simpson(integrand, -8.5, 8.5 + w, 600));
}

}  // namespace

double studentized_range_cdf(double q, int k, double df) {
  if (k < 2) throw Error(ErrorCode::InvalidArgument, "studentized range needs k >= 2");
  if (!(df > 0.0)) throw Error(ErrorCode::InvalidArgument, "studentized range needs df > 0");
  if (q <= 0.0) return 0.0;
  if (!std::isfinite(df) || df > 1e5) return normal_range_cdf(q, k);

  // s = sqrt(chi2_df / df)
  const double log_norm = std::numbers::ln2 + 0.5 * df * std::log(0.5 * df) - std::lgamma(0.5 * df);
  auto density = [&](double s) {
    if (s <= 0.0) return 0.0;
    return std::exp(log_norm + (df - 1.0) * std::log(s) - 0.5 * df * s * s);
  };
  const double mode = std::sqrt(std::max(df - 1.0, 0.0) / df);
  const double spread = 10.0 / std::sqrt(2.0 * df);
  const double lo = std::max(0.0, mode - spread);
  const double hi = mode + std::max(spread, 3.0 / std::sqrt(df));
  const double p = simpson([&](double s) { return density(s) * normal_range_cdf(q * s, k); }, lo, hi, 400);
  return std::clamp(p, 0.0, 1.0);
}

double studentized_range_quantile(double p, int k, double df) {
  if (!(p > 0.0 && p < 1.0)) throw Error(ErrorCode::OutOfRange, "studentized range quantile: p outside (0,1)");
  double lo = 0.0, hi = 50.0;
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    (studentized_range_cdf(mid, k, df) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace tpaws
