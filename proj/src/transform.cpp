#include "tpaws/transform.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "tpaws/solvers.hpp"

namespace tpaws {

std::string_view to_string(TransformSpec::Kind k) {
  return k == TransformSpec::Kind::Identity ? "Identity" : "LogSinh";
}

TransformSpec::Kind parse_transform_kind(std::string_view name) {
  if (name == "Identity") return TransformSpec::Kind::Identity;
  if (name == "LogSinh") return TransformSpec::Kind::LogSinh;
  throw Error(ErrorCode::ParseError, "unknown transform '" + std::string(name) + "'");
}

double TransformSpec::domain_lower() const {
  if (kind == Kind::Identity) return -std::numeric_limits<double>::infinity();
  return y_shift - a / b;
}

double log_sinh(double u) {
  return u - std::numbers::ln2 + std::log(-std::expm1(-2.0 * u));
}

double log_coth(double u) {
  const double e = std::exp(-2.0 * u);
  return std::log1p(e) - std::log(-std::expm1(-2.0 * u));
}

double forward(const TransformSpec& spec, double y) {
  if (spec.kind == TransformSpec::Kind::Identity) return y;
  const double u = spec.a + spec.b * (y - spec.y_shift);
  if (!(u > 0.0))
    throw Error(ErrorCode::DomainError, "log-sinh argument not positive");
  return log_sinh(u) / spec.b;
}

double inverse(const TransformSpec& spec, double z) {
  if (spec.kind == TransformSpec::Kind::Identity) return z;
  // u = asinh(exp(b z)), written to avoid overflow of exp for large b z.
  const double t = spec.b * z;
  const double u = t > 0.0 ? t + std::log1p(std::sqrt(1.0 + std::exp(-2.0 * t)))
                           : std::asinh(std::exp(t));
  const double y = (u - spec.a) / spec.b + spec.y_shift;
  if (!std::isfinite(y) || !(u > 0.0))
    throw Error(ErrorCode::DomainError, "log-sinh inverse not representable");
  return y;
}

double derivative(const TransformSpec& spec, double y) {
  if (spec.kind == TransformSpec::Kind::Identity) return 1.0;
  const double u = spec.a + spec.b * (y - spec.y_shift);
  if (!(u > 0.0))
    throw Error(ErrorCode::DomainError, "log-sinh argument not positive");
  return 1.0 / std::tanh(u);
}

double forward_clamped(const TransformSpec& spec, double y) {
  if (spec.kind == TransformSpec::Kind::Identity) return y;
  const double u_min = 1e-9;
  const double u = std::max(spec.a + spec.b * (y - spec.y_shift), u_min);
  return log_sinh(u) / spec.b;
}

double transform_log_likelihood(const TransformSpec& spec, std::span<const double> samples) {
  const double n = static_cast<double>(samples.size());
  double mean = 0.0, log_jac = 0.0;
  std::vector<double> z(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    z[i] = forward(spec, samples[i]);
    mean += z[i];
    if (spec.kind == TransformSpec::Kind::LogSinh)
      log_jac += log_coth(spec.a + spec.b * (samples[i] - spec.y_shift));
  }
  mean /= n;
  double var = 0.0;
  for (double v : z) var += (v - mean) * (v - mean);
  var /= n;
  if (!(var > 0.0)) return -std::numeric_limits<double>::infinity();
  return -0.5 * n * (std::log(2.0 * std::numbers::pi * var) + 1.0) + log_jac;
}

TransformSpec::Kind default_transform_kind(Variable v) {
  return (v == Variable::Rain || v == Variable::WindGust) ? TransformSpec::Kind::LogSinh
                                                          : TransformSpec::Kind::Identity;
}

TransformSpec fit_transform(std::span<const double> samples, TransformSpec::Kind kind) {
  if (samples.size() < kMinTransformSamples)
    throw Error(ErrorCode::TooFewSamples, "transform fit needs at least 50 samples");
  for (double s : samples)
    if (!std::isfinite(s)) throw Error(ErrorCode::InvalidArgument, "non-finite sample");
  const auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
  const double lo = *lo_it, hi = *hi_it;
  const double range = hi - lo;
  if (!(range > 0.0)) throw Error(ErrorCode::FitDegenerate, "constant samples");
  if (kind == TransformSpec::Kind::Identity) return TransformSpec::identity();

  const double y_shift = lo - 0.1 * range;
  // Search over (ln a, ln(b * range)) so the problem is scale free.
  const double min_log_scaled_b = std::log(kMinLogSinhScale * range);
  auto spec_at = [&](const Eigen::Vector2d& p) {
    return TransformSpec::log_sinh(std::exp(p[0]), std::exp(p[1]) / range, y_shift);
  };
  auto objective = [&](const Eigen::Vector2d& p) {
    if (p[0] < -12.0 || p[0] > 8.0 || p[1] < std::max(-8.0, min_log_scaled_b) || p[1] > 6.0)
      return std::numeric_limits<double>::infinity();
    const double ll = transform_log_likelihood(spec_at(p), samples);
    return std::isfinite(ll) ? -ll : std::numeric_limits<double>::infinity();
  };

  Eigen::Vector2d start(0.0, 0.0);
  double best = objective(start);
  for (double la : {-4.0, -2.0, 0.0, 2.0})
    for (double lb : {-2.0, 0.0, 2.0, 4.0}) {
      const Eigen::Vector2d p(la, lb);
      const double f = objective(p);
      if (f < best) {
        best = f;
        start = p;
      }
    }
  NelderMeadOptions opts;
  opts.initial_step = 0.5;
  const NelderMeadResult res = nelder_mead(objective, start, opts);
  return spec_at(res.fx <= best ? Eigen::Vector2d(res.x) : start);
}

}  // namespace tpaws
