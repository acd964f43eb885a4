#pragma once

#include <span>

#include "tpaws/core.hpp"

namespace tpaws {

/// Log-sinh variance-stabilising transform
///
///   z = (1/b) * ln(sinh(a + b * (y - y_shift)))
///
/// or the identity. The transform is strictly increasing wherever the sinh
/// argument is positive.
struct TransformSpec {
  enum class Kind { Identity, LogSinh };

  Kind kind = Kind::Identity;
  double a = 0.0;
  double b = 1.0;
  double y_shift = 0.0;

  static TransformSpec identity() { return {}; }
  static TransformSpec log_sinh(double a, double b, double y_shift) {
    return {Kind::LogSinh, a, b, y_shift};
  }

  /// Smallest y accepted by forward() (-inf for the identity).
  double domain_lower() const;
  bool operator==(const TransformSpec&) const = default;
};

std::string_view to_string(TransformSpec::Kind k);
TransformSpec::Kind parse_transform_kind(std::string_view name);

double forward(const TransformSpec& spec, double y);
double inverse(const TransformSpec& spec, double z);
/// dz/dy.
double derivative(const TransformSpec& spec, double y);

/// forward() with y clamped just inside the domain. Used for predictors that
/// may fall below the calibration range.
double forward_clamped(const TransformSpec& spec, double y);

/// Numerically stable ln(sinh(u)) for u > 0.
double log_sinh(double u);
/// Numerically stable ln(coth(u)) for u > 0.
double log_coth(double u);

/// Gaussian log-likelihood of the transformed samples including the Jacobian.
double transform_log_likelihood(const TransformSpec& spec, std::span<const double> samples);

inline constexpr std::size_t kMinTransformSamples = 50;
inline constexpr double kMinLogSinhScale = 1e-6;

/// Maximum-likelihood fit. Identity is returned unchanged (after the
/// degeneracy check).
TransformSpec fit_transform(std::span<const double> samples, TransformSpec::Kind kind);

/// Default transform family for a variable: log-sinh for skewed,
/// non-negative variables, identity otherwise.
TransformSpec::Kind default_transform_kind(Variable v);

}  // namespace tpaws
