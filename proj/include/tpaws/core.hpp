#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tpaws {

enum class ErrorCode {
  IncompatibleUnits,
  DomainError,
  FitDegenerate,
  NotConverged,
  TooFewSamples,
  NumericalBreakdown,
  InsufficientOverlap,
  NoNeighbors,
  ProductVariableMismatch,
  OutOfBounds,
  NoCandidates,
  InsufficientHistory,
  OutOfRange,
  CovarianceNotPD,
  Misaligned,
  ParseError,
  NotCalibrated,
  VersionError,
  ConfigError,
  InvalidArgument,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// ---------------------------------------------------------------------------
// Calendar days

using Date = std::chrono::sys_days;

/// Strict YYYY-MM-DD parser; throws ParseError on anything else.
Date parse_date(std::string_view text);
std::string format_date(Date d);
/// 1-based day of the year.
int day_of_year(Date d);
int year_of(Date d);
int month_of(Date d);

// ---------------------------------------------------------------------------
// Variables and units

enum class Variable { Tmax, Tmin, Rain, WindGust, Humidity9am, Humidity3pm };

inline constexpr Variable kAllVariables[] = {
    Variable::Tmax,     Variable::Tmin,        Variable::Rain,
    Variable::WindGust, Variable::Humidity9am, Variable::Humidity3pm};

std::string_view to_string(Variable v);
Variable parse_variable(std::string_view name);

enum class Unit { Celsius, Millimetre, KilometrePerHour, MetrePerSecond, Percent };

std::string_view to_string(Unit u);
Unit parse_unit(std::string_view name);
Unit canonical_unit(Variable v);

/// Exact affine conversion between compatible units.
double convert_units(double value, Unit from, Unit to);

// ---------------------------------------------------------------------------
// Stations and observations

enum class Source { Official, TPAWS };

std::string_view to_string(Source s);
Source parse_source(std::string_view name);

struct StationMeta {
  std::string id;
  double latitude = 0.0;
  double longitude = 0.0;
  double elevation = 0.0;
  Source source = Source::Official;
};

/// Throws InvalidArgument when coordinates are out of range.
void validate(const StationMeta& meta);

enum class QualityHint { Raw, OfficialQCed };

struct Observation {
  std::string station_id;
  Date date{};
  Variable variable = Variable::Tmax;
  double value = 0.0;
  std::optional<QualityHint> quality_hint;
};

/// One station's daily values for one variable. Missing days are absent keys.
struct DailySeries {
  std::string station_id;
  Variable variable = Variable::Tmax;
  std::map<Date, double> values;

  std::optional<double> at(Date d) const {
    auto it = values.find(d);
    if (it == values.end()) return std::nullopt;
    return it->second;
  }
  bool empty() const { return values.empty(); }
  std::size_t size() const { return values.size(); }
};

/// Restricts a series to [from, to] inclusive.
DailySeries slice(const DailySeries& series, Date from, Date to);

// ---------------------------------------------------------------------------
// Physical limits and the domain test

struct PhysicalLimits {
  double lower = 0.0;
  double upper = 0.0;
};

struct DailyContext {
  std::optional<double> same_day_tmin;
  std::optional<double> same_day_tmax;
  double elevation = 0.0;
};

inline constexpr double kHighElevationMetres = 1000.0;

PhysicalLimits variable_limits(Variable v, const DailyContext& ctx);

struct DomainVerdict {
  enum class Bound { None, Lower, Upper };

  bool pass = true;
  Bound violated = Bound::None;
  double limit = 0.0;

  static DomainVerdict Pass() { return {}; }
  static DomainVerdict Fail(Bound b, double limit) { return {false, b, limit}; }
  std::string reason() const;
};

DomainVerdict domain_test(const Observation& obs, const DailyContext& ctx);

// ---------------------------------------------------------------------------
// Deterministic random numbers
//
// std distributions are implementation-defined, so draws are produced here
// from the raw 64-bit engine to keep outputs identical across toolchains.

class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  std::uint64_t next();
  /// Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t state_[4];
  std::optional<double> spare_;
};

/// Derives an independent stream seed from a base seed and a label.
std::uint64_t derive_seed(std::uint64_t base, std::string_view label);

inline constexpr double kSigmaFloor = 1e-3;

}  // namespace tpaws
