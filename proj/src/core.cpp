#include "tpaws/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>

namespace tpaws {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::IncompatibleUnits: return "IncompatibleUnits";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::FitDegenerate: return "FitDegenerate";
    case ErrorCode::NotConverged: return "NotConverged";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::NumericalBreakdown: return "NumericalBreakdown";
    case ErrorCode::InsufficientOverlap: return "InsufficientOverlap";
    case ErrorCode::NoNeighbors: return "NoNeighbors";
    case ErrorCode::ProductVariableMismatch: return "ProductVariableMismatch";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::NoCandidates: return "NoCandidates";
    case ErrorCode::InsufficientHistory: return "InsufficientHistory";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::CovarianceNotPD: return "CovarianceNotPD";
    case ErrorCode::Misaligned: return "Misaligned";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::NotCalibrated: return "NotCalibrated";
    case ErrorCode::VersionError: return "VersionError";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

// ---------------------------------------------------------------------------

namespace {

bool parse_int(std::string_view s, int& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

}  // namespace

Date parse_date(std::string_view text) {
  using namespace std::chrono;
  auto fail = [&] {
    return Error(ErrorCode::ParseError, "invalid date '" + std::string(text) + "'");
  };
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') throw fail();
  for (std::size_t i : {0u, 1u, 2u, 3u, 5u, 6u, 8u, 9u})
    if (text[i] < '0' || text[i] > '9') throw fail();
  int y = 0, m = 0, d = 0;
  if (!parse_int(text.substr(0, 4), y) || !parse_int(text.substr(5, 2), m) ||
      !parse_int(text.substr(8, 2), d))
    throw fail();
  year_month_day ymd{year{y}, month{static_cast<unsigned>(m)},
                     day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) throw fail();
  return sys_days{ymd};
}

std::string format_date(Date d) {
  using namespace std::chrono;
  year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

int day_of_year(Date d) {
  using namespace std::chrono;
  year_month_day ymd{d};
  sys_days jan1{ymd.year() / January / 1};
  return static_cast<int>((d - jan1).count()) + 1;
}

int year_of(Date d) {
  return static_cast<int>(std::chrono::year_month_day{d}.year());
}

int month_of(Date d) {
  return static_cast<int>(static_cast<unsigned>(std::chrono::year_month_day{d}.month()));
}

// ---------------------------------------------------------------------------

std::string_view to_string(Variable v) {
  switch (v) {
    case Variable::Tmax: return "Tmax";
    case Variable::Tmin: return "Tmin";
    case Variable::Rain: return "Rain";
    case Variable::WindGust: return "WindGust";
    case Variable::Humidity9am: return "Humidity9am";
    case Variable::Humidity3pm: return "Humidity3pm";
  }
  return "?";
}

Variable parse_variable(std::string_view name) {
  for (Variable v : kAllVariables)
    if (to_string(v) == name) return v;
  throw Error(ErrorCode::ParseError, "unknown variable '" + std::string(name) + "'");
}

std::string_view to_string(Unit u) {
  switch (u) {
    case Unit::Celsius: return "degC";
    case Unit::Millimetre: return "mm";
    case Unit::KilometrePerHour: return "km/h";
    case Unit::MetrePerSecond: return "m/s";
    case Unit::Percent: return "%";
  }
  return "?";
}

Unit parse_unit(std::string_view name) {
  if (name == "degC" || name == "C" || name == "°C") return Unit::Celsius;
  if (name == "mm" || name == "mm/day") return Unit::Millimetre;
  if (name == "km/h") return Unit::KilometrePerHour;
  if (name == "m/s") return Unit::MetrePerSecond;
  if (name == "%") return Unit::Percent;
  throw Error(ErrorCode::ParseError, "unknown unit '" + std::string(name) + "'");
}

Unit canonical_unit(Variable v) {
  switch (v) {
    case Variable::Tmax:
    case Variable::Tmin: return Unit::Celsius;
    case Variable::Rain: return Unit::Millimetre;
    case Variable::WindGust: return Unit::KilometrePerHour;
    case Variable::Humidity9am:
    case Variable::Humidity3pm: return Unit::Percent;
  }
  return Unit::Celsius;
}

double convert_units(double value, Unit from, Unit to) {
  if (from == to) return value;
  if (from == Unit::MetrePerSecond && to == Unit::KilometrePerHour) return value * 3.6;
  if (from == Unit::KilometrePerHour && to == Unit::MetrePerSecond) return value / 3.6;
  throw Error(ErrorCode::IncompatibleUnits, "cannot convert " + std::string(to_string(from)) +
                                                " to " + std::string(to_string(to)));
}

std::string_view to_string(Source s) {
  return s == Source::Official ? "Official" : "TPAWS";
}

Source parse_source(std::string_view name) {
  if (name == "Official") return Source::Official;
  if (name == "TPAWS") return Source::TPAWS;
  throw Error(ErrorCode::ParseError, "unknown source '" + std::string(name) + "'");
}

void validate(const StationMeta& meta) {
  if (meta.id.empty()) throw Error(ErrorCode::InvalidArgument, "empty station id");
  if (!(meta.latitude >= -90.0 && meta.latitude <= 90.0))
    throw Error(ErrorCode::InvalidArgument, "latitude out of [-90, 90]");
  if (!(meta.longitude >= -180.0 && meta.longitude <= 180.0))
    throw Error(ErrorCode::InvalidArgument, "longitude out of [-180, 180]");
  if (!std::isfinite(meta.elevation))
    throw Error(ErrorCode::InvalidArgument, "elevation not finite");
}

DailySeries slice(const DailySeries& series, Date from, Date to) {
  DailySeries out{series.station_id, series.variable, {}};
  out.values.insert(series.values.lower_bound(from), series.values.upper_bound(to));
  return out;
}

// ---------------------------------------------------------------------------

PhysicalLimits variable_limits(Variable v, const DailyContext& ctx) {
  const double cold = ctx.elevation > kHighElevationMetres ? -40.0 : -30.0;
  switch (v) {
    case Variable::Tmax:
      return {ctx.same_day_tmin.value_or(cold), 60.0};
    case Variable::Tmin:
      return {cold, std::min(60.0, ctx.same_day_tmax.value_or(60.0))};
    case Variable::Rain: return {0.0, 2000.0};
    case Variable::WindGust: return {3.6, 540.0};
    case Variable::Humidity9am:
    case Variable::Humidity3pm: return {0.0, 100.0};
  }
  return {0.0, 0.0};
}

std::string DomainVerdict::reason() const {
  if (pass) return "pass";
  char buf[64];
  std::snprintf(buf, sizeof buf, "domain: %s %.17g",
                violated == Bound::Lower ? "below lower" : "above upper", limit);
  return buf;
}

DomainVerdict domain_test(const Observation& obs, const DailyContext& ctx) {
  const PhysicalLimits lim = variable_limits(obs.variable, ctx);
  if (!(obs.value >= lim.lower)) return DomainVerdict::Fail(DomainVerdict::Bound::Lower, lim.lower);
  if (!(obs.value <= lim.upper)) return DomainVerdict::Fail(DomainVerdict::Bound::Upper, lim.upper);
  return DomainVerdict::Pass();
}

// ---------------------------------------------------------------------------
// xoshiro256** seeded through splitmix64

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) {
  for (auto& s : state_) s = splitmix64(seed);
}

std::uint64_t Rng::next() {
  const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (spare_) {
    double v = *spare_;
    spare_.reset();
    return v;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * f;
  return u * f;
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view label) {
  // FNV-1a over the label, mixed with the base seed.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::uint64_t x = base ^ h;
  return splitmix64(x);
}

}  // namespace tpaws
