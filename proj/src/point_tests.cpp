#include "tpaws/point_tests.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace tpaws {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double great_circle_km(double lat1, double lon1, double lat2, double lon2) {
  constexpr double deg = std::numbers::pi / 180.0;
  const double dlat = (lat2 - lat1) * deg;
  const double dlon = (lon2 - lon1) * deg;
  const double h = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(lat1 * deg) * std::cos(lat2 * deg) * std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

std::vector<StationMeta> select_neighbors(const StationMeta& target, const std::vector<StationMeta>& candidates,
                                          double radius_km) {
  std::vector<std::pair<double, const StationMeta*>> within;
  for (const auto& c : candidates) {
    if (c.source != Source::Official || c.id == target.id) continue;
    const double d = great_circle_km(target.latitude, target.longitude, c.latitude, c.longitude);
    if (d <= radius_km) within.emplace_back(d, &c);
  }
  std::sort(within.begin(), within.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return a.second->id < b.second->id;
  });
  std::vector<StationMeta> out;
  out.reserve(within.size());
  for (const auto& [d, s] : within) out.push_back(*s);
  return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(GridProductKind p) {
  switch (p) {
    case GridProductKind::NWP: return "NWP";
    case GridProductKind::AGCD: return "AGCD";
    case GridProductKind::ERA: return "ERA";
    case GridProductKind::Radar: return "Radar";
  }
  return "?";
}

GridProductKind parse_product(std::string_view name) {
  for (auto p : {GridProductKind::NWP, GridProductKind::AGCD, GridProductKind::ERA, GridProductKind::Radar})
    if (to_string(p) == name) return p;
  throw Error(ErrorCode::ParseError, "unknown grid product '" + std::string(name) + "'");
}

TestId gridded_test_id(GridProductKind p) {
  switch (p) {
    case GridProductKind::NWP: return TestId::GriddedNWP;
    case GridProductKind::AGCD: return TestId::GriddedAGCD;
    case GridProductKind::ERA: return TestId::GriddedERA;
    case GridProductKind::Radar: return TestId::GriddedRadar;
  }
  return TestId::GriddedNWP;
}

GridProductKind product_of(TestId id) {
  switch (id) {
    case TestId::GriddedNWP: return GridProductKind::NWP;
    case TestId::GriddedAGCD: return GridProductKind::AGCD;
    case TestId::GriddedERA: return GridProductKind::ERA;
    case TestId::GriddedRadar: return GridProductKind::Radar;
    default: throw Error(ErrorCode::InvalidArgument, "not a gridded test");
  }
}

bool product_allowed(Variable v, GridProductKind p) {
  switch (p) {
    case GridProductKind::NWP:
      return v == Variable::Tmax || v == Variable::Tmin || v == Variable::WindGust ||
             v == Variable::Humidity9am || v == Variable::Humidity3pm;
    case GridProductKind::AGCD:
      return v == Variable::Tmax || v == Variable::Tmin || v == Variable::Rain ||
             v == Variable::Humidity9am || v == Variable::Humidity3pm;
    case GridProductKind::ERA: return v == Variable::WindGust;
    case GridProductKind::Radar: return v == Variable::Rain;
  }
  return false;
}

std::vector<GridProductKind> products_for(Variable v) {
  std::vector<GridProductKind> out;
  for (auto p : {GridProductKind::NWP, GridProductKind::AGCD, GridProductKind::ERA, GridProductKind::Radar})
    if (product_allowed(v, p)) out.push_back(p);
  return out;
}

std::optional<std::size_t> GridProduct::date_index(Date d) const {
  auto it = std::lower_bound(dates.begin(), dates.end(), d);
  if (it == dates.end() || *it != d) return std::nullopt;
  return static_cast<std::size_t>(it - dates.begin());
}

std::optional<double> extract_grid_value(const GridProduct& grid, double lat, double lon, Date date) {
  constexpr double eps = 1e-9;
  const double r = (lat - grid.origin_lat) / grid.cell_size;
  const double c = (lon - grid.origin_lon) / grid.cell_size;
  if (r < -eps || c < -eps || r > grid.nrows - 1 + eps || c > grid.ncols - 1 + eps)
    throw Error(ErrorCode::OutOfBounds, "site outside grid");
  const auto idx = grid.date_index(date);
  if (!idx) return std::nullopt;

  auto split = [](double x, int n) {
    int lo = static_cast<int>(std::floor(std::max(x, 0.0)));
    lo = std::clamp(lo, 0, std::max(n - 2, 0));
    const double frac = n == 1 ? 0.0 : std::clamp(x - lo, 0.0, 1.0);
    return std::pair{lo, frac};
  };
  const auto [r0, fr] = split(r, grid.nrows);
  const auto [c0, fc] = split(c, grid.ncols);

  double acc = 0.0;
  for (int dr = 0; dr <= 1; ++dr)
    for (int dc = 0; dc <= 1; ++dc) {
      const double w = (dr ? fr : 1.0 - fr) * (dc ? fc : 1.0 - fc);
      if (w == 0.0) continue;
      const double v = grid.at(*idx, r0 + dr, c0 + dc);
      if (std::isnan(v)) return std::nullopt;
      acc += w * v;
    }
  return acc;
}

DailySeries extract_grid_series(const GridProduct& grid, const std::string& station_id, double lat, double lon) {
  DailySeries s{station_id, grid.variable, {}};
  for (Date d : grid.dates)
    if (auto v = extract_grid_value(grid, lat, lon, d)) s.values.emplace(d, *v);
  return s;
}

std::chrono::sys_seconds nwp_issuance_for_day(Date local_day, double utc_offset_hours) {
  using namespace std::chrono;
  const auto day_start_utc =
      sys_seconds{local_day} - seconds{static_cast<long long>(std::llround(utc_offset_hours * 3600.0))};
  const long long t = day_start_utc.time_since_epoch().count();
  constexpr long long six_hours = 6 * 3600;
  long long q = t / six_hours;
  if (t % six_hours != 0 && t < 0) --q;
  return sys_seconds{seconds{q * six_hours}};
}

std::optional<double> aggregate_hourly_forecast(const std::vector<double>& hourly, Variable v) {
  std::vector<double> valid;
  for (double x : hourly)
    if (!std::isnan(x)) valid.push_back(x);
  switch (v) {
    case Variable::Tmax:
    case Variable::WindGust:
      if (valid.empty()) return std::nullopt;
      return *std::max_element(valid.begin(), valid.end());
    case Variable::Tmin:
      if (valid.empty()) return std::nullopt;
      return *std::min_element(valid.begin(), valid.end());
    case Variable::Rain:
      if (hourly.size() != 24 || valid.size() != 24) return std::nullopt;
      return std::accumulate(valid.begin(), valid.end(), 0.0);
    case Variable::Humidity9am:
    case Variable::Humidity3pm: {
      const std::size_t h = v == Variable::Humidity9am ? 9 : 15;
      if (hourly.size() <= h || std::isnan(hourly[h])) return std::nullopt;
      return hourly[h];
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------

double robust_mse(std::span<const double> residuals, double trim_sigmas) {
  if (residuals.empty()) throw Error(ErrorCode::TooFewSamples, "robust_mse of empty sample");
  const double med = median(residuals);
  const double sd = std::max(kMadToSigma * mad(residuals), kSigmaFloor);
  double acc = 0.0;
  std::size_t n = 0;
  for (double r : residuals)
    if (std::abs(r - med) <= trim_sigmas * sd) {
      acc += r * r;
      ++n;
    }
  return n ? acc / static_cast<double>(n) : 0.0;
}

namespace {

struct Aligned {
  std::vector<Date> days;
  std::vector<double> target;
  std::vector<std::vector<double>> predictors;  // [predictor][row]
};

Aligned align(const DailySeries& target, const std::vector<const DailySeries*>& preds) {
  Aligned a;
  a.predictors.resize(preds.size());
  for (const auto& [d, v] : target.values) {
    bool ok = true;
    for (const auto* p : preds)
      if (!p->values.count(d)) {
        ok = false;
        break;
      }
    if (!ok) continue;
    a.days.push_back(d);
    a.target.push_back(v);
    for (std::size_t j = 0; j < preds.size(); ++j) a.predictors[j].push_back(preds[j]->values.at(d));
  }
  return a;
}

std::size_t overlap(const DailySeries& a, const DailySeries& b) {
  std::size_t n = 0;
  for (const auto& [d, v] : a.values) n += b.values.count(d);
  return n;
}

double lower_bound_of(Variable v) { return variable_limits(v, DailyContext{}).lower; }

std::optional<double> dry_fraction(Variable v, std::span<const double> values) {
  if (v != Variable::Rain) return std::nullopt;
  const double lb = lower_bound_of(v);
  const auto dry = std::count_if(values.begin(), values.end(), [lb](double x) { return x <= lb; });
  const double m = static_cast<double>(dry) / static_cast<double>(values.size());
  return std::min(m, 1.0 - 1.0 / static_cast<double>(values.size() + 1));
}

// Residual subset on which the error model is fitted: wet days only for rain.
std::vector<double> error_residuals(const std::vector<double>& residuals, const std::vector<double>& raw_target,
                                    const std::vector<std::size_t>& rows, std::optional<double> zero_mass,
                                    Variable v) {
  std::vector<double> out;
  if (zero_mass) {
    const double lb = lower_bound_of(v);
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (raw_target[rows[i]] > lb) out.push_back(residuals[i]);
    if (out.size() >= kMinErrorModelSamples) return out;
  }
  return residuals;
}

struct RegressionFit {
  LassoModel lasso;
  GaussianErrorModel error;
  double cal_mse = 0.0;
};

RegressionFit fit_regression(const MatrixXd& X, const VectorXd& y, const std::vector<double>& raw_target,
                             std::optional<double> zero_mass, Variable v, const PointTestConfig& cfg) {
  std::vector<std::size_t> rows(static_cast<std::size_t>(y.size()));
  std::iota(rows.begin(), rows.end(), 0);
  LassoCvResult cv = lasso_cv(X, y, cfg.cv);
  VectorXd resid = y - cv.oof_predictions;

  if (cfg.robust_refit) {
    std::vector<double> r(resid.data(), resid.data() + resid.size());
    const GaussianErrorModel first = robust_gaussian_fit(r);
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (std::abs(r[i] - first.mu) <= cfg.trim_sigmas * first.sigma) keep.push_back(i);
    if (keep.size() < rows.size() && keep.size() >= static_cast<std::size_t>(5 * cfg.cv.folds)) {
      std::vector<Eigen::Index> idx(keep.begin(), keep.end());
      const MatrixXd Xk = X(idx, Eigen::all);
      const VectorXd yk = y(idx);
      cv = lasso_cv(Xk, yk, cfg.cv);
      resid = yk - cv.oof_predictions;
      rows = keep;
    }
  }
  std::vector<double> r(resid.data(), resid.data() + resid.size());
  RegressionFit fit;
  fit.lasso = cv.model;
  fit.error = robust_gaussian_fit(error_residuals(r, raw_target, rows, zero_mass, v));
  fit.cal_mse = robust_mse(r, cfg.trim_sigmas);
  return fit;
}

SpatialModel calibrate_regression(const DailySeries& target, const std::vector<DailySeries>& neighbors,
                                  const PointTestConfig& cfg, TransformSpec::Kind kind) {
  if (neighbors.size() < 2) throw Error(ErrorCode::NoNeighbors, "spatial calibration needs at least 2 neighbors");
  std::vector<const DailySeries*> kept;
  for (const auto& n : neighbors) {
    if (static_cast<int>(kept.size()) >= cfg.max_neighbors) break;
    if (static_cast<int>(overlap(target, n)) >= cfg.min_overlap_days) kept.push_back(&n);
  }
  if (kept.size() < 2)
    throw Error(ErrorCode::NoNeighbors, "fewer than 2 neighbors overlap the target sufficiently");
  Aligned a = align(target, kept);
  if (static_cast<int>(a.days.size()) < cfg.min_overlap_days)
    throw Error(ErrorCode::InsufficientOverlap, "too few complete days for spatial calibration");

  std::vector<double> pooled = a.target;
  for (const auto& p : a.predictors) pooled.insert(pooled.end(), p.begin(), p.end());
  const TransformSpec ts = fit_transform(pooled, kind);

  const auto n = static_cast<Eigen::Index>(a.days.size());
  const auto p = static_cast<Eigen::Index>(kept.size());
  MatrixXd X(n, p);
  VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    y[i] = forward(ts, a.target[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < p; ++j)
      X(i, j) = forward_clamped(ts, a.predictors[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)]);
  }

  SpatialModel m;
  m.variable = target.variable;
  m.target_station = target.station_id;
  for (const auto* k : kept) m.neighbor_ids.push_back(k->station_id);
  m.transform = ts;
  m.zero_mass = dry_fraction(target.variable, a.target);
  const RegressionFit fit = fit_regression(X, y, a.target, m.zero_mass, target.variable, cfg);
  m.lasso = fit.lasso;
  m.error = fit.error;
  m.cal_mse = fit.cal_mse;
  m.calibration_from = a.days.front();
  m.calibration_to = a.days.back();
  m.calibration_days = static_cast<int>(a.days.size());
  return m;
}

}  // namespace

SpatialModel calibrate_spatial(const DailySeries& target, const std::vector<DailySeries>& neighbors,
                               const PointTestConfig& config) {
  return calibrate_regression(target, neighbors, config,
                              config.transform_kind.value_or(default_transform_kind(target.variable)));
}

PredictiveDistribution spatial_prediction(const SpatialModel& model,
                                          const std::map<std::string, double>& todays_neighbors) {
  const auto p = static_cast<Eigen::Index>(model.neighbor_ids.size());
  VectorXd x(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    auto it = todays_neighbors.find(model.neighbor_ids[static_cast<std::size_t>(j)]);
    x[j] = it != todays_neighbors.end() ? forward_clamped(model.transform, it->second)
                                        : model.lasso.predictor_means[j];
  }
  PredictiveDistribution d;
  d.mean = model.lasso.predict(x) + model.error.mu;
  d.sigma = model.error.sigma;
  d.transform = model.transform;
  d.zero_mass = model.zero_mass;
  d.lower_bound = lower_bound_of(model.variable);
  return d;
}

TestResult run_spatial_test(const SpatialModel& model, const Observation& obs,
                            const std::map<std::string, double>& todays_neighbors) {
  std::map<std::string, double> used;
  for (const auto& id : model.neighbor_ids)
    if (auto it = todays_neighbors.find(id); it != todays_neighbors.end()) used.emplace(id, it->second);
  if (used.size() < 2) return TestResult::not_applicable(TestId::Spatial, "fewer than 2 neighbors reporting");
  TestResult r = score_against(TestId::Spatial, obs.value, spatial_prediction(model, todays_neighbors), model.cal_mse);
  r.inputs_used = std::move(used);
  return r;
}

DailySeries daily_differences(const DailySeries& series) {
  DailySeries out{series.station_id, series.variable, {}};
  for (auto it = series.values.begin(); it != series.values.end(); ++it) {
    auto prev = series.values.find(it->first - std::chrono::days{1});
    if (prev != series.values.end()) out.values.emplace_hint(out.values.end(), it->first, it->second - prev->second);
  }
  return out;
}

TrendModel calibrate_trend(const DailySeries& target, const std::vector<DailySeries>& neighbors,
                           const PointTestConfig& config) {
  std::vector<DailySeries> diffs;
  diffs.reserve(neighbors.size());
  for (const auto& n : neighbors) diffs.push_back(daily_differences(n));
  // Differences are signed and roughly symmetric, so no transform is applied.
  TrendModel m = calibrate_regression(daily_differences(target), diffs, config, TransformSpec::Kind::Identity);
  m.variable = target.variable;
  m.zero_mass.reset();
  return m;
}

TestResult run_trend_test(const TrendModel& model, const Observation& obs, std::optional<double> yesterday,
                          const std::map<std::string, double>& todays_neighbors,
                          const std::map<std::string, double>& yesterdays_neighbors) {
  if (!yesterday) return TestResult::not_applicable(TestId::Trend, "previous-day observation missing");
  std::map<std::string, double> deltas;
  for (const auto& id : model.neighbor_ids) {
    auto t = todays_neighbors.find(id);
    auto y = yesterdays_neighbors.find(id);
    if (t != todays_neighbors.end() && y != yesterdays_neighbors.end()) deltas.emplace(id, t->second - y->second);
  }
  if (deltas.size() < 2)
    return TestResult::not_applicable(TestId::Trend, "fewer than 2 neighbors reporting on both days");
  PredictiveDistribution d = spatial_prediction(model, deltas);
  d.zero_mass.reset();
  // Distribution of today's value = distribution of the change shifted by yesterday.
  d.mean += *yesterday;
  TestResult r = score_against(TestId::Trend, obs.value, d, model.cal_mse);
  r.inputs_used = deltas;
  r.inputs_used["yesterday"] = *yesterday;
  return r;
}

// ---------------------------------------------------------------------------

std::pair<double, double> repeated_median_line(std::span<const double> x, std::span<const double> y,
                                               std::size_t max_points, std::uint64_t seed) {
  if (x.size() != y.size() || x.size() < 3)
    throw Error(ErrorCode::TooFewSamples, "repeated median needs at least 3 points");
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  if (idx.size() > max_points) {
    Rng rng(seed);
    for (std::size_t i = 0; i < max_points; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.uniform() * static_cast<double>(idx.size() - i));
      std::swap(idx[i], idx[std::min(j, idx.size() - 1)]);
    }
    idx.resize(max_points);
    std::sort(idx.begin(), idx.end());
  }
  std::vector<double> medians;
  std::vector<double> slopes;
  for (std::size_t i : idx) {
    slopes.clear();
    for (std::size_t j : idx)
      if (j != i && x[j] != x[i]) slopes.push_back((y[j] - y[i]) / (x[j] - x[i]));
    if (!slopes.empty()) medians.push_back(median(slopes));
  }
  if (medians.empty()) throw Error(ErrorCode::FitDegenerate, "repeated median: constant abscissa");
  const double slope = median(medians);
  std::vector<double> icpt(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) icpt[i] = y[i] - slope * x[i];
  return {slope, median(icpt)};
}

GriddedModel calibrate_gridded(const DailySeries& target, const DailySeries& grid_series, GridProductKind product,
                               const PointTestConfig& config) {
  if (!product_allowed(target.variable, product))
    throw Error(ErrorCode::ProductVariableMismatch, std::string(to_string(product)) + " is not used for " +
                                                        std::string(to_string(target.variable)));
  Aligned a = align(target, {&grid_series});
  if (static_cast<int>(a.days.size()) < config.min_overlap_days)
    throw Error(ErrorCode::InsufficientOverlap, "too few overlapping days for gridded calibration");

  std::vector<double> pooled = a.target;
  pooled.insert(pooled.end(), a.predictors[0].begin(), a.predictors[0].end());
  GriddedModel m;
  m.product = product;
  m.variable = target.variable;
  m.transform = fit_transform(pooled, config.transform_kind.value_or(default_transform_kind(target.variable)));

  const std::size_t n = a.days.size();
  std::vector<double> zt(n), zg(n);
  for (std::size_t i = 0; i < n; ++i) {
    zt[i] = forward(m.transform, a.target[i]);
    zg[i] = forward_clamped(m.transform, a.predictors[0][i]);
  }
  std::tie(m.bias_slope, m.bias_intercept) = repeated_median_line(zg, zt);
  std::vector<double> resid(n);
  for (std::size_t i = 0; i < n; ++i) resid[i] = zt[i] - (m.bias_intercept + m.bias_slope * zg[i]);

  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  m.zero_mass = dry_fraction(target.variable, a.target);
  m.error = robust_gaussian_fit(error_residuals(resid, a.target, rows, m.zero_mass, m.variable));
  m.cal_mse = robust_mse(resid, config.trim_sigmas);
  m.calibration_from = a.days.front();
  m.calibration_to = a.days.back();
  m.calibration_days = static_cast<int>(n);
  return m;
}

TestResult run_gridded_test(const GriddedModel& model, const Observation& obs,
                            std::optional<double> todays_grid_value) {
  const TestId id = gridded_test_id(model.product);
  if (!todays_grid_value) return TestResult::not_applicable(id, "grid value missing");
  PredictiveDistribution d;
  d.mean = model.bias_intercept + model.bias_slope * forward_clamped(model.transform, *todays_grid_value) +
           model.error.mu;
  d.sigma = model.error.sigma;
  d.transform = model.transform;
  d.zero_mass = model.zero_mass;
  d.lower_bound = lower_bound_of(model.variable);
  TestResult r = score_against(id, obs.value, d, model.cal_mse);
  r.inputs_used["grid"] = *todays_grid_value;
  return r;
}

}  // namespace tpaws
