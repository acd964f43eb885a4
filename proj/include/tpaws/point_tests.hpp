#pragma once

#include <chrono>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tpaws/assessment.hpp"
#include "tpaws/core.hpp"
#include "tpaws/solvers.hpp"
#include "tpaws/transform.hpp"

namespace tpaws {

// ---------------------------------------------------------------------------
// Neighbours

inline constexpr double kEarthRadiusKm = 6371.0;
inline constexpr double kDefaultRadiusKm = 200.0;

double great_circle_km(double lat1, double lon1, double lat2, double lon2);

/// Official candidates within radius_km (inclusive), nearest first, ties by id.
std::vector<StationMeta> select_neighbors(const StationMeta& target, const std::vector<StationMeta>& candidates,
                                          double radius_km = kDefaultRadiusKm);

// ---------------------------------------------------------------------------
// Gridded products

enum class GridProductKind { NWP, AGCD, ERA, Radar };

std::string_view to_string(GridProductKind p);
GridProductKind parse_product(std::string_view name);
TestId gridded_test_id(GridProductKind p);
GridProductKind product_of(TestId id);

/// Which official products serve which variable.
bool product_allowed(Variable v, GridProductKind p);
std::vector<GridProductKind> products_for(Variable v);

/// Regular lat/lon lattice of cell-centre values, one layer per date.
/// Row 0 sits at origin_lat and rows advance northwards; missing cells are NaN.
struct GridProduct {
  GridProductKind product = GridProductKind::AGCD;
  Variable variable = Variable::Tmax;
  double origin_lat = 0.0;
  double origin_lon = 0.0;
  double cell_size = 1.0;
  int nrows = 0;
  int ncols = 0;
  std::vector<Date> dates;   ///< strictly increasing
  std::vector<double> values;  ///< dates.size() * nrows * ncols, row-major per date

  double at(std::size_t date_index, int row, int col) const {
    return values[(date_index * static_cast<std::size_t>(nrows) + static_cast<std::size_t>(row)) *
                      static_cast<std::size_t>(ncols) +
                  static_cast<std::size_t>(col)];
  }
  std::optional<std::size_t> date_index(Date d) const;
};

/// Bilinear interpolation between the four surrounding cell centres.
/// Throws OutOfBounds outside the cell-centre hull; nullopt when the date or
/// any contributing cell is missing.
std::optional<double> extract_grid_value(const GridProduct& grid, double lat, double lon, Date date);

/// Daily series of the grid at one site.
DailySeries extract_grid_series(const GridProduct& grid, const std::string& station_id, double lat, double lon);

/// Most recent 00/06/12/18 UTC issuance at or before the start of the local day.
std::chrono::sys_seconds nwp_issuance_for_day(Date local_day, double utc_offset_hours);

/// Daily statistic of an hourly forecast for the variable: max (Tmax, gust),
/// min (Tmin), sum (rain), the 09:00/15:00 local value (humidity).
/// `hourly` holds local hours 0..23; NaN marks missing hours.
std::optional<double> aggregate_hourly_forecast(const std::vector<double>& hourly, Variable v);

// ---------------------------------------------------------------------------
// Shared configuration

struct PointTestConfig {
  std::optional<TransformSpec::Kind> transform_kind;  ///< default per variable
  int min_overlap_days = kMinCalibrationDays;
  int max_neighbors = 10;
  LassoCvOptions cv;
  bool robust_refit = true;
  double trim_sigmas = 4.0;
};

/// Mean squared residual after dropping points further than trim_sigmas
/// robust standard deviations from the median.
double robust_mse(std::span<const double> residuals, double trim_sigmas = 4.0);

// ---------------------------------------------------------------------------
// Spatial and trend tests

/// LASSO regression of the transformed target on transformed neighbours.
/// The trend test uses the same shape fitted on day-to-day differences.
struct SpatialModel {
  std::string target_station;
  std::vector<std::string> neighbor_ids;
  LassoModel lasso;
  TransformSpec transform;
  GaussianErrorModel error;
  Date calibration_from{};
  Date calibration_to{};
  int calibration_days = 0;
  double cal_mse = 0.0;
  std::optional<double> zero_mass;
  Variable variable = Variable::Tmax;
};

using TrendModel = SpatialModel;

/// `neighbors` are in preference order (nearest first).
SpatialModel calibrate_spatial(const DailySeries& target, const std::vector<DailySeries>& neighbors,
                               const PointTestConfig& config = {});

PredictiveDistribution spatial_prediction(const SpatialModel& model,
                                          const std::map<std::string, double>& todays_neighbors);

TestResult run_spatial_test(const SpatialModel& model, const Observation& obs,
                            const std::map<std::string, double>& todays_neighbors);

/// y_t - y_{t-1} over consecutive calendar days.
DailySeries daily_differences(const DailySeries& series);

TrendModel calibrate_trend(const DailySeries& target, const std::vector<DailySeries>& neighbors,
                           const PointTestConfig& config = {});

TestResult run_trend_test(const TrendModel& model, const Observation& obs, std::optional<double> yesterday,
                          const std::map<std::string, double>& todays_neighbors,
                          const std::map<std::string, double>& yesterdays_neighbors);

// ---------------------------------------------------------------------------
// Gridded-data test

struct GriddedModel {
  GridProductKind product = GridProductKind::AGCD;
  Variable variable = Variable::Tmax;
  TransformSpec transform;
  GaussianErrorModel error;
  double bias_slope = 1.0;
  double bias_intercept = 0.0;
  Date calibration_from{};
  Date calibration_to{};
  int calibration_days = 0;
  double cal_mse = 0.0;
  std::optional<double> zero_mass;
};

/// Siegel repeated-median line through (x, y), on at most max_points points
/// drawn with a fixed seed.
std::pair<double, double> repeated_median_line(std::span<const double> x, std::span<const double> y,
                                               std::size_t max_points = 500, std::uint64_t seed = 7);

GriddedModel calibrate_gridded(const DailySeries& target, const DailySeries& grid_series, GridProductKind product,
                               const PointTestConfig& config = {});

TestResult run_gridded_test(const GriddedModel& model, const Observation& obs,
                            std::optional<double> todays_grid_value);

}  // namespace tpaws
