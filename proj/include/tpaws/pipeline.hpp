#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>

#include "tpaws/assessment.hpp"
#include "tpaws/point_tests.hpp"
#include "tpaws/spatiotemporal.hpp"
#include "tpaws/subdaily.hpp"

namespace tpaws {

/// Station metadata and every data stream for one variable.
struct Dataset {
  Variable variable = Variable::Tmax;
  std::vector<StationMeta> stations;
  std::map<std::string, DailySeries> daily;
  std::vector<GridProduct> grids;
  std::map<std::string, std::map<Date, SubdailySeries>> hourly;       ///< TPAWS readings
  std::map<std::string, std::map<Date, SubdailySeries>> hourly_grid;  ///< hourly forecast at TPAWS sites

  std::vector<StationMeta> officials() const;
  std::vector<StationMeta> tpaws() const;
  const StationMeta& station(const std::string& id) const;
  const GridProduct* grid(GridProductKind p) const;
};

/// Calibrated models of one (station, variable).
struct StationModels {
  std::string station_id;
  Variable variable = Variable::Tmax;
  std::optional<SpatialModel> spatial;
  std::optional<TrendModel> trend;
  std::optional<StModelSet> st;
  std::map<GridProductKind, GriddedModel> gridded;
  std::optional<DlmSpec> subdaily;
};

/// Everything observed around one TPAWS reading.
struct DayInputs {
  Observation obs;
  DailyContext context;
  std::optional<double> yesterday;
  std::map<std::string, double> neighbors_today;
  std::map<std::string, double> neighbors_yesterday;
  std::optional<StInputs> st;
  std::map<GridProductKind, double> grid_values;
  std::optional<SubdailySeries> subdaily_day;
  std::optional<SubdailySeries> subdaily_grid_day;
};

struct PipelineOptions {
  int min_calibration_days = kMinCalibrationDays;
  std::set<TestId> disabled;
  SubdailyOptions subdaily;
};

struct CalibrationOptions {
  PointTestConfig point;
  ScreeningConfig screening;
  StConfig st;
  DlmCalibrationOptions dlm;
  double radius_km = kDefaultRadiusKm;
  int max_candidates = 10;
  std::set<TestId> disabled;
};

/// Calibrates every test whose data exist for one station over [from, to].
/// Failures leave the corresponding model empty and are listed in `notes`.
StationModels calibrate_station(const Dataset& data, const StationMeta& station, Date from, Date to,
                                const CalibrationOptions& options = {}, std::vector<std::string>* notes = nullptr);

/// Previous TPAWS values as the assessor may use them (nullopt = withheld).
using LagLookup = std::function<std::optional<double>(Date)>;

/// Collects the inputs every calibrated test needs for one observation.
DayInputs gather_day_inputs(const Dataset& data, const StationModels& models, const StationMeta& station,
                            const Observation& obs, const LagLookup& lag);

/// Domain gate, applicable tests, pre-assessment, fusion. Every evaluated
/// test stays in Assessment::results, including one set aside by the
/// pre-assessment.
Assessment assess_observation(const StationModels& models, const DayInputs& inputs,
                              const PipelineOptions& options = {});

/// Assesses `days` in order. With `withhold_flagged_lags`, a day that was
/// itself flagged is not offered as a lag to later days.
std::vector<Assessment> assess_days(const Dataset& data, const StationModels& models, const StationMeta& station,
                                    const DailySeries& reported, const std::vector<Date>& days,
                                    const PipelineOptions& options, double cl_threshold,
                                    bool withhold_flagged_lags = true);

}  // namespace tpaws
