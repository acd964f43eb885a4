#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tpaws/pipeline.hpp"

namespace tpaws {

// ---------------------------------------------------------------------------
// Synthetic network

struct Region {
  double lat_min = -34.0;
  double lat_max = -30.0;
  double lon_min = 115.0;
  double lon_max = 119.0;
};

/// Per-variable generator parameters. For wind gusts the anomaly is a
/// log-scale multiplier of the seasonal mean.
struct VariableClimate {
  double mean = 0.0;
  double seasonal_amplitude = 0.0;
  double anomaly_sd = 1.0;
  double noise_sd = 1.0;
  double diurnal_amplitude = 0.0;
  double hourly_noise_sd = 0.0;
};

VariableClimate default_climate(Variable v);

struct SyntheticConfig {
  int n_stations = 100;
  int n_tpaws = 10;
  Region region;
  int years = 4;
  Variable variable = Variable::Tmax;
  double spatial_range_km = 150.0;
  std::optional<double> noise_sd;            ///< overrides the variable default
  std::optional<double> seasonal_amplitude;  ///< overrides the variable default
  double temporal_ar = 0.6;
  double grid_cell_deg = 0.25;
  bool with_grids = true;
  bool with_hourly = true;
  Date start = Date{std::chrono::year{2016} / 1 / 1};
  std::uint64_t seed = 42;

  void validate() const;
  VariableClimate climate() const;
};

inline constexpr double kCovarianceNugget = 1e-6;

struct SyntheticNetwork {
  SyntheticConfig config;
  Dataset data;  ///< TPAWS stations first; hourly streams for TPAWS sites only
  /// Standardised spatial anomaly per station and day (before scaling).
  std::map<std::string, std::vector<double>> anomalies;
  int n_days = 0;
};

/// Exponential covariance exp(-d / range) between sites plus the nugget on
/// the diagonal; throws CovarianceNotPD when the factorisation fails.
Eigen::MatrixXd exponential_covariance_factor(const std::vector<std::pair<double, double>>& sites, double range_km);

SyntheticNetwork synthesize_network(const SyntheticConfig& config);

// ---------------------------------------------------------------------------
// Error injection

struct InjectionSpec {
  enum class Sign { Positive, Negative, Both };

  double fraction = 0.10;
  double magnitude_low = 18.0;
  double magnitude_high = 52.56;
  Sign sign = Sign::Positive;
  std::uint64_t seed = 1;

  void validate() const;
};

std::string_view to_string(InjectionSpec::Sign s);
InjectionSpec::Sign parse_sign(std::string_view name);

struct InjectionResult {
  DailySeries series;
  std::map<Date, double> deltas;  ///< contaminated days and the added error
};

InjectionResult inject_errors(const DailySeries& series, const InjectionSpec& spec);

// ---------------------------------------------------------------------------
// Skill evaluation

struct TruthLabel {
  std::string station_id;
  Date date{};
  bool contaminated = false;
  double true_value = 0.0;  ///< pre-injection value, used for banding
};

/// Half-open intervals with an inclusive flag on either side.
struct Band {
  std::string name;
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
  bool lower_inclusive = true;
  bool upper_inclusive = true;

  bool contains(double v) const;
};

/// <25, [25, 60], >60 km/h for wind gusts; none for other variables.
std::vector<Band> default_bands(Variable v);

struct Confusion {
  long contaminated = 0;
  long contaminated_flagged = 0;
  long clean = 0;
  long clean_flagged = 0;
  long not_applicable = 0;
};

struct Rates {
  Confusion counts;
  std::optional<double> hit_rate;          ///< NA without contaminated cases
  std::optional<double> false_alarm_rate;  ///< NA without clean cases
};

struct SkillStats {
  Rates all;
  std::vector<std::pair<std::string, Rates>> per_band;
};

SkillStats evaluate(const std::vector<Assessment>& assessments, const std::vector<TruthLabel>& labels,
                    double cl_threshold = kDefaultClThreshold, const std::vector<Band>& bands = {});

/// The same evaluation restricted to one test: its own CL replaces the fused
/// one (domain failures still flag; NA when the test was not evaluated).
SkillStats evaluate_test(const std::vector<Assessment>& assessments, const std::vector<TruthLabel>& labels,
                         TestId test, double cl_threshold = kDefaultClThreshold,
                         const std::vector<Band>& bands = {});

/// One column per test that produced any result (enum order), then "Merged".
std::vector<std::pair<std::string, SkillStats>> skill_columns(const std::vector<Assessment>& assessments,
                                                              const std::vector<TruthLabel>& labels,
                                                              double cl_threshold, const std::vector<Band>& bands);

// ---------------------------------------------------------------------------
// Experiment

struct ExperimentConfig {
  SyntheticConfig network;
  InjectionSpec injection;
  double cl_threshold = kDefaultClThreshold;
  CalibrationOptions calibration;
  PipelineOptions pipeline;
  /// Lags from days that were themselves flagged are withheld from the
  /// trend and spatiotemporal tests.
  bool withhold_flagged_lags = true;
};

struct ExperimentReport {
  Variable variable = Variable::Tmax;
  double cl_threshold = kDefaultClThreshold;
  Date calibration_from{}, calibration_to{}, evaluation_from{}, evaluation_to{};
  std::vector<std::string> band_names;
  std::vector<std::pair<std::string, SkillStats>> columns;  ///< per test, then "Merged"
  std::vector<std::string> notes;

  const SkillStats* column(std::string_view name) const;
};

ExperimentReport run_experiment(const ExperimentConfig& config);

/// Table-shaped text rendering.
std::string format_report_text(const ExperimentReport& report);

}  // namespace tpaws
