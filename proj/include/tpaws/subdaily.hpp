#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tpaws/assessment.hpp"
#include "tpaws/kalman.hpp"

namespace tpaws {

/// Readings of one variable at one station within one local calendar day.
struct SubdailySeries {
  std::string station_id;
  Date date{};
  Variable variable = Variable::Tmax;
  /// (time since local midnight, value), strictly increasing in time.
  std::vector<std::pair<std::chrono::minutes, double>> values;
};

inline constexpr int kHoursPerDay = 24;

/// Hourly slot means; nullopt for empty slots.
std::vector<std::optional<double>> hourly_slots(const SubdailySeries& s);

/// Dynamic linear model with state [level, diurnal cos, diurnal sin, grid offset].
///
///   level       random walk            (w_level)
///   diurnal     24 h rotation          (w_harmonic on both components)
///   grid offset random walk            (w_offset)
///   TPAWS obs = level + cos term + noise (v_tpaws)
///   grid  obs = level + cos term + offset + noise (v_grid)
struct DlmSpec {
  double w_level = 1e-2;
  double w_harmonic = 1e-2;
  double w_offset = 1e-4;
  double v_tpaws = 1e-2;
  double v_grid = 1e-2;
  Eigen::Vector4d prior_mean = Eigen::Vector4d::Zero();
  Eigen::Matrix4d prior_covariance = Eigen::Matrix4d::Identity();
  int calibration_days = 0;  ///< days of sub-daily history offered to calibration

  Eigen::MatrixXd transition() const;   ///< G
  Eigen::MatrixXd process_noise() const;  ///< W
  Eigen::MatrixXd observation() const;  ///< F, rows (TPAWS, grid)
  Eigen::MatrixXd observation_noise() const;  ///< V, diagonal
};

inline constexpr int kMinDlmHistoryDays = 60;

struct DlmCalibrationOptions {
  int max_history_days = 120;  ///< most recent days used
};

DlmSpec calibrate_dlm(const std::vector<SubdailySeries>& history, const std::vector<SubdailySeries>& grid_history,
                      const DlmCalibrationOptions& options = {});

/// Filtered moments over one day of hourly slots.
struct DlmDayFilter {
  std::vector<KalmanState<double>> prior;      ///< a_t, R_t
  std::vector<KalmanState<double>> posterior;  ///< m_t, C_t
  std::vector<double> forecast_mean;           ///< one-step TPAWS forecast
  std::vector<double> forecast_sd;
  double log_likelihood = 0.0;
};

DlmDayFilter filter_day(const DlmSpec& spec, const std::vector<std::optional<double>>& tpaws_slots,
                        const std::vector<std::optional<double>>& grid_slots);

enum class Extreme { Max, Min };

/// Daily extremes of joint sample paths drawn from the filtered moments by
/// backward sampling, with TPAWS measurement noise, antithetic pairs.
std::vector<double> sample_daily_extremes(const DlmSpec& spec, const DlmDayFilter& filter, int n_paths,
                                          std::uint64_t seed, Extreme kind);

struct SubdailyOptions {
  int n_paths = 10000;
  std::uint64_t seed = 20240917;
};

std::optional<Extreme> extreme_for(Variable v);

TestResult run_subdaily_test(const DlmSpec& spec, const SubdailySeries& day, const SubdailySeries& grid_day,
                             const Observation& reported_daily, const SubdailyOptions& options = {});

}  // namespace tpaws
