#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tpaws/assessment.hpp"
#include "tpaws/solvers.hpp"
#include "tpaws/transform.hpp"

namespace tpaws {

struct HampelResult {
  std::vector<bool> flags;
  std::vector<double> cleaned;
};

/// Flags x_t when |x_t - median(window)| > k * max(1.4826 * MAD(window), sigma_floor).
/// Windows are centred and truncated at the edges; flagged points are
/// replaced by the window median.
HampelResult hampel_filter(std::span<const double> values, int window = 15, double k = 3.0);

/// Same filter over the observed days of a series, in date order.
DailySeries hampel_clean(const DailySeries& series, int window = 15, double k = 3.0,
                         double* outlier_fraction = nullptr);

struct ScreeningConfig {
  int hampel_window = 15;
  double hampel_k = 3.0;
  double trend_se_multiplier = 3.0;
  double alpha = 0.05;
  int harmonics = 2;
  int min_overlap_days = kMinCalibrationDays;
  int min_days_per_month = 20;
  LassoCvOptions cv;
};

struct ScreeningReport {
  std::string candidate_id;
  double hampel_outlier_fraction = 0.0;
  double trend_slope = 0.0;       ///< units per day, deseasonalised
  bool trend_compatible = true;
  int anova_group = 0;            ///< 0 = not separable from the target; 1 higher; 2 lower
  bool selected_by_lasso = false;
  bool similar = false;
};

/// Removes a day-of-year harmonic fit (keeping the mean level).
std::vector<double> deseasonalize(const std::vector<Date>& days, const std::vector<double>& values, int harmonics);

std::vector<ScreeningReport> screen_similar_stations(const DailySeries& target,
                                                     const std::map<std::string, DailySeries>& candidates,
                                                     const ScreeningConfig& config = {});

// ---------------------------------------------------------------------------

enum class StMember { STAR, STLM, STAM };

inline constexpr int kStamKnots = 8;
inline constexpr double kDaysPerYear = 365.25;

/// Periodic cubic B-spline day-of-year basis (sums to one).
Eigen::VectorXd day_of_year_spline_basis(double doy, int knots = kStamKnots);

struct StMemberModel {
  StMember kind = StMember::STAR;
  LassoModel lasso;
  double sigma = kSigmaFloor;  ///< robust sd of out-of-fold residuals
};

struct StModelSet {
  TransformSpec transform;
  std::vector<std::string> similar_ids;
  StMemberModel star{StMember::STAR, {}, kSigmaFloor};
  StMemberModel stlm{StMember::STLM, {}, kSigmaFloor};
  StMemberModel stam{StMember::STAM, {}, kSigmaFloor};
  bool stlm_harmonics = true;
  BmaWeights bma;
  double cal_mse = 0.0;
  Date calibration_from{};
  Date calibration_to{};
  int calibration_days = 0;
  Variable variable = Variable::Tmax;
};

struct StConfig {
  std::optional<TransformSpec::Kind> transform_kind;
  int min_overlap_days = kMinCalibrationDays;
  bool stlm_harmonics = true;
  bool robust_refit = true;
  double trim_sigmas = 4.0;
  LassoCvOptions cv;
};

StModelSet fit_st_models(const DailySeries& target, const std::map<std::string, DailySeries>& similar,
                         const StConfig& config = {});

/// Inputs for one day: target lags and the similar stations today and yesterday.
struct StInputs {
  Date date{};
  std::optional<double> target_lag1;
  std::optional<double> target_lag2;
  std::map<std::string, double> similar_today;
  std::map<std::string, double> similar_yesterday;
};

/// Per-member transformed-space means for the inputs, or nullopt if any
/// required input is missing.
std::optional<Eigen::Vector3d> st_member_means(const StModelSet& models, const StInputs& inputs);

TestResult run_st_test(const StModelSet& models, const Observation& obs, const StInputs& inputs);

}  // namespace tpaws
