#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tpaws/core.hpp"
#include "tpaws/transform.hpp"

namespace tpaws {

/// A test's probabilistic prediction for today's value: Gaussian in the
/// transformed space, optionally with a point mass at the variable's lower
/// bound (rain only).
struct PredictiveDistribution {
  double mean = 0.0;
  double sigma = kSigmaFloor;
  TransformSpec transform;
  std::optional<double> zero_mass;
  double lower_bound = 0.0;  ///< where zero_mass sits

  /// Canonical-unit median.
  double median() const;
};

/// Enumeration order doubles as the traceback tie-break order.
enum class TestId {
  Domain,
  Spatial,
  SpatioTemporal,
  Trend,
  GriddedNWP,
  GriddedAGCD,
  GriddedERA,
  GriddedRadar,
  Subdaily,
};

inline constexpr TestId kAllTests[] = {TestId::Domain,      TestId::Spatial,     TestId::SpatioTemporal,
                                       TestId::Trend,       TestId::GriddedNWP,  TestId::GriddedAGCD,
                                       TestId::GriddedERA,  TestId::GriddedRadar, TestId::Subdaily};

std::string_view to_string(TestId id);
TestId parse_test_id(std::string_view name);

struct TestResult {
  TestId test = TestId::Spatial;
  bool applicable = false;
  std::string reason;              ///< why the test was not applicable
  double p1 = 0.5;
  std::optional<double> cl;        ///< present iff applicable
  double predicted_median = 0.0;   ///< canonical units
  double predicted_sigma = 0.0;    ///< transformed units
  double cal_mse = 0.0;            ///< calibration MSE, drives fusion weights
  std::map<std::string, double> inputs_used;

  static TestResult not_applicable(TestId id, std::string why);
};

/// CL = 1 - 2|p1 - 0.5|.
double confidence_level(double p1);

/// One-sided left p-value P(X <= obs) under the predictive distribution.
/// Rain zeros use the mid-p convention.
double p1_from_predictive(double obs_value, const PredictiveDistribution& dist);

/// Fills p1, cl and the prediction summary of an applicable result.
TestResult score_against(TestId id, double obs_value, const PredictiveDistribution& dist, double cal_mse);

// ---------------------------------------------------------------------------
// Applicability routing

struct Applicability {
  bool applicable = false;
  std::string reason;
};

inline constexpr int kMinCalibrationDays = 365;
inline constexpr int kRecommendedCalibrationDays = 730;

struct GriddedContext {
  bool product_allowed = false;
  bool value_present = false;
};

/// Everything the routing needs to know about one observation. A calibrated
/// test is one with a stored model; calibration_days counts its overlap.
struct ApplicabilityContext {
  Variable variable = Variable::Tmax;
  std::map<TestId, int> calibration_days;  ///< absent = not calibrated
  int spatial_neighbors_reporting = 0;
  int trend_neighbors_reporting = 0;
  bool yesterday_present = false;
  bool st_inputs_present = false;
  std::map<TestId, GriddedContext> gridded;
  int subdaily_slots = 0;
  int min_calibration_days = kMinCalibrationDays;
};

inline constexpr int kMinSubdailySlots = 18;

std::map<TestId, Applicability> applicability(const ApplicabilityContext& ctx);

// ---------------------------------------------------------------------------
// Pre-assessment and fusion

/// Chooses between the spatial and spatiotemporal tests. `others` are the
/// calibration MSEs of the other applicable tests.
TestId pre_assess(const std::optional<TestResult>& spatial, const std::optional<TestResult>& st,
                  const std::vector<double>& other_mses);

struct Contribution {
  TestId test = TestId::Spatial;
  double weight = 0.0;
  double cl = 0.0;
};

struct Exclusion {
  TestId test = TestId::Spatial;
  std::string reason;
};

struct Assessment {
  Observation observation;
  std::optional<double> final_cl;  ///< nullopt = NA
  std::optional<double> final_p1;
  std::vector<Contribution> contributing;
  std::vector<Exclusion> excluded;
  DomainVerdict domain_verdict;
  std::vector<TestResult> results;  ///< every evaluated test, for traceback

  bool is_na() const { return !final_cl.has_value(); }
};

inline constexpr double kStoufferClamp = 1e-10;

/// Weighted Stouffer combination of one-sided p-values with normalised
/// weights; a single test is passed through unchanged.
Assessment fuse(const std::vector<TestResult>& results, const std::vector<double>& raw_weights);

/// Inverse-MSE raw weight for a result.
double inverse_mse_weight(const TestResult& r);

struct TracebackEntry {
  TestId test = TestId::Spatial;
  bool contributing = false;
  double weight = 0.0;
  double cl = 0.0;
  double predicted_median = 0.0;
  double predicted_sigma = 0.0;
  std::string reason;
  std::map<std::string, double> inputs_used;
};

/// Contributing tests by ascending CL (ties by TestId order), then exclusions.
std::vector<TracebackEntry> traceback(const Assessment& assessment);

inline constexpr double kDefaultClThreshold = 0.05;

/// Suspect when the final CL is below the threshold or the domain test failed.
bool is_flagged(const Assessment& a, double cl_threshold = kDefaultClThreshold);

}  // namespace tpaws
