#include "tpaws/assessment.hpp"

#include <algorithm>
#include <cmath>

#include "tpaws/solvers.hpp"

namespace tpaws {

double PredictiveDistribution::median() const {
  if (zero_mass && *zero_mass >= 0.5) return lower_bound;
  if (zero_mass) {
    // Median of the continuous part shifted by the point mass.
    const double q = (0.5 - *zero_mass) / (1.0 - *zero_mass);
    return std::max(lower_bound, inverse(transform, mean + sigma * normal_quantile(q)));
  }
  return inverse(transform, mean);
}

std::string_view to_string(TestId id) {
  switch (id) {
    case TestId::Domain: return "Domain";
    case TestId::Spatial: return "Spatial";
    case TestId::SpatioTemporal: return "SpatioTemporal";
    case TestId::Trend: return "Trend";
    case TestId::GriddedNWP: return "Gridded(NWP)";
    case TestId::GriddedAGCD: return "Gridded(AGCD)";
    case TestId::GriddedERA: return "Gridded(ERA)";
    case TestId::GriddedRadar: return "Gridded(Radar)";
    case TestId::Subdaily: return "Subdaily";
  }
  return "?";
}

TestId parse_test_id(std::string_view name) {
  for (TestId id : kAllTests)
    if (to_string(id) == name) return id;
  throw Error(ErrorCode::ParseError, "unknown test id '" + std::string(name) + "'");
}

TestResult TestResult::not_applicable(TestId id, std::string why) {
  TestResult r;
  r.test = id;
  r.applicable = false;
  r.reason = std::move(why);
  return r;
}

double confidence_level(double p1) {
  if (!(p1 >= 0.0 && p1 <= 1.0)) throw Error(ErrorCode::OutOfRange, "p1 outside [0,1]");
  // 2p and 2(1 - p) are exact on their halves, so the result carries no rounding.
  return p1 < 0.5 ? 2.0 * p1 : 2.0 * (1.0 - p1);
}

double p1_from_predictive(double obs_value, const PredictiveDistribution& dist) {
  if (!(dist.sigma > 0.0)) throw Error(ErrorCode::InvalidArgument, "predictive sigma must be positive");
  if (dist.zero_mass) {
    const double m = *dist.zero_mass;
    if (obs_value <= dist.lower_bound) return 0.5 * m;
    return m + (1.0 - m) * normal_cdf(forward(dist.transform, obs_value), dist.mean, dist.sigma);
  }
  return normal_cdf(forward(dist.transform, obs_value), dist.mean, dist.sigma);
}

TestResult score_against(TestId id, double obs_value, const PredictiveDistribution& dist, double cal_mse) {
  TestResult r;
  r.test = id;
  r.applicable = true;
  if (obs_value < dist.transform.domain_lower()) {
    r.p1 = 0.0;  // below anything the transform can represent
  } else {
    r.p1 = p1_from_predictive(obs_value, dist);
  }
  r.cl = confidence_level(r.p1);
  r.predicted_median = dist.median();
  r.predicted_sigma = dist.sigma;
  r.cal_mse = cal_mse;
  return r;
}

// ---------------------------------------------------------------------------

namespace {

bool product_test(TestId id) {
  return id == TestId::GriddedNWP || id == TestId::GriddedAGCD || id == TestId::GriddedERA ||
         id == TestId::GriddedRadar;
}

}  // namespace

std::map<TestId, Applicability> applicability(const ApplicabilityContext& ctx) {
  std::map<TestId, Applicability> out;
  auto calibrated = [&](TestId id, Applicability& a) {
    auto it = ctx.calibration_days.find(id);
    if (it == ctx.calibration_days.end()) {
      a = {false, "not calibrated"};
      return false;
    }
    if (it->second < ctx.min_calibration_days) {
      a = {false, "calibration shorter than " + std::to_string(ctx.min_calibration_days) + " days"};
      return false;
    }
    return true;
  };

  for (TestId id : kAllTests) {
    if (id == TestId::Domain) continue;
    Applicability a{true, ""};
    if (product_test(id)) {
      auto g = ctx.gridded.find(id);
      if (g == ctx.gridded.end() || !g->second.product_allowed) {
        a = {false, "product not used for this variable"};
      } else if (calibrated(id, a)) {
        if (!g->second.value_present) a = {false, "grid value missing"};
      }
      out[id] = a;
      continue;
    }
    if (!calibrated(id, a)) {
      out[id] = a;
      continue;
    }
    switch (id) {
      case TestId::Spatial:
        if (ctx.spatial_neighbors_reporting < 2) a = {false, "fewer than 2 neighbors reporting"};
        break;
      case TestId::Trend:
        if (!ctx.yesterday_present)
          a = {false, "previous-day observation missing"};
        else if (ctx.trend_neighbors_reporting < 2)
          a = {false, "fewer than 2 neighbors reporting on both days"};
        break;
      case TestId::SpatioTemporal:
        if (!ctx.st_inputs_present) a = {false, "required lags or similar stations missing"};
        break;
      case TestId::Subdaily:
        if (ctx.subdaily_slots < kMinSubdailySlots) a = {false, "insufficient sub-daily coverage"};
        break;
      default: break;
    }
    out[id] = a;
  }
  return out;
}

double inverse_mse_weight(const TestResult& r) {
  return 1.0 / std::max(r.cal_mse, kSigmaFloor * kSigmaFloor);
}

TestId pre_assess(const std::optional<TestResult>& spatial, const std::optional<TestResult>& st,
                  const std::vector<double>& other_mses) {
  const bool sp_ok = spatial && spatial->applicable;
  const bool st_ok = st && st->applicable;
  if (sp_ok && !st_ok) return TestId::Spatial;
  if (!sp_ok && st_ok) return TestId::SpatioTemporal;
  if (!sp_ok && !st_ok) throw Error(ErrorCode::InvalidArgument, "pre_assess: neither test applicable");

  double others = 0.0;
  std::vector<double> sorted = other_mses;
  std::sort(sorted.begin(), sorted.end());
  for (double m : sorted) others += 1.0 / std::max(m, kSigmaFloor * kSigmaFloor);
  const double w_sp = inverse_mse_weight(*spatial);
  const double w_st = inverse_mse_weight(*st);
  const double share_sp = w_sp / (w_sp + others);
  const double share_st = w_st / (w_st + others);
  return share_sp > share_st ? TestId::Spatial : TestId::SpatioTemporal;
}

Assessment fuse(const std::vector<TestResult>& results, const std::vector<double>& raw_weights) {
  if (results.size() != raw_weights.size())
    throw Error(ErrorCode::InvalidArgument, "fuse: weights and results differ in length");
  Assessment a;
  if (results.empty()) return a;
  bool has_spatial = false, has_st = false;
  for (const auto& r : results) {
    if (!r.applicable) throw Error(ErrorCode::InvalidArgument, "fuse: inapplicable result");
    has_spatial |= r.test == TestId::Spatial;
    has_st |= r.test == TestId::SpatioTemporal;
  }
  if (has_spatial && has_st)
    throw Error(ErrorCode::InvalidArgument, "fuse: spatial and spatiotemporal both present");

  double total = 0.0;
  for (double w : raw_weights) {
    if (!(w > 0.0) || !std::isfinite(w)) throw Error(ErrorCode::InvalidArgument, "fuse: weights must be positive");
    total += w;
  }
  a.results = results;
  if (results.size() == 1) {
    a.final_p1 = results[0].p1;
    a.final_cl = results[0].cl;
    a.contributing.push_back({results[0].test, 1.0, *results[0].cl});
    return a;
  }
  double num = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const double w = raw_weights[i] / total;
    const double z = normal_quantile(std::clamp(results[i].p1, kStoufferClamp, 1.0 - kStoufferClamp));
    num += w * z;
    sq += w * w;
    a.contributing.push_back({results[i].test, w, *results[i].cl});
  }
  const double zf = num / std::sqrt(sq);
  a.final_p1 = normal_cdf(zf);
  a.final_cl = confidence_level(*a.final_p1);
  return a;
}

std::vector<TracebackEntry> traceback(const Assessment& assessment) {
  auto find_result = [&](TestId id) -> const TestResult* {
    for (const auto& r : assessment.results)
      if (r.test == id) return &r;
    return nullptr;
  };
  std::vector<TracebackEntry> out;
  for (const auto& c : assessment.contributing) {
    TracebackEntry e;
    e.test = c.test;
    e.contributing = true;
    e.weight = c.weight;
    e.cl = c.cl;
    if (const TestResult* r = find_result(c.test)) {
      e.predicted_median = r->predicted_median;
      e.predicted_sigma = r->predicted_sigma;
      e.inputs_used = r->inputs_used;
    }
    if (c.test == TestId::Domain) e.reason = assessment.domain_verdict.reason();
    out.push_back(std::move(e));
  }
  std::stable_sort(out.begin(), out.end(), [](const TracebackEntry& x, const TracebackEntry& y) {
    if (x.cl != y.cl) return x.cl < y.cl;
    return x.test < y.test;
  });
  std::vector<TracebackEntry> excluded;
  for (const auto& ex : assessment.excluded) {
    TracebackEntry e;
    e.test = ex.test;
    e.reason = ex.reason;
    excluded.push_back(std::move(e));
  }
  std::stable_sort(excluded.begin(), excluded.end(),
                   [](const TracebackEntry& x, const TracebackEntry& y) { return x.test < y.test; });
  out.insert(out.end(), excluded.begin(), excluded.end());
  return out;
}

bool is_flagged(const Assessment& a, double cl_threshold) {
  if (!a.domain_verdict.pass) return true;
  return a.final_cl && *a.final_cl < cl_threshold;
}

}  // namespace tpaws
