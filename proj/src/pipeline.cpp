#include "tpaws/pipeline.hpp"

#include <algorithm>

namespace tpaws {

std::vector<StationMeta> Dataset::officials() const {
  std::vector<StationMeta> out;
  for (const auto& s : stations)
    if (s.source == Source::Official) out.push_back(s);
  return out;
}

std::vector<StationMeta> Dataset::tpaws() const {
  std::vector<StationMeta> out;
  for (const auto& s : stations)
    if (s.source == Source::TPAWS) out.push_back(s);
  return out;
}

const StationMeta& Dataset::station(const std::string& id) const {
  for (const auto& s : stations)
    if (s.id == id) return s;
  throw Error(ErrorCode::InvalidArgument, "unknown station: " + id);
}

const GridProduct* Dataset::grid(GridProductKind p) const {
  for (const auto& g : grids)
    if (g.product == p) return &g;
  return nullptr;
}

namespace {

template <class F>
void attempt(std::vector<std::string>* notes, const std::string& what, F&& f) {
  try {
    f();
  } catch (const Error& e) {
    if (notes) notes->push_back(what + ": " + std::string(to_string(e.code())) + ": " + e.what());
  }
}

std::map<std::string, double> values_on(const Dataset& data, Date d, const std::vector<std::string>& ids) {
  std::map<std::string, double> out;
  for (const auto& id : ids) {
    auto it = data.daily.find(id);
    if (it == data.daily.end()) continue;
    if (auto v = it->second.at(d)) out[id] = *v;
  }
  return out;
}

int count_reporting(const std::vector<std::string>& ids, const std::map<std::string, double>& today) {
  int n = 0;
  for (const auto& id : ids) n += today.count(id) ? 1 : 0;
  return n;
}

int count_reporting_both(const std::vector<std::string>& ids, const std::map<std::string, double>& a,
                         const std::map<std::string, double>& b) {
  int n = 0;
  for (const auto& id : ids) n += (a.count(id) && b.count(id)) ? 1 : 0;
  return n;
}

int subdaily_coverage(const DayInputs& in) {
  if (!in.subdaily_day && !in.subdaily_grid_day) return 0;
  std::vector<std::optional<double>> tp(kHoursPerDay), gr(kHoursPerDay);
  if (in.subdaily_day) tp = hourly_slots(*in.subdaily_day);
  if (in.subdaily_grid_day) gr = hourly_slots(*in.subdaily_grid_day);
  int n = 0;
  for (int h = 0; h < kHoursPerDay; ++h) n += (tp[static_cast<std::size_t>(h)] || gr[static_cast<std::size_t>(h)]);
  return n;
}

ApplicabilityContext build_context(const StationModels& m, const DayInputs& in, const PipelineOptions& opt) {
  ApplicabilityContext ctx;
  ctx.variable = in.obs.variable;
  ctx.min_calibration_days = opt.min_calibration_days;
  if (m.spatial) {
    ctx.calibration_days[TestId::Spatial] = m.spatial->calibration_days;
    ctx.spatial_neighbors_reporting = count_reporting(m.spatial->neighbor_ids, in.neighbors_today);
  }
  if (m.trend) {
    ctx.calibration_days[TestId::Trend] = m.trend->calibration_days;
    ctx.trend_neighbors_reporting =
        count_reporting_both(m.trend->neighbor_ids, in.neighbors_today, in.neighbors_yesterday);
  }
  ctx.yesterday_present = in.yesterday.has_value();
  if (m.st) {
    ctx.calibration_days[TestId::SpatioTemporal] = m.st->calibration_days;
    ctx.st_inputs_present = in.st && st_member_means(*m.st, *in.st).has_value();
  }
  for (GridProductKind p : {GridProductKind::NWP, GridProductKind::AGCD, GridProductKind::ERA, GridProductKind::Radar}) {
    const TestId id = gridded_test_id(p);
    GriddedContext g;
    g.product_allowed = product_allowed(in.obs.variable, p);
    g.value_present = in.grid_values.count(p) > 0;
    ctx.gridded[id] = g;
    if (auto it = m.gridded.find(p); it != m.gridded.end()) ctx.calibration_days[id] = it->second.calibration_days;
  }
  if (m.subdaily && extreme_for(in.obs.variable)) {
    ctx.calibration_days[TestId::Subdaily] = m.subdaily->calibration_days;
    ctx.subdaily_slots = subdaily_coverage(in);
  } else if (m.subdaily) {
    ctx.calibration_days[TestId::Subdaily] = m.subdaily->calibration_days;
  }
  return ctx;
}

TestResult run_test(TestId id, const StationModels& m, const DayInputs& in, const PipelineOptions& opt) {
  switch (id) {
    case TestId::Spatial: return run_spatial_test(*m.spatial, in.obs, in.neighbors_today);
    case TestId::Trend:
      return run_trend_test(*m.trend, in.obs, in.yesterday, in.neighbors_today, in.neighbors_yesterday);
    case TestId::SpatioTemporal: return run_st_test(*m.st, in.obs, *in.st);
    case TestId::GriddedNWP:
    case TestId::GriddedAGCD:
    case TestId::GriddedERA:
    case TestId::GriddedRadar: {
      const GridProductKind p = product_of(id);
      return run_gridded_test(m.gridded.at(p), in.obs, in.grid_values.at(p));
    }
    case TestId::Subdaily: {
      SubdailySeries empty;
      empty.station_id = in.obs.station_id;
      empty.date = in.obs.date;
      empty.variable = in.obs.variable;
      return run_subdaily_test(*m.subdaily, in.subdaily_day ? *in.subdaily_day : empty,
                               in.subdaily_grid_day ? *in.subdaily_grid_day : empty, in.obs, opt.subdaily);
    }
    case TestId::Domain: break;
  }
  throw Error(ErrorCode::InvalidArgument, "no runner for the domain test");
}

}  // namespace

StationModels calibrate_station(const Dataset& data, const StationMeta& station, Date from, Date to,
                                const CalibrationOptions& options, std::vector<std::string>* notes) {
  const Variable var = data.variable;
  StationModels m;
  m.station_id = station.id;
  m.variable = var;
  auto target_it = data.daily.find(station.id);
  if (target_it == data.daily.end()) throw Error(ErrorCode::InsufficientOverlap, "no daily data for " + station.id);
  const DailySeries target = slice(target_it->second, from, to);

  auto nbrs = select_neighbors(station, data.officials(), options.radius_km);
  if (static_cast<int>(nbrs.size()) > options.max_candidates) nbrs.resize(static_cast<std::size_t>(options.max_candidates));
  std::vector<DailySeries> nbr_series;
  std::map<std::string, DailySeries> nbr_map;
  for (const auto& n : nbrs) {
    auto it = data.daily.find(n.id);
    if (it == data.daily.end()) continue;
    nbr_series.push_back(slice(it->second, from, to));
    nbr_map[n.id] = nbr_series.back();
  }
  const std::string tag = station.id + " ";
  auto enabled = [&](TestId id) { return !options.disabled.count(id); };

  if (enabled(TestId::Spatial))
    attempt(notes, tag + "spatial", [&] { m.spatial = calibrate_spatial(target, nbr_series, options.point); });
  if (enabled(TestId::Trend))
    attempt(notes, tag + "trend", [&] { m.trend = calibrate_trend(target, nbr_series, options.point); });
  if (enabled(TestId::SpatioTemporal))
    attempt(notes, tag + "spatiotemporal", [&] {
      const auto reports = screen_similar_stations(target, nbr_map, options.screening);
      std::map<std::string, DailySeries> similar;
      for (const auto& r : reports)
        if (r.similar) similar[r.candidate_id] = nbr_map.at(r.candidate_id);
      if (similar.empty()) throw Error(ErrorCode::NoCandidates, "no similar stations");
      m.st = fit_st_models(target, similar, options.st);
    });
  for (const auto& g : data.grids) {
    const TestId id = gridded_test_id(g.product);
    if (!enabled(id) || !product_allowed(var, g.product)) continue;
    attempt(notes, tag + std::string(to_string(id)), [&] {
      const DailySeries gs = slice(extract_grid_series(g, station.id, station.latitude, station.longitude), from, to);
      m.gridded[g.product] = calibrate_gridded(target, gs, g.product, options.point);
    });
  }
  auto hourly_it = data.hourly.find(station.id);
  if (enabled(TestId::Subdaily) && extreme_for(var) && hourly_it != data.hourly.end()) {
    attempt(notes, tag + "subdaily", [&] {
      std::vector<SubdailySeries> hist, grid_hist;
      for (auto it = hourly_it->second.lower_bound(from); it != hourly_it->second.end() && it->first <= to; ++it)
        hist.push_back(it->second);
      if (auto g = data.hourly_grid.find(station.id); g != data.hourly_grid.end())
        for (auto it = g->second.lower_bound(from); it != g->second.end() && it->first <= to; ++it)
          grid_hist.push_back(it->second);
      m.subdaily = calibrate_dlm(hist, grid_hist, options.dlm);
    });
  }
  return m;
}

DayInputs gather_day_inputs(const Dataset& data, const StationModels& models, const StationMeta& station,
                            const Observation& obs, const LagLookup& lag) {
  const Date d = obs.date;
  const Date yesterday = d - std::chrono::days{1};
  DayInputs in;
  in.obs = obs;
  in.context.elevation = station.elevation;
  in.yesterday = lag(yesterday);

  std::vector<std::string> ids;
  if (models.spatial) ids.insert(ids.end(), models.spatial->neighbor_ids.begin(), models.spatial->neighbor_ids.end());
  if (models.trend) ids.insert(ids.end(), models.trend->neighbor_ids.begin(), models.trend->neighbor_ids.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  in.neighbors_today = values_on(data, d, ids);
  in.neighbors_yesterday = values_on(data, yesterday, ids);

  if (models.st) {
    StInputs st;
    st.date = d;
    st.target_lag1 = in.yesterday;
    st.target_lag2 = lag(d - std::chrono::days{2});
    st.similar_today = values_on(data, d, models.st->similar_ids);
    st.similar_yesterday = values_on(data, yesterday, models.st->similar_ids);
    in.st = std::move(st);
  }
  for (const auto& g : data.grids) {
    if (!models.gridded.count(g.product)) continue;
    try {
      if (auto v = extract_grid_value(g, station.latitude, station.longitude, d)) in.grid_values[g.product] = *v;
    } catch (const Error&) {
      // Station outside the product's coverage: the test is simply not applicable.
    }
  }
  if (models.subdaily) {
    if (auto it = data.hourly.find(station.id); it != data.hourly.end())
      if (auto day = it->second.find(d); day != it->second.end()) in.subdaily_day = day->second;
    if (auto it = data.hourly_grid.find(station.id); it != data.hourly_grid.end())
      if (auto day = it->second.find(d); day != it->second.end()) in.subdaily_grid_day = day->second;
  }
  return in;
}

Assessment assess_observation(const StationModels& models, const DayInputs& inputs, const PipelineOptions& options) {
  if (models.variable != inputs.obs.variable)
    throw Error(ErrorCode::InvalidArgument, "models and observation disagree on the variable");

  const DomainVerdict verdict = domain_test(inputs.obs, inputs.context);
  if (!verdict.pass) {
    Assessment a;
    a.observation = inputs.obs;
    a.domain_verdict = verdict;
    a.final_p1 = verdict.violated == DomainVerdict::Bound::Upper ? 1.0 : 0.0;
    a.final_cl = 0.0;
    a.contributing.push_back({TestId::Domain, 1.0, 0.0});
    for (TestId id : kAllTests)
      if (id != TestId::Domain) a.excluded.push_back({id, "domain test failed"});
    return a;
  }

  const auto routes = applicability(build_context(models, inputs, options));
  std::vector<TestResult> evaluated;
  std::vector<Exclusion> excluded;
  for (const auto& [id, route] : routes) {
    if (options.disabled.count(id)) {
      excluded.push_back({id, "disabled"});
      continue;
    }
    if (!route.applicable) {
      excluded.push_back({id, route.reason});
      continue;
    }
    TestResult r = run_test(id, models, inputs, options);
    if (!r.applicable) {
      excluded.push_back({id, r.reason});
      continue;
    }
    evaluated.push_back(std::move(r));
  }

  auto find = [&](TestId id) -> std::optional<TestResult> {
    for (const auto& r : evaluated)
      if (r.test == id) return r;
    return std::nullopt;
  };
  const auto spatial = find(TestId::Spatial);
  const auto st = find(TestId::SpatioTemporal);
  std::optional<TestId> dropped;
  if (spatial && st) {
    std::vector<double> others;
    for (const auto& r : evaluated)
      if (r.test != TestId::Spatial && r.test != TestId::SpatioTemporal) others.push_back(r.cal_mse);
    dropped = pre_assess(spatial, st, others) == TestId::Spatial ? TestId::SpatioTemporal : TestId::Spatial;
    excluded.push_back({*dropped, "set aside by pre-assessment"});
  }

  std::vector<TestResult> fused;
  std::vector<double> weights;
  for (const auto& r : evaluated) {
    if (dropped && r.test == *dropped) continue;
    fused.push_back(r);
    weights.push_back(inverse_mse_weight(r));
  }
  Assessment a = fuse(fused, weights);
  a.observation = inputs.obs;
  a.domain_verdict = verdict;
  a.results = evaluated;
  std::sort(excluded.begin(), excluded.end(),
            [](const Exclusion& x, const Exclusion& y) { return x.test < y.test; });
  a.excluded = std::move(excluded);
  return a;
}

std::vector<Assessment> assess_days(const Dataset& data, const StationModels& models, const StationMeta& station,
                                    const DailySeries& reported, const std::vector<Date>& days,
                                    const PipelineOptions& options, double cl_threshold, bool withhold_flagged_lags) {
  std::map<Date, bool> flagged;
  const LagLookup lag = [&](Date d) -> std::optional<double> {
    if (withhold_flagged_lags) {
      auto f = flagged.find(d);
      if (f != flagged.end() && f->second) return std::nullopt;
    }
    return reported.at(d);
  };
  std::vector<Assessment> out;
  out.reserve(days.size());
  for (Date d : days) {
    const auto value = reported.at(d);
    if (!value) throw Error(ErrorCode::Misaligned, "no reported value for " + station.id + " on " + format_date(d));
    const Observation obs{station.id, d, models.variable, *value, QualityHint::Raw};
    Assessment a = assess_observation(models, gather_day_inputs(data, models, station, obs, lag), options);
    flagged[d] = is_flagged(a, cl_threshold);
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace tpaws
