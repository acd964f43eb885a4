#include "tpaws/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

namespace tpaws {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Synthetic network

VariableClimate default_climate(Variable v) {
  switch (v) {
    case Variable::Tmax: return {24.0, 6.0, 3.0, 1.0, 6.0, 0.4};
    case Variable::Tmin: return {12.0, 5.0, 2.5, 1.0, 6.0, 0.4};
    // Latent scale; rain = 8 * max(latent, 0)^1.5.
    case Variable::Rain: return {-0.3, 0.3, 1.0, 0.5, 0.0, 0.0};
    // Anomaly is the sd of the log multiplier of the seasonal mean.
    case Variable::WindGust: return {40.0, 5.0, 0.25, 3.0, 12.0, 1.5};
    case Variable::Humidity9am: return {70.0, 10.0, 10.0, 4.0, 0.0, 0.0};
    case Variable::Humidity3pm: return {50.0, 10.0, 10.0, 4.0, 0.0, 0.0};
  }
  return {};
}

void SyntheticConfig::validate() const {
  if (n_stations < 3) throw Error(ErrorCode::ConfigError, "synthetic network needs at least 3 stations");
  if (n_tpaws < 1 || n_tpaws >= n_stations) throw Error(ErrorCode::ConfigError, "n_tpaws must lie in [1, n_stations)");
  if (years < 4 || years % 2) throw Error(ErrorCode::ConfigError, "years must be even and at least 4");
  if (!(region.lat_min < region.lat_max) || !(region.lon_min < region.lon_max))
    throw Error(ErrorCode::ConfigError, "empty region");
  if (!(spatial_range_km > 0.0)) throw Error(ErrorCode::ConfigError, "spatial range must be positive");
  if (!(temporal_ar >= 0.0 && temporal_ar < 1.0)) throw Error(ErrorCode::ConfigError, "temporal_ar must lie in [0, 1)");
  if (!(grid_cell_deg > 0.0)) throw Error(ErrorCode::ConfigError, "grid cell size must be positive");
  if (noise_sd && !(*noise_sd >= 0.0)) throw Error(ErrorCode::ConfigError, "noise_sd must be non-negative");
}

VariableClimate SyntheticConfig::climate() const {
  VariableClimate c = default_climate(variable);
  if (noise_sd) c.noise_sd = *noise_sd;
  if (seasonal_amplitude) c.seasonal_amplitude = *seasonal_amplitude;
  return c;
}

MatrixXd exponential_covariance_factor(const std::vector<std::pair<double, double>>& sites, double range_km) {
  const auto n = static_cast<Eigen::Index>(sites.size());
  MatrixXd C(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) {
      const auto& a = sites[static_cast<std::size_t>(i)];
      const auto& b = sites[static_cast<std::size_t>(j)];
      const double d = i == j ? 0.0 : great_circle_km(a.first, a.second, b.first, b.second);
      C(i, j) = C(j, i) = std::exp(-d / range_km);
    }
  C.diagonal().array() += kCovarianceNugget;
  Eigen::LLT<MatrixXd> llt(C);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::CovarianceNotPD, "station covariance is not positive definite");
  return llt.matrixL();
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

Date add_years(Date d, int years) {
  const std::chrono::year_month_day ymd{d};
  return Date{std::chrono::year_month_day{ymd.year() + std::chrono::years{years}, ymd.month(), ymd.day()}};
}

double seasonal(const VariableClimate& c, Date d) {
  return c.mean + c.seasonal_amplitude * std::cos(kTwoPi * (day_of_year(d) - 15) / kDaysPerYear);
}

// Physical value from the seasonal level, the scaled anomaly and additive noise.
double physical_value(Variable v, const VariableClimate& c, double level, double anomaly, double noise) {
  switch (v) {
    case Variable::Rain: {
      const double latent = level + c.anomaly_sd * anomaly + noise;
      return latent > 0.0 ? 8.0 * std::pow(latent, 1.5) : 0.0;
    }
    case Variable::WindGust: return std::max(level * std::exp(c.anomaly_sd * anomaly) + noise, 3.6);
    case Variable::Humidity9am:
    case Variable::Humidity3pm: return std::clamp(level + c.anomaly_sd * anomaly + noise, 0.0, 100.0);
    default: return level + c.anomaly_sd * anomaly + noise;
  }
}

// Diurnal offset from the daily extreme: zero at the extreme hour.
double diurnal(Variable v, double amplitude, int hour) {
  if (v == Variable::Tmin) return amplitude * (1.0 - std::cos(kTwoPi * (hour - 5) / kHoursPerDay));
  return amplitude * (std::cos(kTwoPi * (hour - 15) / kHoursPerDay) - 1.0);
}

std::string station_id(bool tpaws, int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%s%03d", tpaws ? "TP" : "OF", index + 1);
  return buf;
}

double product_noise_factor(GridProductKind p) {
  switch (p) {
    case GridProductKind::NWP: return 1.0;
    case GridProductKind::AGCD: return 0.6;
    case GridProductKind::ERA: return 1.2;
    case GridProductKind::Radar: return 0.8;
  }
  return 1.0;
}

}  // namespace

SyntheticNetwork synthesize_network(const SyntheticConfig& config) {
  config.validate();
  const VariableClimate clim = config.climate();
  const Variable var = config.variable;
  SyntheticNetwork net;
  net.config = config;
  net.data.variable = config.variable;

  const Date end = add_years(config.start, config.years);
  net.n_days = static_cast<int>((end - config.start).count());

  Rng layout(derive_seed(config.seed, "layout"));
  const Region& R = config.region;
  for (int i = 0; i < config.n_stations; ++i) {
    const bool is_tpaws = i < config.n_tpaws;
    StationMeta m;
    m.id = station_id(is_tpaws, is_tpaws ? i : i - config.n_tpaws);
    m.latitude = layout.uniform(R.lat_min, R.lat_max);
    m.longitude = layout.uniform(R.lon_min, R.lon_max);
    m.elevation = layout.uniform(0.0, 600.0);
    m.source = is_tpaws ? Source::TPAWS : Source::Official;
    net.data.stations.push_back(m);
  }

  // Lattice with half a degree of margin so every station sits inside the hull.
  const double cell = config.grid_cell_deg;
  const double lat0 = R.lat_min - 0.5, lon0 = R.lon_min - 0.5;
  const int nrows = config.with_grids ? static_cast<int>(std::ceil((R.lat_max + 0.5 - lat0) / cell - 1e-9)) + 1 : 0;
  const int ncols = config.with_grids ? static_cast<int>(std::ceil((R.lon_max + 0.5 - lon0) / cell - 1e-9)) + 1 : 0;
  std::vector<GridProductKind> products;
  if (config.with_grids) products = products_for(var);

  std::vector<std::pair<double, double>> sites;
  for (const auto& s : net.data.stations) sites.emplace_back(s.latitude, s.longitude);
  for (int r = 0; r < nrows; ++r)
    for (int c = 0; c < ncols; ++c) sites.emplace_back(lat0 + r * cell, lon0 + c * cell);
  const MatrixXd L = exponential_covariance_factor(sites, config.spatial_range_km);
  const auto n_sites = static_cast<Eigen::Index>(sites.size());
  const auto n_st = static_cast<std::size_t>(config.n_stations);

  for (const auto& s : net.data.stations) {
    net.data.daily[s.id] = DailySeries{s.id, var, {}};
    net.anomalies[s.id].assign(static_cast<std::size_t>(net.n_days), 0.0);
  }
  for (GridProductKind p : products) {
    GridProduct g;
    g.product = p;
    g.variable = var;
    g.origin_lat = lat0;
    g.origin_lon = lon0;
    g.cell_size = cell;
    g.nrows = nrows;
    g.ncols = ncols;
    g.values.reserve(static_cast<std::size_t>(net.n_days * nrows * ncols));
    net.data.grids.push_back(std::move(g));
  }

  const bool hourly = config.with_hourly && extreme_for(var).has_value();
  const bool min_extreme = var == Variable::Tmin;
  Rng field_rng(derive_seed(config.seed, "field"));
  std::vector<Rng> noise_rng;
  for (const auto& s : net.data.stations) noise_rng.emplace_back(derive_seed(config.seed, "noise:" + s.id));
  std::vector<Rng> grid_rng;
  for (GridProductKind p : products) grid_rng.emplace_back(derive_seed(config.seed, std::string("grid:") + std::string(to_string(p))));
  Rng hourly_grid_rng(derive_seed(config.seed, "hourly-grid"));

  const double phi = config.temporal_ar;
  const double innov = std::sqrt(1.0 - phi * phi);
  VectorXd a = VectorXd::Zero(n_sites), z(n_sites);
  std::vector<double> lattice(static_cast<std::size_t>(nrows * ncols)), smooth(lattice.size());

  for (int t = 0; t < net.n_days; ++t) {
    const Date d = config.start + std::chrono::days{t};
    for (Eigen::Index i = 0; i < n_sites; ++i) z[i] = field_rng.normal();
    a = t == 0 ? VectorXd(L * z) : VectorXd(phi * a + innov * (L * z));
    const double level = seasonal(clim, d);

    for (std::size_t i = 0; i < n_st; ++i) {
      const StationMeta& s = net.data.stations[i];
      const auto ai = static_cast<Eigen::Index>(i);
      net.anomalies[s.id][static_cast<std::size_t>(t)] = a[ai];
      Rng& rng = noise_rng[i];
      const double base = physical_value(var, clim, level, a[ai], clim.noise_sd * rng.normal());
      if (!hourly) {
        net.data.daily[s.id].values[d] = base;
        continue;
      }
      SubdailySeries day{s.id, d, var, {}};
      double ext = 0.0;
      // The hourly stream is an on-the-hour snapshot; the daily extreme comes
      // from the continuous trace, which shares the signal but not the noise.
      for (int h = 0; h < kHoursPerDay; ++h) {
        const double signal = base + diurnal(var, clim.diurnal_amplitude, h);
        day.values.emplace_back(std::chrono::minutes{60 * h}, signal + clim.hourly_noise_sd * rng.normal());
        const double v = signal + clim.hourly_noise_sd * rng.normal();
        ext = h == 0 ? v : (min_extreme ? std::min(ext, v) : std::max(ext, v));
      }
      if (var == Variable::WindGust) ext = std::max(ext, 3.6);
      net.data.daily[s.id].values[d] = ext;
      if (s.source == Source::TPAWS) net.data.hourly[s.id].emplace(d, std::move(day));
    }

    for (std::size_t k = 0; k < products.size(); ++k) {
      const VariableClimate& c = clim;
      for (int r = 0; r < nrows; ++r)
        for (int col = 0; col < ncols; ++col)
          lattice[static_cast<std::size_t>(r * ncols + col)] =
              a[static_cast<Eigen::Index>(n_st) + r * ncols + col];
      // 3x3 box smoothing, truncated at the edges.
      for (int r = 0; r < nrows; ++r)
        for (int col = 0; col < ncols; ++col) {
          double sum = 0.0;
          int n = 0;
          for (int dr = -1; dr <= 1; ++dr)
            for (int dc = -1; dc <= 1; ++dc) {
              const int rr = r + dr, cc = col + dc;
              if (rr < 0 || rr >= nrows || cc < 0 || cc >= ncols) continue;
              sum += lattice[static_cast<std::size_t>(rr * ncols + cc)];
              ++n;
            }
          smooth[static_cast<std::size_t>(r * ncols + col)] = sum / n;
        }
      const double bias = 0.5 * c.noise_sd;
      const double sd = product_noise_factor(products[k]) * c.noise_sd;
      GridProduct& g = net.data.grids[k];
      g.dates.push_back(d);
      for (double s : smooth) g.values.push_back(physical_value(var, c, level, s, bias + sd * grid_rng[k].normal()));
    }

    if (hourly) {
      const GridProduct* nwp = nullptr;
      for (const auto& g : net.data.grids)
        if (g.product == GridProductKind::NWP) nwp = &g;
      if (nwp) {
        for (const auto& s : net.data.stations) {
          if (s.source != Source::TPAWS) continue;
          const auto gv = extract_grid_value(*nwp, s.latitude, s.longitude, d);
          SubdailySeries day{s.id, d, var, {}};
          if (gv)
            for (int h = 0; h < kHoursPerDay; ++h)
              day.values.emplace_back(std::chrono::minutes{60 * h},
                                      *gv + diurnal(var, clim.diurnal_amplitude, h) +
                                          clim.hourly_noise_sd * hourly_grid_rng.normal());
          net.data.hourly_grid[s.id].emplace(d, std::move(day));
        }
      }
    }
  }
  return net;
}

// ---------------------------------------------------------------------------
// Error injection

void InjectionSpec::validate() const {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw Error(ErrorCode::ConfigError, "injection fraction must lie in [0, 1)");
  if (!(magnitude_low <= magnitude_high)) throw Error(ErrorCode::ConfigError, "magnitude_low exceeds magnitude_high");
  if (!(magnitude_low >= 0.0)) throw Error(ErrorCode::ConfigError, "magnitudes must be non-negative");
}

std::string_view to_string(InjectionSpec::Sign s) {
  switch (s) {
    case InjectionSpec::Sign::Positive: return "positive";
    case InjectionSpec::Sign::Negative: return "negative";
    case InjectionSpec::Sign::Both: return "both";
  }
  return "?";
}

InjectionSpec::Sign parse_sign(std::string_view name) {
  if (name == "positive") return InjectionSpec::Sign::Positive;
  if (name == "negative") return InjectionSpec::Sign::Negative;
  if (name == "both") return InjectionSpec::Sign::Both;
  throw Error(ErrorCode::ParseError, "unknown sign: " + std::string(name));
}

InjectionResult inject_errors(const DailySeries& series, const InjectionSpec& spec) {
  spec.validate();
  InjectionResult out{series, {}};
  Rng rng(spec.seed);
  for (auto& [d, v] : out.series.values) {
    // Draw every variate so the stream does not depend on the fraction.
    const double u = rng.uniform();
    const double mag = rng.uniform(spec.magnitude_low, spec.magnitude_high);
    const bool negative = spec.sign == InjectionSpec::Sign::Negative ||
                          (spec.sign == InjectionSpec::Sign::Both && rng.bernoulli(0.5));
    if (spec.sign != InjectionSpec::Sign::Both) rng.next();
    if (u >= spec.fraction) continue;
    const double delta = negative ? -mag : mag;
    v += delta;
    out.deltas[d] = delta;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Skill evaluation

bool Band::contains(double v) const {
  const bool lo = lower_inclusive ? v >= lower : v > lower;
  const bool hi = upper_inclusive ? v <= upper : v < upper;
  return lo && hi;
}

std::vector<Band> default_bands(Variable v) {
  if (v != Variable::WindGust) return {};
  const double inf = std::numeric_limits<double>::infinity();
  return {{"<25", -inf, 25.0, true, false}, {"25-60", 25.0, 60.0, true, true}, {">60", 60.0, inf, false, true}};
}

namespace {

void finish(Rates& r) {
  const auto& c = r.counts;
  r.hit_rate = c.contaminated ? std::optional<double>(static_cast<double>(c.contaminated_flagged) / c.contaminated)
                              : std::nullopt;
  r.false_alarm_rate =
      c.clean ? std::optional<double>(static_cast<double>(c.clean_flagged) / c.clean) : std::nullopt;
}

void tally(Confusion& c, bool na, bool contaminated, bool flagged) {
  if (na) {
    ++c.not_applicable;
    return;
  }
  if (contaminated) {
    ++c.contaminated;
    c.contaminated_flagged += flagged;
  } else {
    ++c.clean;
    c.clean_flagged += flagged;
  }
}

}  // namespace

SkillStats evaluate(const std::vector<Assessment>& assessments, const std::vector<TruthLabel>& labels,
                    double cl_threshold, const std::vector<Band>& bands) {
  if (assessments.size() != labels.size()) throw Error(ErrorCode::Misaligned, "assessments and labels differ in length");
  SkillStats out;
  for (const auto& b : bands) out.per_band.emplace_back(b.name, Rates{});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Assessment& a = assessments[i];
    const TruthLabel& l = labels[i];
    if (a.observation.station_id != l.station_id || a.observation.date != l.date)
      throw Error(ErrorCode::Misaligned, "label " + std::to_string(i) + " does not match its assessment");
    const bool na = a.is_na() && a.domain_verdict.pass;
    const bool flagged = !na && is_flagged(a, cl_threshold);
    tally(out.all.counts, na, l.contaminated, flagged);
    for (std::size_t b = 0; b < bands.size(); ++b)
      if (bands[b].contains(l.true_value)) tally(out.per_band[b].second.counts, na, l.contaminated, flagged);
  }
  finish(out.all);
  for (auto& [name, r] : out.per_band) finish(r);
  return out;
}

SkillStats evaluate_test(const std::vector<Assessment>& assessments, const std::vector<TruthLabel>& labels,
                         TestId test, double cl_threshold, const std::vector<Band>& bands) {
  std::vector<Assessment> view;
  view.reserve(assessments.size());
  for (const auto& a : assessments) {
    Assessment v;
    v.observation = a.observation;
    v.domain_verdict = a.domain_verdict;
    if (!a.domain_verdict.pass) {
      v.final_cl = 0.0;
    } else {
      for (const auto& r : a.results)
        if (r.test == test) v.final_cl = r.cl;
    }
    view.push_back(std::move(v));
  }
  return evaluate(view, labels, cl_threshold, bands);
}

// ---------------------------------------------------------------------------
// Experiment

const SkillStats* ExperimentReport::column(std::string_view name) const {
  for (const auto& [n, s] : columns)
    if (n == name) return &s;
  return nullptr;
}

std::vector<std::pair<std::string, SkillStats>> skill_columns(const std::vector<Assessment>& assessments,
                                                              const std::vector<TruthLabel>& labels,
                                                              double cl_threshold, const std::vector<Band>& bands) {
  std::set<TestId> seen;
  for (const auto& a : assessments)
    for (const auto& r : a.results) seen.insert(r.test);
  std::vector<std::pair<std::string, SkillStats>> out;
  for (TestId id : kAllTests)
    if (id != TestId::Domain && seen.count(id))
      out.emplace_back(std::string(to_string(id)), evaluate_test(assessments, labels, id, cl_threshold, bands));
  out.emplace_back("Merged", evaluate(assessments, labels, cl_threshold, bands));
  return out;
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
  config.injection.validate();
  const SyntheticNetwork net = synthesize_network(config.network);
  const Variable var = config.network.variable;
  const Date start = config.network.start;
  const int half = config.network.years / 2;

  ExperimentReport report;
  report.variable = var;
  report.cl_threshold = config.cl_threshold;
  report.calibration_from = start;
  report.calibration_to = add_years(start, half) - std::chrono::days{1};
  report.evaluation_from = add_years(start, half);
  report.evaluation_to = start + std::chrono::days{net.n_days - 1};
  const auto bands = default_bands(var);
  for (const auto& b : bands) report.band_names.push_back(b.name);

  std::vector<Assessment> assessments;
  std::vector<TruthLabel> labels;

  for (const auto& station : net.data.tpaws()) {
    const StationModels models = calibrate_station(net.data, station, report.calibration_from, report.calibration_to,
                                                   config.calibration, &report.notes);
    const DailySeries& clean = net.data.daily.at(station.id);
    InjectionSpec spec = config.injection;
    spec.seed = derive_seed(config.injection.seed, station.id);
    const InjectionResult inj =
        inject_errors(slice(clean, report.evaluation_from, report.evaluation_to), spec);
    DailySeries reported = slice(clean, start, report.calibration_to);
    for (const auto& [d, v] : inj.series.values) reported.values[d] = v;

    std::vector<Date> days;
    for (const auto& [d, v] : inj.series.values) days.push_back(d);
    auto batch = assess_days(net.data, models, station, reported, days, config.pipeline, config.cl_threshold,
                             config.withhold_flagged_lags);
    for (std::size_t i = 0; i < days.size(); ++i) {
      labels.push_back({station.id, days[i], inj.deltas.count(days[i]) > 0, *clean.at(days[i])});
      assessments.push_back(std::move(batch[i]));
    }
  }

  report.columns = skill_columns(assessments, labels, config.cl_threshold, bands);
  return report;
}

std::string format_report_text(const ExperimentReport& report) {
  std::ostringstream os;
  char buf[64];
  os << "variable: " << to_string(report.variable) << "  threshold: ";
  std::snprintf(buf, sizeof buf, "%.4g", report.cl_threshold);
  os << buf << "\n";
  os << "calibration: " << format_date(report.calibration_from) << " .. " << format_date(report.calibration_to)
     << "\nevaluation:  " << format_date(report.evaluation_from) << " .. " << format_date(report.evaluation_to)
     << "\n\n";

  auto cell = [&](const std::optional<double>& v) {
    if (!v) return std::string("NA");
    std::snprintf(buf, sizeof buf, "%.1f", 100.0 * *v);
    return std::string(buf);
  };
  const int label_w = 28, col_w = 15;
  auto pad = [](std::string s, int w) {
    if (static_cast<int>(s.size()) < w) s.insert(0, static_cast<std::size_t>(w) - s.size(), ' ');
    return s;
  };
  std::string header(label_w, ' ');
  for (const auto& [name, s] : report.columns) header += pad(name, col_w);
  os << header << "\n";

  auto row = [&](const std::string& label, auto pick) {
    std::string line = label;
    line.resize(static_cast<std::size_t>(label_w), ' ');
    for (const auto& [name, s] : report.columns) line += pad(pick(s), col_w);
    os << line << "\n";
  };
  row("Hit rate (%) All", [&](const SkillStats& s) { return cell(s.all.hit_rate); });
  for (std::size_t b = 0; b < report.band_names.size(); ++b)
    row("Hit rate (%) " + report.band_names[b],
        [&](const SkillStats& s) { return cell(s.per_band[b].second.hit_rate); });
  row("False alarm rate (%) All", [&](const SkillStats& s) { return cell(s.all.false_alarm_rate); });
  for (std::size_t b = 0; b < report.band_names.size(); ++b)
    row("False alarm rate (%) " + report.band_names[b],
        [&](const SkillStats& s) { return cell(s.per_band[b].second.false_alarm_rate); });
  row("Contaminated (flagged)", [&](const SkillStats& s) {
    return std::to_string(s.all.counts.contaminated) + " (" + std::to_string(s.all.counts.contaminated_flagged) + ")";
  });
  row("Clean (flagged)", [&](const SkillStats& s) {
    return std::to_string(s.all.counts.clean) + " (" + std::to_string(s.all.counts.clean_flagged) + ")";
  });
  row("Not applicable", [&](const SkillStats& s) { return std::to_string(s.all.counts.not_applicable); });
  if (!report.notes.empty()) {
    os << "\nnotes:\n";
    for (const auto& n : report.notes) os << "  " << n << "\n";
  }
  return os.str();
}

}  // namespace tpaws
