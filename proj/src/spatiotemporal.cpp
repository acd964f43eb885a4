#include "tpaws/spatiotemporal.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <numeric>
#include <set>

#include "tpaws/point_tests.hpp"

namespace tpaws {

using Eigen::MatrixXd;
using Eigen::VectorXd;

HampelResult hampel_filter(std::span<const double> values, int window, double k) {
  if (window < 3 || window % 2 == 0)
    throw Error(ErrorCode::InvalidArgument, "hampel window must be odd and >= 3");
  const auto n = static_cast<std::ptrdiff_t>(values.size());
  const std::ptrdiff_t half = window / 2;
  HampelResult out{std::vector<bool>(values.size(), false), std::vector<double>(values.begin(), values.end())};
  for (std::ptrdiff_t t = 0; t < n; ++t) {
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, t - half);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n - 1, t + half);
    const std::span<const double> w = values.subspan(static_cast<std::size_t>(lo), static_cast<std::size_t>(hi - lo + 1));
    const double med = median(w);
    const double scale = std::max(kMadToSigma * mad(w), kSigmaFloor);
    if (std::abs(values[static_cast<std::size_t>(t)] - med) > k * scale) {
      out.flags[static_cast<std::size_t>(t)] = true;
      out.cleaned[static_cast<std::size_t>(t)] = med;
    }
  }
  return out;
}

DailySeries hampel_clean(const DailySeries& series, int window, double k, double* outlier_fraction) {
  std::vector<double> v;
  v.reserve(series.size());
  for (const auto& [d, x] : series.values) v.push_back(x);
  const HampelResult h = hampel_filter(v, window, k);
  DailySeries out{series.station_id, series.variable, {}};
  std::size_t i = 0, flagged = 0;
  for (const auto& [d, x] : series.values) {
    flagged += h.flags[i];
    out.values.emplace_hint(out.values.end(), d, h.cleaned[i++]);
  }
  if (outlier_fraction) *outlier_fraction = v.empty() ? 0.0 : static_cast<double>(flagged) / static_cast<double>(v.size());
  return out;
}

namespace {

void harmonic_row(double doy, int harmonics, double* out) {
  for (int h = 1; h <= harmonics; ++h) {
    const double arg = 2.0 * std::numbers::pi * h * doy / kDaysPerYear;
    out[2 * (h - 1)] = std::sin(arg);
    out[2 * (h - 1) + 1] = std::cos(arg);
  }
}

double critical_q(int k, double df, double alpha) {
  static std::mutex mu;
  static std::map<std::tuple<int, double, double>, double> cache;
  const auto key = std::make_tuple(k, df, alpha);
  {
    std::lock_guard lock(mu);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  const double q = studentized_range_quantile(1.0 - alpha, k, df);
  std::lock_guard lock(mu);
  cache.emplace(key, q);
  return q;
}

std::pair<std::vector<Date>, std::vector<double>> unpack(const DailySeries& s) {
  std::pair<std::vector<Date>, std::vector<double>> out;
  for (const auto& [d, v] : s.values) {
    out.first.push_back(d);
    out.second.push_back(v);
  }
  return out;
}

DailySeries deseasonalized_series(const DailySeries& s, int harmonics) {
  auto [days, vals] = unpack(s);
  const std::vector<double> ds = deseasonalize(days, vals, harmonics);
  DailySeries out{s.station_id, s.variable, {}};
  for (std::size_t i = 0; i < days.size(); ++i) out.values.emplace_hint(out.values.end(), days[i], ds[i]);
  return out;
}

// Monthly means as ANOVA replicates.
std::vector<double> monthly_means(const DailySeries& s, Date from, Date to, int min_days) {
  std::map<std::pair<int, int>, std::pair<double, int>> acc;
  for (auto it = s.values.lower_bound(from); it != s.values.end() && it->first <= to; ++it) {
    auto& [sum, n] = acc[{year_of(it->first), month_of(it->first)}];
    sum += it->second;
    ++n;
  }
  std::vector<double> out;
  for (const auto& [ym, sn] : acc)
    if (sn.second >= min_days) out.push_back(sn.first / sn.second);
  return out;
}

std::size_t overlap_days(const DailySeries& a, const DailySeries& b) {
  std::size_t n = 0;
  for (const auto& [d, v] : a.values) n += b.values.count(d);
  return n;
}

}  // namespace

std::vector<double> deseasonalize(const std::vector<Date>& days, const std::vector<double>& values, int harmonics) {
  const auto n = static_cast<Eigen::Index>(values.size());
  if (harmonics <= 0 || n < 2 * harmonics + 2) return values;
  MatrixXd A(n, 1 + 2 * harmonics);
  VectorXd y(n);
  std::vector<double> row(static_cast<std::size_t>(2 * harmonics));
  for (Eigen::Index i = 0; i < n; ++i) {
    A(i, 0) = 1.0;
    y[i] = values[static_cast<std::size_t>(i)];
    harmonic_row(day_of_year(days[static_cast<std::size_t>(i)]), harmonics, row.data());
    for (int j = 0; j < 2 * harmonics; ++j) A(i, 1 + j) = row[static_cast<std::size_t>(j)];
  }
  const VectorXd coef = A.colPivHouseholderQr().solve(y);
  const VectorXd seasonal = A.rightCols(2 * harmonics) * coef.tail(2 * harmonics);
  std::vector<double> out(values.size());
  for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = y[i] - seasonal[i];
  return out;
}

std::vector<ScreeningReport> screen_similar_stations(const DailySeries& target,
                                                     const std::map<std::string, DailySeries>& candidates,
                                                     const ScreeningConfig& cfg) {
  if (candidates.empty()) throw Error(ErrorCode::NoCandidates, "no candidate stations");

  const DailySeries clean_target =
      deseasonalized_series(hampel_clean(target, cfg.hampel_window, cfg.hampel_k), cfg.harmonics);
  if (clean_target.empty()) throw Error(ErrorCode::NoCandidates, "empty target series");
  const Date from = clean_target.values.begin()->first;
  const Date to = clean_target.values.rbegin()->first;

  std::vector<ScreeningReport> reports;
  std::vector<DailySeries> clean;  // parallel to reports
  for (const auto& [id, series] : candidates) {
    ScreeningReport r;
    r.candidate_id = id;
    clean.push_back(deseasonalized_series(
        hampel_clean(series, cfg.hampel_window, cfg.hampel_k, &r.hampel_outlier_fraction), cfg.harmonics));
    reports.push_back(r);
  }
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < reports.size(); ++i)
    if (static_cast<int>(overlap_days(clean_target, clean[i])) >= cfg.min_overlap_days) eligible.push_back(i);
  if (eligible.empty()) throw Error(ErrorCode::NoCandidates, "no candidate overlaps the target sufficiently");

  // (b) trend compatibility on the common days
  auto slope_on = [](const DailySeries& s, const DailySeries& other) {
    std::vector<double> t, v;
    for (const auto& [d, x] : s.values)
      if (other.values.count(d)) {
        t.push_back(static_cast<double>(d.time_since_epoch().count()));
        v.push_back(x);
      }
    return fit_linear_trend(t, v);
  };
  for (std::size_t i : eligible) {
    const LinearTrend tt = slope_on(clean_target, clean[i]);
    const LinearTrend tc = slope_on(clean[i], clean_target);
    reports[i].trend_slope = tc.slope;
    const double se = std::sqrt(tt.slope_se * tt.slope_se + tc.slope_se * tc.slope_se);
    reports[i].trend_compatible = std::abs(tc.slope - tt.slope) <= cfg.trend_se_multiplier * se;
  }

  // (c) one-way ANOVA on monthly means, Tukey-Kramer against the target
  {
    std::vector<std::vector<double>> groups;
    groups.push_back(monthly_means(clean_target, from, to, cfg.min_days_per_month));
    for (std::size_t i : eligible) groups.push_back(monthly_means(clean[i], from, to, cfg.min_days_per_month));
    std::size_t total = 0;
    double ssw = 0.0;
    std::vector<double> means;
    for (const auto& g : groups) {
      const double m = g.empty() ? 0.0 : std::accumulate(g.begin(), g.end(), 0.0) / static_cast<double>(g.size());
      means.push_back(m);
      for (double x : g) ssw += (x - m) * (x - m);
      total += g.size();
    }
    const int k = static_cast<int>(groups.size());
    const double df = static_cast<double>(total) - k;
    if (df > 0 && !groups[0].empty()) {
      const double msw = std::max(ssw / df, 1e-300);
      const double q = critical_q(k, df, cfg.alpha);
      for (std::size_t g = 1; g < groups.size(); ++g) {
        auto& r = reports[eligible[g - 1]];
        if (groups[g].empty()) {
          r.anova_group = 1;
          continue;
        }
        const double diff = means[g] - means[0];
        const double se = std::sqrt(0.5 * msw * (1.0 / groups[0].size() + 1.0 / groups[g].size()));
        r.anova_group = std::abs(diff) / se > q ? (diff > 0 ? 1 : 2) : 0;
      }
    }
  }

  // (d) LASSO of the target on all eligible candidates over complete days
  {
    std::vector<std::size_t> used = eligible;
    std::vector<Date> rows;
    for (;;) {
      rows.clear();
      for (const auto& [d, v] : clean_target.values) {
        bool ok = true;
        for (std::size_t i : used)
          if (!clean[i].values.count(d)) {
            ok = false;
            break;
          }
        if (ok) rows.push_back(d);
      }
      if (static_cast<int>(rows.size()) >= cfg.min_overlap_days || used.size() <= 1) break;
      auto worst = std::min_element(used.begin(), used.end(), [&](std::size_t a, std::size_t b) {
        return overlap_days(clean_target, clean[a]) < overlap_days(clean_target, clean[b]);
      });
      used.erase(worst);
    }
    if (static_cast<int>(rows.size()) >= cfg.min_overlap_days) {
      MatrixXd X(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(used.size()));
      VectorXd y(static_cast<Eigen::Index>(rows.size()));
      for (std::size_t r = 0; r < rows.size(); ++r) {
        y[static_cast<Eigen::Index>(r)] = clean_target.values.at(rows[r]);
        for (std::size_t j = 0; j < used.size(); ++j)
          X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = clean[used[j]].values.at(rows[r]);
      }
      const LassoCvResult cv = lasso_cv(X, y, cfg.cv);
      for (std::size_t j = 0; j < used.size(); ++j)
        reports[used[j]].selected_by_lasso = cv.model.coefficients[static_cast<Eigen::Index>(j)] != 0.0;
    }
  }

  for (auto& r : reports) r.similar = r.selected_by_lasso && r.anova_group == 0 && r.trend_compatible;
  return reports;
}

// ---------------------------------------------------------------------------

Eigen::VectorXd day_of_year_spline_basis(double doy, int knots) {
  auto b3 = [](double t) {
    if (t < 0.0 || t >= 4.0) return 0.0;
    if (t < 1.0) return t * t * t / 6.0;
    if (t < 2.0) return (-3.0 * t * t * t + 12.0 * t * t - 12.0 * t + 4.0) / 6.0;
    if (t < 3.0) return (3.0 * t * t * t - 24.0 * t * t + 60.0 * t - 44.0) / 6.0;
    return (4.0 - t) * (4.0 - t) * (4.0 - t) / 6.0;
  };
  const double u = std::fmod(doy / kDaysPerYear * knots, static_cast<double>(knots));
  VectorXd out(knots);
  for (int j = 0; j < knots; ++j) out[j] = b3(std::fmod(u - j + 2.0 * knots, static_cast<double>(knots)));
  return out;
}

namespace {

constexpr int kHarmonicFeatures = 4;

struct StRow {
  double lag1, lag2;
  VectorXd today, yesterday;
  double doy;
};

VectorXd member_features(StMember kind, const StRow& r, bool harmonics) {
  const Eigen::Index s = r.today.size();
  switch (kind) {
    case StMember::STAR: {
      VectorXd f(2 + 2 * s);
      f << r.lag1, r.lag2, r.today, r.yesterday;
      return f;
    }
    case StMember::STLM: {
      VectorXd f(s + (harmonics ? kHarmonicFeatures : 0));
      f.head(s) = r.today;
      if (harmonics) harmonic_row(r.doy, 2, f.data() + s);
      return f;
    }
    case StMember::STAM: {
      VectorXd f(s + kStamKnots);
      f << r.today, day_of_year_spline_basis(r.doy);
      return f;
    }
  }
  return {};
}

MatrixXd design(StMember kind, const std::vector<StRow>& rows, bool harmonics) {
  MatrixXd X;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const VectorXd f = member_features(kind, rows[i], harmonics);
    if (i == 0) X.resize(static_cast<Eigen::Index>(rows.size()), f.size());
    X.row(static_cast<Eigen::Index>(i)) = f.transpose();
  }
  return X;
}

}  // namespace

StModelSet fit_st_models(const DailySeries& target, const std::map<std::string, DailySeries>& similar,
                         const StConfig& cfg) {
  if (similar.empty()) throw Error(ErrorCode::NoCandidates, "no similar stations");
  using std::chrono::days;

  std::vector<Date> days_used;
  std::vector<double> raw_target;
  std::vector<double> pooled;
  std::vector<std::array<double, 3>> target_lags;  // t, t-1, t-2
  std::vector<std::pair<std::vector<double>, std::vector<double>>> sim_vals;
  for (const auto& [d, v] : target.values) {
    const auto l1 = target.at(d - days{1});
    const auto l2 = target.at(d - days{2});
    if (!l1 || !l2) continue;
    std::vector<double> today, yest;
    bool ok = true;
    for (const auto& [id, s] : similar) {
      const auto a = s.at(d);
      const auto b = s.at(d - days{1});
      if (!a || !b) {
        ok = false;
        break;
      }
      today.push_back(*a);
      yest.push_back(*b);
    }
    if (!ok) continue;
    days_used.push_back(d);
    target_lags.push_back({v, *l1, *l2});
    raw_target.push_back(v);
    pooled.push_back(v);
    pooled.insert(pooled.end(), today.begin(), today.end());
    sim_vals.emplace_back(std::move(today), std::move(yest));
  }
  if (static_cast<int>(days_used.size()) < cfg.min_overlap_days)
    throw Error(ErrorCode::InsufficientOverlap, "too few complete days for spatiotemporal calibration");

  StModelSet set;
  set.variable = target.variable;
  set.stlm_harmonics = cfg.stlm_harmonics;
  for (const auto& [id, s] : similar) set.similar_ids.push_back(id);
  set.transform = fit_transform(pooled, cfg.transform_kind.value_or(default_transform_kind(target.variable)));
  const TransformSpec& ts = set.transform;

  std::vector<StRow> rows;
  VectorXd y(static_cast<Eigen::Index>(days_used.size()));
  const auto ns = static_cast<Eigen::Index>(similar.size());
  for (std::size_t i = 0; i < days_used.size(); ++i) {
    StRow r;
    y[static_cast<Eigen::Index>(i)] = forward(ts, target_lags[i][0]);
    r.lag1 = forward_clamped(ts, target_lags[i][1]);
    r.lag2 = forward_clamped(ts, target_lags[i][2]);
    r.today.resize(ns);
    r.yesterday.resize(ns);
    for (Eigen::Index j = 0; j < ns; ++j) {
      r.today[j] = forward_clamped(ts, sim_vals[i].first[static_cast<std::size_t>(j)]);
      r.yesterday[j] = forward_clamped(ts, sim_vals[i].second[static_cast<std::size_t>(j)]);
    }
    r.doy = day_of_year(days_used[i]);
    rows.push_back(std::move(r));
  }

  constexpr StMember kinds[] = {StMember::STAR, StMember::STLM, StMember::STAM};
  auto fit_all = [&](const std::vector<StRow>& rs, const VectorXd& yy, MatrixXd& oof) {
    std::array<LassoModel, 3> models;
    oof.resize(yy.size(), 3);
    for (int k = 0; k < 3; ++k) {
      const LassoCvResult cv = lasso_cv(design(kinds[k], rs, cfg.stlm_harmonics), yy, cfg.cv);
      models[static_cast<std::size_t>(k)] = cv.model;
      oof.col(k) = cv.oof_predictions;
    }
    return models;
  };

  MatrixXd oof;
  auto models = fit_all(rows, y, oof);
  if (cfg.robust_refit) {
    const VectorXd r = y - oof.rowwise().mean();
    const std::vector<double> rv(r.data(), r.data() + r.size());
    const GaussianErrorModel e = robust_gaussian_fit(rv);
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < rv.size(); ++i)
      if (std::abs(rv[i] - e.mu) <= cfg.trim_sigmas * e.sigma) keep.push_back(i);
    if (keep.size() < rows.size() && static_cast<int>(keep.size()) >= 50) {
      std::vector<StRow> kept_rows;
      VectorXd yk(static_cast<Eigen::Index>(keep.size()));
      for (std::size_t i = 0; i < keep.size(); ++i) {
        kept_rows.push_back(rows[keep[i]]);
        yk[static_cast<Eigen::Index>(i)] = y[static_cast<Eigen::Index>(keep[i])];
      }
      rows = std::move(kept_rows);
      y = yk;
      models = fit_all(rows, y, oof);
    }
  }

  StMemberModel* members[] = {&set.star, &set.stlm, &set.stam};
  for (int k = 0; k < 3; ++k) {
    const VectorXd r = y - oof.col(k);
    const std::vector<double> rv(r.data(), r.data() + r.size());
    members[k]->lasso = models[static_cast<std::size_t>(k)];
    members[k]->sigma = std::max(kMadToSigma * mad(rv), kSigmaFloor);
  }
  set.bma = bma_fit(oof, y);
  const VectorXd mix_resid = y - oof * set.bma.weights;
  set.cal_mse = robust_mse(std::vector<double>(mix_resid.data(), mix_resid.data() + mix_resid.size()),
                           cfg.trim_sigmas);
  set.calibration_from = days_used.front();
  set.calibration_to = days_used.back();
  set.calibration_days = static_cast<int>(days_used.size());
  return set;
}

std::optional<Eigen::Vector3d> st_member_means(const StModelSet& m, const StInputs& in) {
  if (!in.target_lag1 || !in.target_lag2) return std::nullopt;
  StRow r;
  r.lag1 = forward_clamped(m.transform, *in.target_lag1);
  r.lag2 = forward_clamped(m.transform, *in.target_lag2);
  const auto ns = static_cast<Eigen::Index>(m.similar_ids.size());
  r.today.resize(ns);
  r.yesterday.resize(ns);
  for (Eigen::Index j = 0; j < ns; ++j) {
    const auto& id = m.similar_ids[static_cast<std::size_t>(j)];
    auto a = in.similar_today.find(id);
    auto b = in.similar_yesterday.find(id);
    if (a == in.similar_today.end() || b == in.similar_yesterday.end()) return std::nullopt;
    r.today[j] = forward_clamped(m.transform, a->second);
    r.yesterday[j] = forward_clamped(m.transform, b->second);
  }
  r.doy = day_of_year(in.date);
  Eigen::Vector3d out;
  out[0] = m.star.lasso.predict(member_features(StMember::STAR, r, m.stlm_harmonics));
  out[1] = m.stlm.lasso.predict(member_features(StMember::STLM, r, m.stlm_harmonics));
  out[2] = m.stam.lasso.predict(member_features(StMember::STAM, r, m.stlm_harmonics));
  return out;
}

TestResult run_st_test(const StModelSet& models, const Observation& obs, const StInputs& inputs) {
  const auto means = st_member_means(models, inputs);
  if (!means)
    return TestResult::not_applicable(TestId::SpatioTemporal, "required lags or similar stations missing");
  TestResult r;
  r.test = TestId::SpatioTemporal;
  r.applicable = true;
  const VectorXd mu = *means;
  if (obs.value < models.transform.domain_lower()) {
    r.p1 = 0.0;
  } else {
    r.p1 = mixture_cdf(forward(models.transform, obs.value), models.bma.weights, mu, models.bma.sigmas);
  }
  r.cl = confidence_level(r.p1);
  r.predicted_median = inverse(models.transform, mixture_quantile(0.5, models.bma.weights, mu, models.bma.sigmas));
  const double mix_mean = models.bma.weights.dot(mu);
  double var = 0.0;
  for (int k = 0; k < 3; ++k)
    var += models.bma.weights[k] * (models.bma.sigmas[k] * models.bma.sigmas[k] + (mu[k] - mix_mean) * (mu[k] - mix_mean));
  r.predicted_sigma = std::sqrt(var);
  r.cal_mse = models.cal_mse;
  r.inputs_used["STAR"] = mu[0];
  r.inputs_used["STLM"] = mu[1];
  r.inputs_used["STAM"] = mu[2];
  if (inputs.target_lag1) r.inputs_used["lag1"] = *inputs.target_lag1;
  for (const auto& [id, v] : inputs.similar_today) r.inputs_used[id] = v;
  return r;
}

}  // namespace tpaws
