#include "tpaws/subdaily.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

#include "tpaws/solvers.hpp"

namespace tpaws {

using Eigen::Matrix4d;
using Eigen::MatrixXd;
using Eigen::Vector4d;
using Eigen::VectorXd;

std::vector<std::optional<double>> hourly_slots(const SubdailySeries& s) {
  std::vector<double> sum(kHoursPerDay, 0.0);
  std::vector<int> count(kHoursPerDay, 0);
  for (const auto& [t, v] : s.values) {
    const auto h = t.count() / 60;
    if (h < 0 || h >= kHoursPerDay) throw Error(ErrorCode::InvalidArgument, "sub-daily reading outside the day");
    sum[static_cast<std::size_t>(h)] += v;
    ++count[static_cast<std::size_t>(h)];
  }
  std::vector<std::optional<double>> out(kHoursPerDay);
  for (std::size_t h = 0; h < out.size(); ++h)
    if (count[h]) out[h] = sum[h] / count[h];
  return out;
}

MatrixXd DlmSpec::transition() const {
  const double w = 2.0 * std::numbers::pi / kHoursPerDay;
  MatrixXd G = MatrixXd::Identity(4, 4);
  G(1, 1) = std::cos(w);
  G(1, 2) = std::sin(w);
  G(2, 1) = -std::sin(w);
  G(2, 2) = std::cos(w);
  return G;
}

MatrixXd DlmSpec::process_noise() const {
  VectorXd d(4);
  d << w_level, w_harmonic, w_harmonic, w_offset;
  return d.asDiagonal();
}

MatrixXd DlmSpec::observation() const {
  MatrixXd F(2, 4);
  F << 1, 1, 0, 0,
       1, 1, 0, 1;
  return F;
}

MatrixXd DlmSpec::observation_noise() const {
  VectorXd d(2);
  d << v_tpaws, v_grid;
  return d.asDiagonal();
}

namespace {

// Observation rows for each availability pattern: 1 = TPAWS, 2 = grid, 3 = both.
struct ObsSystem {
  MatrixXd G, W;
  MatrixXd F[4];
  MatrixXd V[4];

  explicit ObsSystem(const DlmSpec& spec) : G(spec.transition()), W(spec.process_noise()) {
    const MatrixXd Ff = spec.observation();
    const MatrixXd Vf = spec.observation_noise();
    F[1] = Ff.topRows(1);
    V[1] = Vf.topLeftCorner(1, 1);
    F[2] = Ff.bottomRows(1);
    V[2] = Vf.bottomRightCorner(1, 1);
    F[3] = Ff;
    V[3] = Vf;
  }
};

struct HourObs {
  std::optional<double> tpaws, grid;
};

struct RunResult {
  double log_likelihood = 0.0;
  std::vector<KalmanState<double>> end_of_day;  // posterior after the last hour of each day
};

RunResult run_filter(const DlmSpec& spec, const std::vector<HourObs>& hours, const KalmanState<double>& init,
                     int burn_in, bool keep_states) {
  const ObsSystem sys(spec);
  RunResult out;
  KalmanState<double> st = init;
  for (std::size_t t = 0; t < hours.size(); ++t) {
    const int pattern = (hours[t].tpaws ? 1 : 0) | (hours[t].grid ? 2 : 0);
    std::optional<VectorXd> y;
    const MatrixXd* F = &sys.F[3];
    const MatrixXd* V = &sys.V[3];
    if (pattern) {
      F = &sys.F[pattern];
      V = &sys.V[pattern];
      VectorXd v(F->rows());
      int k = 0;
      if (hours[t].tpaws) v[k++] = *hours[t].tpaws;
      if (hours[t].grid) v[k++] = *hours[t].grid;
      y = v;
    }
    const KalmanStep<double> step = kalman_step<double>(st, *F, sys.G, sys.W, *V, y);
    if (y && static_cast<int>(t) >= burn_in)
      out.log_likelihood += gaussian_log_density<double>(*y, step.forecast_mean, step.forecast_covariance);
    st = step.posterior;
    if (keep_states && (t + 1) % kHoursPerDay == 0) out.end_of_day.push_back(st);
  }
  return out;
}

double robust_var(std::vector<double> v) {
  if (v.size() < 3) return kSigmaFloor * kSigmaFloor;
  const double s = kMadToSigma * mad(v);
  return std::max(s * s, kSigmaFloor * kSigmaFloor);
}

// Measurement variance from second differences of the series after the mean
// diurnal profile is removed.
double noise_variance(const std::vector<std::vector<std::optional<double>>>& days) {
  std::vector<double> profile(kHoursPerDay, 0.0);
  std::vector<int> n(kHoursPerDay, 0);
  for (const auto& d : days)
    for (int h = 0; h < kHoursPerDay; ++h)
      if (d[static_cast<std::size_t>(h)]) {
        profile[static_cast<std::size_t>(h)] += *d[static_cast<std::size_t>(h)];
        ++n[static_cast<std::size_t>(h)];
      }
  for (int h = 0; h < kHoursPerDay; ++h)
    if (n[static_cast<std::size_t>(h)]) profile[static_cast<std::size_t>(h)] /= n[static_cast<std::size_t>(h)];
  std::vector<double> d2;
  for (const auto& d : days)
    for (int h = 2; h < kHoursPerDay; ++h) {
      const auto& a = d[static_cast<std::size_t>(h - 2)];
      const auto& b = d[static_cast<std::size_t>(h - 1)];
      const auto& c = d[static_cast<std::size_t>(h)];
      if (a && b && c)
        d2.push_back((*c - profile[static_cast<std::size_t>(h)]) - 2.0 * (*b - profile[static_cast<std::size_t>(h - 1)]) +
                     (*a - profile[static_cast<std::size_t>(h - 2)]));
    }
  if (d2.size() < 3) return kSigmaFloor * kSigmaFloor;
  return std::max(robust_var(d2) / 6.0, kSigmaFloor * kSigmaFloor);
}

Matrix4d psd_sqrt(const Matrix4d& m) {
  const Matrix4d sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix4d> es(sym);
  const Vector4d ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal();
}

}  // namespace

DlmSpec calibrate_dlm(const std::vector<SubdailySeries>& history, const std::vector<SubdailySeries>& grid_history,
                      const DlmCalibrationOptions& options) {
  std::map<Date, std::vector<std::optional<double>>> tp, gr;
  for (const auto& s : history) {
    auto slots = hourly_slots(s);
    if (std::any_of(slots.begin(), slots.end(), [](const auto& v) { return v.has_value(); }))
      tp[s.date] = std::move(slots);
  }
  for (const auto& s : grid_history) gr[s.date] = hourly_slots(s);
  if (static_cast<int>(tp.size()) < kMinDlmHistoryDays)
    throw Error(ErrorCode::InsufficientHistory, "sub-daily calibration needs at least 60 days");
  const int offered = static_cast<int>(tp.size());
  while (static_cast<int>(tp.size()) > options.max_history_days) tp.erase(tp.begin());

  const Date first = tp.begin()->first, last = tp.rbegin()->first;
  std::vector<HourObs> hours;
  std::vector<std::vector<std::optional<double>>> tp_days, gr_days;
  for (Date d = first; d <= last; d += std::chrono::days{1}) {
    auto ti = tp.find(d);
    auto gi = gr.find(d);
    if (ti != tp.end()) tp_days.push_back(ti->second);
    if (gi != gr.end()) gr_days.push_back(gi->second);
    for (int h = 0; h < kHoursPerDay; ++h) {
      HourObs o;
      if (ti != tp.end()) o.tpaws = ti->second[static_cast<std::size_t>(h)];
      if (gi != gr.end()) o.grid = gi->second[static_cast<std::size_t>(h)];
      hours.push_back(o);
    }
  }

  DlmSpec spec;
  spec.calibration_days = offered;
  spec.v_tpaws = noise_variance(tp_days);
  spec.v_grid = gr_days.empty() ? 1.0 : noise_variance(gr_days);

  std::vector<double> ty, diffs, offs;
  for (const auto& d : tp_days)
    for (int h = 0; h < kHoursPerDay; ++h) {
      if (d[static_cast<std::size_t>(h)]) ty.push_back(*d[static_cast<std::size_t>(h)]);
      if (h > 0 && d[static_cast<std::size_t>(h)] && d[static_cast<std::size_t>(h - 1)])
        diffs.push_back(*d[static_cast<std::size_t>(h)] - *d[static_cast<std::size_t>(h - 1)]);
    }
  for (const auto& o : hours)
    if (o.tpaws && o.grid) offs.push_back(*o.grid - *o.tpaws);
  double mean_y = 0.0, var_y = 0.0;
  for (double v : ty) mean_y += v;
  mean_y /= static_cast<double>(ty.size());
  for (double v : ty) var_y += (v - mean_y) * (v - mean_y);
  var_y /= static_cast<double>(ty.size());
  double scale = 0.0;
  for (double v : diffs) scale += v * v;
  scale = diffs.empty() ? var_y : scale / static_cast<double>(diffs.size());
  scale = std::max(scale, 1e-6);
  double off_mean = 0.0, off_var = 1.0;
  if (!offs.empty()) {
    for (double v : offs) off_mean += v;
    off_mean /= static_cast<double>(offs.size());
    off_var = 0.0;
    for (double v : offs) off_var += (v - off_mean) * (v - off_mean);
    off_var = off_var / static_cast<double>(offs.size()) + 1.0;
  }

  KalmanState<double> init;
  init.mean = VectorXd::Zero(4);
  init.mean << mean_y, 0.0, 0.0, off_mean;
  init.covariance = VectorXd((VectorXd(4) << var_y + 1.0, var_y + 1.0, var_y + 1.0, off_var).finished()).asDiagonal();

  const double exponents[] = {-6.0, -4.5, -3.0, -1.5, 0.0};
  double best_ll = -std::numeric_limits<double>::infinity();
  for (double el : exponents)
    for (double eh : exponents)
      for (double eo : exponents) {
        DlmSpec trial = spec;
        trial.w_level = scale * std::pow(10.0, el);
        trial.w_harmonic = scale * std::pow(10.0, eh);
        trial.w_offset = scale * std::pow(10.0, eo);
        double ll;
        try {
          ll = run_filter(trial, hours, init, kHoursPerDay, false).log_likelihood;
        } catch (const Error&) {
          continue;
        }
        if (ll > best_ll) {
          best_ll = ll;
          spec.w_level = trial.w_level;
          spec.w_harmonic = trial.w_harmonic;
          spec.w_offset = trial.w_offset;
        }
      }
  if (!std::isfinite(best_ll)) throw Error(ErrorCode::NumericalBreakdown, "DLM calibration failed for every grid point");

  // Day-start prior: spread of end-of-day states plus their mean filter covariance.
  const RunResult run = run_filter(spec, hours, init, kHoursPerDay, true);
  std::vector<KalmanState<double>> states(run.end_of_day.begin() + 1, run.end_of_day.end());
  Vector4d mean = Vector4d::Zero();
  for (const auto& s : states) mean += s.mean;
  mean /= static_cast<double>(states.size());
  Matrix4d cov = Matrix4d::Zero();
  for (const auto& s : states) {
    const Vector4d d = s.mean - mean;
    cov += d * d.transpose() + s.covariance;
  }
  cov /= static_cast<double>(states.size());
  spec.prior_mean = mean;
  spec.prior_covariance = 0.5 * (cov + cov.transpose());
  return spec;
}

DlmDayFilter filter_day(const DlmSpec& spec, const std::vector<std::optional<double>>& tpaws_slots,
                        const std::vector<std::optional<double>>& grid_slots) {
  const ObsSystem sys(spec);
  DlmDayFilter out;
  KalmanState<double> st{spec.prior_mean, spec.prior_covariance};
  const std::size_t T = std::max(tpaws_slots.size(), grid_slots.size());
  for (std::size_t t = 0; t < T; ++t) {
    const std::optional<double> a = t < tpaws_slots.size() ? tpaws_slots[t] : std::nullopt;
    const std::optional<double> b = t < grid_slots.size() ? grid_slots[t] : std::nullopt;
    const int pattern = (a ? 1 : 0) | (b ? 2 : 0);
    std::optional<VectorXd> y;
    const MatrixXd* F = &sys.F[3];
    const MatrixXd* V = &sys.V[3];
    if (pattern) {
      F = &sys.F[pattern];
      V = &sys.V[pattern];
      VectorXd v(F->rows());
      int k = 0;
      if (a) v[k++] = *a;
      if (b) v[k++] = *b;
      y = v;
    }
    const KalmanStep<double> step = kalman_step<double>(st, *F, sys.G, sys.W, *V, y);
    if (y) out.log_likelihood += gaussian_log_density<double>(*y, step.forecast_mean, step.forecast_covariance);
    const MatrixXd& Ft = sys.F[1];
    out.forecast_mean.push_back((Ft * step.prior.mean)(0));
    out.forecast_sd.push_back(std::sqrt((Ft * step.prior.covariance * Ft.transpose())(0, 0) + spec.v_tpaws));
    out.prior.push_back(step.prior);
    out.posterior.push_back(step.posterior);
    st = step.posterior;
  }
  return out;
}

std::vector<double> sample_daily_extremes(const DlmSpec& spec, const DlmDayFilter& filter, int n_paths,
                                          std::uint64_t seed, Extreme kind) {
  const std::size_t T = filter.posterior.size();
  if (T == 0 || n_paths <= 0) throw Error(ErrorCode::InvalidArgument, "nothing to sample");
  const Matrix4d G = spec.transition();
  const Eigen::RowVector4d f(1.0, 1.0, 0.0, 0.0);
  const double noise_sd = std::sqrt(spec.v_tpaws);

  std::vector<Vector4d> m(T), a(T);
  std::vector<Matrix4d> J(T), L(T);
  for (std::size_t t = 0; t < T; ++t) {
    m[t] = filter.posterior[t].mean;
    a[t] = filter.prior[t].mean;
  }
  L[T - 1] = psd_sqrt(filter.posterior[T - 1].covariance);
  for (std::size_t t = 0; t + 1 < T; ++t) {
    const Matrix4d C = filter.posterior[t].covariance;
    const Matrix4d R = filter.prior[t + 1].covariance;
    Eigen::LDLT<Matrix4d> ldlt(R);
    if (ldlt.info() != Eigen::Success) throw Error(ErrorCode::NumericalBreakdown, "backward sampling: singular R");
    J[t] = ldlt.solve(G * C).transpose();  // C G' R^-1
    L[t] = psd_sqrt(C - J[t] * R * J[t].transpose());
  }

  Rng rng(seed);
  std::vector<double> z(T * 5);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(n_paths));
  while (static_cast<int>(out.size()) < n_paths) {
    for (double& v : z) v = rng.normal();
    for (double sign : {1.0, -1.0}) {
      if (static_cast<int>(out.size()) >= n_paths) break;
      Vector4d theta;
      double ext = 0.0;
      for (std::size_t k = 0; k < T; ++k) {
        const std::size_t t = T - 1 - k;
        const Eigen::Map<const Vector4d> zt(&z[5 * t]);
        if (k == 0)
          theta = m[t] + sign * (L[t] * zt);
        else
          theta = m[t] + J[t] * (theta - a[t + 1]) + sign * (L[t] * zt);
        const double value = f.dot(theta) + sign * noise_sd * z[5 * t + 4];
        if (k == 0)
          ext = value;
        else
          ext = kind == Extreme::Max ? std::max(ext, value) : std::min(ext, value);
      }
      out.push_back(ext);
    }
  }
  return out;
}

std::optional<Extreme> extreme_for(Variable v) {
  switch (v) {
    case Variable::Tmax:
    case Variable::WindGust: return Extreme::Max;
    case Variable::Tmin: return Extreme::Min;
    default: return std::nullopt;
  }
}

TestResult run_subdaily_test(const DlmSpec& spec, const SubdailySeries& day, const SubdailySeries& grid_day,
                             const Observation& reported_daily, const SubdailyOptions& options) {
  const auto kind = extreme_for(reported_daily.variable);
  if (!kind) return TestResult::not_applicable(TestId::Subdaily, "variable has no sub-daily extreme");
  const auto tp = hourly_slots(day);
  const auto gr = hourly_slots(grid_day);
  int covered = 0;
  for (int h = 0; h < kHoursPerDay; ++h) covered += (tp[static_cast<std::size_t>(h)] || gr[static_cast<std::size_t>(h)]);
  if (covered < kMinSubdailySlots) return TestResult::not_applicable(TestId::Subdaily, "insufficient sub-daily coverage");

  const DlmDayFilter filt = filter_day(spec, tp, gr);
  std::vector<double> ext = sample_daily_extremes(spec, filt, options.n_paths, options.seed, *kind);
  const double N = static_cast<double>(ext.size());
  const auto below = std::count_if(ext.begin(), ext.end(), [&](double e) { return e <= reported_daily.value; });
  const double half = 0.5 / N;

  TestResult r;
  r.test = TestId::Subdaily;
  r.applicable = true;
  r.p1 = std::clamp(static_cast<double>(below) / N, half, 1.0 - half);
  r.cl = confidence_level(r.p1);
  double mean = 0.0;
  for (double e : ext) mean += e;
  mean /= N;
  double var = 0.0;
  for (double e : ext) var += (e - mean) * (e - mean);
  var /= N;
  r.predicted_median = median(ext);
  r.predicted_sigma = std::sqrt(var);
  r.cal_mse = var;
  r.inputs_used["slots_covered"] = covered;
  return r;
}

}  // namespace tpaws
