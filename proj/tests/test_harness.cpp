#include <doctest.h>

#include <cmath>

#include "tpaws/harness.hpp"

using namespace tpaws;
using std::chrono::days;

namespace {

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const auto n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

SyntheticConfig small_network() {
  SyntheticConfig c;
  c.n_stations = 12;
  c.n_tpaws = 2;
  c.with_grids = false;
  c.with_hourly = false;
  return c;
}

Assessment scored(const std::string& id, Date d, std::optional<double> cl) {
  Assessment a;
  a.observation = {id, d, Variable::WindGust, 30.0, {}};
  a.final_cl = cl;
  if (cl) a.final_p1 = 1.0 - *cl / 2.0;
  return a;
}

}  // namespace

TEST_CASE("synthetic network") {
  SUBCASE("infinite range shares one anomaly") {
    auto c = small_network();
    c.spatial_range_km = 1e9;
    const auto net = synthesize_network(c);
    CHECK(net.n_days == 1461);
    CHECK(correlation(net.anomalies.at("TP001"), net.anomalies.at("OF005")) > 0.999);
  }
  SUBCASE("vanishing range decorrelates") {
    auto c = small_network();
    c.spatial_range_km = 1e-9;
    const auto net = synthesize_network(c);
    CHECK(std::abs(correlation(net.anomalies.at("TP001"), net.anomalies.at("OF005"))) < 0.1);
  }
  SUBCASE("deterministic") {
    const auto a = synthesize_network(small_network());
    const auto b = synthesize_network(small_network());
    CHECK(a.data.daily.at("OF003").values == b.data.daily.at("OF003").values);
    CHECK(a.data.stations[4].latitude == b.data.stations[4].latitude);
  }
  SUBCASE("layout") {
    auto c = small_network();
    c.with_grids = true;
    c.with_hourly = true;
    const auto net = synthesize_network(c);
    CHECK(net.data.tpaws().size() == 2);
    CHECK(net.data.officials().size() == 10);
    CHECK(net.data.grids.size() == products_for(Variable::Tmax).size());
    CHECK(net.data.hourly.at("TP001").size() == 1461);
    CHECK_FALSE(net.data.hourly.contains("OF001"));
    // The daily maximum tracks the hourly peak.
    const Date d = c.start + days{100};
    double peak = -1e9;
    for (const auto& [t, v] : net.data.hourly.at("TP001").at(d).values) peak = std::max(peak, v);
    CHECK(std::abs(*net.data.daily.at("TP001").at(d) - peak) < 3.0);
  }
  SUBCASE("invalid configs") {
    auto c = small_network();
    c.years = 3;
    CHECK_THROWS_AS(synthesize_network(c), Error);
    c = small_network();
    c.n_tpaws = 12;
    CHECK_THROWS_AS(synthesize_network(c), Error);
  }
}

TEST_CASE("covariance factor") {
  const std::vector<std::pair<double, double>> sites{{-32.0, 116.0}, {-32.1, 116.2}, {-31.5, 117.0}};
  const Eigen::MatrixXd L = exponential_covariance_factor(sites, 150.0);
  const Eigen::MatrixXd S = L * L.transpose();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const double d = great_circle_km(sites[i].first, sites[i].second, sites[j].first, sites[j].second);
      CHECK(S(i, j) == doctest::Approx(std::exp(-d / 150.0) + (i == j ? kCovarianceNugget : 0.0)).epsilon(1e-12));
    }
}

TEST_CASE("error injection") {
  DailySeries s{"TP001", Variable::WindGust, {}};
  for (int i = 0; i < 1460; ++i) s.values[parse_date("2018-01-01") + days{i}] = 30.0;

  InjectionSpec spec;
  const auto r = inject_errors(s, spec);
  CHECK(r.deltas.size() >= 110);
  CHECK(r.deltas.size() <= 182);
  for (const auto& [d, delta] : r.deltas) {
    CHECK(delta >= 18.0);
    CHECK(delta <= 52.56);
    CHECK(r.series.values.at(d) == 30.0 + delta);
  }

  spec.fraction = 0.0;
  const auto none = inject_errors(s, spec);
  CHECK(none.deltas.empty());
  CHECK(none.series.values == s.values);

  spec.fraction = 0.5;
  spec.sign = InjectionSpec::Sign::Both;
  bool pos = false, neg = false;
  for (const auto& [d, delta] : inject_errors(s, spec).deltas) (delta > 0 ? pos : neg) = true;
  CHECK((pos && neg));

  spec.fraction = 1.0;
  CHECK_THROWS_AS(inject_errors(s, spec), Error);
  spec.fraction = 0.1;
  spec.magnitude_low = 60.0;
  CHECK_THROWS_AS(inject_errors(s, spec), Error);
  CHECK(parse_sign(to_string(InjectionSpec::Sign::Negative)) == InjectionSpec::Sign::Negative);
}

TEST_CASE("evaluate") {
  const Date d0 = parse_date("2018-01-01");
  std::vector<Assessment> as;
  std::vector<TruthLabel> ls;
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const Date d = d0 + days{i};
    const bool contaminated = i < 10;
    const bool flagged = contaminated ? i < 9 : i < 15;
    as.push_back(scored("TP001", d, flagged ? 0.01 : 0.5));
    ls.push_back({"TP001", d, contaminated, rng.uniform(5.0, 90.0)});
  }
  const auto bands = default_bands(Variable::WindGust);
  const SkillStats s = evaluate(as, ls, 0.05, bands);
  CHECK(*s.all.hit_rate == doctest::Approx(0.9));
  CHECK(*s.all.false_alarm_rate == doctest::Approx(5.0 / 90.0));
  CHECK(*s.all.false_alarm_rate == doctest::Approx(0.0556).epsilon(1e-3));

  // Independent recount, and the bands partition the cases.
  long c = 0, cf = 0, k = 0, kf = 0;
  for (std::size_t i = 0; i < as.size(); ++i) {
    const bool f = *as[i].final_cl < 0.05;
    (ls[i].contaminated ? c : k) += 1;
    (ls[i].contaminated ? cf : kf) += f;
  }
  CHECK(s.all.counts.contaminated == c);
  CHECK(s.all.counts.contaminated_flagged == cf);
  CHECK(s.all.counts.clean == k);
  CHECK(s.all.counts.clean_flagged == kf);
  long band_c = 0, band_k = 0;
  for (const auto& [name, r] : s.per_band) {
    band_c += r.counts.contaminated;
    band_k += r.counts.clean;
  }
  CHECK(band_c == c);
  CHECK(band_k == k);

  SUBCASE("trivial cases") {
    std::vector<Assessment> all_right, none;
    for (std::size_t i = 0; i < ls.size(); ++i) {
      all_right.push_back(scored("TP001", ls[i].date, ls[i].contaminated ? 0.0 : 1.0));
      none.push_back(scored("TP001", ls[i].date, 1.0));
    }
    const auto a = evaluate(all_right, ls);
    CHECK(*a.all.hit_rate == 1.0);
    CHECK(*a.all.false_alarm_rate == 0.0);
    const auto n = evaluate(none, ls);
    CHECK(*n.all.hit_rate == 0.0);
    CHECK(*n.all.false_alarm_rate == 0.0);
  }
  SUBCASE("NA is counted apart") {
    auto with_na = as;
    with_na[50].final_cl.reset();
    with_na[50].final_p1.reset();
    const auto r = evaluate(with_na, ls);
    CHECK(r.all.counts.not_applicable == 1);
    CHECK(r.all.counts.clean == 89);
  }
  SUBCASE("misaligned inputs") {
    auto shifted = ls;
    shifted[3].date += days{1};
    CHECK_THROWS_AS(evaluate(as, shifted), Error);
    CHECK_THROWS_AS(evaluate(as, std::vector<TruthLabel>(ls.begin(), ls.end() - 1)), Error);
  }
}

TEST_CASE("band edges") {
  const auto b = default_bands(Variable::WindGust);
  REQUIRE(b.size() == 3);
  for (double v : {0.0, 24.999, 25.0, 42.0, 60.0, 60.001, 300.0}) {
    int hits = 0;
    for (const auto& band : b) hits += band.contains(v);
    CHECK(hits == 1);
  }
  CHECK(b[1].contains(25.0));
  CHECK(b[1].contains(60.0));
  CHECK(default_bands(Variable::Tmax).empty());
}

TEST_CASE("small experiment") {
  ExperimentConfig c;
  c.network = small_network();
  c.network.n_stations = 25;
  SUBCASE("no injected errors") {
    // Every data stream: with daily streams alone the tests share the
    // station's own noise and the merged false-alarm rate inflates.
    c.network.with_grids = true;
    c.network.with_hourly = true;
    c.injection.fraction = 0.0;
    const auto r = run_experiment(c);
    const SkillStats* merged = r.column("Merged");
    REQUIRE(merged);
    CHECK_FALSE(merged->all.hit_rate.has_value());
    CHECK(*merged->all.false_alarm_rate <= c.cl_threshold + 0.05);
  }
  SUBCASE("huge errors are always caught") {
    c.injection.magnitude_low = 100.0 * c.network.climate().noise_sd;
    c.injection.magnitude_high = 110.0 * c.network.climate().noise_sd;
    const auto r = run_experiment(c);
    CHECK(*r.column("Merged")->all.hit_rate > 0.99);
    CHECK(r.column("Spatial") != nullptr);
  }
}
