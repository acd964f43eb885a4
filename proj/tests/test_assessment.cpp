#include <doctest.h>

#include <cmath>

#include "tpaws/assessment.hpp"
#include "tpaws/solvers.hpp"

using namespace tpaws;

namespace {

TestResult result(TestId id, double p1, double mse = 1.0) {
  TestResult r;
  r.test = id;
  r.applicable = true;
  r.p1 = p1;
  r.cl = confidence_level(p1);
  r.cal_mse = mse;
  return r;
}

ApplicabilityContext full_context() {
  ApplicabilityContext c;
  c.variable = Variable::Tmax;
  for (TestId id : {TestId::Spatial, TestId::SpatioTemporal, TestId::Trend, TestId::GriddedNWP,
                    TestId::GriddedAGCD, TestId::Subdaily})
    c.calibration_days[id] = 730;
  c.spatial_neighbors_reporting = 5;
  c.trend_neighbors_reporting = 5;
  c.yesterday_present = true;
  c.st_inputs_present = true;
  c.gridded[TestId::GriddedNWP] = {true, true};
  c.gridded[TestId::GriddedAGCD] = {true, true};
  c.gridded[TestId::GriddedERA] = {false, false};
  c.gridded[TestId::GriddedRadar] = {false, false};
  c.subdaily_slots = 24;
  return c;
}

}  // namespace

TEST_CASE("confidence level") {
  CHECK(confidence_level(0.5) == 1.0);
  CHECK(confidence_level(0.0) == 0.0);
  CHECK(confidence_level(1.0) == 0.0);
  CHECK(confidence_level(0.8) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK_THROWS_AS(confidence_level(1.5), Error);
  CHECK_THROWS_AS(confidence_level(NAN), Error);
}

TEST_CASE("p1 from a predictive distribution") {
  PredictiveDistribution d;
  d.mean = 1.5;
  d.sigma = 0.4;
  d.transform = TransformSpec::log_sinh(0.3, 0.2, 0.0);
  CHECK(p1_from_predictive(inverse(d.transform, d.mean), d) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(p1_from_predictive(inverse(d.transform, d.mean + 1.96 * d.sigma), d) ==
        doctest::Approx(0.5 * std::erfc(-1.96 / std::sqrt(2.0))).epsilon(1e-12));

  PredictiveDistribution rain;
  rain.transform = TransformSpec::identity();
  rain.zero_mass = 0.6;
  rain.lower_bound = 0.0;
  rain.mean = 2.0;
  CHECK(p1_from_predictive(0.0, rain) == doctest::Approx(0.30).epsilon(1e-15));
}

TEST_CASE("score_against") {
  PredictiveDistribution d;
  d.mean = 22.0;
  d.sigma = 1.0;
  const TestResult at = score_against(TestId::Spatial, 22.0, d, 1.0);
  CHECK(at.applicable);
  CHECK(*at.cl == 1.0);
  const TestResult tail = score_against(TestId::Spatial, 22.0 + 1.96, d, 1.0);
  CHECK(*tail.cl == doctest::Approx(0.05).epsilon(1e-3));
  CHECK(tail.predicted_median == 22.0);
}

TEST_CASE("applicability routing") {
  SUBCASE("everything present") {
    const auto a = applicability(full_context());
    for (TestId id : {TestId::Spatial, TestId::SpatioTemporal, TestId::Trend, TestId::GriddedNWP,
                      TestId::GriddedAGCD, TestId::Subdaily})
      CHECK(a.at(id).applicable);
    CHECK_FALSE(a.at(TestId::GriddedERA).applicable);
  }
  SUBCASE("no official data") {
    ApplicabilityContext c;
    for (const auto& [id, a] : applicability(c)) CHECK_FALSE(a.applicable);
  }
  SUBCASE("rain with an NWP grid only") {
    ApplicabilityContext c;
    c.variable = Variable::Rain;
    c.calibration_days[TestId::GriddedNWP] = 730;
    c.gridded[TestId::GriddedNWP] = {false, true};
    const auto a = applicability(c);
    CHECK_FALSE(a.at(TestId::GriddedNWP).applicable);
  }
  SUBCASE("one neighbour is not enough") {
    auto c = full_context();
    c.spatial_neighbors_reporting = 1;
    CHECK_FALSE(applicability(c).at(TestId::Spatial).applicable);
  }
  SUBCASE("short calibration") {
    auto c = full_context();
    c.calibration_days[TestId::Trend] = 200;
    CHECK_FALSE(applicability(c).at(TestId::Trend).applicable);
  }
  SUBCASE("sparse sub-daily day") {
    auto c = full_context();
    c.subdaily_slots = 10;
    CHECK_FALSE(applicability(c).at(TestId::Subdaily).applicable);
  }
}

TEST_CASE("pre-assessment") {
  const auto sp = result(TestId::Spatial, 0.5, 2.0);
  CHECK(pre_assess(sp, result(TestId::SpatioTemporal, 0.5, 1.0), {3.0}) == TestId::SpatioTemporal);
  CHECK(pre_assess(sp, result(TestId::SpatioTemporal, 0.5, 2.0), {3.0}) == TestId::SpatioTemporal);
  CHECK(pre_assess(result(TestId::Spatial, 0.5, 0.5), result(TestId::SpatioTemporal, 0.5, 2.0), {3.0}) ==
        TestId::Spatial);
  CHECK(pre_assess(sp, std::nullopt, {}) == TestId::Spatial);
  CHECK(pre_assess(sp, TestResult::not_applicable(TestId::SpatioTemporal, "x"), {}) == TestId::Spatial);
}

TEST_CASE("fusion") {
  SUBCASE("single test passes through") {
    const auto a = fuse({result(TestId::Trend, 0.97)}, {3.0});
    CHECK(*a.final_cl == *result(TestId::Trend, 0.97).cl);
  }
  SUBCASE("agreeing tests at the centre") {
    const auto a = fuse({result(TestId::Trend, 0.5), result(TestId::Spatial, 0.5)}, {1.0, 1.0});
    CHECK(*a.final_cl == 1.0);
  }
  SUBCASE("Stouffer compounds evidence") {
    const double p = 0.975;
    const auto a = fuse({result(TestId::Trend, p), result(TestId::Spatial, p)}, {1.0, 1.0});
    const double z = std::sqrt(2.0) * normal_quantile(p);
    const double pf = 0.5 * std::erfc(-z / std::sqrt(2.0));
    CHECK(*a.final_p1 == doctest::Approx(pf).epsilon(1e-12));
    CHECK(*a.final_cl == doctest::Approx(2.0 * (1.0 - pf)).epsilon(1e-9));
    CHECK(*a.final_cl == doctest::Approx(0.0056).epsilon(0.02));
  }
  SUBCASE("nothing to fuse") { CHECK(fuse({}, {}).is_na()); }
  SUBCASE("spatial and spatiotemporal never fuse together") {
    CHECK_THROWS_AS(fuse({result(TestId::SpatioTemporal, 0.5), result(TestId::Spatial, 0.5)}, {1.0, 1.0}), Error);
  }
}

TEST_CASE("fusion properties on random cases") {
  Rng rng(99);
  const TestId pool[] = {TestId::Spatial, TestId::Trend, TestId::GriddedNWP, TestId::GriddedAGCD, TestId::Subdaily};
  for (int c = 0; c < 1000; ++c) {
    const int k = 1 + static_cast<int>(rng.uniform() * 5);
    std::vector<TestResult> rs;
    std::vector<double> w, w_scaled;
    const double scale = std::exp(rng.uniform(-5.0, 5.0));
    for (int i = 0; i < k; ++i) {
      rs.push_back(result(pool[i], rng.uniform(), 1.0));
      w.push_back(rng.uniform(0.01, 10.0));
      w_scaled.push_back(w.back() * scale);
    }
    const auto a = fuse(rs, w), b = fuse(rs, w_scaled);
    if (k == 1) CHECK(*a.final_cl == *rs[0].cl);
    CHECK(*b.final_p1 == doctest::Approx(*a.final_p1).epsilon(1e-12));
    CHECK(*a.final_cl >= 0.0);
    CHECK(*a.final_cl <= 1.0);
  }
}

TEST_CASE("traceback order") {
  auto a = fuse({result(TestId::Spatial, 0.5), result(TestId::Trend, 1.0), result(TestId::GriddedNWP, 0.6)},
                {1.0, 1.0, 1.0});
  a.excluded.push_back({TestId::Subdaily, "insufficient sub-daily coverage"});
  const auto tb = traceback(a);
  REQUIRE(tb.size() == 4);
  CHECK(tb[0].test == TestId::Trend);
  CHECK(tb[0].cl == 0.0);
  CHECK_FALSE(tb.back().contributing);

  const auto ties = traceback(fuse({result(TestId::GriddedNWP, 0.5), result(TestId::Spatial, 0.5)}, {1.0, 1.0}));
  CHECK(ties[0].test == TestId::Spatial);
  CHECK(ties[1].test == TestId::GriddedNWP);

  Assessment na;
  na.excluded.push_back({TestId::Spatial, "not calibrated"});
  const auto tna = traceback(na);
  REQUIRE(tna.size() == 1);
  CHECK_FALSE(tna[0].contributing);
}

TEST_CASE("flagging") {
  Assessment a = fuse({result(TestId::Spatial, 0.999)}, {1.0});
  CHECK(is_flagged(a, 0.05));
  Assessment na;
  CHECK_FALSE(is_flagged(na, 0.05));
  na.domain_verdict = DomainVerdict::Fail(DomainVerdict::Bound::Upper, 60.0);
  CHECK(is_flagged(na, 0.05));
}

TEST_CASE("test id names") {
  for (TestId id : kAllTests) CHECK(parse_test_id(to_string(id)) == id);
}
