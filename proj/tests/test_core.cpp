#include <doctest.h>

#include <cmath>
#include <set>

#include "tpaws/core.hpp"

using namespace tpaws;

TEST_CASE("unit conversion") {
  CHECK(convert_units(5.0, Unit::MetrePerSecond, Unit::KilometrePerHour) == doctest::Approx(18.0).epsilon(1e-15));
  CHECK(convert_units(0.0, Unit::MetrePerSecond, Unit::KilometrePerHour) == 0.0);
  CHECK(convert_units(14.6, Unit::MetrePerSecond, Unit::KilometrePerHour) == doctest::Approx(52.56).epsilon(1e-15));
  CHECK(convert_units(21.0, Unit::Celsius, Unit::Celsius) == 21.0);
  CHECK_THROWS_AS(convert_units(1.0, Unit::Celsius, Unit::Millimetre), Error);
  try {
    convert_units(1.0, Unit::Percent, Unit::KilometrePerHour);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::IncompatibleUnits);
  }
}

TEST_CASE("variable limits") {
  const DailyContext none;
  CHECK(variable_limits(Variable::Rain, none).lower == 0.0);
  CHECK(variable_limits(Variable::Rain, none).upper == 2000.0);
  CHECK(variable_limits(Variable::WindGust, none).lower == 3.6);
  CHECK(variable_limits(Variable::WindGust, none).upper == 540.0);

  DailyContext high;
  high.elevation = 1200.0;
  CHECK(variable_limits(Variable::Tmin, high).lower == -40.0);
  CHECK(variable_limits(Variable::Tmin, high).upper == 60.0);
  CHECK(variable_limits(Variable::Tmin, none).lower == -30.0);

  DailyContext coupled;
  coupled.same_day_tmax = 25.0;
  coupled.same_day_tmin = 8.5;
  CHECK(variable_limits(Variable::Tmin, coupled).upper == 25.0);
  CHECK(variable_limits(Variable::Tmax, coupled).lower == 8.5);
}

TEST_CASE("domain test") {
  DailyContext ctx;
  ctx.same_day_tmin = 8.5;
  CHECK(domain_test({"DU002", {}, Variable::Tmax, 45.8, {}}, ctx).pass);

  const DomainVerdict wind = domain_test({"X", {}, Variable::WindGust, 600.0, {}}, {});
  CHECK_FALSE(wind.pass);
  CHECK(wind.violated == DomainVerdict::Bound::Upper);
  CHECK(wind.limit == 540.0);

  const DomainVerdict rain = domain_test({"X", {}, Variable::Rain, -0.2, {}}, {});
  CHECK_FALSE(rain.pass);
  CHECK(rain.violated == DomainVerdict::Bound::Lower);
  CHECK(rain.limit == 0.0);

  CHECK_FALSE(domain_test({"X", {}, Variable::Tmax, NAN, {}}, {}).pass);
}

TEST_CASE("dates") {
  const Date d = parse_date("2019-10-03");
  CHECK(format_date(d) == "2019-10-03");
  CHECK(year_of(d) == 2019);
  CHECK(month_of(d) == 10);
  CHECK(day_of_year(parse_date("2016-12-31")) == 366);
  CHECK(day_of_year(parse_date("2017-01-01")) == 1);
  for (const char* bad : {"2019-13-01", "2019-02-30", "2019-1-01", "20190101", "2019-01-01T00", ""})
    CHECK_THROWS_AS(parse_date(bad), Error);
}

TEST_CASE("names round trip") {
  for (Variable v : kAllVariables) CHECK(parse_variable(to_string(v)) == v);
  for (Source s : {Source::Official, Source::TPAWS}) CHECK(parse_source(to_string(s)) == s);
  CHECK_THROWS_AS(parse_variable("Snow"), Error);
}

TEST_CASE("station validation") {
  CHECK_NOTHROW(validate({"A", -32.0, 117.0, 10.0, Source::Official}));
  CHECK_THROWS_AS(validate({"A", 95.0, 117.0, 10.0, Source::Official}), Error);
  CHECK_THROWS_AS(validate({"A", -32.0, 181.0, 10.0, Source::Official}), Error);
  CHECK_THROWS_AS(validate({"", -32.0, 117.0, 10.0, Source::Official}), Error);
}

TEST_CASE("rng streams") {
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  CHECK(derive_seed(1, "TP001") != derive_seed(1, "TP002"));
  CHECK(derive_seed(1, "TP001") == derive_seed(1, "TP001"));

  Rng r(11);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::abs(s2 / n - 1.0) < 0.02);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK((u >= 0.0 && u < 1.0));
  }
}

TEST_CASE("slice") {
  DailySeries s{"A", Variable::Tmax, {}};
  for (int i = 0; i < 10; ++i) s.values[parse_date("2020-01-01") + std::chrono::days{i}] = i;
  const DailySeries t = slice(s, parse_date("2020-01-03"), parse_date("2020-01-05"));
  CHECK(t.size() == 3);
  CHECK(*t.at(parse_date("2020-01-03")) == 2.0);
}
