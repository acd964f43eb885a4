#include "tpaws/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace tpaws {

// ---------------------------------------------------------------------------
// Canonical JSON

namespace {

std::string format_double(double v) {
  if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "non-finite number in JSON output");
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void emit(const Json& j, int indent, std::string& out) {
  const std::string pad(static_cast<std::size_t>(indent), ' ');
  const std::string inner(static_cast<std::size_t>(indent + 2), ' ');
  switch (j.type()) {
    case Json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {  // std::map keeps keys sorted
        if (!first) out += ",\n";
        first = false;
        out += inner + Json(it.key()).dump() + ": ";
        emit(it.value(), indent + 2, out);
      }
      out += "\n" + pad + "}";
      return;
    }
    case Json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      out += "[\n";
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) out += ",\n";
        out += inner;
        emit(j[i], indent + 2, out);
      }
      out += "\n" + pad + "]";
      return;
    }
    case Json::value_t::number_float: out += format_double(j.get<double>()); return;
    default: out += j.dump(); return;
  }
}

}  // namespace

std::string canonical_json(const Json& j) {
  std::string out;
  emit(j, 0, out);
  out += "\n";
  return out;
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json parse_json_file(const fs::path& path) {
  try {
    return Json::parse(read_text_file(path));
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write " + tmp.string());
    out << content;
    if (!out) throw Error(ErrorCode::InvalidArgument, "write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Line-oriented parsing helpers

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

/// Finite decimal number; nothing else.
std::optional<double> parse_number(std::string_view s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

double require_number(std::string_view s, const std::string& what) {
  auto v = parse_number(s);
  if (!v) throw Error(ErrorCode::ParseError, what + ": not a finite number: '" + std::string(s) + "'");
  return *v;
}

int require_int(std::string_view s, const std::string& what) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw Error(ErrorCode::ParseError, what + ": not an integer");
  return v;
}

/// Collects per-line errors and throws them together.
struct ErrorList {
  std::string file;
  std::vector<std::string> items;

  void add(std::size_t line, const std::string& why) { items.push_back("line " + std::to_string(line) + ": " + why); }
  void raise_if_any() const {
    if (items.empty()) return;
    std::string msg = file + ": " + std::to_string(items.size()) + " bad line(s)";
    for (const auto& i : items) msg += "\n  " + i;
    throw Error(ErrorCode::ParseError, msg);
  }
};

struct CsvFile {
  std::optional<Unit> unit;
  std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;  // (line number, fields)
};

CsvFile read_csv(const fs::path& path, const std::string& header, ErrorList& errors) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open " + path.string());
  CsvFile out;
  std::string line;
  std::size_t n = 0;
  bool have_header = false;
  const auto expected = split(header, ',');
  while (std::getline(in, line)) {
    ++n;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t[0] == '#') {
      const std::string body = trim(std::string_view(t).substr(1));
      if (body.rfind("unit:", 0) == 0) {
        try {
          out.unit = parse_unit(trim(std::string_view(body).substr(5)));
        } catch (const Error& e) {
          errors.add(n, e.what());
        }
      }
      continue;
    }
    if (!have_header) {
      if (split(t, ',') != expected) {
        errors.add(n, "expected header '" + header + "'");
        errors.raise_if_any();
      }
      have_header = true;
      continue;
    }
    auto fields = split(t, ',');
    if (fields.size() != expected.size()) {
      errors.add(n, "expected " + std::to_string(expected.size()) + " fields");
      continue;
    }
    out.rows.emplace_back(n, std::move(fields));
  }
  if (!have_header) {
    errors.add(n, "missing header '" + header + "'");
    errors.raise_if_any();
  }
  return out;
}

std::string fmt(double v) { return format_double(v); }

}  // namespace

// ---------------------------------------------------------------------------
// Stations

std::vector<StationMeta> read_stations(const fs::path& path) {
  ErrorList errors{path.string(), {}};
  const CsvFile csv = read_csv(path, "id,lat,lon,elev_m,source", errors);
  std::vector<StationMeta> out;
  std::set<std::string> ids;
  for (const auto& [line, f] : csv.rows) {
    try {
      StationMeta m;
      m.id = f[0];
      if (m.id.empty()) throw Error(ErrorCode::ParseError, "empty id");
      m.latitude = require_number(f[1], "lat");
      m.longitude = require_number(f[2], "lon");
      m.elevation = require_number(f[3], "elev_m");
      m.source = parse_source(f[4]);
      validate(m);
      if (!ids.insert(m.id).second) throw Error(ErrorCode::ParseError, "duplicate station id " + m.id);
      out.push_back(std::move(m));
    } catch (const Error& e) {
      errors.add(line, e.what());
    }
  }
  errors.raise_if_any();
  return out;
}

void write_stations(const fs::path& path, const std::vector<StationMeta>& stations) {
  std::string s = "id,lat,lon,elev_m,source\n";
  for (const auto& m : stations)
    s += m.id + "," + fmt(m.latitude) + "," + fmt(m.longitude) + "," + fmt(m.elevation) + "," +
         std::string(to_string(m.source)) + "\n";
  write_file_atomic(path, s);
}

// ---------------------------------------------------------------------------
// Daily observations

std::map<std::string, DailySeries> read_daily(const fs::path& path, Variable variable) {
  ErrorList errors{path.string(), {}};
  const CsvFile csv = read_csv(path, "station_id,date,value", errors);
  const Unit target = canonical_unit(variable);
  if (!csv.unit) errors.add(0, "missing '# unit:' declaration");
  errors.raise_if_any();
  std::map<std::string, DailySeries> out;
  for (const auto& [line, f] : csv.rows) {
    try {
      if (f[0].empty()) throw Error(ErrorCode::ParseError, "empty station id");
      const Date d = parse_date(f[1]);
      if (f[2].empty()) throw Error(ErrorCode::ParseError, "empty value");
      const double v = convert_units(require_number(f[2], "value"), *csv.unit, target);
      auto& s = out[f[0]];
      s.station_id = f[0];
      s.variable = variable;
      if (!s.values.emplace(d, v).second)
        throw Error(ErrorCode::ParseError, "duplicate (station, date) " + f[0] + " " + f[1]);
    } catch (const Error& e) {
      errors.add(line, e.what());
    }
  }
  errors.raise_if_any();
  return out;
}

void write_daily(const fs::path& path, const std::map<std::string, DailySeries>& series, Variable variable) {
  std::string s = "# unit: " + std::string(to_string(canonical_unit(variable))) + "\nstation_id,date,value\n";
  for (const auto& [id, ser] : series)
    for (const auto& [d, v] : ser.values) s += id + "," + format_date(d) + "," + fmt(v) + "\n";
  write_file_atomic(path, s);
}

// ---------------------------------------------------------------------------
// Grids

GridProduct read_grid(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open " + path.string());
  const std::string where = path.string() + ": ";
  std::map<std::string, std::string> header;
  std::string line;
  std::size_t n = 0;
  bool in_values = false;
  while (!in_values && std::getline(in, line)) {
    ++n;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t == "values") {
      in_values = true;
      break;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::ParseError, where + "line " + std::to_string(n) + ": expected key = value");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    if (!header.emplace(key, trim(std::string_view(t).substr(eq + 1))).second)
      throw Error(ErrorCode::ParseError, where + "duplicate key " + key);
  }
  if (!in_values) throw Error(ErrorCode::ParseError, where + "missing 'values' section");
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = header.find(k);
    if (it == header.end()) throw Error(ErrorCode::ParseError, where + "missing header key " + k);
    return it->second;
  };
  static const std::set<std::string> known{"product", "variable", "unit", "origin_lat", "origin_lon",
                                           "cell_size", "nrows", "ncols", "dates"};
  for (const auto& [k, v] : header)
    if (!known.count(k)) throw Error(ErrorCode::ParseError, where + "unknown header key " + k);

  GridProduct g;
  try {
    g.product = parse_product(get("product"));
    g.variable = parse_variable(get("variable"));
    g.origin_lat = require_number(get("origin_lat"), "origin_lat");
    g.origin_lon = require_number(get("origin_lon"), "origin_lon");
    g.cell_size = require_number(get("cell_size"), "cell_size");
    g.nrows = require_int(get("nrows"), "nrows");
    g.ncols = require_int(get("ncols"), "ncols");
  } catch (const Error& e) {
    throw Error(ErrorCode::ParseError, where + e.what());
  }
  if (g.nrows < 1 || g.ncols < 1 || !(g.cell_size > 0.0))
    throw Error(ErrorCode::ParseError, where + "grid dimensions must be positive");
  const Unit unit = header.count("unit") ? parse_unit(header.at("unit")) : canonical_unit(g.variable);
  const Unit canon = canonical_unit(g.variable);
  for (const auto& d : split(get("dates"), ',')) {
    const Date date = parse_date(d);
    if (!g.dates.empty() && date <= g.dates.back())
      throw Error(ErrorCode::ParseError, where + "dates out of order at " + d);
    g.dates.push_back(date);
  }
  std::string token;
  while (in >> token) {
    if (token == "NaN") {
      g.values.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    auto v = parse_number(token);
    if (!v) throw Error(ErrorCode::ParseError, where + "bad value '" + token + "'");
    g.values.push_back(convert_units(*v, unit, canon));
  }
  const std::size_t expected = g.dates.size() * static_cast<std::size_t>(g.nrows) * static_cast<std::size_t>(g.ncols);
  if (g.values.size() != expected)
    throw Error(ErrorCode::ParseError, where + "expected " + std::to_string(expected) + " values, found " +
                                           std::to_string(g.values.size()));
  return g;
}

void write_grid(const fs::path& path, const GridProduct& g) {
  std::string s;
  s += "product = " + std::string(to_string(g.product)) + "\n";
  s += "variable = " + std::string(to_string(g.variable)) + "\n";
  s += "unit = " + std::string(to_string(canonical_unit(g.variable))) + "\n";
  s += "origin_lat = " + fmt(g.origin_lat) + "\n";
  s += "origin_lon = " + fmt(g.origin_lon) + "\n";
  s += "cell_size = " + fmt(g.cell_size) + "\n";
  s += "nrows = " + std::to_string(g.nrows) + "\n";
  s += "ncols = " + std::to_string(g.ncols) + "\n";
  s += "dates = ";
  for (std::size_t i = 0; i < g.dates.size(); ++i) s += (i ? "," : "") + format_date(g.dates[i]);
  s += "\nvalues\n";
  std::size_t k = 0;
  for (std::size_t d = 0; d < g.dates.size(); ++d)
    for (int r = 0; r < g.nrows; ++r) {
      for (int c = 0; c < g.ncols; ++c, ++k) {
        if (c) s += ' ';
        s += std::isnan(g.values[k]) ? std::string("NaN") : fmt(g.values[k]);
      }
      s += '\n';
    }
  write_file_atomic(path, s);
}

// ---------------------------------------------------------------------------
// Sub-daily observations

namespace {

struct Timestamp {
  Date local_day;
  int local_minutes = 0;
  long long utc_seconds = 0;
};

// YYYY-MM-DDTHH:MM[:SS](Z|+HH:MM|-HH:MM)
Timestamp parse_timestamp(std::string_view s) {
  auto bad = [&] { return Error(ErrorCode::ParseError, "bad timestamp '" + std::string(s) + "'"); };
  if (s.size() < 17 || s[10] != 'T') throw bad();
  Timestamp t;
  t.local_day = parse_date(s.substr(0, 10));
  auto two = [&](std::size_t pos) {
    if (pos + 2 > s.size() || !std::isdigit(static_cast<unsigned char>(s[pos])) ||
        !std::isdigit(static_cast<unsigned char>(s[pos + 1])))
      throw bad();
    return (s[pos] - '0') * 10 + (s[pos + 1] - '0');
  };
  const int hh = two(11);
  if (s[13] != ':') throw bad();
  const int mm = two(14);
  std::size_t pos = 16;
  int ss = 0;
  if (pos < s.size() && s[pos] == ':') {
    ss = two(pos + 1);
    pos += 3;
  }
  if (hh > 23 || mm > 59 || ss > 59) throw bad();
  int offset_min = 0;
  if (pos < s.size() && s[pos] == 'Z' && pos + 1 == s.size()) {
    offset_min = 0;
  } else if (pos + 6 == s.size() && (s[pos] == '+' || s[pos] == '-') && s[pos + 3] == ':') {
    const int oh = two(pos + 1), om = two(pos + 4);
    if (oh > 14 || om > 59) throw bad();
    offset_min = (s[pos] == '-' ? -1 : 1) * (oh * 60 + om);
  } else {
    throw bad();
  }
  t.local_minutes = hh * 60 + mm;
  t.utc_seconds = static_cast<long long>(t.local_day.time_since_epoch().count()) * 86400 + t.local_minutes * 60LL +
                  ss - offset_min * 60LL;
  return t;
}

std::string format_timestamp(Date day, int minutes, double utc_offset_hours) {
  const int off = static_cast<int>(std::lround(utc_offset_hours * 60.0));
  char buf[48];
  std::snprintf(buf, sizeof buf, "%sT%02d:%02d:00%c%02d:%02d", format_date(day).c_str(), minutes / 60, minutes % 60,
                off < 0 ? '-' : '+', std::abs(off) / 60, std::abs(off) % 60);
  return buf;
}

}  // namespace

std::vector<SubdailySeries> read_subdaily(const fs::path& path, Variable variable) {
  ErrorList errors{path.string(), {}};
  const CsvFile csv = read_csv(path, "station_id,timestamp,value", errors);
  if (!csv.unit) errors.add(0, "missing '# unit:' declaration");
  errors.raise_if_any();
  const Unit target = canonical_unit(variable);
  std::map<std::pair<std::string, Date>, SubdailySeries> days;
  std::map<std::string, long long> last_utc;
  for (const auto& [line, f] : csv.rows) {
    try {
      if (f[0].empty()) throw Error(ErrorCode::ParseError, "empty station id");
      const Timestamp ts = parse_timestamp(f[1]);
      const double v = convert_units(require_number(f[2], "value"), *csv.unit, target);
      auto it = last_utc.find(f[0]);
      if (it != last_utc.end() && ts.utc_seconds <= it->second)
        throw Error(ErrorCode::ParseError, "timestamps not increasing for " + f[0]);
      last_utc[f[0]] = ts.utc_seconds;
      auto& s = days[{f[0], ts.local_day}];
      s.station_id = f[0];
      s.date = ts.local_day;
      s.variable = variable;
      s.values.emplace_back(std::chrono::minutes{ts.local_minutes}, v);
    } catch (const Error& e) {
      errors.add(line, e.what());
    }
  }
  errors.raise_if_any();
  std::vector<SubdailySeries> out;
  for (auto& [k, s] : days) {
    std::sort(s.values.begin(), s.values.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    out.push_back(std::move(s));
  }
  return out;
}

void write_subdaily(const fs::path& path, const std::vector<SubdailySeries>& series, double utc_offset_hours) {
  if (series.empty()) {
    write_file_atomic(path, "# unit: degC\nstation_id,timestamp,value\n");
    return;
  }
  std::string s = "# unit: " + std::string(to_string(canonical_unit(series.front().variable))) +
                  "\nstation_id,timestamp,value\n";
  for (const auto& day : series)
    for (const auto& [t, v] : day.values)
      s += day.station_id + "," + format_timestamp(day.date, static_cast<int>(t.count()), utc_offset_hours) + "," +
           fmt(v) + "\n";
  write_file_atomic(path, s);
}

// ---------------------------------------------------------------------------
// Labels

std::vector<TruthLabel> read_labels(const fs::path& path) {
  ErrorList errors{path.string(), {}};
  const CsvFile csv = read_csv(path, "station_id,date,contaminated,true_value", errors);
  std::vector<TruthLabel> out;
  for (const auto& [line, f] : csv.rows) {
    try {
      TruthLabel l;
      l.station_id = f[0];
      l.date = parse_date(f[1]);
      if (f[2] != "0" && f[2] != "1") throw Error(ErrorCode::ParseError, "contaminated must be 0 or 1");
      l.contaminated = f[2] == "1";
      l.true_value = require_number(f[3], "true_value");
      out.push_back(std::move(l));
    } catch (const Error& e) {
      errors.add(line, e.what());
    }
  }
  errors.raise_if_any();
  return out;
}

void write_labels(const fs::path& path, const std::vector<TruthLabel>& labels) {
  std::string s = "station_id,date,contaminated,true_value\n";
  for (const auto& l : labels)
    s += l.station_id + "," + format_date(l.date) + "," + (l.contaminated ? "1" : "0") + "," + fmt(l.true_value) + "\n";
  write_file_atomic(path, s);
}

// ---------------------------------------------------------------------------
// Model serialisation

namespace {

Json vec_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Eigen::VectorXd vec_from(const Json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j.at(i).get<double>();
  return v;
}

Json error_json(const GaussianErrorModel& e) { return {{"mu", e.mu}, {"sigma", e.sigma}}; }
GaussianErrorModel error_from(const Json& j) { return {j.at("mu").get<double>(), j.at("sigma").get<double>()}; }

Json opt_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }
std::optional<double> opt_from(const Json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

template <class T>
T with_context(const char* what, const std::function<T()>& f) {
  try {
    return f();
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string(what) + ": " + e.what());
  }
}

Json member_json(const StMemberModel& m) { return {{"lasso", to_json(m.lasso)}, {"sigma", m.sigma}}; }

}  // namespace

Json to_json(const TransformSpec& t) {
  return {{"kind", std::string(to_string(t.kind))}, {"a", t.a}, {"b", t.b}, {"y_shift", t.y_shift}};
}

TransformSpec transform_from_json(const Json& j) {
  return with_context<TransformSpec>("transform", [&] {
    TransformSpec t;
    t.kind = parse_transform_kind(j.at("kind").get<std::string>());
    t.a = j.at("a").get<double>();
    t.b = j.at("b").get<double>();
    t.y_shift = j.at("y_shift").get<double>();
    return t;
  });
}

Json to_json(const LassoModel& m) {
  return {{"intercept", m.intercept},
          {"coefficients", vec_json(m.coefficients)},
          {"lambda", m.lambda},
          {"predictor_means", vec_json(m.predictor_means)},
          {"predictor_scales", vec_json(m.predictor_scales)},
          {"sweeps", m.sweeps}};
}

LassoModel lasso_from_json(const Json& j) {
  return with_context<LassoModel>("lasso", [&] {
    LassoModel m;
    m.intercept = j.at("intercept").get<double>();
    m.coefficients = vec_from(j.at("coefficients"));
    m.lambda = j.at("lambda").get<double>();
    m.predictor_means = vec_from(j.at("predictor_means"));
    m.predictor_scales = vec_from(j.at("predictor_scales"));
    m.sweeps = j.at("sweeps").get<int>();
    return m;
  });
}

Json to_json(const SpatialModel& m) {
  return {{"target_station", m.target_station},
          {"neighbor_ids", m.neighbor_ids},
          {"lasso", to_json(m.lasso)},
          {"transform", to_json(m.transform)},
          {"error", error_json(m.error)},
          {"calibration_from", format_date(m.calibration_from)},
          {"calibration_to", format_date(m.calibration_to)},
          {"calibration_days", m.calibration_days},
          {"cal_mse", m.cal_mse},
          {"zero_mass", opt_json(m.zero_mass)},
          {"variable", std::string(to_string(m.variable))}};
}

SpatialModel spatial_from_json(const Json& j) {
  return with_context<SpatialModel>("spatial model", [&] {
    SpatialModel m;
    m.target_station = j.at("target_station").get<std::string>();
    m.neighbor_ids = j.at("neighbor_ids").get<std::vector<std::string>>();
    m.lasso = lasso_from_json(j.at("lasso"));
    m.transform = transform_from_json(j.at("transform"));
    m.error = error_from(j.at("error"));
    m.calibration_from = parse_date(j.at("calibration_from").get<std::string>());
    m.calibration_to = parse_date(j.at("calibration_to").get<std::string>());
    m.calibration_days = j.at("calibration_days").get<int>();
    m.cal_mse = j.at("cal_mse").get<double>();
    m.zero_mass = opt_from(j.at("zero_mass"));
    m.variable = parse_variable(j.at("variable").get<std::string>());
    return m;
  });
}

Json to_json(const GriddedModel& m) {
  return {{"product", std::string(to_string(m.product))},
          {"variable", std::string(to_string(m.variable))},
          {"transform", to_json(m.transform)},
          {"error", error_json(m.error)},
          {"bias_slope", m.bias_slope},
          {"bias_intercept", m.bias_intercept},
          {"calibration_from", format_date(m.calibration_from)},
          {"calibration_to", format_date(m.calibration_to)},
          {"calibration_days", m.calibration_days},
          {"cal_mse", m.cal_mse},
          {"zero_mass", opt_json(m.zero_mass)}};
}

GriddedModel gridded_from_json(const Json& j) {
  return with_context<GriddedModel>("gridded model", [&] {
    GriddedModel m;
    m.product = parse_product(j.at("product").get<std::string>());
    m.variable = parse_variable(j.at("variable").get<std::string>());
    m.transform = transform_from_json(j.at("transform"));
    m.error = error_from(j.at("error"));
    m.bias_slope = j.at("bias_slope").get<double>();
    m.bias_intercept = j.at("bias_intercept").get<double>();
    m.calibration_from = parse_date(j.at("calibration_from").get<std::string>());
    m.calibration_to = parse_date(j.at("calibration_to").get<std::string>());
    m.calibration_days = j.at("calibration_days").get<int>();
    m.cal_mse = j.at("cal_mse").get<double>();
    m.zero_mass = opt_from(j.at("zero_mass"));
    return m;
  });
}

Json to_json(const StModelSet& m) {
  return {{"transform", to_json(m.transform)},
          {"similar_ids", m.similar_ids},
          {"star", member_json(m.star)},
          {"stlm", member_json(m.stlm)},
          {"stam", member_json(m.stam)},
          {"stlm_harmonics", m.stlm_harmonics},
          {"bma", {{"weights", vec_json(m.bma.weights)}, {"sigmas", vec_json(m.bma.sigmas)}}},
          {"cal_mse", m.cal_mse},
          {"calibration_from", format_date(m.calibration_from)},
          {"calibration_to", format_date(m.calibration_to)},
          {"calibration_days", m.calibration_days},
          {"variable", std::string(to_string(m.variable))}};
}

StModelSet st_from_json(const Json& j) {
  return with_context<StModelSet>("spatiotemporal model", [&] {
    StModelSet m;
    m.transform = transform_from_json(j.at("transform"));
    m.similar_ids = j.at("similar_ids").get<std::vector<std::string>>();
    auto member = [&](const char* key, StMember kind) {
      return StMemberModel{kind, lasso_from_json(j.at(key).at("lasso")), j.at(key).at("sigma").get<double>()};
    };
    m.star = member("star", StMember::STAR);
    m.stlm = member("stlm", StMember::STLM);
    m.stam = member("stam", StMember::STAM);
    m.stlm_harmonics = j.at("stlm_harmonics").get<bool>();
    m.bma.weights = vec_from(j.at("bma").at("weights"));
    m.bma.sigmas = vec_from(j.at("bma").at("sigmas"));
    m.cal_mse = j.at("cal_mse").get<double>();
    m.calibration_from = parse_date(j.at("calibration_from").get<std::string>());
    m.calibration_to = parse_date(j.at("calibration_to").get<std::string>());
    m.calibration_days = j.at("calibration_days").get<int>();
    m.variable = parse_variable(j.at("variable").get<std::string>());
    return m;
  });
}

Json to_json(const DlmSpec& m) {
  Json cov = Json::array();
  for (int r = 0; r < 4; ++r) {
    Json row = Json::array();
    for (int c = 0; c < 4; ++c) row.push_back(m.prior_covariance(r, c));
    cov.push_back(row);
  }
  return {{"w_level", m.w_level},
          {"w_harmonic", m.w_harmonic},
          {"w_offset", m.w_offset},
          {"v_tpaws", m.v_tpaws},
          {"v_grid", m.v_grid},
          {"prior_mean", vec_json(m.prior_mean)},
          {"prior_covariance", cov},
          {"calibration_days", m.calibration_days}};
}

DlmSpec dlm_from_json(const Json& j) {
  return with_context<DlmSpec>("sub-daily model", [&] {
    DlmSpec m;
    m.w_level = j.at("w_level").get<double>();
    m.w_harmonic = j.at("w_harmonic").get<double>();
    m.w_offset = j.at("w_offset").get<double>();
    m.v_tpaws = j.at("v_tpaws").get<double>();
    m.v_grid = j.at("v_grid").get<double>();
    const Eigen::VectorXd mean = vec_from(j.at("prior_mean"));
    if (mean.size() != 4) throw Error(ErrorCode::ParseError, "prior_mean must have 4 entries");
    m.prior_mean = mean;
    const Json& cov = j.at("prior_covariance");
    if (cov.size() != 4) throw Error(ErrorCode::ParseError, "prior_covariance must be 4x4");
    for (int r = 0; r < 4; ++r) {
      if (cov.at(static_cast<std::size_t>(r)).size() != 4) throw Error(ErrorCode::ParseError, "prior_covariance must be 4x4");
      for (int c = 0; c < 4; ++c)
        m.prior_covariance(r, c) = cov.at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c)).get<double>();
    }
    m.calibration_days = j.at("calibration_days").get<int>();
    return m;
  });
}

// ---------------------------------------------------------------------------
// Model store

namespace {

std::string record_name(TestId t) {
  switch (t) {
    case TestId::Domain: return "domain";
    case TestId::Spatial: return "spatial";
    case TestId::SpatioTemporal: return "spatiotemporal";
    case TestId::Trend: return "trend";
    case TestId::GriddedNWP: return "gridded_nwp";
    case TestId::GriddedAGCD: return "gridded_agcd";
    case TestId::GriddedERA: return "gridded_era";
    case TestId::GriddedRadar: return "gridded_radar";
    case TestId::Subdaily: return "subdaily";
  }
  return "unknown";
}

}  // namespace

fs::path ModelStore::record_path(const std::string& station, Variable v, TestId test) const {
  return root_ / station / std::string(to_string(v)) / (record_name(test) + ".json");
}

void ModelStore::save(const std::string& station, Variable v, TestId test, Date from, Date to,
                      const Json& model) const {
  Json rec = {{"schema_version", kModelSchemaVersion},
              {"station_id", station},
              {"variable", std::string(to_string(v))},
              {"test", std::string(to_string(test))},
              {"calibration_from", format_date(from)},
              {"calibration_to", format_date(to)},
              {"model", model}};
  write_file_atomic(record_path(station, v, test), canonical_json(rec));
}

bool ModelStore::contains(const std::string& station, Variable v, TestId test) const {
  return fs::exists(record_path(station, v, test));
}

Json ModelStore::load(const std::string& station, Variable v, TestId test) const {
  const fs::path p = record_path(station, v, test);
  if (!fs::exists(p))
    throw Error(ErrorCode::NotCalibrated,
                "no " + std::string(to_string(test)) + " model for " + station + " " + std::string(to_string(v)));
  Json rec = parse_json_file(p);
  if (!rec.contains("schema_version") || !rec["schema_version"].is_number_integer() ||
      rec["schema_version"].get<int>() != kModelSchemaVersion)
    throw Error(ErrorCode::VersionError, p.string() + ": unsupported schema_version");
  return rec;
}

void ModelStore::save_all(const StationModels& m, Date from, Date to) const {
  const auto& id = m.station_id;
  if (m.spatial) save(id, m.variable, TestId::Spatial, from, to, to_json(*m.spatial));
  if (m.trend) save(id, m.variable, TestId::Trend, from, to, to_json(*m.trend));
  if (m.st) save(id, m.variable, TestId::SpatioTemporal, from, to, to_json(*m.st));
  for (const auto& [p, g] : m.gridded) save(id, m.variable, gridded_test_id(p), from, to, to_json(g));
  if (m.subdaily) save(id, m.variable, TestId::Subdaily, from, to, to_json(*m.subdaily));
}

StationModels ModelStore::load_all(const std::string& station, Variable v) const {
  StationModels m;
  m.station_id = station;
  m.variable = v;
  bool any = false;
  for (TestId t : kAllTests) {
    if (t == TestId::Domain || !contains(station, v, t)) continue;
    const Json model = load(station, v, t).at("model");
    any = true;
    switch (t) {
      case TestId::Spatial: m.spatial = spatial_from_json(model); break;
      case TestId::Trend: m.trend = spatial_from_json(model); break;
      case TestId::SpatioTemporal: m.st = st_from_json(model); break;
      case TestId::Subdaily: m.subdaily = dlm_from_json(model); break;
      default: m.gridded[product_of(t)] = gridded_from_json(model); break;
    }
  }
  if (!any)
    throw Error(ErrorCode::NotCalibrated, "no models for " + station + " " + std::string(to_string(v)));
  return m;
}

// ---------------------------------------------------------------------------
// Configuration

std::map<std::string, std::string> read_key_values(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCode::ConfigError, path.string() + ": line " + std::to_string(n) + ": expected key = value");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    if (!out.emplace(key, trim(std::string_view(t).substr(eq + 1))).second)
      throw Error(ErrorCode::ConfigError, path.string() + ": duplicate key " + key);
  }
  return out;
}

RunConfig RunConfig::load(const fs::path& path) {
  const auto kv = read_key_values(path);
  RunConfig c;
  c.source = path;
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  auto existing = [&](const std::string& key, const std::string& v) {
    fs::path p = fs::path(v).is_absolute() ? fs::path(v) : base / v;
    if (!fs::exists(p)) throw Error(ErrorCode::ConfigError, key + ": no such file: " + p.string());
    return p;
  };
  auto number = [&](const std::string& key, const std::string& v) {
    auto n = parse_number(v);
    if (!n) throw Error(ErrorCode::ConfigError, key + ": not a number: " + v);
    return *n;
  };
  auto integer = [&](const std::string& key, const std::string& v) {
    const double n = number(key, v);
    if (n != std::floor(n)) throw Error(ErrorCode::ConfigError, key + ": not an integer: " + v);
    return static_cast<int>(n);
  };
  for (const char* required : {"variable", "stations", "daily", "models"})
    if (!kv.count(required)) throw Error(ErrorCode::ConfigError, std::string("missing key ") + required);
  for (const auto& [key, v] : kv) {
    try {
      if (key == "variable") c.variable = parse_variable(v);
      else if (key == "stations") c.stations = existing(key, v);
      else if (key == "daily") c.daily = existing(key, v);
      else if (key == "subdaily") c.subdaily = existing(key, v);
      else if (key == "subdaily_grid") c.subdaily_grid = existing(key, v);
      else if (key == "grids") {
        for (const auto& g : split(v, ','))
          if (!g.empty()) c.grids.push_back(existing(key, g));
      } else if (key == "models") c.models = fs::path(v).is_absolute() ? fs::path(v) : base / v;
      else if (key == "radius_km") c.radius_km = number(key, v);
      else if (key == "max_candidates") c.max_candidates = integer(key, v);
      else if (key == "cl_threshold") c.cl_threshold = number(key, v);
      else if (key == "cv_folds") c.cv_folds = integer(key, v);
      else if (key == "cv_lambdas") c.cv_lambdas = integer(key, v);
      else if (key == "transform") c.transform = parse_transform_kind(v);
      else if (key == "min_calibration_days") c.min_calibration_days = integer(key, v);
      else if (key == "disabled_tests") {
        for (const auto& t : split(v, ','))
          if (!t.empty()) c.disabled_tests.insert(parse_test_id(t));
      } else if (key == "subdaily_paths") c.subdaily_paths = integer(key, v);
      else if (key == "seed") c.seed = static_cast<std::uint64_t>(integer(key, v));
      else if (key == "utc_offset_hours") c.utc_offset_hours = number(key, v);
      else throw Error(ErrorCode::ConfigError, "unknown key " + key);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::ConfigError) throw;
      throw Error(ErrorCode::ConfigError, key + ": " + e.what());
    }
  }
  if (!(c.cl_threshold > 0.0 && c.cl_threshold < 1.0)) throw Error(ErrorCode::ConfigError, "cl_threshold must lie in (0, 1)");
  if (c.cv_folds < 2) throw Error(ErrorCode::ConfigError, "cv_folds must be at least 2");
  if (c.cv_lambdas < 2) throw Error(ErrorCode::ConfigError, "cv_lambdas must be at least 2");
  if (c.subdaily_paths < 2) throw Error(ErrorCode::ConfigError, "subdaily_paths must be at least 2");
  if (!(c.radius_km > 0.0)) throw Error(ErrorCode::ConfigError, "radius_km must be positive");
  return c;
}

CalibrationOptions RunConfig::calibration_options() const {
  CalibrationOptions o;
  o.radius_km = radius_km;
  o.max_candidates = max_candidates;
  o.disabled = disabled_tests;
  o.point.transform_kind = transform;
  o.point.min_overlap_days = min_calibration_days;
  o.point.cv.folds = cv_folds;
  o.point.cv.n_lambda = cv_lambdas;
  o.screening.min_overlap_days = min_calibration_days;
  o.screening.cv = o.point.cv;
  o.st.transform_kind = transform;
  o.st.min_overlap_days = min_calibration_days;
  o.st.cv = o.point.cv;
  return o;
}

PipelineOptions RunConfig::pipeline_options() const {
  PipelineOptions o;
  o.min_calibration_days = min_calibration_days;
  o.disabled = disabled_tests;
  o.subdaily.n_paths = subdaily_paths;
  o.subdaily.seed = seed;
  return o;
}

Dataset load_dataset(const RunConfig& c) {
  Dataset d;
  d.variable = c.variable;
  d.stations = read_stations(c.stations);
  d.daily = read_daily(c.daily, c.variable);
  for (const auto& g : c.grids) {
    GridProduct grid = read_grid(g);
    if (grid.variable != c.variable)
      throw Error(ErrorCode::ProductVariableMismatch, g.string() + ": grid holds " + std::string(to_string(grid.variable)));
    d.grids.push_back(std::move(grid));
  }
  if (c.subdaily)
    for (auto& s : read_subdaily(*c.subdaily, c.variable)) d.hourly[s.station_id].emplace(s.date, std::move(s));
  if (c.subdaily_grid)
    for (auto& s : read_subdaily(*c.subdaily_grid, c.variable)) d.hourly_grid[s.station_id].emplace(s.date, std::move(s));
  return d;
}

InjectionSpec read_injection_spec(const fs::path& path) {
  const auto kv = read_key_values(path);
  InjectionSpec s;
  for (const auto& [key, v] : kv) {
    if (key == "fraction") s.fraction = require_number(v, key);
    else if (key == "magnitude_low") s.magnitude_low = require_number(v, key);
    else if (key == "magnitude_high") s.magnitude_high = require_number(v, key);
    else if (key == "sign") s.sign = parse_sign(v);
    else if (key == "seed") s.seed = static_cast<std::uint64_t>(require_int(v, key));
    else throw Error(ErrorCode::ConfigError, "unknown injection key " + key);
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Reports

Json assessment_to_json(const Assessment& a, double cl_threshold) {
  Json j;
  j["station_id"] = a.observation.station_id;
  j["date"] = format_date(a.observation.date);
  j["variable"] = std::string(to_string(a.observation.variable));
  j["value"] = a.observation.value;
  j["final_cl"] = a.final_cl ? Json(*a.final_cl) : Json("NA");
  j["final_p1"] = a.final_p1 ? Json(*a.final_p1) : Json("NA");
  j["flagged"] = is_flagged(a, cl_threshold);
  j["domain"] = {{"pass", a.domain_verdict.pass}, {"reason", a.domain_verdict.pass ? "" : a.domain_verdict.reason()}};
  Json tb = Json::array();
  for (const auto& e : traceback(a)) {
    Json row = {{"test", std::string(to_string(e.test))}, {"contributing", e.contributing}, {"reason", e.reason}};
    if (e.contributing) {
      row["weight"] = e.weight;
      row["cl"] = e.cl;
      row["predicted_median"] = e.predicted_median;
      row["predicted_sigma"] = e.predicted_sigma;
      row["inputs_used"] = e.inputs_used;
    }
    tb.push_back(row);
  }
  j["traceback"] = tb;
  return j;
}

Json assessment_report(std::vector<Assessment> assessments, double cl_threshold) {
  std::sort(assessments.begin(), assessments.end(), [](const Assessment& x, const Assessment& y) {
    if (x.observation.station_id != y.observation.station_id)
      return x.observation.station_id < y.observation.station_id;
    return x.observation.date < y.observation.date;
  });
  Json arr = Json::array();
  for (const auto& a : assessments) arr.push_back(assessment_to_json(a, cl_threshold));
  return {{"schema_version", kModelSchemaVersion}, {"cl_threshold", cl_threshold}, {"assessments", arr}};
}

std::string render_assessment_text(const Json& report) {
  std::ostringstream os;
  char buf[160];
  try {
    for (const auto& a : report.at("assessments")) {
      const Json& cl = a.at("final_cl");
      std::string cl_text = cl.is_string() ? cl.get<std::string>() : "";
      if (cl.is_number()) {
        std::snprintf(buf, sizeof buf, "%.4f", cl.get<double>());
        cl_text = buf;
      }
      std::snprintf(buf, sizeof buf, "%g", a.at("value").get<double>());
      os << a.at("station_id").get<std::string>() << " " << a.at("date").get<std::string>() << " "
         << a.at("variable").get<std::string>() << " = " << buf << "  final CL " << cl_text
         << (a.at("flagged").get<bool>() ? "  SUSPECT" : "") << "\n";
      for (const auto& e : a.at("traceback")) {
        const std::string test = e.at("test").get<std::string>();
        if (e.at("contributing").get<bool>()) {
          std::snprintf(buf, sizeof buf, "  %-16s CL %.4f  weight %.3f  median %.3f  sigma %.3f", test.c_str(),
                        e.at("cl").get<double>(), e.at("weight").get<double>(), e.at("predicted_median").get<double>(),
                        e.at("predicted_sigma").get<double>());
          os << buf;
          const std::string reason = e.at("reason").get<std::string>();
          if (!reason.empty()) os << "  " << reason;
          os << "\n";
        } else {
          std::snprintf(buf, sizeof buf, "  %-16s excluded: ", test.c_str());
          os << buf << e.at("reason").get<std::string>() << "\n";
        }
      }
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("assessment report: ") + e.what());
  }
  return os.str();
}

namespace {

Json rates_json(const Rates& r) {
  return {{"hit_rate", r.hit_rate ? Json(*r.hit_rate) : Json("NA")},
          {"false_alarm_rate", r.false_alarm_rate ? Json(*r.false_alarm_rate) : Json("NA")},
          {"contaminated", r.counts.contaminated},
          {"contaminated_flagged", r.counts.contaminated_flagged},
          {"clean", r.counts.clean},
          {"clean_flagged", r.counts.clean_flagged},
          {"not_applicable", r.counts.not_applicable}};
}

}  // namespace

Json skill_to_json(const SkillStats& s) {
  Json bands = Json::array();
  for (const auto& [name, r] : s.per_band) {
    Json b = rates_json(r);
    b["band"] = name;
    bands.push_back(b);
  }
  return {{"all", rates_json(s.all)}, {"per_band", bands}};
}

Json experiment_to_json(const ExperimentReport& r) {
  Json cols = Json::array();
  for (const auto& [name, s] : r.columns) {
    Json c = skill_to_json(s);
    c["name"] = name;
    cols.push_back(c);
  }
  return {{"variable", std::string(to_string(r.variable))},
          {"cl_threshold", r.cl_threshold},
          {"calibration", {{"from", format_date(r.calibration_from)}, {"to", format_date(r.calibration_to)}}},
          {"evaluation", {{"from", format_date(r.evaluation_from)}, {"to", format_date(r.evaluation_to)}}},
          {"bands", r.band_names},
          {"columns", cols},
          {"notes", r.notes}};
}

// ---------------------------------------------------------------------------
// Data acquisition

std::vector<fs::path> LocalDirectoryAdapter::fetch(const std::string& source, Date, Date) {
  std::vector<fs::path> out;
  if (!fs::is_directory(root_)) throw Error(ErrorCode::InvalidArgument, "no such directory: " + root_.string());
  for (const auto& e : fs::directory_iterator(root_))
    if (e.is_regular_file() && e.path().filename().string().rfind(source, 0) == 0) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace tpaws
