#include "tpaws/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "tpaws/io.hpp"

namespace tpaws::cli {

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  write_file_atomic(out_path, text);
}

std::vector<StationMeta> target_stations(const Dataset& data, const std::string& only) {
  if (!only.empty()) {
    const StationMeta& s = data.station(only);
    if (s.source != Source::TPAWS) throw Error(ErrorCode::InvalidArgument, only + " is not a TPAWS station");
    return {s};
  }
  return data.tpaws();
}

// -- calibrate ---------------------------------------------------------------

struct CalibrateArgs {
  std::string config, from, to, station;
};

int calibrate(const CalibrateArgs& a) {
  const RunConfig cfg = RunConfig::load(a.config);
  const Date from = parse_date(a.from), to = parse_date(a.to);
  if (to < from) throw Error(ErrorCode::InvalidArgument, "--to precedes --from");
  const Dataset data = load_dataset(cfg);
  const ModelStore store(cfg.models);
  for (const auto& s : target_stations(data, a.station)) {
    std::vector<std::string> notes;
    const StationModels m = calibrate_station(data, s, from, to, cfg.calibration_options(), &notes);
    store.save_all(m, from, to);
    std::cout << s.id << ":";
    if (m.spatial) std::cout << " Spatial";
    if (m.st) std::cout << " SpatioTemporal";
    if (m.trend) std::cout << " Trend";
    for (const auto& [p, g] : m.gridded) std::cout << " " << to_string(gridded_test_id(p));
    if (m.subdaily) std::cout << " Subdaily";
    std::cout << "\n";
    for (const auto& n : notes) std::cout << "  not calibrated: " << n << "\n";
  }
  return 0;
}

// -- assess ------------------------------------------------------------------

struct AssessArgs {
  std::string config, date, station, variable, out, format = "json";
};

StationModels load_or_empty(const ModelStore& store, const std::string& id, Variable v) {
  try {
    return store.load_all(id, v);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NotCalibrated) throw;
    StationModels m;
    m.station_id = id;
    m.variable = v;
    return m;
  }
}

int assess(const AssessArgs& a) {
  const RunConfig cfg = RunConfig::load(a.config);
  if (!a.variable.empty() && parse_variable(a.variable) != cfg.variable)
    throw Error(ErrorCode::ConfigError, "--variable " + a.variable + " differs from the configured variable");
  const Date date = parse_date(a.date);
  const Dataset data = load_dataset(cfg);
  const ModelStore store(cfg.models);
  std::vector<Assessment> out;
  for (const auto& s : target_stations(data, a.station)) {
    auto it = data.daily.find(s.id);
    if (it == data.daily.end() || !it->second.at(date)) {
      if (!a.station.empty()) throw Error(ErrorCode::InvalidArgument, "no observation for " + s.id + " on " + a.date);
      continue;
    }
    const StationModels m = load_or_empty(store, s.id, cfg.variable);
    auto batch = assess_days(data, m, s, it->second, {date}, cfg.pipeline_options(), cfg.cl_threshold, false);
    out.push_back(std::move(batch.front()));
  }
  const Json report = assessment_report(std::move(out), cfg.cl_threshold);
  emit(a.format == "text" ? render_assessment_text(report) : canonical_json(report), a.out);
  return 0;
}

// -- inject ------------------------------------------------------------------

struct InjectArgs {
  std::string config, spec, out, from, to;
};

int inject(const InjectArgs& a) {
  const RunConfig cfg = RunConfig::load(a.config);
  const InjectionSpec spec = read_injection_spec(a.spec);
  const Dataset data = load_dataset(cfg);
  std::optional<Date> from, to;
  if (!a.from.empty()) from = parse_date(a.from);
  if (!a.to.empty()) to = parse_date(a.to);
  auto daily = data.daily;
  std::vector<TruthLabel> labels;
  for (const auto& s : data.tpaws()) {
    auto it = daily.find(s.id);
    if (it == daily.end() || it->second.empty()) continue;
    DailySeries& series = it->second;
    const Date lo = from.value_or(series.values.begin()->first);
    const Date hi = to.value_or(series.values.rbegin()->first);
    InjectionSpec station_spec = spec;
    station_spec.seed = derive_seed(spec.seed, s.id);
    const InjectionResult r = inject_errors(slice(series, lo, hi), station_spec);
    for (const auto& [d, v] : r.series.values) {
      labels.push_back({s.id, d, r.deltas.count(d) > 0, *series.at(d)});
      series.values[d] = v;
    }
  }
  const fs::path out(a.out);
  write_daily(out / "daily.csv", daily, cfg.variable);
  write_labels(out / "labels.csv", labels);
  long n = 0;
  for (const auto& l : labels) n += l.contaminated;
  std::cout << "contaminated " << n << " of " << labels.size() << " observations\n";
  return 0;
}

// -- evaluate ----------------------------------------------------------------

struct EvaluateArgs {
  std::string config, labels, out, format = "text";
  double threshold = -1.0;
};

int evaluate_cmd(const EvaluateArgs& a) {
  const RunConfig cfg = RunConfig::load(a.config);
  const double thr = a.threshold >= 0.0 ? a.threshold : cfg.cl_threshold;
  if (!(thr > 0.0 && thr < 1.0)) throw Error(ErrorCode::InvalidArgument, "--threshold must lie in (0, 1)");
  const Dataset data = load_dataset(cfg);
  const ModelStore store(cfg.models);
  std::vector<TruthLabel> labels = read_labels(a.labels);
  if (labels.empty()) throw Error(ErrorCode::Misaligned, "no labels");
  std::sort(labels.begin(), labels.end(), [](const TruthLabel& x, const TruthLabel& y) {
    return x.station_id != y.station_id ? x.station_id < y.station_id : x.date < y.date;
  });

  std::vector<Assessment> assessments;
  for (std::size_t i = 0; i < labels.size();) {
    std::size_t j = i;
    std::vector<Date> days;
    while (j < labels.size() && labels[j].station_id == labels[i].station_id) days.push_back(labels[j++].date);
    const StationMeta& s = data.station(labels[i].station_id);
    auto it = data.daily.find(s.id);
    if (it == data.daily.end()) throw Error(ErrorCode::Misaligned, "no daily data for " + s.id);
    const StationModels m = load_or_empty(store, s.id, cfg.variable);
    for (auto& x : assess_days(data, m, s, it->second, days, cfg.pipeline_options(), thr, true))
      assessments.push_back(std::move(x));
    i = j;
  }

  ExperimentReport report;
  report.variable = cfg.variable;
  report.cl_threshold = thr;
  report.calibration_from = report.calibration_to = labels.front().date;
  report.evaluation_from = labels.front().date;
  report.evaluation_to = labels.front().date;
  for (const auto& l : labels) {
    report.evaluation_from = std::min(report.evaluation_from, l.date);
    report.evaluation_to = std::max(report.evaluation_to, l.date);
  }
  const auto bands = default_bands(cfg.variable);
  for (const auto& b : bands) report.band_names.push_back(b.name);
  report.columns = skill_columns(assessments, labels, thr, bands);
  emit(a.format == "json" ? canonical_json(experiment_to_json(report)) : format_report_text(report), a.out);
  return 0;
}

// -- report ------------------------------------------------------------------

struct ReportArgs {
  std::string assessment, format = "text", out;
};

int report_cmd(const ReportArgs& a) {
  const Json report = parse_json_file(a.assessment);
  if (!report.contains("assessments")) throw Error(ErrorCode::ParseError, a.assessment + ": not an assessment report");
  emit(a.format == "json" ? canonical_json(report) : render_assessment_text(report), a.out);
  return 0;
}

// -- synth -------------------------------------------------------------------

struct SynthArgs {
  std::string out, variable = "Tmax";
  std::uint64_t seed = 42;
  int stations = 100, tpaws = 10, years = 4;
  double range_km = 150.0, utc_offset = 8.0;
};

int synth(const SynthArgs& a) {
  SyntheticConfig c;
  c.variable = parse_variable(a.variable);
  c.seed = a.seed;
  c.n_stations = a.stations;
  c.n_tpaws = a.tpaws;
  c.years = a.years;
  c.spatial_range_km = a.range_km;
  const SyntheticNetwork net = synthesize_network(c);
  const fs::path out(a.out);
  write_stations(out / "stations.csv", net.data.stations);
  write_daily(out / "daily.csv", net.data.daily, c.variable);
  std::string grids;
  for (const auto& g : net.data.grids) {
    std::string name = "grid_" + std::string(to_string(g.product)) + ".txt";
    write_grid(out / name, g);
    grids += (grids.empty() ? "" : ",") + name;
  }
  auto flatten = [](const std::map<std::string, std::map<Date, SubdailySeries>>& m) {
    std::vector<SubdailySeries> v;
    for (const auto& [id, days] : m)
      for (const auto& [d, s] : days) v.push_back(s);
    return v;
  };
  const bool hourly = !net.data.hourly.empty();
  if (hourly) write_subdaily(out / "subdaily.csv", flatten(net.data.hourly), a.utc_offset);
  const bool hourly_grid = !net.data.hourly_grid.empty();
  if (hourly_grid) write_subdaily(out / "subdaily_grid.csv", flatten(net.data.hourly_grid), a.utc_offset);

  std::string cfg;
  cfg += "variable = " + std::string(to_string(c.variable)) + "\n";
  cfg += "stations = stations.csv\n";
  cfg += "daily = daily.csv\n";
  if (!grids.empty()) cfg += "grids = " + grids + "\n";
  if (hourly) cfg += "subdaily = subdaily.csv\n";
  if (hourly_grid) cfg += "subdaily_grid = subdaily_grid.csv\n";
  cfg += "models = models\n";
  cfg += "utc_offset_hours = " + std::to_string(static_cast<int>(a.utc_offset)) + "\n";
  write_file_atomic(out / "run.cfg", cfg);
  std::cout << "wrote " << net.data.stations.size() << " stations, " << net.n_days << " days to " << out.string()
            << "\n";
  return 0;
}

// -- experiment --------------------------------------------------------------

struct ExperimentArgs {
  std::string variable = "Tmax", format = "text", out;
  std::uint64_t seed = 42, injection_seed = 1;
  int stations = 100, tpaws = 10;
  double fraction = 0.10, low = 18.0, high = 52.56, threshold = kDefaultClThreshold;
  std::string sign = "positive";
};

int experiment(const ExperimentArgs& a) {
  ExperimentConfig c;
  c.network.variable = parse_variable(a.variable);
  c.network.seed = a.seed;
  c.network.n_stations = a.stations;
  c.network.n_tpaws = a.tpaws;
  c.injection.fraction = a.fraction;
  c.injection.magnitude_low = a.low;
  c.injection.magnitude_high = a.high;
  c.injection.sign = parse_sign(a.sign);
  c.injection.seed = a.injection_seed;
  c.cl_threshold = a.threshold;
  const ExperimentReport r = run_experiment(c);
  emit(a.format == "json" ? canonical_json(experiment_to_json(r)) : format_report_text(r), a.out);
  return 0;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Quality assessment of third-party weather station observations"};
  app.require_subcommand(1);
  const std::vector<std::string> formats{"text", "json"};

  CalibrateArgs ca;
  auto* cal = app.add_subcommand("calibrate", "Fit every applicable test for the TPAWS stations");
  cal->add_option("--config", ca.config, "Run configuration")->required()->check(CLI::ExistingFile);
  cal->add_option("--from", ca.from, "First calibration day (YYYY-MM-DD)")->required();
  cal->add_option("--to", ca.to, "Last calibration day (YYYY-MM-DD)")->required();
  cal->add_option("--station", ca.station, "Only this station");

  AssessArgs aa;
  auto* ass = app.add_subcommand("assess", "Assess the observations of one day");
  ass->add_option("--config", aa.config, "Run configuration")->required()->check(CLI::ExistingFile);
  ass->add_option("--date", aa.date, "Day to assess (YYYY-MM-DD)")->required();
  ass->add_option("--station", aa.station, "Only this station");
  ass->add_option("--variable", aa.variable, "Variable (must match the configuration)");
  ass->add_option("--out", aa.out, "Write the report here instead of standard output");
  ass->add_option("--format", aa.format, "Report format")->check(CLI::IsMember(formats));

  InjectArgs ia;
  auto* inj = app.add_subcommand("inject", "Add synthetic errors to the TPAWS observations");
  inj->add_option("--config", ia.config, "Run configuration")->required()->check(CLI::ExistingFile);
  inj->add_option("--spec", ia.spec, "Injection spec (key = value)")->required()->check(CLI::ExistingFile);
  inj->add_option("--out", ia.out, "Output directory")->required();
  inj->add_option("--from", ia.from, "First day eligible for contamination");
  inj->add_option("--to", ia.to, "Last day eligible for contamination");

  EvaluateArgs ea;
  auto* ev = app.add_subcommand("evaluate", "Hit and false-alarm rates against truth labels");
  ev->add_option("--config", ea.config, "Run configuration")->required()->check(CLI::ExistingFile);
  ev->add_option("--labels", ea.labels, "Truth labels CSV")->required()->check(CLI::ExistingFile);
  ev->add_option("--threshold", ea.threshold, "CL threshold (default from the configuration)");
  ev->add_option("--format", ea.format, "Output format")->check(CLI::IsMember(formats));
  ev->add_option("--out", ea.out, "Write here instead of standard output");

  ReportArgs ra;
  auto* rep = app.add_subcommand("report", "Render an assessment report, lowest-CL tests first");
  rep->add_option("--assessment", ra.assessment, "Assessment report JSON")->required()->check(CLI::ExistingFile);
  rep->add_option("--format", ra.format, "Output format")->check(CLI::IsMember(formats));
  rep->add_option("--out", ra.out, "Write here instead of standard output");

  SynthArgs sa;
  auto* syn = app.add_subcommand("synth", "Write a synthetic network and a matching configuration");
  syn->add_option("--out", sa.out, "Output directory")->required();
  syn->add_option("--variable", sa.variable, "Variable");
  syn->add_option("--seed", sa.seed, "Seed");
  syn->add_option("--stations", sa.stations, "Number of stations");
  syn->add_option("--tpaws", sa.tpaws, "Number of TPAWS stations among them");
  syn->add_option("--years", sa.years, "Years of data (even, at least 4)");
  syn->add_option("--range-km", sa.range_km, "Spatial correlation range");
  syn->add_option("--utc-offset", sa.utc_offset, "Local UTC offset in hours for sub-daily timestamps");

  ExperimentArgs xa;
  auto* exp = app.add_subcommand("experiment", "Synthetic calibrate/inject/evaluate run with a skill table");
  exp->add_option("--variable", xa.variable, "Variable");
  exp->add_option("--seed", xa.seed, "Network seed");
  exp->add_option("--injection-seed", xa.injection_seed, "Injection seed");
  exp->add_option("--stations", xa.stations, "Number of stations");
  exp->add_option("--tpaws", xa.tpaws, "Number of TPAWS stations");
  exp->add_option("--fraction", xa.fraction, "Contaminated fraction");
  exp->add_option("--low", xa.low, "Smallest error magnitude");
  exp->add_option("--high", xa.high, "Largest error magnitude");
  exp->add_option("--sign", xa.sign, "positive, negative or both");
  exp->add_option("--threshold", xa.threshold, "CL threshold");
  exp->add_option("--format", xa.format, "Output format")->check(CLI::IsMember(formats));
  exp->add_option("--out", xa.out, "Write here instead of standard output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "ERROR Usage: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*cal) return calibrate(ca);
    if (*ass) return assess(aa);
    if (*inj) return inject(ia);
    if (*ev) return evaluate_cmd(ea);
    if (*rep) return report_cmd(ra);
    if (*syn) return synth(sa);
    if (*exp) return experiment(xa);
  } catch (const Error& e) {
    std::cerr << "ERROR " << to_string(e.code()) << ": " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "ERROR Internal: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace tpaws::cli
