#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "tpaws/harness.hpp"
#include "tpaws/pipeline.hpp"

namespace tpaws {

namespace fs = std::filesystem;
using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Canonical JSON: sorted keys, floats as %.17g, two-space indent, trailing newline.

std::string canonical_json(const Json& j);
Json parse_json_file(const fs::path& path);

/// Writes through a temporary file and a rename.
void write_file_atomic(const fs::path& path, const std::string& content);
std::string read_text_file(const fs::path& path);

// ---------------------------------------------------------------------------
// Readers and writers. Every reader reports all bad lines in one ParseError.

/// CSV `id,lat,lon,elev_m,source`.
std::vector<StationMeta> read_stations(const fs::path& path);
void write_stations(const fs::path& path, const std::vector<StationMeta>& stations);

/// CSV `station_id,date,value` preceded by `# unit: <u>`; values are
/// converted to the variable's canonical unit.
std::map<std::string, DailySeries> read_daily(const fs::path& path, Variable variable);
void write_daily(const fs::path& path, const std::map<std::string, DailySeries>& series, Variable variable);

/// Text header of `key = value` lines, then `values` and the numbers of each
/// date row by row. `NaN` marks a missing cell.
GridProduct read_grid(const fs::path& path);
void write_grid(const fs::path& path, const GridProduct& grid);

/// CSV `station_id,timestamp,value` with ISO-8601 timestamps carrying a UTC
/// offset. Readings go to the local day written in the timestamp.
std::vector<SubdailySeries> read_subdaily(const fs::path& path, Variable variable);
void write_subdaily(const fs::path& path, const std::vector<SubdailySeries>& series, double utc_offset_hours);

/// CSV `station_id,date,contaminated,true_value`.
std::vector<TruthLabel> read_labels(const fs::path& path);
void write_labels(const fs::path& path, const std::vector<TruthLabel>& labels);

// ---------------------------------------------------------------------------
// Model serialisation

Json to_json(const TransformSpec& t);
TransformSpec transform_from_json(const Json& j);
Json to_json(const LassoModel& m);
LassoModel lasso_from_json(const Json& j);
Json to_json(const SpatialModel& m);
SpatialModel spatial_from_json(const Json& j);
Json to_json(const GriddedModel& m);
GriddedModel gridded_from_json(const Json& j);
Json to_json(const StModelSet& m);
StModelSet st_from_json(const Json& j);
Json to_json(const DlmSpec& m);
DlmSpec dlm_from_json(const Json& j);

inline constexpr int kModelSchemaVersion = 1;

/// One JSON file per (station, variable, test) under the root directory.
class ModelStore {
 public:
  explicit ModelStore(fs::path root) : root_(std::move(root)) {}

  fs::path record_path(const std::string& station, Variable v, TestId test) const;

  void save(const std::string& station, Variable v, TestId test, Date from, Date to, const Json& model) const;
  /// Full record including schema_version and the calibration window.
  Json load(const std::string& station, Variable v, TestId test) const;
  bool contains(const std::string& station, Variable v, TestId test) const;

  void save_all(const StationModels& models, Date from, Date to) const;
  /// Every stored test of the station; NotCalibrated when none exists.
  StationModels load_all(const std::string& station, Variable v) const;

  const fs::path& root() const { return root_; }

 private:
  fs::path root_;
};

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
  fs::path source;  ///< the file the config was read from
  Variable variable = Variable::Tmax;
  fs::path stations;
  fs::path daily;
  std::optional<fs::path> subdaily;
  std::optional<fs::path> subdaily_grid;
  std::vector<fs::path> grids;
  fs::path models;
  double radius_km = kDefaultRadiusKm;
  int max_candidates = 10;
  double cl_threshold = kDefaultClThreshold;
  int cv_folds = 5;
  int cv_lambdas = 30;
  std::optional<TransformSpec::Kind> transform;
  int min_calibration_days = kMinCalibrationDays;
  std::set<TestId> disabled_tests;
  int subdaily_paths = 10000;
  std::uint64_t seed = 20240917;
  double utc_offset_hours = 0.0;

  static RunConfig load(const fs::path& path);
  CalibrationOptions calibration_options() const;
  PipelineOptions pipeline_options() const;
};

Dataset load_dataset(const RunConfig& config);

/// `key = value` lines; blank lines and `#` comments ignored, duplicates rejected.
std::map<std::string, std::string> read_key_values(const fs::path& path);

InjectionSpec read_injection_spec(const fs::path& path);

// ---------------------------------------------------------------------------
// Reports

Json assessment_to_json(const Assessment& a, double cl_threshold);
/// Assessments ordered by (station, date).
Json assessment_report(std::vector<Assessment> assessments, double cl_threshold);
std::string render_assessment_text(const Json& report);

Json skill_to_json(const SkillStats& s);
Json experiment_to_json(const ExperimentReport& r);

// ---------------------------------------------------------------------------
// Data acquisition

/// Supplies local files for a source over a date window. HTTP-backed
/// implementations can be added behind this interface.
class FetchAdapter {
 public:
  virtual ~FetchAdapter() = default;
  virtual std::vector<fs::path> fetch(const std::string& source, Date from, Date to) = 0;
};

/// Serves `<root>/<source>*` files already on disk.
class LocalDirectoryAdapter : public FetchAdapter {
 public:
  explicit LocalDirectoryAdapter(fs::path root) : root_(std::move(root)) {}
  std::vector<fs::path> fetch(const std::string& source, Date from, Date to) override;

 private:
  fs::path root_;
};

}  // namespace tpaws
