#pragma once

// Declarative run manifests, sample ingestion and machine-readable reports.
// The manifest schema is documented in docs/manifest.md.

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "entropic/analysis.hpp"
#include "entropic/errors.hpp"
#include "entropic/model.hpp"
#include "entropic/solvers.hpp"
#include "json.hpp"

namespace entropic {

inline constexpr const char* kReportSchemaVersion = "1.0";
inline constexpr const char* kToolVersion = "0.1.0";

struct ModelSpec {
  std::optional<std::string> catalog;
  std::optional<GridSpec> grid;
  std::optional<std::vector<double>> points;
  WeightKind weights = WeightKind::kUnit;
  std::optional<std::vector<double>> weight_values;
  std::vector<std::string> potentials;
  int num_params = 0;

  static ModelSpec from_json(const nlohmann::json& j, const std::string& path = "/model");
  nlohmann::json to_json() const;
};

struct ResolvedModel {
  SupportGrid support;
  PotentialSet potentials;
  std::string note;
};

ResolvedModel resolve(const ModelSpec& spec);
// Explicit (catalog-free) spec that resolves to the same grid and trees.
ModelSpec describe(const ResolvedModel& model);

struct SampleSpec {
  enum class Kind { kFrequencies, kObservations, kFile, kGenerate };
  Kind kind = Kind::kFrequencies;
  std::vector<double> values;  // frequencies or raw observations
  std::string path;
  std::vector<double> true_lambda;
  std::vector<double> true_alpha;
  long long n = 0;
  std::optional<std::uint64_t> seed;

  static SampleSpec from_json(const nlohmann::json& j, const std::string& path = "/sample");
  nlohmann::json to_json() const;
};

enum class Task { kMe, kMl, kMiniMaxEnt, kCheck, kSweep };
std::string to_string(Task task);
Task parse_task(const std::string& name);

struct SweepSpec {
  double lo = -1.0;
  double hi = 1.0;
  int n = 11;
  int param = 1;           // 1-based alpha index being swept
  bool around_ml = false;  // offsets relative to the general-form ML estimate

  static SweepSpec parse_grid(const std::string& text);  // "lo:hi:n"
};

struct RunManifest {
  ModelSpec model;
  SampleSpec sample;
  Task task = Task::kMl;
  SolverConfig config;
  std::uint64_t seed = 0;
  std::optional<SweepSpec> sweep;
  std::filesystem::path base_dir;

  static RunManifest from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static RunManifest load(const std::filesystem::path& path);
};

SolverConfig config_from_json(const nlohmann::json& j, const std::string& path = "/config");
nlohmann::json to_json(const SolverConfig& config);

struct IngestResult {
  EmpiricalSample sample;
  bool binned = false;
  double max_distance = 0.0;
  double mean_distance = 0.0;
  std::size_t rows = 0;
};

// Frequency CSV (header `x,freq`, values matched to support points within
// 1e-9) or raw observations (header `x`), binned to the nearest point.
IngestResult ingest_sample(const std::filesystem::path& path, const SupportGrid& support);
IngestResult ingest_sample_text(const std::string& csv, const SupportGrid& support);

// n i.i.d. inverse-CDF draws; n = 0 returns the model probabilities.
EmpiricalSample generate_sample(const ExponentialModel& model, long long n, std::uint64_t seed);

std::string frequency_csv(const SupportGrid& support, const EmpiricalSample& sample);

nlohmann::json to_json(const SolveReport& report);
nlohmann::json to_json(const HessianReport& report);

// ML versus MiniMax Entropy on the same general-form instance.
struct HypothesisCheck {
  SolveReport ml;
  SolveReport minimax;
  double lambda_discrepancy = 0.0;
  double alpha_discrepancy = 0.0;
  bool agree = false;
  nlohmann::json counterexample;  // null when the estimates agree
};

HypothesisCheck check_minimax_hypothesis(const SupportGrid& support, const PotentialSet& potentials,
                                         const EmpiricalSample& sample, const SolverConfig& config,
                                         double tolerance = 1e-6);

struct RunOptions {
  std::optional<double> tol;
  std::optional<std::uint64_t> seed;
  std::optional<Task> task;
  std::optional<std::string> grid;
  std::string timestamp;  // empty: current UTC time
};

struct RunResult {
  nlohmann::json report;
  std::optional<std::string> sweep_csv;
  ExitCode exit_code = ExitCode::kOk;
};

// Never throws for library errors; they become the report's status block.
RunResult run(const RunManifest& manifest, const RunOptions& options = {});
RunResult run_file(const std::filesystem::path& manifest_path, const RunOptions& options = {});
// In-memory manifest; relative sample paths resolve against base_dir.
RunResult run_json(const nlohmann::json& manifest, const std::filesystem::path& base_dir = {},
                   const RunOptions& options = {});

// Report with the timestamp field removed, serialized.
std::string canonical_report(const nlohmann::json& report);

// Flattens scalars and arrays to `field,value` rows.
std::string report_csv(const nlohmann::json& report);

}  // namespace entropic
