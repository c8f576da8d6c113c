#include "entropic/harness.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>

namespace entropic {

using nlohmann::json;

namespace {

constexpr double kMatchTol = 1e-9;     // CSV x values against support points
constexpr double kRenormTol = 1e-9;    // frequency sums accepted (and renormalized) within this
constexpr double kCompactTol = 1e-12;  // compact vs expanded FOC residuals
constexpr double kIdentityTol = 1e-8;  // simple-form ME vs ML lambda

// ------------------------------------------------------------ json helpers

std::string child(const std::string& path, const std::string& key) { return path + "/" + key; }

void require_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
}

void check_keys(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(child(path, key), "unknown field '" + key + "'");
  }
}

double as_number(const json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ConfigError(path, "expected a finite number");
  return v;
}

long long as_integer(const json& j, const std::string& path) {
  if (!j.is_number_integer()) throw ConfigError(path, "expected an integer");
  return j.get<long long>();
}

int as_int(const json& j, const std::string& path) {
  const long long v = as_integer(j, path);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw ConfigError(path, "integer out of range");
  }
  return static_cast<int>(v);
}

std::uint64_t as_seed(const json& j, const std::string& path) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer()) {
    const long long v = j.get<long long>();
    if (v >= 0) return static_cast<std::uint64_t>(v);
  }
  throw ConfigError(path, "expected a non-negative integer seed");
}

bool as_bool(const json& j, const std::string& path) {
  if (!j.is_boolean()) throw ConfigError(path, "expected true or false");
  return j.get<bool>();
}

std::string as_string(const json& j, const std::string& path) {
  if (!j.is_string()) throw ConfigError(path, "expected a string");
  return j.get<std::string>();
}

std::vector<double> as_numbers(const json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path, "expected an array of numbers");
  std::vector<double> out;
  out.reserve(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(as_number(j[i], child(path, std::to_string(i))));
  return out;
}

Eigen::VectorXd as_vector(const json& j, const std::string& path) {
  const std::vector<double> v = as_numbers(j, path);
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json vec(const Eigen::VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

json mat(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
    rows.push_back(std::move(row));
  }
  return rows;
}

double inf_norm(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

GridSpec grid_from_json(const json& j, const std::string& path) {
  require_object(j, path);
  check_keys(j, path, {"lo", "hi", "m"});
  for (const char* k : {"lo", "hi", "m"}) {
    if (!j.contains(k)) throw ConfigError(child(path, k), "missing field");
  }
  return {as_number(j["lo"], child(path, "lo")), as_number(j["hi"], child(path, "hi")), as_int(j["m"], child(path, "m"))};
}

json grid_to_json(const GridSpec& g) { return {{"lo", g.lo}, {"hi", g.hi}, {"m", g.m}}; }

Eigen::VectorXd trapezoid_weights(const Eigen::VectorXd& x) {
  const Eigen::Index m = x.size();
  Eigen::VectorXd w(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double left = i > 0 ? x[i] - x[i - 1] : 0.0;
    const double right = i + 1 < m ? x[i + 1] - x[i] : 0.0;
    w[i] = 0.5 * (left + right);
  }
  return w;
}

// Validates a frequency vector against the support and renormalizes sums
// that are within kRenormTol of one.
EmpiricalSample frequencies_on(const Eigen::VectorXd& freq, const SupportGrid& support, long long n = 0) {
  if (freq.size() == 0) throw EmptySample("sample has no frequencies");
  if (freq.size() != support.size()) {
    throw DimensionError("sample has " + std::to_string(freq.size()) + " frequencies, support has " +
                         std::to_string(support.size()) + " points");
  }
  for (Eigen::Index i = 0; i < freq.size(); ++i) {
    if (!(freq[i] >= 0.0) || !std::isfinite(freq[i])) {
      throw FrequencySumError("frequency " + std::to_string(i) + " is negative or not finite");
    }
  }
  const double total = freq.sum();
  if (std::abs(total - 1.0) > kRenormTol) {
    throw FrequencySumError("frequencies sum to " + format_double(total) + ", expected 1");
  }
  if (std::abs(total - 1.0) > 1e-12) return EmpiricalSample::from_frequencies(freq / total, n);
  return EmpiricalSample::from_frequencies(freq, n);
}

// --------------------------------------------------------------------- csv

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw ValidationError("csv has an unterminated quoted field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

double parse_cell(const std::string& cell, std::size_t row) {
  const std::string t = trim(cell);
  double v = 0.0;
  const char* first = t.data();
  if (!t.empty() && t[0] == '+') ++first;
  auto res = std::from_chars(first, t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size() || !std::isfinite(v)) {
    throw ValidationError("csv row " + std::to_string(row) + ": '" + cell + "' is not a finite number");
  }
  return v;
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// -------------------------------------------------------------- reporting

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json environment() {
  json env;
#if defined(__clang__)
  env["compiler"] = std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
  env["compiler"] = std::string("gcc ") + __VERSION__;
#else
  env["compiler"] = "unknown";
#endif
  env["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                 std::to_string(EIGEN_MINOR_VERSION);
  env["cxx_standard"] = static_cast<long>(__cplusplus);
  return env;
}

json error_json(const Error& e) {
  json err = {{"kind", std::string(e.kind())}, {"message", e.what()}};
  if (const auto* c = dynamic_cast<const ConfigError*>(&e)) err["path"] = c->path();
  if (const auto* s = dynamic_cast<const SyntaxError*>(&e)) {
    err["position"] = s->position();
    err["expected"] = s->expected();
  }
  return err;
}

json model_summary(const ResolvedModel& rm, const ModelSpec& spec) {
  json m;
  m["catalog"] = spec.catalog ? json(*spec.catalog) : json(nullptr);
  m["support_size"] = rm.support.size();
  m["support_min"] = rm.support.points()[0];
  m["support_max"] = rm.support.points()[rm.support.size() - 1];
  m["unit_weights"] = rm.support.unit_weights();
  m["potentials"] = rm.potentials.sources();
  m["J"] = rm.potentials.J();
  m["T"] = rm.potentials.T();
  m["note"] = rm.note;
  return m;
}

const char* kind_name(SampleSpec::Kind k) {
  switch (k) {
    case SampleSpec::Kind::kFrequencies: return "frequencies";
    case SampleSpec::Kind::kObservations: return "observations";
    case SampleSpec::Kind::kFile: return "file";
    case SampleSpec::Kind::kGenerate: return "generate";
  }
  return "frequencies";
}

ExponentialModel fitted(const ResolvedModel& rm, const SolveReport& r) {
  return normalize(rm.support, rm.potentials, r.lambda_hat, r.alpha_hat);
}

ExitCode convergence_code(std::initializer_list<const SolveReport*> reports) {
  for (const auto* r : reports) {
    if (!r->converged) return ExitCode::kNonConvergence;
  }
  return ExitCode::kOk;
}

}  // namespace

// -------------------------------------------------------------- model spec

ModelSpec ModelSpec::from_json(const json& j, const std::string& path) {
  require_object(j, path);
  check_keys(j, path, {"catalog", "grid", "support", "weights", "potentials", "num_params"});
  ModelSpec spec;
  if (j.contains("catalog")) {
    for (const char* k : {"support", "weights", "potentials", "num_params"}) {
      if (j.contains(k)) throw ConfigError(child(path, k), "a catalog model cannot also give an explicit model");
    }
    spec.catalog = as_string(j["catalog"], child(path, "catalog"));
    if (!j.contains("grid")) throw ConfigError(child(path, "grid"), "catalog models need a grid {lo, hi, m}");
    spec.grid = grid_from_json(j["grid"], child(path, "grid"));
    return spec;
  }
  if (j.contains("grid")) throw ConfigError(child(path, "grid"), "explicit models give their grid under support");
  if (!j.contains("support")) throw ConfigError(child(path, "support"), "missing field (or give a catalog name)");
  if (!j.contains("potentials")) throw ConfigError(child(path, "potentials"), "missing field");

  const std::string sp = child(path, "support");
  const json& s = j["support"];
  require_object(s, sp);
  check_keys(s, sp, {"points", "grid"});
  if (s.contains("points") == s.contains("grid")) throw ConfigError(sp, "give exactly one of points or grid");
  if (s.contains("points")) {
    spec.points = as_numbers(s["points"], child(sp, "points"));
  } else {
    spec.grid = grid_from_json(s["grid"], child(sp, "grid"));
  }

  if (j.contains("weights")) {
    const json& w = j["weights"];
    const std::string wp = child(path, "weights");
    if (w.is_array()) {
      spec.weight_values = as_numbers(w, wp);
    } else {
      const std::string name = as_string(w, wp);
      if (name == "unit") {
        spec.weights = WeightKind::kUnit;
      } else if (name == "trapezoid") {
        spec.weights = WeightKind::kTrapezoid;
      } else {
        throw ConfigError(wp, "weights must be \"unit\", \"trapezoid\" or a list");
      }
    }
  }

  const std::string pp = child(path, "potentials");
  const json& p = j["potentials"];
  if (!p.is_array() || p.empty()) throw ConfigError(pp, "expected a non-empty array of expressions");
  for (std::size_t i = 0; i < p.size(); ++i) spec.potentials.push_back(as_string(p[i], child(pp, std::to_string(i))));
  if (j.contains("num_params")) {
    spec.num_params = as_int(j["num_params"], child(path, "num_params"));
    if (spec.num_params < 0) throw ConfigError(child(path, "num_params"), "must be non-negative");
  }
  return spec;
}

json ModelSpec::to_json() const {
  if (catalog) return {{"catalog", *catalog}, {"grid", grid_to_json(grid.value_or(GridSpec{}))}};
  json j;
  if (points) {
    j["support"] = {{"points", *points}};
  } else if (grid) {
    j["support"] = {{"grid", grid_to_json(*grid)}};
  }
  if (weight_values) {
    j["weights"] = *weight_values;
  } else {
    j["weights"] = weights == WeightKind::kUnit ? "unit" : "trapezoid";
  }
  j["potentials"] = potentials;
  j["num_params"] = num_params;
  return j;
}

ResolvedModel resolve(const ModelSpec& spec) {
  if (spec.catalog) {
    if (!spec.grid) throw ConfigError("/model/grid", "catalog models need a grid {lo, hi, m}");
    CatalogModel c = discretize_continuous(*spec.catalog, *spec.grid);
    return {std::move(c.support), std::move(c.potentials), std::move(c.note)};
  }
  Eigen::VectorXd points;
  if (spec.points) {
    points = Eigen::Map<const Eigen::VectorXd>(spec.points->data(), static_cast<Eigen::Index>(spec.points->size()));
  } else if (spec.grid) {
    points = SupportGrid::uniform(spec.grid->lo, spec.grid->hi, spec.grid->m, WeightKind::kUnit).points();
  } else {
    throw ConfigError("/model/support", "missing field");
  }
  Eigen::VectorXd weights;
  if (spec.weight_values) {
    weights = Eigen::Map<const Eigen::VectorXd>(spec.weight_values->data(),
                                                static_cast<Eigen::Index>(spec.weight_values->size()));
  } else if (spec.weights == WeightKind::kTrapezoid) {
    // Validate ordering first so trapezoid widths are meaningful.
    SupportGrid::with_unit_weights(points);
    weights = trapezoid_weights(points);
  } else {
    weights = Eigen::VectorXd::Ones(points.size());
  }
  SupportGrid support(std::move(points), std::move(weights));
  return {std::move(support), PotentialSet::parse(spec.potentials, spec.num_params), {}};
}

ModelSpec describe(const ResolvedModel& model) {
  ModelSpec spec;
  const Eigen::VectorXd& x = model.support.points();
  spec.points = std::vector<double>(x.data(), x.data() + x.size());
  if (!model.support.unit_weights()) {
    const Eigen::VectorXd& w = model.support.weights();
    spec.weight_values = std::vector<double>(w.data(), w.data() + w.size());
  }
  spec.potentials = model.potentials.sources();
  spec.num_params = model.potentials.T();
  return spec;
}

// ------------------------------------------------------------- sample spec

SampleSpec SampleSpec::from_json(const json& j, const std::string& path) {
  require_object(j, path);
  check_keys(j, path, {"frequencies", "observations", "file", "generate"});
  if (j.size() != 1) throw ConfigError(path, "give exactly one of frequencies, observations, file or generate");
  SampleSpec spec;
  if (j.contains("frequencies")) {
    spec.kind = Kind::kFrequencies;
    spec.values = as_numbers(j["frequencies"], child(path, "frequencies"));
  } else if (j.contains("observations")) {
    spec.kind = Kind::kObservations;
    spec.values = as_numbers(j["observations"], child(path, "observations"));
  } else if (j.contains("file")) {
    spec.kind = Kind::kFile;
    spec.path = as_string(j["file"], child(path, "file"));
  } else {
    spec.kind = Kind::kGenerate;
    const std::string gp = child(path, "generate");
    const json& g = j["generate"];
    require_object(g, gp);
    check_keys(g, gp, {"lambda", "alpha", "n", "seed"});
    if (!g.contains("lambda")) throw ConfigError(child(gp, "lambda"), "missing field");
    spec.true_lambda = as_numbers(g["lambda"], child(gp, "lambda"));
    if (g.contains("alpha")) spec.true_alpha = as_numbers(g["alpha"], child(gp, "alpha"));
    if (g.contains("n")) {
      spec.n = as_integer(g["n"], child(gp, "n"));
      if (spec.n < 0) throw ConfigError(child(gp, "n"), "must be non-negative");
    }
    if (g.contains("seed")) spec.seed = as_seed(g["seed"], child(gp, "seed"));
  }
  return spec;
}

json SampleSpec::to_json() const {
  switch (kind) {
    case Kind::kFrequencies: return {{"frequencies", values}};
    case Kind::kObservations: return {{"observations", values}};
    case Kind::kFile: return {{"file", path}};
    case Kind::kGenerate: {
      json g = {{"lambda", true_lambda}, {"alpha", true_alpha}, {"n", n}};
      if (seed) g["seed"] = *seed;
      return {{"generate", g}};
    }
  }
  return json::object();
}

// -------------------------------------------------------------------- task

std::string to_string(Task task) {
  switch (task) {
    case Task::kMe: return "me";
    case Task::kMl: return "ml";
    case Task::kMiniMaxEnt: return "minimaxent";
    case Task::kCheck: return "check";
    case Task::kSweep: return "sweep";
  }
  return "ml";
}

Task parse_task(const std::string& name) {
  for (Task t : {Task::kMe, Task::kMl, Task::kMiniMaxEnt, Task::kCheck, Task::kSweep}) {
    if (to_string(t) == name) return t;
  }
  throw ConfigError("/task", "unknown task '" + name + "' (expected me, ml, minimaxent, check or sweep)");
}

SweepSpec SweepSpec::parse_grid(const std::string& text) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (;;) {
    const auto colon = text.find(':', start);
    parts.push_back(text.substr(start, colon == std::string::npos ? std::string::npos : colon - start));
    if (colon == std::string::npos) break;
    start = colon + 1;
  }
  if (parts.size() != 3) throw ConfigError("/sweep/grid", "expected lo:hi:n, got '" + text + "'");
  SweepSpec s;
  try {
    s.lo = parse_cell(parts[0], 0);
    s.hi = parse_cell(parts[1], 0);
    const double n = parse_cell(parts[2], 0);
    if (n != std::floor(n) || n < 1 || n > 1e7) throw ValidationError("bad n");
    s.n = static_cast<int>(n);
  } catch (const ValidationError&) {
    throw ConfigError("/sweep/grid", "expected lo:hi:n with numeric bounds and a positive integer n, got '" + text + "'");
  }
  if (s.hi < s.lo || (s.n == 1 && s.hi != s.lo) || (s.n > 1 && !(s.hi > s.lo))) {
    throw ConfigError("/sweep/grid", "need lo < hi (or lo = hi with n = 1)");
  }
  return s;
}

// ---------------------------------------------------------------- manifest

SolverConfig config_from_json(const json& j, const std::string& path) {
  require_object(j, path);
  check_keys(j, path,
             {"tol", "max_iter", "armijo", "backtrack", "min_step", "lm_init", "inner_tol", "outer_tol", "num_starts",
              "stagnation_window", "start_spread", "lambda_init", "alpha_init", "alpha_lower", "alpha_upper"});
  SolverConfig c;
  auto num = [&](const char* k, double& out) {
    if (j.contains(k)) out = as_number(j[k], child(path, k));
  };
  auto integer = [&](const char* k, int& out) {
    if (j.contains(k)) out = as_int(j[k], child(path, k));
  };
  auto vector = [&](const char* k, std::optional<Eigen::VectorXd>& out) {
    if (j.contains(k)) out = as_vector(j[k], child(path, k));
  };
  num("tol", c.tol);
  integer("max_iter", c.max_iter);
  num("armijo", c.armijo);
  num("backtrack", c.backtrack);
  num("min_step", c.min_step);
  num("lm_init", c.lm_init);
  num("inner_tol", c.inner_tol);
  num("outer_tol", c.outer_tol);
  integer("num_starts", c.num_starts);
  integer("stagnation_window", c.stagnation_window);
  num("start_spread", c.start_spread);
  vector("lambda_init", c.lambda_init);
  vector("alpha_init", c.alpha_init);
  vector("alpha_lower", c.alpha_lower);
  vector("alpha_upper", c.alpha_upper);
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(path, e.what());
  }
  return c;
}

json to_json(const SolverConfig& c) {
  json j = {{"tol", c.tol},
            {"max_iter", c.max_iter},
            {"armijo", c.armijo},
            {"backtrack", c.backtrack},
            {"min_step", c.min_step},
            {"lm_init", c.lm_init},
            {"inner_tol", c.inner_tol},
            {"outer_tol", c.outer_tol},
            {"num_starts", c.num_starts},
            {"stagnation_window", c.stagnation_window},
            {"start_spread", c.start_spread}};
  if (c.lambda_init) j["lambda_init"] = vec(*c.lambda_init);
  if (c.alpha_init) j["alpha_init"] = vec(*c.alpha_init);
  if (c.alpha_lower) j["alpha_lower"] = vec(*c.alpha_lower);
  if (c.alpha_upper) j["alpha_upper"] = vec(*c.alpha_upper);
  return j;
}

RunManifest RunManifest::from_json(const json& j, const std::filesystem::path& base_dir) {
  require_object(j, "");
  check_keys(j, "", {"model", "sample", "task", "config", "seed", "sweep"});
  for (const char* k : {"model", "sample", "task"}) {
    if (!j.contains(k)) throw ConfigError(std::string("/") + k, "missing field");
  }
  RunManifest m;
  m.base_dir = base_dir;
  m.model = ModelSpec::from_json(j["model"], "/model");
  m.sample = SampleSpec::from_json(j["sample"], "/sample");
  m.task = parse_task(as_string(j["task"], "/task"));
  if (j.contains("config")) m.config = config_from_json(j["config"], "/config");
  if (j.contains("seed")) m.seed = as_seed(j["seed"], "/seed");
  m.config.seed = m.seed;
  if (j.contains("sweep")) {
    const json& s = j["sweep"];
    require_object(s, "/sweep");
    check_keys(s, "/sweep", {"grid", "param", "around_ml"});
    if (!s.contains("grid")) throw ConfigError("/sweep/grid", "missing field");
    SweepSpec sweep = SweepSpec::parse_grid(as_string(s["grid"], "/sweep/grid"));
    if (s.contains("param")) sweep.param = as_int(s["param"], "/sweep/param");
    if (s.contains("around_ml")) sweep.around_ml = as_bool(s["around_ml"], "/sweep/around_ml");
    m.sweep = sweep;
  }
  return m;
}

RunManifest RunManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("", "cannot open manifest '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("", "manifest '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return from_json(j, path.parent_path());
}

// ----------------------------------------------------------------- samples

IngestResult ingest_sample_text(const std::string& csv, const SupportGrid& support) {
  const auto rows = parse_csv(csv);
  if (rows.empty()) throw EmptySample("sample csv is empty");
  std::vector<std::string> header;
  for (const auto& h : rows[0]) header.push_back(trim(h));
  const bool freq_mode = header == std::vector<std::string>{"x", "freq"};
  if (!freq_mode && header != std::vector<std::string>{"x"}) {
    throw ValidationError("sample csv header must be 'x,freq' (frequencies) or 'x' (observations)");
  }
  if (rows.size() < 2) throw EmptySample("sample csv has a header but no rows");

  IngestResult out{EmpiricalSample::from_frequencies(Eigen::VectorXd::Ones(1)), false, 0.0, 0.0, rows.size() - 1};
  if (!freq_mode) {
    std::vector<double> obs;
    obs.reserve(rows.size() - 1);
    for (std::size_t r = 1; r < rows.size(); ++r) {
      if (rows[r].size() != 1) throw ValidationError("csv row " + std::to_string(r) + " should have 1 field");
      obs.push_back(parse_cell(rows[r][0], r));
    }
    BinnedSample b = bin_observations(obs, support);
    out.sample = std::move(b.sample);
    out.binned = true;
    out.max_distance = b.max_distance;
    out.mean_distance = b.mean_distance;
    return out;
  }

  const Eigen::VectorXd& x = support.points();
  Eigen::VectorXd freq = Eigen::VectorXd::Zero(x.size());
  std::vector<bool> seen(static_cast<std::size_t>(x.size()), false);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != 2) throw ValidationError("csv row " + std::to_string(r) + " should have 2 fields");
    const double xv = parse_cell(rows[r][0], r);
    const double fv = parse_cell(rows[r][1], r);
    const double* begin = x.data();
    const double* end = x.data() + x.size();
    const double* it = std::lower_bound(begin, end, xv - kMatchTol);
    if (it == end || std::abs(*it - xv) > kMatchTol) {
      throw UnmatchedSupportPoint("csv row " + std::to_string(r) + ": x = " + format_double(xv) +
                                  " matches no support point within 1e-9");
    }
    const auto k = static_cast<std::size_t>(it - begin);
    if (seen[k]) throw ValidationError("csv row " + std::to_string(r) + ": support point listed twice");
    seen[k] = true;
    freq[static_cast<Eigen::Index>(k)] = fv;
  }
  out.sample = frequencies_on(freq, support);
  return out;
}

IngestResult ingest_sample(const std::filesystem::path& path, const SupportGrid& support) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("/sample/file", "cannot open sample file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ingest_sample_text(ss.str(), support);
}

EmpiricalSample generate_sample(const ExponentialModel& model, long long n, std::uint64_t seed) {
  if (n < 0) throw ValidationError("sample size must be non-negative");
  const Eigen::VectorXd& p = model.probabilities();
  if (n == 0) return EmpiricalSample::from_frequencies(p, 0);
  std::vector<double> cdf(static_cast<std::size_t>(p.size()));
  double acc = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) cdf[static_cast<std::size_t>(i)] = acc += p[i];
  std::mt19937_64 rng(seed);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(p.size());
  for (long long k = 0; k < n; ++k) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * acc;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    const auto idx = std::min<std::ptrdiff_t>(it - cdf.begin(), p.size() - 1);
    counts[idx] += 1.0;
  }
  return EmpiricalSample::from_counts(counts);
}

std::string frequency_csv(const SupportGrid& support, const EmpiricalSample& sample) {
  if (sample.size() != support.size()) throw DimensionError("sample and support differ in length");
  std::string out = "x,freq\r\n";
  for (Eigen::Index i = 0; i < support.size(); ++i) {
    out += format_double(support.points()[i]) + "," + format_double(sample.freq()[i]) + "\r\n";
  }
  return out;
}

// ----------------------------------------------------------------- reports

json to_json(const SolveReport& r) {
  json j;
  j["task"] = r.task;
  j["method"] = r.method;
  j["lambda_hat"] = vec(r.lambda_hat);
  j["alpha_hat"] = vec(r.alpha_hat);
  j["foc_residual"] = vec(r.foc_residual);
  j["residual_norm"] = r.residual_norm();
  j["entropy"] = r.entropy;
  j["log_likelihood"] = r.log_likelihood;
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  j["tol"] = r.tol;
  json trace = json::array();
  for (const auto& t : r.trace) {
    trace.push_back({{"objective", t.objective}, {"step_norm", t.step_norm}, {"residual_norm", t.residual_norm}});
  }
  j["trace"] = std::move(trace);
  if (!r.hessian_mode.empty()) j["hessian_mode"] = r.hessian_mode;
  if (!r.candidates.empty()) {
    json cands = json::array();
    for (const auto& c : r.candidates) {
      cands.push_back({{"start", c.start},
                       {"converged", c.converged},
                       {"lambda", vec(c.lambda)},
                       {"alpha", vec(c.alpha)},
                       {"objective", c.objective},
                       {"residual_norm", c.residual_norm},
                       {"iterations", c.iterations},
                       {"status", c.status}});
    }
    j["candidates"] = std::move(cands);
    j["multiple_critical_points"] = r.multiple_critical_points;
  }
  if (r.outer_stationarity.size() > 0) {
    j["outer_stationarity"] = vec(r.outer_stationarity);
    j["gradient_fallbacks"] = r.gradient_fallbacks;
    j["max_gradient_check_error"] = r.max_gradient_check_error;
  }
  return j;
}

json to_json(const HessianReport& h) {
  json j;
  j["task"] = h.task;
  j["matrix"] = mat(h.matrix);
  j["closed_form"] = mat(h.closed_form);
  j["fd_matrix"] = mat(h.fd_matrix);
  j["eigenvalues"] = vec(h.eigenvalues);
  j["definiteness"] = to_string(h.definiteness);
  j["fd_max_rel_err"] = h.fd_max_rel_err;
  json blocks = json::array();
  for (const auto& b : h.blocks) {
    blocks.push_back({{"block", b.block}, {"max_rel_err", b.max_rel_err}, {"agrees", b.agrees}});
  }
  j["blocks"] = std::move(blocks);
  j["all_blocks_agree"] = h.all_blocks_agree();
  if (h.p_block.size() > 0) j["p_block"] = vec(h.p_block);
  if (h.profile_alpha_block.size() > 0) j["profile_alpha_block"] = mat(h.profile_alpha_block);
  return j;
}

HypothesisCheck check_minimax_hypothesis(const SupportGrid& support, const PotentialSet& potentials,
                                         const EmpiricalSample& sample, const SolverConfig& config,
                                         double tolerance) {
  HypothesisCheck h;
  h.ml = solve_ml_general(support, potentials, sample, config);
  h.minimax = solve_minimax_ent(support, potentials, sample, config);
  h.lambda_discrepancy = inf_norm(h.ml.lambda_hat - h.minimax.lambda_hat);
  h.alpha_discrepancy = inf_norm(h.ml.alpha_hat - h.minimax.alpha_hat);
  h.agree = h.ml.converged && h.minimax.converged && h.lambda_discrepancy <= tolerance &&
            h.alpha_discrepancy <= tolerance;
  if (!h.agree) {
    auto side = [](const SolveReport& r) {
      return json{{"lambda_hat", vec(r.lambda_hat)},
                  {"alpha_hat", vec(r.alpha_hat)},
                  {"foc_residual", vec(r.foc_residual)},
                  {"converged", r.converged},
                  {"entropy", r.entropy},
                  {"log_likelihood", r.log_likelihood}};
    };
    h.counterexample = {{"tolerance", tolerance},
                        {"lambda_discrepancy", h.lambda_discrepancy},
                        {"alpha_discrepancy", h.alpha_discrepancy},
                        {"ml", side(h.ml)},
                        {"minimaxent", side(h.minimax)}};
  }
  return h;
}

// --------------------------------------------------------------------- run

namespace {

json hypothesis_json(const HypothesisCheck& h, double tolerance) {
  return {{"agree", h.agree},
          {"tolerance", tolerance},
          {"lambda_discrepancy", h.lambda_discrepancy},
          {"alpha_discrepancy", h.alpha_discrepancy},
          {"counterexample", h.counterexample}};
}

EmpiricalSample build_sample(const RunManifest& m, const ResolvedModel& rm, json& info) {
  const SampleSpec& s = m.sample;
  info["source"] = kind_name(s.kind);
  info["binned"] = false;
  switch (s.kind) {
    case SampleSpec::Kind::kFrequencies: {
      Eigen::Map<const Eigen::VectorXd> f(s.values.data(), static_cast<Eigen::Index>(s.values.size()));
      return frequencies_on(f, rm.support);
    }
    case SampleSpec::Kind::kObservations: {
      BinnedSample b = bin_observations(s.values, rm.support);
      info["binned"] = true;
      info["max_bin_distance"] = b.max_distance;
      info["mean_bin_distance"] = b.mean_distance;
      info["n"] = b.sample.n();
      return std::move(b.sample);
    }
    case SampleSpec::Kind::kFile: {
      std::filesystem::path p = s.path;
      if (p.is_relative() && !m.base_dir.empty()) p = m.base_dir / p;
      IngestResult r = ingest_sample(p, rm.support);
      info["path"] = s.path;
      info["rows"] = r.rows;
      if (r.binned) {
        info["binned"] = true;
        info["max_bin_distance"] = r.max_distance;
        info["mean_bin_distance"] = r.mean_distance;
        info["n"] = r.sample.n();
      }
      return std::move(r.sample);
    }
    case SampleSpec::Kind::kGenerate: {
      if (static_cast<int>(s.true_lambda.size()) != rm.potentials.J()) {
        throw ConfigError("/sample/generate/lambda", "expected " + std::to_string(rm.potentials.J()) + " values");
      }
      if (static_cast<int>(s.true_alpha.size()) != rm.potentials.T()) {
        throw ConfigError("/sample/generate/alpha", "expected " + std::to_string(rm.potentials.T()) + " values");
      }
      Eigen::Map<const Eigen::VectorXd> lam(s.true_lambda.data(), static_cast<Eigen::Index>(s.true_lambda.size()));
      Eigen::Map<const Eigen::VectorXd> alp(s.true_alpha.data(), static_cast<Eigen::Index>(s.true_alpha.size()));
      const ExponentialModel truth = normalize(rm.support, rm.potentials, lam, alp);
      const std::uint64_t seed = s.seed.value_or(m.seed);
      info["n"] = s.n;
      info["generator_seed"] = seed;
      info["infinite_sample"] = s.n == 0;
      return generate_sample(truth, s.n, seed);
    }
  }
  throw ValidationError("unknown sample source");
}

ExitCode run_check(const ResolvedModel& rm, const EmpiricalSample& sample, const SolverConfig& config,
                   json& result) {
  const double residual_tol = config.tol;
  if (rm.potentials.simple()) {
    const SolveReport me = solve_me_simple(rm.support, rm.potentials, sample, config);
    const SolveReport ml = solve_ml_simple(rm.support, rm.potentials, sample, config);
    const double disc = inf_norm(me.lambda_hat - ml.lambda_hat);
    const HessianReport h_ml = hessian_ml_simple(fitted(rm, ml), sample);
    const HessianReport h_me = hessian_me(fitted(rm, me), sample);
    const bool neg_def = h_ml.definiteness == Definiteness::kNegativeDefinite;
    const bool p_neg = (h_me.p_block.array() < 0.0).all();
    const bool pass = me.converged && ml.converged && disc <= kIdentityTol && me.residual_norm() <= residual_tol &&
                      ml.residual_norm() <= residual_tol && neg_def && p_neg;
    result["form"] = "simple";
    result["me"] = to_json(me);
    result["ml"] = to_json(ml);
    result["max_lambda_discrepancy"] = disc;
    result["lambda_tolerance"] = kIdentityTol;
    result["residual_tolerance"] = residual_tol;
    result["hessian_ml"] = to_json(h_ml);
    result["hessian_me"] = to_json(h_me);
    result["ml_hessian_negative_definite"] = neg_def;
    result["me_p_block_negative"] = p_neg;
    result["identity_check"] = pass ? "pass" : "fail";
    if (const ExitCode c = convergence_code({&me, &ml}); c != ExitCode::kOk) return c;
    return pass ? ExitCode::kOk : ExitCode::kCheckFailed;
  }

  const HypothesisCheck hyp = check_minimax_hypothesis(rm.support, rm.potentials, sample, config);
  const SolveReport& ml = hyp.ml;
  const ExponentialModel at_ml = fitted(rm, ml);
  const Eigen::VectorXd expanded = foc_residuals(at_ml, sample);
  const Eigen::VectorXd compact = compact_foc_residuals(at_ml, sample);
  const Eigen::VectorXd unsimplified = me_alpha_conditions(at_ml, sample);
  const int J = rm.potentials.J();
  const double compact_disc = inf_norm(compact - expanded);
  const double alpha_cond_disc = inf_norm(unsimplified - expanded.tail(rm.potentials.T()));
  const HessianReport h_ml = hessian_ml_general(at_ml, sample);
  const HessianReport h_me = hessian_me(at_ml, sample);
  json disagreeing = json::array();
  for (const auto& b : h_ml.blocks) {
    if (!b.agrees) disagreeing.push_back(b.block);
  }
  for (const auto& b : h_me.blocks) {
    if (!b.agrees) disagreeing.push_back(b.block);
  }
  const bool pass = ml.converged && ml.residual_norm() <= residual_tol && compact_disc <= kCompactTol;
  result["form"] = "general";
  result["ml"] = to_json(ml);
  result["minimaxent"] = to_json(hyp.minimax);
  result["foc_residual"] = vec(expanded);
  result["compact_foc_residual"] = vec(compact);
  result["compact_discrepancy"] = compact_disc;
  result["compact_tolerance"] = kCompactTol;
  result["alpha_condition_discrepancy"] = alpha_cond_disc;
  result["residual_tolerance"] = residual_tol;
  result["moment_gap_norm"] = inf_norm(expanded.head(J));
  result["hypothesis"] = hypothesis_json(hyp, 1e-6);
  result["hessian_ml"] = to_json(h_ml);
  result["hessian_me"] = to_json(h_me);
  result["hessian_disagreements"] = std::move(disagreeing);
  result["identity_check"] = pass ? "pass" : "fail";
  if (!ml.converged) return ExitCode::kNonConvergence;
  return pass ? ExitCode::kOk : ExitCode::kCheckFailed;
}

ExitCode run_sweep(const RunManifest& m, const RunOptions& options, const ResolvedModel& rm,
                   const EmpiricalSample& sample, const SolverConfig& config, json& result, std::string& csv) {
  const int T = rm.potentials.T();
  if (T == 0) throw SimplePotentialsError("sweep needs general potentials (num_params >= 1)");
  SweepSpec sweep;
  if (options.grid) {
    sweep = SweepSpec::parse_grid(*options.grid);
    if (m.sweep) {
      sweep.param = m.sweep->param;
      sweep.around_ml = m.sweep->around_ml;
    }
  } else if (m.sweep) {
    sweep = *m.sweep;
  } else {
    throw ConfigError("/sweep", "the sweep task needs a grid (manifest sweep.grid or --grid lo:hi:n)");
  }
  if (sweep.param < 1 || sweep.param > T) {
    throw ConfigError("/sweep/param", "must be between 1 and " + std::to_string(T));
  }
  Eigen::VectorXd center = config.alpha_init.value_or(Eigen::VectorXd::Zero(T));
  if (center.size() != T) throw ConfigError("/config/alpha_init", "expected " + std::to_string(T) + " values");
  if (sweep.around_ml) {
    const SolveReport ml = solve_ml_general(rm.support, rm.potentials, sample, config);
    result["ml"] = to_json(ml);
    if (!ml.converged) return ExitCode::kNonConvergence;
    center = ml.alpha_hat;
  }
  const int k = sweep.param - 1;
  std::vector<Eigen::VectorXd> grid;
  for (int i = 0; i < sweep.n; ++i) {
    Eigen::VectorXd a = center;
    const double off = sweep.n == 1 ? sweep.lo : sweep.lo + (sweep.hi - sweep.lo) * i / (sweep.n - 1);
    a[k] = sweep.around_ml ? center[k] + off : off;
    grid.push_back(std::move(a));
  }
  const auto rows = entropy_sweep(rm.support, rm.potentials, sample, grid, config);
  json out = json::array();
  int best_h = -1;
  int best_l = -1;
  for (int i = 0; i < static_cast<int>(rows.size()); ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    json row = {{"alpha", vec(r.alpha)}, {"feasible", r.feasible}};
    if (r.feasible) {
      row["lambda"] = vec(r.lambda);
      row["entropy"] = r.entropy;
      row["loglik"] = r.log_likelihood;
      row["tv_uniform"] = r.tv_uniform;
      const auto& bh = best_h < 0 ? r : rows[static_cast<std::size_t>(best_h)];
      const auto& bl = best_l < 0 ? r : rows[static_cast<std::size_t>(best_l)];
      if (best_h < 0 || r.entropy < bh.entropy) best_h = i;
      if (best_l < 0 || r.log_likelihood > bl.log_likelihood) best_l = i;
    }
    out.push_back(std::move(row));
  }
  result["param"] = sweep.param;
  result["around_ml"] = sweep.around_ml;
  result["center"] = vec(center);
  result["rows"] = std::move(out);
  result["entropy_argmin"] = best_h < 0 ? json(nullptr) : json(best_h);
  result["loglik_argmax"] = best_l < 0 ? json(nullptr) : json(best_l);
  std::ostringstream os;
  write_sweep_csv(os, rows, rm.potentials.J(), T);
  csv = os.str();
  return ExitCode::kOk;
}

json base_report(const RunOptions& options) {
  json report;
  report["schema_version"] = kReportSchemaVersion;
  report["tool"] = {{"name", "entropic"}, {"version", kToolVersion}};
  report["timestamp"] = options.timestamp.empty() ? utc_now() : options.timestamp;
  report["environment"] = environment();
  return report;
}

void set_status(json& report, ExitCode code, const json& error = nullptr) {
  report["status"] = {{"exit_code", static_cast<int>(code)}, {"error", error}};
}

}  // namespace

RunResult run(const RunManifest& manifest, const RunOptions& options) {
  RunResult out;
  json& report = out.report;
  report = base_report(options);

  RunManifest m = manifest;
  if (options.task) m.task = *options.task;
  if (options.seed) m.seed = *options.seed;
  if (options.tol) m.config.tol = *options.tol;
  m.config.seed = m.seed;

  report["seed"] = m.seed;
  report["task"] = to_string(m.task);
  json echo = {{"model", m.model.to_json()}, {"sample", m.sample.to_json()}, {"config", to_json(m.config)}};
  if (m.sweep) {
    echo["sweep"] = {{"lo", m.sweep->lo},
                     {"hi", m.sweep->hi},
                     {"n", m.sweep->n},
                     {"param", m.sweep->param},
                     {"around_ml", m.sweep->around_ml}};
  }
  report["manifest"] = std::move(echo);
  report["result"] = nullptr;

  try {
    try {
      m.config.validate();
    } catch (const ValidationError& e) {
      throw ConfigError("/config", e.what());
    }
    const ResolvedModel rm = resolve(m.model);
    report["model"] = model_summary(rm, m.model);
    json sample_info;
    const EmpiricalSample sample = build_sample(m, rm, sample_info);
    sample_info["size"] = sample.size();
    report["sample"] = std::move(sample_info);

    json result;
    ExitCode code = ExitCode::kOk;
    switch (m.task) {
      case Task::kMe: {
        const SolveReport r = solve_me_simple(rm.support, rm.potentials, sample, m.config);
        result["solve"] = to_json(r);
        result["hessian"] = to_json(hessian_me(fitted(rm, r), sample));
        code = convergence_code({&r});
        break;
      }
      case Task::kMl: {
        const bool simple = rm.potentials.simple();
        const SolveReport r = simple ? solve_ml_simple(rm.support, rm.potentials, sample, m.config)
                                     : solve_ml_general(rm.support, rm.potentials, sample, m.config);
        const ExponentialModel at = fitted(rm, r);
        result["solve"] = to_json(r);
        result["hessian"] = to_json(simple ? hessian_ml_simple(at, sample) : hessian_ml_general(at, sample));
        code = convergence_code({&r});
        break;
      }
      case Task::kMiniMaxEnt: {
        if (rm.potentials.simple()) {
          throw SimplePotentialsError("minimaxent needs general potentials (num_params >= 1); use task me");
        }
        const HypothesisCheck h = check_minimax_hypothesis(rm.support, rm.potentials, sample, m.config);
        result["solve"] = to_json(h.minimax);
        result["ml"] = to_json(h.ml);
        result["hypothesis"] = hypothesis_json(h, 1e-6);
        result["hessian"] = to_json(hessian_me(fitted(rm, h.minimax), sample));
        code = convergence_code({&h.minimax});
        break;
      }
      case Task::kCheck:
        code = run_check(rm, sample, m.config, result);
        break;
      case Task::kSweep: {
        std::string csv;
        code = run_sweep(m, options, rm, sample, m.config, result, csv);
        if (!csv.empty()) out.sweep_csv = std::move(csv);
        break;
      }
    }
    report["result"] = std::move(result);
    out.exit_code = code;
    json err = nullptr;
    if (code == ExitCode::kNonConvergence) {
      err = {{"kind", "NonConvergence"}, {"message", "solver stopped before reaching the requested tolerance"}};
    } else if (code == ExitCode::kCheckFailed) {
      err = {{"kind", "CheckFailed"}, {"message", "identity check failed"}};
    }
    set_status(report, code, err);
  } catch (const Error& e) {
    out.exit_code = e.exit_code();
    set_status(report, out.exit_code, error_json(e));
  } catch (const std::exception& e) {
    out.exit_code = ExitCode::kInternal;
    set_status(report, out.exit_code, json{{"kind", "InternalError"}, {"message", e.what()}});
  }
  return out;
}

RunResult run_file(const std::filesystem::path& manifest_path, const RunOptions& options) {
  try {
    return run(RunManifest::load(manifest_path), options);
  } catch (const Error& e) {
    RunResult out;
    out.report = base_report(options);
    out.report["manifest_path"] = manifest_path.string();
    out.exit_code = e.exit_code();
    set_status(out.report, out.exit_code, error_json(e));
    return out;
  }
}

RunResult run_json(const json& manifest, const std::filesystem::path& base_dir, const RunOptions& options) {
  try {
    return run(RunManifest::from_json(manifest, base_dir), options);
  } catch (const Error& e) {
    RunResult out;
    out.report = base_report(options);
    out.exit_code = e.exit_code();
    set_status(out.report, out.exit_code, error_json(e));
    return out;
  }
}

std::string canonical_report(const json& report) {
  json copy = report;
  if (copy.is_object()) copy.erase("timestamp");
  return copy.dump(2);
}

std::string report_csv(const json& report) {
  std::string out = "field,value\r\n";
  auto walk = [&](auto& self, const json& j, const std::string& prefix) -> void {
    if (j.is_object()) {
      for (const auto& [k, v] : j.items()) self(self, v, prefix.empty() ? k : prefix + "." + k);
    } else if (j.is_array()) {
      for (std::size_t i = 0; i < j.size(); ++i) self(self, j[i], prefix + "." + std::to_string(i));
      if (j.empty()) out += csv_quote(prefix) + ",\r\n";
    } else {
      std::string value;
      if (j.is_string()) {
        value = j.get<std::string>();
      } else if (j.is_number_float()) {
        value = format_double(j.get<double>());
      } else if (!j.is_null()) {
        value = j.dump();
      }
      out += csv_quote(prefix) + "," + csv_quote(value) + "\r\n";
    }
  };
  walk(walk, report, "");
  return out;
}

}  // namespace entropic
