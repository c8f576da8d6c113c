// entropic: command surface over the manifest runner.
//
//   entropic run <manifest>
//   entropic check <manifest>
//   entropic sweep <manifest> --grid lo:hi:n
//   entropic gen <manifest> -o sample.csv

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "entropic/harness.hpp"

namespace fs = std::filesystem;
using namespace entropic;

namespace {

struct Common {
  std::string manifest;
  std::optional<double> tol;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string format = "json";
  std::optional<std::string> grid;
  std::string timestamp;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("manifest", c.manifest, "Run manifest (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--tol", c.tol, "Override the solver residual tolerance")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", c.seed, "Override the manifest seed");
  cmd->add_option("--out-dir", c.out_dir, "Directory for reports (default: next to the manifest)");
  cmd->add_option("--format", c.format, "Report format")->check(CLI::IsMember({"json", "csv"}));
  cmd->add_option("--timestamp", c.timestamp, "Fixed report timestamp instead of the current UTC time");
}

bool write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  out.close();
  if (!out) {
    std::cerr << "error: cannot write " << path.string() << "\n";
    return false;
  }
  return true;
}

int execute(const Common& c, std::optional<Task> task) {
  RunOptions options;
  options.tol = c.tol;
  options.seed = c.seed;
  options.task = task;
  options.grid = c.grid;
  options.timestamp = c.timestamp;

  const fs::path manifest(c.manifest);
  RunResult r = run_file(manifest, options);

  fs::path dir = c.out_dir.empty() ? manifest.parent_path() : fs::path(c.out_dir);
  if (dir.empty()) dir = ".";
  std::error_code ec;
  fs::create_directories(dir, ec);
  const std::string task_name = r.report.value("task", task ? to_string(*task) : std::string("run"));
  const std::string stem = manifest.stem().string();

  const fs::path report_path = dir / (stem + "." + task_name + "." + c.format);
  const std::string body = c.format == "csv" ? report_csv(r.report) : r.report.dump(2) + "\n";
  if (!write_file(report_path, body)) return static_cast<int>(ExitCode::kInternal);
  std::cout << "report: " << report_path.string() << "\n";
  if (r.sweep_csv) {
    const fs::path csv_path = dir / (stem + ".sweep.csv");
    if (!write_file(csv_path, *r.sweep_csv)) return static_cast<int>(ExitCode::kInternal);
    std::cout << "sweep: " << csv_path.string() << "\n";
  }

  const auto& status = r.report["status"];
  if (!status["error"].is_null()) {
    std::cerr << "error: " << status["error"].value("kind", "Error") << ": "
              << status["error"].value("message", "") << "\n";
  }
  const auto& result = r.report["result"];
  if (result.is_object() && result.contains("identity_check")) {
    std::cout << "identity_check: " << result["identity_check"].get<std::string>() << "\n";
  }
  return static_cast<int>(r.exit_code);
}

int generate(const std::string& manifest_path, const std::string& output, std::optional<std::uint64_t> seed) {
  try {
    const RunManifest m = RunManifest::load(manifest_path);
    if (m.sample.kind != SampleSpec::Kind::kGenerate) {
      throw ConfigError("/sample", "gen needs a generate sample source");
    }
    const ResolvedModel rm = resolve(m.model);
    const SampleSpec& s = m.sample;
    if (static_cast<int>(s.true_lambda.size()) != rm.potentials.J()) {
      throw ConfigError("/sample/generate/lambda", "expected " + std::to_string(rm.potentials.J()) + " values");
    }
    if (static_cast<int>(s.true_alpha.size()) != rm.potentials.T()) {
      throw ConfigError("/sample/generate/alpha", "expected " + std::to_string(rm.potentials.T()) + " values");
    }
    const Eigen::VectorXd lambda = Eigen::Map<const Eigen::VectorXd>(s.true_lambda.data(), s.true_lambda.size());
    const Eigen::VectorXd alpha = Eigen::Map<const Eigen::VectorXd>(s.true_alpha.data(), s.true_alpha.size());
    const ExponentialModel truth = normalize(rm.support, rm.potentials, lambda, alpha);
    const std::uint64_t used = seed ? *seed : s.seed.value_or(m.seed);
    const EmpiricalSample sample = generate_sample(truth, s.n, used);
    if (!write_file(output, frequency_csv(rm.support, sample))) return static_cast<int>(ExitCode::kInternal);
    std::cout << "sample: " << output << " (n = " << s.n << ", seed = " << used << ")\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
    return static_cast<int>(e.exit_code());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Maximum entropy, maximum likelihood and minimax entropy estimation on finite supports"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  Common run_opts, check_opts, sweep_opts;
  auto* run_cmd = app.add_subcommand("run", "Run the task named in the manifest");
  add_common(run_cmd, run_opts);
  auto* check_cmd = app.add_subcommand("check", "Identity, hypothesis and Hessian audit");
  add_common(check_cmd, check_opts);
  auto* sweep_cmd = app.add_subcommand("sweep", "Entropy landscape over one alpha component");
  add_common(sweep_cmd, sweep_opts);
  sweep_cmd->add_option("--grid", sweep_opts.grid, "lo:hi:n values (offsets when the manifest sets around_ml)");

  std::string gen_manifest, gen_out;
  std::optional<std::uint64_t> gen_seed;
  auto* gen_cmd = app.add_subcommand("gen", "Write a generated sample as an x,freq CSV");
  gen_cmd->add_option("manifest", gen_manifest, "Run manifest with a generate sample")
      ->required()
      ->check(CLI::ExistingFile);
  gen_cmd->add_option("-o,--output", gen_out, "Output CSV")->required();
  gen_cmd->add_option("--seed", gen_seed, "Override the generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ExitCode::kValidation);
  }

  try {
    if (*run_cmd) return execute(run_opts, std::nullopt);
    if (*check_cmd) return execute(check_opts, Task::kCheck);
    if (*sweep_cmd) return execute(sweep_opts, Task::kSweep);
    if (*gen_cmd) return generate(gen_manifest, gen_out, gen_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kInternal);
  }
  return static_cast<int>(ExitCode::kInternal);
}
