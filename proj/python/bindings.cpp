// Python bindings. JSON crosses the boundary as text; the entropic package
// wraps these calls and converts to and from dicts.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "entropic/analysis.hpp"
#include "entropic/harness.hpp"
#include "entropic/potential.hpp"
#include "entropic/solvers.hpp"

namespace py = pybind11;
using namespace entropic;
using nlohmann::json;

namespace {

Eigen::VectorXd to_vec(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

ResolvedModel model_from(const std::string& model_json) {
  return resolve(ModelSpec::from_json(json::parse(model_json)));
}

SolverConfig config_from(const std::string& config_json) {
  return config_json.empty() ? SolverConfig{} : config_from_json(json::parse(config_json));
}

EmpiricalSample sample_from(const ResolvedModel& m, const std::vector<double>& freq) {
  if (static_cast<Eigen::Index>(freq.size()) != m.support.size()) {
    throw DimensionError("expected " + std::to_string(m.support.size()) + " frequencies, got " +
                         std::to_string(freq.size()));
  }
  return EmpiricalSample::from_frequencies(to_vec(freq));
}

ExponentialModel model_at(const ResolvedModel& m, const std::vector<double>& lambda, const std::vector<double>& alpha) {
  if (static_cast<int>(lambda.size()) != m.potentials.J()) throw DimensionError("lambda has the wrong length");
  if (static_cast<int>(alpha.size()) != m.potentials.T()) throw DimensionError("alpha has the wrong length");
  return normalize(m.support, m.potentials, to_vec(lambda), to_vec(alpha));
}

std::string solve(const std::string& model_json, const std::vector<double>& freq, const std::string& task,
                  const std::string& config_json) {
  const ResolvedModel m = model_from(model_json);
  const EmpiricalSample r = sample_from(m, freq);
  const SolverConfig cfg = config_from(config_json);
  SolveReport rep;
  if (task == "me") {
    rep = solve_me_simple(m.support, m.potentials, r, cfg);
  } else if (task == "ml") {
    rep = m.potentials.simple() ? solve_ml_simple(m.support, m.potentials, r, cfg)
                                : solve_ml_general(m.support, m.potentials, r, cfg);
  } else if (task == "minimaxent") {
    rep = solve_minimax_ent(m.support, m.potentials, r, cfg);
  } else {
    throw ValidationError("unknown task '" + task + "' (me, ml, minimaxent)");
  }
  return to_json(rep).dump();
}

std::string hessian(const std::string& model_json, const std::vector<double>& freq, const std::vector<double>& lambda,
                    const std::vector<double>& alpha, const std::string& kind) {
  const ResolvedModel m = model_from(model_json);
  const EmpiricalSample r = sample_from(m, freq);
  const ExponentialModel e = model_at(m, lambda, alpha);
  if (kind == "me") return to_json(hessian_me(e, r)).dump();
  if (kind == "ml") {
    return to_json(m.potentials.simple() ? hessian_ml_simple(e, r) : hessian_ml_general(e, r)).dump();
  }
  throw ValidationError("unknown hessian kind '" + kind + "' (me, ml)");
}

std::string sweep(const std::string& model_json, const std::vector<double>& freq,
                  const std::vector<std::vector<double>>& alphas, const std::string& config_json) {
  const ResolvedModel m = model_from(model_json);
  const EmpiricalSample r = sample_from(m, freq);
  std::vector<Eigen::VectorXd> grid;
  for (const auto& a : alphas) grid.push_back(to_vec(a));
  json rows = json::array();
  for (const SweepRow& row : entropy_sweep(m.support, m.potentials, r, grid, config_from(config_json))) {
    json j = {{"alpha", std::vector<double>(row.alpha.data(), row.alpha.data() + row.alpha.size())},
              {"feasible", row.feasible}};
    if (row.feasible) {
      j["lambda"] = std::vector<double>(row.lambda.data(), row.lambda.data() + row.lambda.size());
      j["entropy"] = row.entropy;
      j["loglik"] = row.log_likelihood;
      j["tv_uniform"] = row.tv_uniform;
    }
    rows.push_back(std::move(j));
  }
  return rows.dump();
}

RunOptions run_options(std::optional<std::uint64_t> seed, std::optional<double> tol, const std::string& timestamp) {
  RunOptions o;
  o.seed = seed;
  o.tol = tol;
  o.timestamp = timestamp;
  return o;
}

py::tuple result_tuple(const RunResult& r) {
  return py::make_tuple(r.report.dump(), static_cast<int>(r.exit_code),
                        r.sweep_csv ? py::object(py::str(*r.sweep_csv)) : py::object(py::none()));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Maximum entropy, maximum likelihood and minimax entropy estimation on finite supports";
  m.attr("__version__") = kToolVersion;

  // The module attributes keep these types alive.
  static PyObject* base = py::exception<Error>(m, "EntropicError").ptr();
  static PyObject* validation = py::exception<ValidationError>(m, "ValidationError", base).ptr();
  static PyObject* config = py::exception<ConfigError>(m, "ConfigError", validation).ptr();
  static PyObject* domain = py::exception<DomainError>(m, "DomainError", base).ptr();
  static PyObject* infeasible = py::exception<InfeasibleMoments>(m, "InfeasibleMoments", base).ptr();
  static PyObject* nonconv = py::exception<NonConvergence>(m, "NonConvergence", base).ptr();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigError& e) {
      PyErr_SetString(config, e.what());
    } catch (const ValidationError& e) {
      PyErr_SetString(validation, (std::string(e.kind()) + ": " + e.what()).c_str());
    } catch (const DomainError& e) {
      PyErr_SetString(domain, e.what());
    } catch (const InfeasibleMoments& e) {
      PyErr_SetString(infeasible, e.what());
    } catch (const NonConvergence& e) {
      PyErr_SetString(nonconv, e.what());
    } catch (const Error& e) {
      PyErr_SetString(base, (std::string(e.kind()) + ": " + e.what()).c_str());
    }
  });

  m.def("canonical_potential", [](const std::string& src, int num_params) {
    return parse_potential(src, num_params).to_string();
  }, py::arg("source"), py::arg("num_params") = 0);
  m.def("evaluate_potential", [](const std::string& src, int num_params, double x, const std::vector<double>& alpha) {
    const DualValue d = parse_potential(src, num_params).eval_dual(x, to_vec(alpha));
    return py::make_tuple(d.value, d.first, d.second);
  }, py::arg("source"), py::arg("num_params"), py::arg("x"), py::arg("alpha"));
  m.def("support", [](const std::string& model_json) {
    const ResolvedModel r = model_from(model_json);
    return py::make_tuple(r.support.points(), r.support.weights());
  });
  m.def("probabilities", [](const std::string& model_json, const std::vector<double>& lambda, const std::vector<double>& alpha) {
    const ExponentialModel e = model_at(model_from(model_json), lambda, alpha);
    return py::make_tuple(e.probabilities(), e.log_norm(), entropy(e));
  });
  m.def("solve", &solve);
  m.def("hessian", &hessian);
  m.def("sweep", &sweep);
  m.def("run_file", [](const std::string& path, std::optional<std::uint64_t> seed, std::optional<double> tol,
                       const std::string& timestamp) { return result_tuple(run_file(path, run_options(seed, tol, timestamp))); });
  m.def("run_json", [](const std::string& manifest, const std::string& base_dir, std::optional<std::uint64_t> seed,
                       std::optional<double> tol, const std::string& timestamp) {
    return result_tuple(run_json(json::parse(manifest), base_dir, run_options(seed, tol, timestamp)));
  });
  m.def("canonical_report", [](const std::string& report_json) { return canonical_report(json::parse(report_json)); });
}
