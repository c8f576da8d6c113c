#pragma once

// Maximum Entropy, Maximum Likelihood and MiniMax Entropy estimation.
//
// All three tasks share the moment-consistency conditions
//
//   m(u_j) - mu(u_j) = 0                                  j = 1..J
//   lambda' (m(du/dalpha_t) - mu(du/dalpha_t)) = 0        t = 1..T
//
// which is exactly the gradient of the negative per-observation
// log-likelihood. foc_residuals() returns that vector.

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "entropic/model.hpp"

namespace entropic {

struct SolverConfig {
  double tol = 1e-10;          // residual infinity-norm
  int max_iter = 200;
  double armijo = 1e-4;        // sufficient-decrease constant
  double backtrack = 0.5;      // step shrink factor
  double min_step = 1e-12;     // smallest line-search step before giving up
  double lm_init = 1e-3;       // initial Levenberg damping (direct ML path)
  double inner_tol = 1e-12;    // MiniMax inner ME solves
  double outer_tol = 1e-8;     // MiniMax outer stationarity
  int num_starts = 8;
  std::uint64_t seed = 0;
  int stagnation_window = 20;  // iterations of slow progress before InfeasibleMoments
  double start_spread = 0.0;   // 0 picks a quarter of the support width
  std::optional<Eigen::VectorXd> lambda_init;
  std::optional<Eigen::VectorXd> alpha_init;
  std::optional<Eigen::VectorXd> alpha_lower;
  std::optional<Eigen::VectorXd> alpha_upper;

  // Throws ValidationError on tol <= 0, inner_tol > outer_tol, and similar.
  void validate() const;
};

struct TraceEntry {
  double objective = 0.0;
  double step_norm = 0.0;
  double residual_norm = 0.0;
};

// One multistart run.
struct StartResult {
  int start = 0;
  bool converged = false;
  Eigen::VectorXd lambda;
  Eigen::VectorXd alpha;
  double objective = 0.0;  // log-likelihood (ML) or outer entropy (MiniMax)
  double residual_norm = 0.0;
  int iterations = 0;
  std::string status;
};

struct SolveReport {
  std::string task;
  std::string method;
  Eigen::VectorXd lambda_hat;
  Eigen::VectorXd alpha_hat;
  Eigen::VectorXd foc_residual;
  double entropy = 0.0;
  double log_likelihood = 0.0;
  int iterations = 0;
  bool converged = false;
  double tol = 0.0;
  std::vector<TraceEntry> trace;

  // General-form solvers.
  std::string hessian_mode;                 // "analytic" or "quasi-newton"
  std::vector<StartResult> candidates;
  bool multiple_critical_points = false;

  // MiniMax outer problem.
  Eigen::VectorXd outer_stationarity;
  int gradient_fallbacks = 0;
  double max_gradient_check_error = 0.0;

  double residual_norm() const;
};

SolveReport solve_me_simple(const SupportGrid& support, const PotentialSet& potentials,
                            const EmpiricalSample& sample, const SolverConfig& config = {});
SolveReport solve_ml_simple(const SupportGrid& support, const PotentialSet& potentials,
                            const EmpiricalSample& sample, const SolverConfig& config = {});
SolveReport solve_ml_general(const SupportGrid& support, const PotentialSet& potentials,
                             const EmpiricalSample& sample, const SolverConfig& config = {});
SolveReport solve_minimax_ent(const SupportGrid& support, const PotentialSet& potentials,
                              const EmpiricalSample& sample, const SolverConfig& config = {});

// J moment gaps followed by T alpha conditions.
Eigen::VectorXd foc_residuals(const ExponentialModel& model, const EmpiricalSample& sample);

// The same conditions written as m(dU/dtheta) - mu(dU/dtheta) for
// theta = (lambda, alpha), with U differentiated as one expression.
Eigen::VectorXd compact_foc_residuals(const ExponentialModel& model, const EmpiricalSample& sample);

// The unsimplified alpha-stationarity conditions of the ME Lagrangean, with
// dp_i/dalpha_t carried explicitly. Used as an oracle for the T conditions.
Eigen::VectorXd me_alpha_conditions(const ExponentialModel& model, const EmpiricalSample& sample);

// D(lambda) = log_norm(lambda) + lambda' m(u), the convex ME dual.
double me_dual(const ExponentialModel& model, const EmpiricalSample& sample);

// Result of the ME dual Newton solve at fixed alpha.
struct InnerSolution {
  Eigen::VectorXd lambda;
  int iterations = 0;
  bool converged = false;
  std::vector<TraceEntry> trace;
};

// Minimizes the ME dual over lambda at fixed alpha. Throws InfeasibleMoments
// when the sample moments sit on the boundary of the achievable set.
InnerSolution solve_me_dual(const SupportGrid& support, const PotentialSet& potentials, const EmpiricalSample& sample,
                            const Eigen::VectorXd& alpha, const Eigen::VectorXd& lambda0, double tol,
                            const SolverConfig& config);

}  // namespace entropic
