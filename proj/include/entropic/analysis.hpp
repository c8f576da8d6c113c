#pragma once

#include <Eigen/Core>

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "entropic/model.hpp"
#include "entropic/solvers.hpp"

namespace entropic {

// ------------------------------------------------------- finite differences

using ScalarFn = std::function<double(const Eigen::VectorXd&)>;
using VectorFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

inline const std::vector<double> kDefaultFdSteps = {1e-3, 1e-4, 1e-5};

// Central differences at each step (scaled by max(1, |x_k|)), combined by
// Richardson extrapolation; the extrapolant with the smallest error estimate
// wins. Second differences use sqrt(step) since their roundoff grows like
// eps/h^2.
Eigen::VectorXd fd_gradient(const ScalarFn& f, const Eigen::VectorXd& x,
                            const std::vector<double>& steps = kDefaultFdSteps);
Eigen::MatrixXd fd_jacobian(const VectorFn& g, const Eigen::VectorXd& x,
                            const std::vector<double>& steps = kDefaultFdSteps);
Eigen::MatrixXd fd_hessian(const ScalarFn& f, const Eigen::VectorXd& x,
                           const std::vector<double>& steps = kDefaultFdSteps);

// max |analytic - fd| / (1 + |fd|) over all entries.
double max_relative_error(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& fd);

struct FdCheck {
  double max_rel_err = 0.0;
  Eigen::MatrixXd fd;
};

FdCheck fd_check_gradient(const ScalarFn& f, const Eigen::VectorXd& x, const Eigen::VectorXd& analytic,
                          const std::vector<double>& steps = kDefaultFdSteps);
FdCheck fd_check_jacobian(const VectorFn& g, const Eigen::VectorXd& x, const Eigen::MatrixXd& analytic,
                          const std::vector<double>& steps = kDefaultFdSteps);
FdCheck fd_check_hessian(const ScalarFn& f, const Eigen::VectorXd& x, const Eigen::MatrixXd& analytic,
                         const std::vector<double>& steps = kDefaultFdSteps);

// ----------------------------------------------------------------- hessians

enum class Definiteness { kNegativeDefinite, kPositiveDefinite, kSemidefinite, kIndefinite };

std::string to_string(Definiteness d);

// Eigenvalue signs at threshold 1e-10 * max|eigenvalue|.
Definiteness classify(const Eigen::VectorXd& eigenvalues);

struct BlockDiscrepancy {
  std::string block;
  double max_rel_err = 0.0;
  bool agrees = true;
};

inline constexpr double kBlockAgreementTol = 1e-4;

struct HessianReport {
  std::string task;
  Eigen::MatrixXd matrix;       // adopted matrix (FD replaces disagreeing blocks)
  Eigen::MatrixXd closed_form;   // closed-form blocks before FD adjudication
  Eigen::MatrixXd fd_matrix;
  Eigen::VectorXd eigenvalues;  // ascending, of `matrix`
  Definiteness definiteness = Definiteness::kIndefinite;
  double fd_max_rel_err = 0.0;
  std::vector<BlockDiscrepancy> blocks;

  // ME only: diagonal of the p-block and curvature of the inner-optimal
  // entropy in alpha (Schur complement of the ML Hessian).
  Eigen::VectorXd p_block;
  Eigen::MatrixXd profile_alpha_block;

  bool all_blocks_agree() const;
};

// -Cov(u) under the model.
HessianReport hessian_ml_simple(const ExponentialModel& model, const EmpiricalSample& sample);
// (J+T) x (J+T) log-likelihood Hessian in (lambda, alpha).
HessianReport hessian_ml_general(const ExponentialModel& model, const EmpiricalSample& sample);
// Lagrangean second derivatives: -1/p_i in p, and the alpha block at fixed lambda.
HessianReport hessian_me(const ExponentialModel& model, const EmpiricalSample& sample);

// The closed-form log-likelihood Hessian blocks without FD adjudication.
Eigen::MatrixXd ml_hessian_closed_form(const ExponentialModel& model, const EmpiricalSample& sample);

// L = H(p) + lambda'(m(u) - mu(u)) at the model's p.
double lagrangean(const ExponentialModel& model, const EmpiricalSample& sample);

// Total-variation distance between p and the weight-proportional uniform law.
double tv_to_uniform(const ExponentialModel& model);

// ------------------------------------------------------------------- sweeps

struct SweepRow {
  Eigen::VectorXd alpha;
  Eigen::VectorXd lambda;
  double entropy = 0.0;
  double log_likelihood = 0.0;
  double tv_uniform = 0.0;
  bool feasible = false;
};

std::vector<SweepRow> entropy_sweep(const SupportGrid& support, const PotentialSet& potentials,
                                    const EmpiricalSample& sample, const std::vector<Eigen::VectorXd>& alpha_grid,
                                    const SolverConfig& config = {});

// Header alpha1..alphaT, lambda1..lambdaJ, entropy, loglik, feasible.
void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows, int J, int T);

}  // namespace entropic
