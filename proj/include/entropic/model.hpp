#pragma once

// Exponential-form models on a finite support.
//
// A model assigns p_i = w_i exp(-lambda' u(x_i, alpha) - log_norm) to every
// support point, where w_i are the grid weights (all 1 for a native discrete
// support, quadrature weights for a discretized density).

#include <Eigen/Core>

#include <memory>
#include <string>
#include <vector>

#include "entropic/potential.hpp"

namespace entropic {

enum class WeightKind { kUnit, kTrapezoid };

class SupportGrid {
 public:
  SupportGrid(Eigen::VectorXd points, Eigen::VectorXd weights);

  static SupportGrid with_unit_weights(Eigen::VectorXd points);
  // m equally spaced points on [lo, hi].
  static SupportGrid uniform(double lo, double hi, int m, WeightKind weights);

  const Eigen::VectorXd& points() const noexcept { return points_; }
  const Eigen::VectorXd& weights() const noexcept { return weights_; }
  Eigen::Index size() const noexcept { return points_.size(); }
  bool unit_weights() const noexcept { return unit_; }

 private:
  Eigen::VectorXd points_;
  Eigen::VectorXd weights_;
  bool unit_ = true;
};

class PotentialSet {
 public:
  PotentialSet(std::vector<PotentialExpr> exprs, int num_params);
  static PotentialSet parse(const std::vector<std::string>& sources, int num_params);

  int J() const noexcept { return static_cast<int>(exprs_.size()); }
  int T() const noexcept { return num_params_; }
  bool simple() const noexcept { return num_params_ == 0; }
  const std::vector<PotentialExpr>& exprs() const noexcept { return exprs_; }
  const PotentialExpr& operator[](int j) const { return exprs_[static_cast<std::size_t>(j)]; }
  std::vector<std::string> sources() const;

 private:
  std::vector<PotentialExpr> exprs_;
  int num_params_;
};

// Potentials and their alpha-partials tabulated on the support at fixed alpha.
struct PotentialTable {
  Eigen::MatrixXd values;               // m x J, u_j(x_i, alpha)
  std::vector<Eigen::MatrixXd> first;   // J entries of m x T, du_j/dalpha_t at x_i
  std::vector<Eigen::MatrixXd> second;  // J*m entries of T x T, index j*m + i

  const Eigen::MatrixXd& hess(int j, Eigen::Index i) const {
    return second[static_cast<std::size_t>(j * values.rows() + i)];
  }
};

PotentialTable tabulate(const SupportGrid& support, const PotentialSet& potentials, const Eigen::VectorXd& alpha);

class ExponentialModel {
 public:
  const SupportGrid& support() const noexcept { return *support_; }
  const PotentialSet& potentials() const noexcept { return *potentials_; }
  const Eigen::VectorXd& lambda() const noexcept { return lambda_; }
  const Eigen::VectorXd& alpha() const noexcept { return alpha_; }
  double log_norm() const noexcept { return log_norm_; }
  const Eigen::VectorXd& probabilities() const noexcept { return probs_; }
  const Eigen::VectorXd& log_probabilities() const noexcept { return log_probs_; }
  const PotentialTable& table() const noexcept { return *table_; }

  // Same alpha (and tabulated potentials), new lambda.
  ExponentialModel with_lambda(const Eigen::VectorXd& lambda) const;

  friend ExponentialModel normalize(const SupportGrid&, const PotentialSet&, const Eigen::VectorXd&,
                                    const Eigen::VectorXd&);

 private:
  ExponentialModel() = default;
  void renormalize();

  std::shared_ptr<const SupportGrid> support_;
  std::shared_ptr<const PotentialSet> potentials_;
  std::shared_ptr<const PotentialTable> table_;
  Eigen::VectorXd lambda_;
  Eigen::VectorXd alpha_;
  double log_norm_ = 0.0;
  Eigen::VectorXd probs_;
  Eigen::VectorXd log_probs_;
};

ExponentialModel normalize(const SupportGrid& support, const PotentialSet& potentials, const Eigen::VectorXd& lambda,
                           const Eigen::VectorXd& alpha);

class EmpiricalSample {
 public:
  // Frequencies must be non-negative and sum to 1 within 1e-12.
  static EmpiricalSample from_frequencies(Eigen::VectorXd freq, long long n = 0);
  static EmpiricalSample from_counts(const Eigen::VectorXd& counts);

  const Eigen::VectorXd& freq() const noexcept { return freq_; }
  long long n() const noexcept { return n_; }
  Eigen::Index size() const noexcept { return freq_.size(); }

 private:
  EmpiricalSample(Eigen::VectorXd freq, long long n) : freq_(std::move(freq)), n_(n) {}
  Eigen::VectorXd freq_;
  long long n_ = 0;
};

struct BinnedSample {
  EmpiricalSample sample;
  double max_distance = 0.0;
  double mean_distance = 0.0;
};

// Assigns each raw observation to its nearest support point (ties go to the
// lower point) and reports how far observations moved.
BinnedSample bin_observations(const std::vector<double>& observations, const SupportGrid& support);

// Model expectation of V(X, alpha).
double model_moment(const ExponentialModel& model, const PotentialExpr& expr);
// Frequency-weighted sum of V(x_i, alpha).
double sample_moment(const EmpiricalSample& sample, const SupportGrid& support, const PotentialExpr& expr,
                     const Eigen::VectorXd& alpha);
// m(u_j) - mu(u_j) for every potential.
Eigen::VectorXd moment_gap(const ExponentialModel& model, const EmpiricalSample& sample);

// -sum p_i ln(p_i / w_i); the Shannon entropy when weights are unit.
double entropy(const ExponentialModel& model);

// Per-observation log-likelihood -log_norm - lambda' m(u).
double log_likelihood(const ExponentialModel& model, const EmpiricalSample& sample);

struct GridSpec {
  double lo = 0.0;
  double hi = 1.0;
  int m = 2;
};

struct CatalogModel {
  std::string name;
  SupportGrid support;
  PotentialSet potentials;
  std::string note;
};

std::vector<std::string> catalog_names();
CatalogModel discretize_continuous(const std::string& catalog_name, const GridSpec& grid);

}  // namespace entropic
