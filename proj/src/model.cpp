#include "entropic/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "entropic/errors.hpp"

namespace entropic {

namespace {

void require_dims(const ExponentialModel& model, const EmpiricalSample& sample) {
  if (sample.size() != model.support().size()) {
    throw DimensionError("sample has " + std::to_string(sample.size()) + " frequencies, support has " +
                         std::to_string(model.support().size()) + " points");
  }
}

}  // namespace

// ------------------------------------------------------------------ support

SupportGrid::SupportGrid(Eigen::VectorXd points, Eigen::VectorXd weights)
    : points_(std::move(points)), weights_(std::move(weights)) {
  if (points_.size() < 2) throw InvalidGrid("support needs at least 2 points");
  if (weights_.size() != points_.size()) throw InvalidGrid("weights and points differ in length");
  for (Eigen::Index i = 0; i < points_.size(); ++i) {
    if (!std::isfinite(points_[i])) throw InvalidGrid("support point " + std::to_string(i) + " is not finite");
    if (i > 0 && !(points_[i] > points_[i - 1])) throw InvalidGrid("support points must be strictly increasing");
    if (!(weights_[i] > 0.0) || !std::isfinite(weights_[i])) throw InvalidGrid("weights must be positive");
    if (weights_[i] != 1.0) unit_ = false;
  }
}

SupportGrid SupportGrid::with_unit_weights(Eigen::VectorXd points) {
  const Eigen::Index m = points.size();
  return SupportGrid(std::move(points), Eigen::VectorXd::Ones(m));
}

SupportGrid SupportGrid::uniform(double lo, double hi, int m, WeightKind weights) {
  if (m < 2) throw InvalidGrid("grid needs m >= 2");
  if (!std::isfinite(lo) || !std::isfinite(hi) || !(hi > lo)) throw InvalidGrid("grid needs finite lo < hi");
  Eigen::VectorXd points(m);
  const double h = (hi - lo) / (m - 1);
  for (int i = 0; i < m; ++i) points[i] = lo + h * i;
  points[m - 1] = hi;
  Eigen::VectorXd w = Eigen::VectorXd::Ones(m);
  if (weights == WeightKind::kTrapezoid) {
    w.setConstant(h);
    w[0] = w[m - 1] = 0.5 * h;
  }
  return SupportGrid(std::move(points), std::move(w));
}

// --------------------------------------------------------------- potentials

PotentialSet::PotentialSet(std::vector<PotentialExpr> exprs, int num_params)
    : exprs_(std::move(exprs)), num_params_(num_params) {
  if (exprs_.empty()) throw ValidationError("a potential set needs at least one potential");
  if (num_params_ < 0) throw ValidationError("num_params must be non-negative");
  for (const auto& e : exprs_) {
    if (e.num_params() != num_params_ || e.max_param_used() > num_params_) {
      throw UnknownSymbol("potential '" + e.to_string() + "' is not declared over " + std::to_string(num_params_) +
                          " parameters");
    }
  }
}

PotentialSet PotentialSet::parse(const std::vector<std::string>& sources, int num_params) {
  std::vector<PotentialExpr> exprs;
  exprs.reserve(sources.size());
  for (const auto& s : sources) exprs.push_back(parse_potential(s, num_params));
  return PotentialSet(std::move(exprs), num_params);
}

std::vector<std::string> PotentialSet::sources() const {
  std::vector<std::string> out;
  for (const auto& e : exprs_) out.push_back(e.to_string());
  return out;
}

PotentialTable tabulate(const SupportGrid& support, const PotentialSet& potentials, const Eigen::VectorXd& alpha) {
  if (alpha.size() != potentials.T()) {
    throw DimensionError("alpha has " + std::to_string(alpha.size()) + " entries, potentials declare " +
                         std::to_string(potentials.T()));
  }
  const Eigen::Index m = support.size();
  const int J = potentials.J();
  const int T = potentials.T();
  PotentialTable t;
  t.values.resize(m, J);
  if (T == 0) {
    for (int j = 0; j < J; ++j) {
      for (Eigen::Index i = 0; i < m; ++i) t.values(i, j) = potentials[j].eval(support.points()[i], alpha);
    }
    t.first.assign(static_cast<std::size_t>(J), Eigen::MatrixXd(m, 0));
    return t;
  }
  t.first.assign(static_cast<std::size_t>(J), Eigen::MatrixXd(m, T));
  t.second.resize(static_cast<std::size_t>(J * m));
  for (int j = 0; j < J; ++j) {
    for (Eigen::Index i = 0; i < m; ++i) {
      DualValue d = potentials[j].eval_dual(support.points()[i], alpha);
      t.values(i, j) = d.value;
      t.first[static_cast<std::size_t>(j)].row(i) = d.first.transpose();
      t.second[static_cast<std::size_t>(j * m + i)] = std::move(d.second);
    }
  }
  return t;
}

// -------------------------------------------------------------------- model

void ExponentialModel::renormalize() {
  if (lambda_.size() != potentials_->J()) {
    throw DimensionError("lambda has " + std::to_string(lambda_.size()) + " entries, model has " +
                         std::to_string(potentials_->J()) + " potentials");
  }
  if (!lambda_.allFinite() || !alpha_.allFinite()) throw DomainError("model parameters must be finite");
  // log w_i - lambda' u_i, then a max-shifted log-sum-exp.
  Eigen::VectorXd s = support_->weights().array().log().matrix() - table_->values * lambda_;
  if (!s.allFinite()) throw DomainError("total potential is not finite on the support");
  const double shift = s.maxCoeff();
  const double sum = (s.array() - shift).exp().sum();
  log_norm_ = shift + std::log(sum);
  log_probs_ = s.array() - log_norm_;
  probs_ = log_probs_.array().exp();
}

ExponentialModel ExponentialModel::with_lambda(const Eigen::VectorXd& lambda) const {
  ExponentialModel m = *this;
  m.lambda_ = lambda;
  m.renormalize();
  return m;
}

ExponentialModel normalize(const SupportGrid& support, const PotentialSet& potentials, const Eigen::VectorXd& lambda,
                           const Eigen::VectorXd& alpha) {
  ExponentialModel m;
  m.support_ = std::make_shared<const SupportGrid>(support);
  m.potentials_ = std::make_shared<const PotentialSet>(potentials);
  m.table_ = std::make_shared<const PotentialTable>(tabulate(support, potentials, alpha));
  m.lambda_ = lambda;
  m.alpha_ = alpha;
  m.renormalize();
  return m;
}

// ------------------------------------------------------------------- sample

EmpiricalSample EmpiricalSample::from_frequencies(Eigen::VectorXd freq, long long n) {
  if (freq.size() == 0) throw EmptySample("sample has no frequencies");
  if (n < 0) throw ValidationError("observation count must be non-negative");
  for (Eigen::Index i = 0; i < freq.size(); ++i) {
    if (!(freq[i] >= 0.0) || !std::isfinite(freq[i])) {
      throw FrequencySumError("frequency " + std::to_string(i) + " is negative or not finite");
    }
  }
  const double total = freq.sum();
  if (std::abs(total - 1.0) > 1e-12) {
    throw FrequencySumError("frequencies sum to " + std::to_string(total) + ", expected 1");
  }
  return EmpiricalSample(std::move(freq), n);
}

EmpiricalSample EmpiricalSample::from_counts(const Eigen::VectorXd& counts) {
  const double total = counts.sum();
  if (counts.size() == 0 || !(total > 0.0)) throw EmptySample("sample has no observations");
  if ((counts.array() < 0.0).any()) throw FrequencySumError("counts must be non-negative");
  return EmpiricalSample(counts / total, static_cast<long long>(std::llround(total)));
}

BinnedSample bin_observations(const std::vector<double>& observations, const SupportGrid& support) {
  if (observations.empty()) throw EmptySample("no observations to bin");
  const Eigen::VectorXd& x = support.points();
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(x.size());
  double max_d = 0.0;
  double sum_d = 0.0;
  for (double v : observations) {
    if (!std::isfinite(v)) throw DomainError("observation is not finite");
    const double* begin = x.data();
    const double* end = x.data() + x.size();
    const double* hi = std::lower_bound(begin, end, v);
    Eigen::Index k;
    if (hi == begin) {
      k = 0;
    } else if (hi == end) {
      k = x.size() - 1;
    } else {
      const Eigen::Index up = hi - begin;
      k = (v - x[up - 1] <= x[up] - v) ? up - 1 : up;
    }
    counts[k] += 1.0;
    const double d = std::abs(v - x[k]);
    max_d = std::max(max_d, d);
    sum_d += d;
  }
  return {EmpiricalSample::from_counts(counts), max_d, sum_d / static_cast<double>(observations.size())};
}

// ------------------------------------------------------------------ moments

double model_moment(const ExponentialModel& model, const PotentialExpr& expr) {
  const Eigen::VectorXd& x = model.support().points();
  const Eigen::VectorXd& p = model.probabilities();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) acc += p[i] * expr.eval(x[i], model.alpha());
  return acc;
}

double sample_moment(const EmpiricalSample& sample, const SupportGrid& support, const PotentialExpr& expr,
                     const Eigen::VectorXd& alpha) {
  if (sample.size() != support.size()) throw DimensionError("sample and support differ in length");
  const Eigen::VectorXd& x = support.points();
  const Eigen::VectorXd& r = sample.freq();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (r[i] != 0.0) acc += r[i] * expr.eval(x[i], alpha);
  }
  return acc;
}

Eigen::VectorXd moment_gap(const ExponentialModel& model, const EmpiricalSample& sample) {
  require_dims(model, sample);
  const Eigen::MatrixXd& u = model.table().values;
  return u.transpose() * (sample.freq() - model.probabilities());
}

double entropy(const ExponentialModel& model) {
  const Eigen::VectorXd& p = model.probabilities();
  const Eigen::VectorXd& lp = model.log_probabilities();
  const Eigen::VectorXd& w = model.support().weights();
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) h -= p[i] * (lp[i] - std::log(w[i]));
  return h;
}

double log_likelihood(const ExponentialModel& model, const EmpiricalSample& sample) {
  require_dims(model, sample);
  const Eigen::VectorXd mu = model.table().values.transpose() * sample.freq();
  return -model.log_norm() - model.lambda().dot(mu);
}

// ------------------------------------------------------------------ catalog

std::vector<std::string> catalog_names() { return {"dnorm_general", "dnorm_simple", "gamma", "logistic"}; }

CatalogModel discretize_continuous(const std::string& catalog_name, const GridSpec& grid) {
  if (catalog_name == "dnorm_simple") {
    return {catalog_name, SupportGrid::uniform(grid.lo, grid.hi, grid.m, WeightKind::kUnit),
            PotentialSet::parse({"x", "x^2"}, 0),
            "discrete normal in simple form; lambda1 = -2*alpha*lambda, lambda2 = lambda"};
  }
  if (catalog_name == "dnorm_general") {
    return {catalog_name, SupportGrid::uniform(grid.lo, grid.hi, grid.m, WeightKind::kUnit),
            PotentialSet::parse({"(x - a1)^2"}, 1), "discrete normal in general form; U = lambda (x - alpha)^2"};
  }
  if (catalog_name == "gamma") {
    if (!(grid.lo > 0.0)) throw InvalidGrid("gamma grid needs lo > 0");
    return {catalog_name, SupportGrid::uniform(grid.lo, grid.hi, grid.m, WeightKind::kTrapezoid),
            PotentialSet::parse({"x", "ln(x)"}, 0),
            "Gamma(shape k, scale s) has lambda1 = 1/s, lambda2 = 1 - k; trapezoid quadrature weights"};
  }
  if (catalog_name == "logistic") {
    return {catalog_name, SupportGrid::uniform(grid.lo, grid.hi, grid.m, WeightKind::kTrapezoid),
            PotentialSet::parse({"(x - a1) / a2", "ln(1 + exp(-(x - a1) / a2))"}, 2),
            "Logistic(mu = a1, beta = a2) has lambda = [1, 2] on these potentials (1/a2 if the first potential is x - a1); "
            "fitted lambda is left free"};
  }
  throw UnknownCatalogName("unknown catalog model '" + catalog_name + "'");
}

}  // namespace entropic
