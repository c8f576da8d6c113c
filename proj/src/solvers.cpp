#include "entropic/solvers.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>

#include "entropic/analysis.hpp"
#include "entropic/errors.hpp"

namespace entropic {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double inf_norm(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

// Steps whose predicted change is below this are judged by the residual
// instead of the objective, which can no longer resolve them.
bool at_noise_floor(double predicted_change, double f) {
  return std::abs(predicted_change) <= 1e-13 * (1.0 + std::abs(f));
}

// Counts consecutive iterations without Newton-like progress while the
// multipliers keep growing; that pattern means lambda runs off to infinity.
class StagnationMonitor {
 public:
  explicit StagnationMonitor(int window) : window_(window) {}

  void update(double res_old, double res_new, double norm_old, double norm_new, bool collapsed) {
    const bool slow = collapsed || (res_new > 0.1 * res_old && norm_new > norm_old);
    count_ = slow ? count_ + 1 : 0;
  }
  bool tripped() const { return count_ >= window_; }

 private:
  int window_;
  int count_ = 0;
};

Eigen::MatrixXd covariance(const Eigen::MatrixXd& u, const Eigen::VectorXd& p) {
  const Eigen::RowVectorXd mean = p.transpose() * u;
  const Eigen::MatrixXd c = u.rowwise() - mean;
  return c.transpose() * p.asDiagonal() * c;
}

// Moments on a face of the achievable set drive the fitted covariance to
// zero along the face normal. Compares against the covariance under the
// weight-proportional uniform law so the test is scale free.
void check_interior(const Eigen::MatrixXd& u, const Eigen::VectorXd& p, const Eigen::VectorXd& w) {
  const Eigen::VectorXd q = w / w.sum();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ref(covariance(u, q), Eigen::EigenvaluesOnly);
  const double ref_min = ref.eigenvalues().minCoeff();
  if (!(ref_min > 1e-12 * ref.eigenvalues().cwiseAbs().maxCoeff())) return;  // collinear potentials
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> fit(covariance(u, p), Eigen::EigenvaluesOnly);
  if (fit.eigenvalues().minCoeff() < 1e-9 * ref_min) {
    throw InfeasibleMoments("sample moments lie on the boundary of the achievable moment set "
                            "(fitted covariance is singular)");
  }
}

void require_simple(const PotentialSet& potentials, const char* solver, const char* alternative) {
  if (!potentials.simple()) {
    throw ValidationError(std::string(solver) + " needs simple potentials (T = 0); use " + alternative);
  }
}

void require_sample(const SupportGrid& support, const EmpiricalSample& sample) {
  if (sample.size() != support.size()) {
    throw DimensionError("sample has " + std::to_string(sample.size()) + " frequencies, support has " +
                         std::to_string(support.size()) + " points");
  }
}

Eigen::VectorXd initial_lambda(const PotentialSet& potentials, const SolverConfig& config) {
  if (config.lambda_init) {
    if (config.lambda_init->size() != potentials.J()) throw DimensionError("lambda_init has the wrong length");
    return *config.lambda_init;
  }
  return Eigen::VectorXd::Zero(potentials.J());
}

void fill_summary(SolveReport& report, const ExponentialModel& model, const EmpiricalSample& sample) {
  report.lambda_hat = model.lambda();
  report.alpha_hat = model.alpha();
  report.foc_residual = foc_residuals(model, sample);
  report.entropy = entropy(model);
  report.log_likelihood = log_likelihood(model, sample);
}

// Symmetric positive definite solve with a growing diagonal shift when the
// matrix is not positive definite.
Eigen::VectorXd shifted_solve(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
  const double scale = std::max(a.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  double shift = 0.0;
  for (int attempt = 0; attempt < 60; ++attempt) {
    Eigen::LLT<Eigen::MatrixXd> llt(a + shift * Eigen::MatrixXd::Identity(a.rows(), a.cols()));
    if (llt.info() == Eigen::Success) {
      Eigen::VectorXd x = llt.solve(b);
      if (x.allFinite()) return x;
    }
    shift = shift == 0.0 ? 1e-10 * scale : shift * 10.0;
  }
  return b / scale;
}

std::optional<ExponentialModel> try_normalize(const SupportGrid& support, const PotentialSet& potentials,
                                              const Eigen::VectorXd& lambda, const Eigen::VectorXd& alpha) {
  try {
    return normalize(support, potentials, lambda, alpha);
  } catch (const DomainError&) {
    return std::nullopt;
  }
}

// ------------------------------------------------------------- alpha starts

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

Eigen::VectorXd project(Eigen::VectorXd alpha, const SolverConfig& config) {
  if (config.alpha_lower) alpha = alpha.cwiseMax(*config.alpha_lower);
  if (config.alpha_upper) alpha = alpha.cwiseMin(*config.alpha_upper);
  return alpha;
}

std::vector<Eigen::VectorXd> alpha_starts(const SupportGrid& support, int T, const SolverConfig& config) {
  const Eigen::VectorXd& x = support.points();
  const double spread = config.start_spread > 0.0 ? config.start_spread : 0.25 * (x[x.size() - 1] - x[0]);
  const bool boxed = config.alpha_lower && config.alpha_upper && config.alpha_lower->allFinite() &&
                     config.alpha_upper->allFinite();
  Eigen::VectorXd base = Eigen::VectorXd::Zero(T);
  if (config.alpha_init) {
    if (config.alpha_init->size() != T) throw DimensionError("alpha_init has the wrong length");
    base = *config.alpha_init;
  } else if (boxed) {
    base = 0.5 * (*config.alpha_lower + *config.alpha_upper);
  }
  std::mt19937_64 rng(config.seed);
  std::vector<Eigen::VectorXd> starts;
  starts.push_back(project(base, config));
  for (int k = 1; k < config.num_starts; ++k) {
    Eigen::VectorXd a(T);
    for (int t = 0; t < T; ++t) {
      const double u = uniform01(rng);
      a[t] = boxed ? (*config.alpha_lower)[t] + u * ((*config.alpha_upper)[t] - (*config.alpha_lower)[t])
                   : base[t] + spread * (2.0 * u - 1.0);
    }
    starts.push_back(project(a, config));
  }
  return starts;
}

// ------------------------------------------------- general-form ML, one start

struct GeneralState {
  ExponentialModel model;
  double f;           // -l
  Eigen::VectorXd g;  // gradient of -l
};

std::optional<GeneralState> general_state(const SupportGrid& support, const PotentialSet& potentials,
                                          const EmpiricalSample& sample, const Eigen::VectorXd& theta) {
  const int J = potentials.J();
  auto model = try_normalize(support, potentials, theta.head(J), theta.tail(potentials.T()));
  if (!model) return std::nullopt;
  const double f = -log_likelihood(*model, sample);
  Eigen::VectorXd g = foc_residuals(*model, sample);
  if (!std::isfinite(f) || !g.allFinite()) return std::nullopt;
  return GeneralState{std::move(*model), f, std::move(g)};
}

struct GeneralRun {
  StartResult result;
  std::vector<TraceEntry> trace;
  std::string hessian_mode;
  std::optional<ExponentialModel> model;
};

GeneralRun ml_general_from(const SupportGrid& support, const PotentialSet& potentials, const EmpiricalSample& sample,
                           Eigen::VectorXd theta, const SolverConfig& config) {
  const int J = potentials.J();
  const int T = potentials.T();
  const Eigen::Index n = J + T;
  GeneralRun run;
  auto projected = [&](Eigen::VectorXd th) {
    th.tail(T) = project(th.tail(T), config);
    return th;
  };
  theta = projected(std::move(theta));
  auto state = general_state(support, potentials, sample, theta);
  if (!state) {
    run.result.status = "start outside the potentials' domain";
    return run;
  }

  // Closed-form Hessian only where it agrees with finite differences here.
  const ScalarFn neg_loglik = [&](const Eigen::VectorXd& th) {
    auto s = general_state(support, potentials, sample, th);
    return s ? s->f : std::numeric_limits<double>::quiet_NaN();
  };
  bool analytic = false;
  {
    const Eigen::MatrixXd closed = -ml_hessian_closed_form(state->model, sample);
    const Eigen::MatrixXd fd = fd_hessian(neg_loglik, theta);
    analytic = fd.allFinite() && max_relative_error(closed, fd) <= kBlockAgreementTol;
  }
  run.hessian_mode = analytic ? "analytic" : "quasi-newton";

  Eigen::MatrixXd inv_b = Eigen::MatrixXd::Identity(n, n);
  bool fresh_inverse = true;
  double step_norm = 0.0;
  int iter = 0;
  for (;; ++iter) {
    const double res = inf_norm(state->g);
    run.trace.push_back({state->f, step_norm, res});
    if (res <= config.tol) {
      run.result.converged = true;
      run.result.status = "converged";
      break;
    }
    if (iter >= config.max_iter) {
      run.result.status = "iteration limit";
      break;
    }
    Eigen::VectorXd d;
    if (analytic) {
      d = shifted_solve(-ml_hessian_closed_form(state->model, sample), -state->g);
    } else {
      d = -inv_b * state->g;
    }
    double slope = state->g.dot(d);
    if (!(slope < 0.0)) {
      d = -state->g;
      slope = -state->g.squaredNorm();
    }
    double t = 1.0;
    std::optional<GeneralState> next;
    while (t >= config.min_step) {
      const Eigen::VectorXd trial_theta = projected(theta + t * d);
      auto trial = general_state(support, potentials, sample, trial_theta);
      if (trial) {
        const bool armijo = trial->f <= state->f + config.armijo * t * slope;
        const bool noise = at_noise_floor(t * slope, state->f) && inf_norm(trial->g) < res;
        if (armijo || noise) {
          next = std::move(trial);
          break;
        }
      }
      t *= config.backtrack;
    }
    if (!next) {
      if (!analytic && !fresh_inverse) {
        inv_b.setIdentity();
        fresh_inverse = true;
        continue;
      }
      run.result.status = "line search failed";
      break;
    }
    const Eigen::VectorXd new_theta = projected(theta + t * d);
    const Eigen::VectorXd s = new_theta - theta;
    const Eigen::VectorXd y = next->g - state->g;
    const double sy = s.dot(y);
    if (!analytic && sy > 1e-12 * s.norm() * y.norm()) {
      if (fresh_inverse) {
        inv_b *= sy / y.squaredNorm();
        fresh_inverse = false;
      }
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n) - rho * s * y.transpose();
      inv_b = v * inv_b * v.transpose() + rho * s * s.transpose();
    }
    step_norm = s.norm();
    theta = new_theta;
    state = std::move(next);
  }
  run.result.iterations = iter;
  run.result.lambda = state->model.lambda();
  run.result.alpha = state->model.alpha();
  run.result.objective = -state->f;
  run.result.residual_norm = inf_norm(state->g);
  run.model = std::move(state->model);
  return run;
}

// ------------------------------------------------ MiniMax outer, one start

struct OuterState {
  Eigen::VectorXd alpha;
  Eigen::VectorXd lambda;
  double entropy;
  Eigen::VectorXd envelope;  // d entropy / d alpha via the inner optimality
};

class InnerEntropy {
 public:
  InnerEntropy(const SupportGrid& support, const PotentialSet& potentials, const EmpiricalSample& sample,
               const SolverConfig& config)
      : support_(support), potentials_(potentials), sample_(sample), config_(config) {}

  std::optional<OuterState> at(const Eigen::VectorXd& alpha, const Eigen::VectorXd& lambda0) const {
    try {
      InnerSolution inner = solve_me_dual(support_, potentials_, sample_, alpha, lambda0, config_.inner_tol, config_);
      if (!inner.converged) return std::nullopt;
      ExponentialModel model = normalize(support_, potentials_, inner.lambda, alpha);
      const double h = entropy(model);
      Eigen::VectorXd env = foc_residuals(model, sample_).tail(potentials_.T());
      if (!std::isfinite(h) || !env.allFinite()) return std::nullopt;
      return OuterState{alpha, inner.lambda, h, std::move(env)};
    } catch (const InfeasibleMoments&) {
      return std::nullopt;
    } catch (const DomainError&) {
      return std::nullopt;
    }
  }

 private:
  const SupportGrid& support_;
  const PotentialSet& potentials_;
  const EmpiricalSample& sample_;
  const SolverConfig& config_;
};

struct OuterRun {
  StartResult result;
  std::vector<TraceEntry> trace;
  int fallbacks = 0;
  double max_check_err = 0.0;
  std::optional<OuterState> state;
};

OuterRun minimax_from(const InnerEntropy& inner, int J, const Eigen::VectorXd& alpha0, const SolverConfig& config) {
  const Eigen::Index T = alpha0.size();
  OuterRun run;
  auto state = inner.at(project(alpha0, config), Eigen::VectorXd::Zero(J));
  if (!state) {
    run.result.status = "inner problem infeasible at start";
    return run;
  }

  // Envelope gradient, checked against finite differences of the inner-optimal
  // entropy; the FD value replaces it on disagreement.
  auto gradient = [&](const OuterState& s) {
    const ScalarFn phi = [&](const Eigen::VectorXd& a) {
      auto v = inner.at(a, s.lambda);
      return v ? v->entropy : std::numeric_limits<double>::quiet_NaN();
    };
    const Eigen::VectorXd fd = fd_gradient(phi, s.alpha);
    if (!fd.allFinite()) return s.envelope;
    const double err = max_relative_error(s.envelope, fd);
    run.max_check_err = std::max(run.max_check_err, err);
    if (err > kBlockAgreementTol) {
      ++run.fallbacks;
      return Eigen::VectorXd(fd);
    }
    return s.envelope;
  };

  Eigen::VectorXd g = gradient(*state);
  Eigen::MatrixXd inv_b = Eigen::MatrixXd::Identity(T, T);
  bool fresh_inverse = true;
  double step_norm = 0.0;
  int iter = 0;
  for (;; ++iter) {
    const double res = inf_norm(g);
    run.trace.push_back({state->entropy, step_norm, res});
    if (res <= config.outer_tol) {
      run.result.converged = true;
      run.result.status = "converged";
      break;
    }
    if (iter >= config.max_iter) {
      run.result.status = "iteration limit";
      break;
    }
    Eigen::VectorXd d = -inv_b * g;
    double slope = g.dot(d);
    if (!(slope < 0.0)) {
      d = -g;
      slope = -g.squaredNorm();
    }
    double t = 1.0;
    std::optional<OuterState> next;
    while (t >= config.min_step) {
      auto trial = inner.at(project(state->alpha + t * d, config), state->lambda);
      if (trial) {
        const bool armijo = trial->entropy <= state->entropy + config.armijo * t * slope;
        const bool noise = at_noise_floor(t * slope, state->entropy) && inf_norm(trial->envelope) < res;
        if (armijo || noise) {
          next = std::move(trial);
          break;
        }
      }
      // Infeasible or insufficient decrease: shrink.
      t *= config.backtrack;
    }
    if (!next) {
      if (!fresh_inverse) {
        inv_b.setIdentity();
        fresh_inverse = true;
        continue;
      }
      run.result.status = "line search failed";
      break;
    }
    Eigen::VectorXd g_next = gradient(*next);
    const Eigen::VectorXd s = next->alpha - state->alpha;
    const Eigen::VectorXd y = g_next - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (fresh_inverse) {
        inv_b *= sy / y.squaredNorm();
        fresh_inverse = false;
      }
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd v = Eigen::MatrixXd::Identity(T, T) - rho * s * y.transpose();
      inv_b = v * inv_b * v.transpose() + rho * s * s.transpose();
    }
    step_norm = s.norm();
    state = std::move(next);
    g = std::move(g_next);
  }
  run.result.iterations = iter;
  run.result.lambda = state->lambda;
  run.result.alpha = state->alpha;
  run.result.objective = state->entropy;
  run.result.residual_norm = inf_norm(g);
  run.state = std::move(state);
  return run;
}

}  // namespace

// ------------------------------------------------------------------- config

void SolverConfig::validate() const {
  if (!(tol > 0.0)) throw ValidationError("tol must be positive");
  if (!(inner_tol > 0.0) || !(outer_tol > 0.0)) throw ValidationError("inner_tol and outer_tol must be positive");
  if (inner_tol > outer_tol) throw ValidationError("inner_tol must not exceed outer_tol");
  if (max_iter < 1) throw ValidationError("max_iter must be at least 1");
  if (!(armijo > 0.0 && armijo < 1.0)) throw ValidationError("armijo must lie in (0, 1)");
  if (!(backtrack > 0.0 && backtrack < 1.0)) throw ValidationError("backtrack must lie in (0, 1)");
  if (!(min_step > 0.0)) throw ValidationError("min_step must be positive");
  if (!(lm_init > 0.0)) throw ValidationError("lm_init must be positive");
  if (num_starts < 1) throw ValidationError("num_starts must be at least 1");
  if (stagnation_window < 1) throw ValidationError("stagnation_window must be at least 1");
  if (start_spread < 0.0) throw ValidationError("start_spread must be non-negative");
  if (alpha_lower && alpha_upper) {
    if (alpha_lower->size() != alpha_upper->size()) throw DimensionError("alpha bounds differ in length");
    if ((alpha_lower->array() > alpha_upper->array()).any()) throw ValidationError("alpha_lower exceeds alpha_upper");
  }
}

double SolveReport::residual_norm() const { return inf_norm(foc_residual); }

// ---------------------------------------------------------------- residuals

Eigen::VectorXd foc_residuals(const ExponentialModel& model, const EmpiricalSample& sample) {
  const PotentialTable& tab = model.table();
  const int J = model.potentials().J();
  const int T = model.potentials().T();
  Eigen::VectorXd out(J + T);
  out.head(J) = moment_gap(model, sample);
  if (T > 0) {
    const Eigen::VectorXd diff = sample.freq() - model.probabilities();
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(T);
    for (int j = 0; j < J; ++j) acc += model.lambda()[j] * (tab.first[static_cast<std::size_t>(j)].transpose() * diff);
    out.tail(T) = acc;
  }
  return out;
}

Eigen::VectorXd compact_foc_residuals(const ExponentialModel& model, const EmpiricalSample& sample) {
  const PotentialSet& pots = model.potentials();
  const int J = pots.J();
  const int T = pots.T();
  if (sample.size() != model.support().size()) throw DimensionError("sample and support differ in length");
  // U = sum_j a_{T+j} * u_j(x, a_1..a_T), differentiated in all J + T parameters.
  Node total;
  for (int j = 0; j < J; ++j) {
    Node coef{NodeKind::kParameter};
    coef.param = T + j;
    Node term{NodeKind::kMul};
    term.children = {coef, pots[j].root()};
    if (j == 0) {
      total = std::move(term);
    } else {
      Node sum{NodeKind::kAdd};
      sum.children = {std::move(total), std::move(term)};
      total = std::move(sum);
    }
  }
  const PotentialExpr u_total = PotentialExpr::from_node(std::move(total), T + J);
  Eigen::VectorXd theta(T + J);
  theta << model.alpha(), model.lambda();
  const Eigen::VectorXd diff = sample.freq() - model.probabilities();
  Eigen::VectorXd grad_mean = Eigen::VectorXd::Zero(T + J);
  const Eigen::VectorXd& x = model.support().points();
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    grad_mean += diff[i] * u_total.eval_dual(x[i], theta).first;
  }
  Eigen::VectorXd out(J + T);
  out << grad_mean.tail(J), grad_mean.head(T);
  return out;
}

Eigen::VectorXd me_alpha_conditions(const ExponentialModel& model, const EmpiricalSample& sample) {
  const PotentialTable& tab = model.table();
  const int J = model.potentials().J();
  const int T = model.potentials().T();
  const Eigen::VectorXd& p = model.probabilities();
  const Eigen::VectorXd& r = sample.freq();
  const Eigen::VectorXd& lambda = model.lambda();
  const Eigen::VectorXd log_ratio = model.log_probabilities() - model.support().weights().array().log().matrix();
  Eigen::VectorXd out(T);
  for (int t = 0; t < T; ++t) {
    Eigen::VectorXd u_alpha = Eigen::VectorXd::Zero(p.size());
    for (int j = 0; j < J; ++j) u_alpha += lambda[j] * tab.first[static_cast<std::size_t>(j)].col(t);
    const double mean_u_alpha = p.dot(u_alpha);
    // dp_i/dalpha_t at fixed lambda.
    const Eigen::VectorXd dp = p.cwiseProduct((Eigen::VectorXd::Constant(p.size(), mean_u_alpha) - u_alpha));
    double value = -(dp.dot(log_ratio) + dp.sum());
    for (int j = 0; j < J; ++j) {
      const Eigen::VectorXd du = tab.first[static_cast<std::size_t>(j)].col(t);
      const double dm = r.dot(du);
      const double dmu = p.dot(du) + dp.dot(tab.values.col(j));
      value += lambda[j] * (dm - dmu);
    }
    out[t] = value;
  }
  return out;
}

double me_dual(const ExponentialModel& model, const EmpiricalSample& sample) {
  const Eigen::VectorXd m = model.table().values.transpose() * sample.freq();
  return model.log_norm() + model.lambda().dot(m);
}

// ------------------------------------------------------------ ME dual Newton

InnerSolution solve_me_dual(const SupportGrid& support, const PotentialSet& potentials, const EmpiricalSample& sample,
                            const Eigen::VectorXd& alpha, const Eigen::VectorXd& lambda0, double tol,
                            const SolverConfig& config) {
  require_sample(support, sample);
  ExponentialModel model = normalize(support, potentials, lambda0, alpha);
  const Eigen::MatrixXd& u = model.table().values;
  const Eigen::VectorXd target = u.transpose() * sample.freq();
  auto dual = [&](const ExponentialModel& m) { return m.log_norm() + m.lambda().dot(target); };

  InnerSolution out;
  StagnationMonitor monitor(config.stagnation_window);
  double d_val = dual(model);
  Eigen::VectorXd gap = target - u.transpose() * model.probabilities();
  double step_norm = 0.0;
  int iter = 0;
  for (;; ++iter) {
    const double res = inf_norm(gap);
    out.trace.push_back({d_val, step_norm, res});
    if (res <= tol) {
      out.converged = true;
      break;
    }
    if (iter >= config.max_iter) break;
    const Eigen::MatrixXd cov = covariance(u, model.probabilities());
    Eigen::VectorXd d = cov.ldlt().solve(-gap);
    if (!d.allFinite() || !(gap.dot(d) < 0.0)) d = shifted_solve(cov, -gap);
    const double slope = gap.dot(d);
    double t = 1.0;
    std::optional<ExponentialModel> next;
    Eigen::VectorXd next_gap;
    double next_val = kInf;
    while (t >= config.min_step) {
      ExponentialModel trial = model.with_lambda(model.lambda() + t * d);
      const double v = dual(trial);
      Eigen::VectorXd g = target - u.transpose() * trial.probabilities();
      const bool armijo = v <= d_val + config.armijo * t * slope;
      const bool noise = at_noise_floor(t * slope, d_val) && inf_norm(g) < res;
      if (std::isfinite(v) && (armijo || noise)) {
        next = std::move(trial);
        next_gap = std::move(g);
        next_val = v;
        break;
      }
      t *= config.backtrack;
    }
    if (!next) {
      monitor.update(res, res, 0.0, 1.0, true);
      if (monitor.tripped() || res > 1e3 * tol) {
        throw InfeasibleMoments("ME dual line search collapsed with moment gap " + std::to_string(res));
      }
      break;
    }
    monitor.update(res, inf_norm(next_gap), model.lambda().norm(), next->lambda().norm(), false);
    if (monitor.tripped()) {
      throw InfeasibleMoments("multipliers diverge while the moment gap stagnates; sample moments are not "
                              "attainable by an exponential-form model");
    }
    step_norm = t * d.norm();
    model = std::move(*next);
    gap = std::move(next_gap);
    d_val = next_val;
  }
  if (out.converged) {
    // Full Newton polish while the gap keeps shrinking.
    for (int k = 0; k < 3; ++k) {
      const double res = inf_norm(gap);
      const Eigen::VectorXd d = covariance(u, model.probabilities()).ldlt().solve(-gap);
      if (!d.allFinite()) break;
      ExponentialModel trial = model.with_lambda(model.lambda() + d);
      Eigen::VectorXd g = target - u.transpose() * trial.probabilities();
      const double v = dual(trial);
      if (!std::isfinite(v) || !(inf_norm(g) < res)) break;
      out.trace.push_back({v, d.norm(), inf_norm(g)});
      model = std::move(trial);
      gap = std::move(g);
    }
  }
  out.lambda = model.lambda();
  out.iterations = iter;
  return out;
}

// -------------------------------------------------------------- simple form

SolveReport solve_me_simple(const SupportGrid& support, const PotentialSet& potentials,
                            const EmpiricalSample& sample, const SolverConfig& config) {
  config.validate();
  require_simple(potentials, "solve_me_simple", "solve_minimax_ent for general potentials");
  require_sample(support, sample);
  const Eigen::VectorXd alpha(0);
  InnerSolution inner =
      solve_me_dual(support, potentials, sample, alpha, initial_lambda(potentials, config), config.tol, config);
  ExponentialModel model = normalize(support, potentials, inner.lambda, alpha);
  if (inner.converged) check_interior(model.table().values, model.probabilities(), support.weights());

  SolveReport report;
  report.task = "me";
  report.method = "newton on the convex dual, backtracking line search";
  report.tol = config.tol;
  report.iterations = inner.iterations;
  report.converged = inner.converged;
  report.trace = std::move(inner.trace);
  fill_summary(report, model, sample);
  return report;
}

SolveReport solve_ml_simple(const SupportGrid& support, const PotentialSet& potentials,
                            const EmpiricalSample& sample, const SolverConfig& config) {
  config.validate();
  require_simple(potentials, "solve_ml_simple", "solve_ml_general for general potentials");
  require_sample(support, sample);
  const Eigen::VectorXd alpha(0);
  const Eigen::VectorXd& r = sample.freq();

  // Direct maximization of l(lambda) = sum_i r_i ln(p_i / w_i), with a
  // Levenberg-damped Newton step and a gain-ratio trust update.
  struct State {
    ExponentialModel model;
    double l;
    Eigen::VectorXd grad;  // dl/dlambda = U'(p - r)
  };
  auto evaluate = [&](const ExponentialModel& m) {
    const Eigen::VectorXd& lp = m.log_probabilities();
    const Eigen::VectorXd lw = support.weights().array().log();
    double l = 0.0;
    for (Eigen::Index i = 0; i < r.size(); ++i) {
      if (r[i] > 0.0) l += r[i] * (lp[i] - lw[i]);
    }
    Eigen::VectorXd grad = m.table().values.transpose() * (m.probabilities() - r);
    return State{m, l, std::move(grad)};
  };
  auto neg_hessian = [](const ExponentialModel& m) {
    const Eigen::MatrixXd& u = m.table().values;
    const Eigen::VectorXd& p = m.probabilities();
    const Eigen::VectorXd mean = u.transpose() * p;
    return Eigen::MatrixXd(u.transpose() * p.asDiagonal() * u - mean * mean.transpose());
  };

  State state = evaluate(normalize(support, potentials, initial_lambda(potentials, config), alpha));
  StagnationMonitor monitor(config.stagnation_window);
  SolveReport report;
  report.task = "ml";
  report.method = "levenberg-damped newton ascent on the log-likelihood";
  report.tol = config.tol;
  double damping = config.lm_init;
  double step_norm = 0.0;
  int rejected = 0;
  int iter = 0;
  for (;; ++iter) {
    const double res = inf_norm(state.grad);
    report.trace.push_back({-state.l, step_norm, res});
    if (res <= config.tol) {
      report.converged = true;
      break;
    }
    if (iter >= config.max_iter) break;
    const Eigen::MatrixXd a = neg_hessian(state.model);
    const double scale = std::max(a.diagonal().maxCoeff(), 1e-300);
    std::optional<State> next;
    double delta_norm = 0.0;
    for (int attempt = 0; attempt < 60 && !next; ++attempt) {
      const Eigen::MatrixXd damped = a + damping * scale * Eigen::MatrixXd::Identity(a.rows(), a.cols());
      const Eigen::VectorXd delta = damped.ldlt().solve(state.grad);
      const double predicted = state.grad.dot(delta) - 0.5 * delta.dot(a * delta);
      State trial = evaluate(state.model.with_lambda(state.model.lambda() + delta));
      const double actual = trial.l - state.l;
      const double gain = predicted > 0.0 ? actual / predicted : -1.0;
      const bool noise = at_noise_floor(predicted, state.l) && inf_norm(trial.grad) < res;
      if (delta.allFinite() && std::isfinite(trial.l) && (gain > 1e-4 || noise)) {
        const double c = 2.0 * std::min(gain, 1.0) - 1.0;
        damping *= std::max(1.0 / 3.0, 1.0 - c * c * c);
        damping = std::max(damping, 1e-15);
        delta_norm = delta.norm();
        next = std::move(trial);
      } else {
        damping *= 4.0;
        ++rejected;
      }
    }
    if (!next) {
      monitor.update(res, res, 0.0, 1.0, true);
      if (res > 1e3 * config.tol) throw InfeasibleMoments("ML step collapsed with gradient norm " + std::to_string(res));
      break;
    }
    monitor.update(res, inf_norm(next->grad), state.model.lambda().norm(), next->model.lambda().norm(), false);
    if (monitor.tripped()) {
      throw InfeasibleMoments("ML estimates diverge while the score stagnates; sample moments are not attainable "
                              "by an exponential-form model");
    }
    step_norm = delta_norm;
    state = std::move(*next);
  }
  if (report.converged) {
    // Undamped Newton polish: the damped iteration stops right at tol, which on
    // an ill-conditioned covariance leaves lambda loose by res / eig_min.
    for (int k = 0; k < 3; ++k) {
      const double res = inf_norm(state.grad);
      const Eigen::VectorXd delta = neg_hessian(state.model).ldlt().solve(state.grad);
      if (!delta.allFinite()) break;
      State trial = evaluate(state.model.with_lambda(state.model.lambda() + delta));
      if (!std::isfinite(trial.l) || !(inf_norm(trial.grad) < res)) break;
      report.trace.push_back({-trial.l, delta.norm(), inf_norm(trial.grad)});
      state = std::move(trial);
    }
    check_interior(state.model.table().values, state.model.probabilities(), support.weights());
  }
  report.iterations = iter;
  fill_summary(report, state.model, sample);
  return report;
}

// ------------------------------------------------------------- general form

SolveReport solve_ml_general(const SupportGrid& support, const PotentialSet& potentials,
                             const EmpiricalSample& sample, const SolverConfig& config) {
  config.validate();
  if (potentials.simple()) {
    throw SimplePotentialsError("solve_ml_general needs general potentials (T >= 1); use solve_ml_simple");
  }
  require_sample(support, sample);
  const int J = potentials.J();
  const int T = potentials.T();

  SolveReport report;
  report.task = "ml";
  report.method = "multistart damped newton on the negative log-likelihood";
  report.tol = config.tol;

  std::optional<GeneralRun> best;
  std::vector<std::string> modes;
  const auto starts = alpha_starts(support, T, config);
  for (std::size_t k = 0; k < starts.size(); ++k) {
    Eigen::VectorXd lambda0 = Eigen::VectorXd::Zero(J);
    if (k == 0 && config.lambda_init) {
      lambda0 = initial_lambda(potentials, config);
    } else {
      try {
        lambda0 = solve_me_dual(support, potentials, sample, starts[k], lambda0, config.tol, config).lambda;
      } catch (const Error&) {
        lambda0.setZero();
      }
    }
    Eigen::VectorXd theta(J + T);
    theta << lambda0, starts[k];
    GeneralRun run = ml_general_from(support, potentials, sample, theta, config);
    run.result.start = static_cast<int>(k);
    if (run.result.lambda.size() == 0) {
      run.result.lambda = lambda0;
      run.result.alpha = starts[k];
      run.result.objective = -kInf;
      run.result.residual_norm = kInf;
    }
    report.candidates.push_back(run.result);
    if (!run.model) continue;
    // Converged beats unconverged; then highest likelihood; then smallest residual.
    const bool better =
        !best || (run.result.converged && !best->result.converged) ||
        (run.result.converged == best->result.converged &&
         (run.result.converged ? run.result.objective > best->result.objective
                               : run.result.residual_norm < best->result.residual_norm));
    if (better) best = std::move(run);
  }
  if (!best) {
    throw DomainError("every start of the general-form ML solve left the potentials' domain");
  }
  for (const auto& c : report.candidates) {
    if (c.converged && std::abs(c.objective - best->result.objective) > config.tol) {
      report.multiple_critical_points = true;
    }
  }
  report.hessian_mode = best->hessian_mode;
  report.iterations = best->result.iterations;
  report.converged = best->result.converged;
  report.trace = std::move(best->trace);
  fill_summary(report, *best->model, sample);
  return report;
}

SolveReport solve_minimax_ent(const SupportGrid& support, const PotentialSet& potentials,
                              const EmpiricalSample& sample, const SolverConfig& config) {
  config.validate();
  if (potentials.simple()) {
    throw SimplePotentialsError("MiniMax entropy over simple potentials reduces to the ME task; use solve_me_simple");
  }
  require_sample(support, sample);
  const int J = potentials.J();
  const int T = potentials.T();

  SolveReport report;
  report.task = "minimaxent";
  report.method = "bilevel: inner ME dual newton, outer BFGS on the inner-optimal entropy";
  report.tol = config.outer_tol;

  const InnerEntropy inner(support, potentials, sample, config);
  std::optional<OuterRun> best;
  const auto starts = alpha_starts(support, T, config);
  for (std::size_t k = 0; k < starts.size(); ++k) {
    OuterRun run = minimax_from(inner, J, starts[k], config);
    run.result.start = static_cast<int>(k);
    report.gradient_fallbacks += run.fallbacks;
    report.max_gradient_check_error = std::max(report.max_gradient_check_error, run.max_check_err);
    if (!run.state) {
      run.result.lambda = Eigen::VectorXd::Zero(J);
      run.result.alpha = starts[k];
      run.result.objective = kInf;
      run.result.residual_norm = kInf;
    }
    report.candidates.push_back(run.result);
    if (!run.state) continue;
    // Converged beats unconverged; then lowest outer entropy.
    const bool better =
        !best || (run.result.converged && !best->result.converged) ||
        (run.result.converged == best->result.converged &&
         (run.result.converged ? run.result.objective < best->result.objective
                               : run.result.residual_norm < best->result.residual_norm));
    if (better) best = std::move(run);
  }
  if (!best) {
    throw InfeasibleMoments("the inner ME problem is infeasible at every MiniMax start");
  }
  for (const auto& c : report.candidates) {
    if (c.converged && std::abs(c.objective - best->result.objective) > config.outer_tol) {
      report.multiple_critical_points = true;
    }
  }
  const ExponentialModel model = normalize(support, potentials, best->state->lambda, best->state->alpha);
  report.iterations = best->result.iterations;
  report.converged = best->result.converged;
  report.trace = std::move(best->trace);
  fill_summary(report, model, sample);
  report.outer_stationarity = report.foc_residual.tail(T);
  return report;
}

}  // namespace entropic
