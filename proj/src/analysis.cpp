#include "entropic/analysis.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <ostream>

#include "entropic/errors.hpp"

namespace entropic {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

// Neville extrapolation to h -> 0 of estimates taken at steps h_i (error
// expansion in h^2). Each extrapolant is scored by its distance to the
// previous column plus the roundoff bound of the smallest step it used.
double richardson(const std::vector<double>& raw_estimates, const std::vector<double>& raw_steps,
                  double roundoff_scale, int order) {
  // Steps that left the function's domain are dropped.
  std::vector<double> estimates, steps;
  for (std::size_t i = 0; i < raw_estimates.size(); ++i) {
    if (std::isfinite(raw_estimates[i])) {
      estimates.push_back(raw_estimates[i]);
      steps.push_back(raw_steps[i]);
    }
  }
  const std::size_t n = estimates.size();
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  if (n == 1) return estimates[0];
  auto roundoff = [&](std::size_t i) { return roundoff_scale * kEps / std::pow(steps[i], order); };
  std::vector<std::vector<double>> table(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) table[i][0] = estimates[i];
  double best = estimates[n - 1];
  double best_err = std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k < n; ++k) {
    for (std::size_t i = k; i < n; ++i) {
      const double zi = steps[i] * steps[i];
      const double zk = steps[i - k] * steps[i - k];
      table[i][k] = (table[i][k - 1] * zk - table[i - 1][k - 1] * zi) / (zk - zi);
      const double err = std::abs(table[i][k] - table[i][k - 1]) + roundoff(i);
      if (std::isfinite(table[i][k]) && err < best_err) {
        best_err = err;
        best = table[i][k];
      }
    }
  }
  return best;
}

double step_scale(double x) { return std::max(1.0, std::abs(x)); }

Eigen::MatrixXd eigen_sym(const Eigen::MatrixXd& m, Eigen::VectorXd* values) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  *values = es.eigenvalues();
  return m;
}

double mean(const Eigen::VectorXd& w, const Eigen::VectorXd& v) { return w.dot(v); }

double cov(const Eigen::VectorXd& p, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double ma = p.dot(a);
  const double mb = p.dot(b);
  return p.dot(((a.array() - ma) * (b.array() - mb)).matrix());
}

// Per-point derivatives of the total potential U = lambda' u(x, alpha).
struct TotalPotential {
  std::vector<Eigen::VectorXd> d_alpha;                 // T entries: dU/dalpha_t at x_i
  std::vector<std::vector<Eigen::VectorXd>> d_alpha2;   // T x T entries: d2U/dalpha_t dalpha_tau at x_i
};

TotalPotential total_potential(const ExponentialModel& model) {
  const PotentialTable& tab = model.table();
  const int J = model.potentials().J();
  const int T = model.potentials().T();
  const Eigen::Index m = tab.values.rows();
  const Eigen::VectorXd& lambda = model.lambda();
  TotalPotential out;
  out.d_alpha.assign(static_cast<std::size_t>(T), Eigen::VectorXd::Zero(m));
  out.d_alpha2.assign(static_cast<std::size_t>(T),
                      std::vector<Eigen::VectorXd>(static_cast<std::size_t>(T), Eigen::VectorXd::Zero(m)));
  for (int t = 0; t < T; ++t) {
    for (int j = 0; j < J; ++j) out.d_alpha[t] += lambda[j] * tab.first[static_cast<std::size_t>(j)].col(t);
    for (int tau = 0; tau < T; ++tau) {
      for (Eigen::Index i = 0; i < m; ++i) {
        double acc = 0.0;
        for (int j = 0; j < J; ++j) acc += lambda[j] * tab.hess(j, i)(t, tau);
        out.d_alpha2[t][tau][i] = acc;
      }
    }
  }
  return out;
}

struct BlockSpec {
  std::string name;
  std::vector<std::pair<int, int>> entries;
};

std::vector<BlockSpec> ml_blocks(int J, int T) {
  std::vector<BlockSpec> blocks(5);
  blocks[0].name = "d2l/dlambda_j^2";
  blocks[1].name = "d2l/dlambda_j dlambda_iota";
  blocks[2].name = "d2l/dalpha_t^2";
  blocks[3].name = "d2l/dalpha_t dalpha_tau";
  blocks[4].name = "d2l/dlambda_j dalpha_t";
  for (int j = 0; j < J; ++j) {
    blocks[0].entries.push_back({j, j});
    for (int k = 0; k < J; ++k) {
      if (k != j) blocks[1].entries.push_back({j, k});
    }
    for (int t = 0; t < T; ++t) {
      blocks[4].entries.push_back({j, J + t});
      blocks[4].entries.push_back({J + t, j});
    }
  }
  for (int t = 0; t < T; ++t) {
    blocks[2].entries.push_back({J + t, J + t});
    for (int tau = 0; tau < T; ++tau) {
      if (tau != t) blocks[3].entries.push_back({J + t, J + tau});
    }
  }
  std::erase_if(blocks, [](const BlockSpec& b) { return b.entries.empty(); });
  return blocks;
}

// Per-block comparison; disagreeing blocks take the FD entries.
Eigen::MatrixXd adjudicate(const Eigen::MatrixXd& closed, const Eigen::MatrixXd& fd,
                           const std::vector<BlockSpec>& specs, std::vector<BlockDiscrepancy>& out) {
  Eigen::MatrixXd adopted = closed;
  for (const auto& spec : specs) {
    double worst = 0.0;
    for (auto [r, c] : spec.entries) {
      worst = std::max(worst, std::abs(closed(r, c) - fd(r, c)) / (1.0 + std::abs(fd(r, c))));
    }
    const bool agrees = worst <= kBlockAgreementTol;
    out.push_back({spec.name, worst, agrees});
    if (!agrees) {
      for (auto [r, c] : spec.entries) adopted(r, c) = fd(r, c);
    }
  }
  return 0.5 * (adopted + adopted.transpose());
}

void finish(HessianReport& report) {
  eigen_sym(report.matrix, &report.eigenvalues);
  report.definiteness = classify(report.eigenvalues);
  report.fd_max_rel_err = 0.0;
  for (const auto& b : report.blocks) report.fd_max_rel_err = std::max(report.fd_max_rel_err, b.max_rel_err);
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

// ------------------------------------------------------- finite differences

Eigen::VectorXd fd_gradient(const ScalarFn& f, const Eigen::VectorXd& x, const std::vector<double>& steps) {
  const double scale = std::abs(f(x)) + 1.0;
  Eigen::VectorXd g(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double s = step_scale(x[k]);
    std::vector<double> est;
    std::vector<double> hs;
    for (double step : steps) {
      const double h = step * s;
      Eigen::VectorXd xp = x, xm = x;
      xp[k] += h;
      xm[k] -= h;
      est.push_back((f(xp) - f(xm)) / (2.0 * h));
      hs.push_back(h);
    }
    g[k] = richardson(est, hs, scale, 1);
  }
  return g;
}

Eigen::MatrixXd fd_jacobian(const VectorFn& g, const Eigen::VectorXd& x, const std::vector<double>& steps) {
  const Eigen::VectorXd g0 = g(x);
  const double scale = (g0.size() ? g0.cwiseAbs().maxCoeff() : 0.0) + 1.0;
  Eigen::MatrixXd jac(g0.size(), x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double s = step_scale(x[k]);
    std::vector<Eigen::VectorXd> est;
    std::vector<double> hs;
    for (double step : steps) {
      const double h = step * s;
      Eigen::VectorXd xp = x, xm = x;
      xp[k] += h;
      xm[k] -= h;
      est.push_back((g(xp) - g(xm)) / (2.0 * h));
      hs.push_back(h);
    }
    for (Eigen::Index r = 0; r < g0.size(); ++r) {
      std::vector<double> col;
      for (const auto& e : est) col.push_back(e[r]);
      jac(r, k) = richardson(col, hs, scale, 1);
    }
  }
  return jac;
}

Eigen::MatrixXd fd_hessian(const ScalarFn& f, const Eigen::VectorXd& x, const std::vector<double>& steps) {
  const Eigen::Index n = x.size();
  const double f0 = f(x);
  const double scale = 4.0 * (std::abs(f0) + 1.0);
  Eigen::MatrixXd h(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = a; b < n; ++b) {
      std::vector<double> est;
      std::vector<double> hs;
      for (double step : steps) {
        // Second differences carry roundoff eps/h^2, so they use sqrt(step).
        const double ha = std::sqrt(step) * step_scale(x[a]);
        const double hb = std::sqrt(step) * step_scale(x[b]);
        double v;
        if (a == b) {
          Eigen::VectorXd xp = x, xm = x;
          xp[a] += ha;
          xm[a] -= ha;
          v = (f(xp) - 2.0 * f0 + f(xm)) / (ha * ha);
        } else {
          auto at = [&](double sa, double sb) {
            Eigen::VectorXd y = x;
            y[a] += sa * ha;
            y[b] += sb * hb;
            return f(y);
          };
          v = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * ha * hb);
        }
        est.push_back(v);
        hs.push_back(std::sqrt(ha * hb));
      }
      h(a, b) = h(b, a) = richardson(est, hs, scale, 2);
    }
  }
  return h;
}

double max_relative_error(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& fd) {
  if (analytic.rows() != fd.rows() || analytic.cols() != fd.cols()) {
    throw DimensionError("analytic and finite-difference shapes differ");
  }
  if (analytic.size() == 0) return 0.0;
  return ((analytic - fd).array().abs() / (1.0 + fd.array().abs())).maxCoeff();
}

FdCheck fd_check_gradient(const ScalarFn& f, const Eigen::VectorXd& x, const Eigen::VectorXd& analytic,
                          const std::vector<double>& steps) {
  Eigen::VectorXd fd = fd_gradient(f, x, steps);
  return {max_relative_error(analytic, fd), fd};
}

FdCheck fd_check_jacobian(const VectorFn& g, const Eigen::VectorXd& x, const Eigen::MatrixXd& analytic,
                          const std::vector<double>& steps) {
  Eigen::MatrixXd fd = fd_jacobian(g, x, steps);
  return {max_relative_error(analytic, fd), fd};
}

FdCheck fd_check_hessian(const ScalarFn& f, const Eigen::VectorXd& x, const Eigen::MatrixXd& analytic,
                         const std::vector<double>& steps) {
  Eigen::MatrixXd fd = fd_hessian(f, x, steps);
  return {max_relative_error(analytic, fd), fd};
}

// ----------------------------------------------------------------- hessians

std::string to_string(Definiteness d) {
  switch (d) {
    case Definiteness::kNegativeDefinite: return "negative-definite";
    case Definiteness::kPositiveDefinite: return "positive-definite";
    case Definiteness::kSemidefinite: return "semidefinite";
    case Definiteness::kIndefinite: return "indefinite";
  }
  return "indefinite";
}

Definiteness classify(const Eigen::VectorXd& eigenvalues) {
  if (eigenvalues.size() == 0) return Definiteness::kSemidefinite;
  const double thresh = 1e-10 * eigenvalues.cwiseAbs().maxCoeff();
  const bool any_pos = (eigenvalues.array() > thresh).any();
  const bool any_neg = (eigenvalues.array() < -thresh).any();
  const bool any_zero = (eigenvalues.array().abs() <= thresh).any();
  if (any_pos && any_neg) return Definiteness::kIndefinite;
  if (any_zero) return Definiteness::kSemidefinite;
  return any_neg ? Definiteness::kNegativeDefinite : Definiteness::kPositiveDefinite;
}

bool HessianReport::all_blocks_agree() const {
  return std::all_of(blocks.begin(), blocks.end(), [](const BlockDiscrepancy& b) { return b.agrees; });
}

Eigen::MatrixXd ml_hessian_closed_form(const ExponentialModel& model, const EmpiricalSample& sample) {
  const PotentialTable& tab = model.table();
  const int J = model.potentials().J();
  const int T = model.potentials().T();
  const Eigen::VectorXd& p = model.probabilities();
  const Eigen::VectorXd& r = sample.freq();
  const Eigen::VectorXd& lambda = model.lambda();
  const TotalPotential U = total_potential(model);
  auto u = [&](int j) { return Eigen::VectorXd(tab.values.col(j)); };
  auto du = [&](int j, int t) { return Eigen::VectorXd(tab.first[static_cast<std::size_t>(j)].col(t)); };

  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(J + T, J + T);
  for (int j = 0; j < J; ++j) {
    h(j, j) = -cov(p, u(j), u(j));
    for (int k = j + 1; k < J; ++k) h(j, k) = h(k, j) = -cov(p, u(j), u(k));
  }
  for (int t = 0; t < T; ++t) {
    const Eigen::VectorXd& ua = U.d_alpha[t];
    const Eigen::VectorXd& uaa = U.d_alpha2[t][t];
    h(J + t, J + t) = -(cov(p, ua, ua) + mean(r, uaa) - mean(p, uaa));
    for (int tau = t + 1; tau < T; ++tau) {
      const Eigen::VectorXd& u_tt = U.d_alpha2[t][tau];
      double v = -mean(p, ua) * mean(p, U.d_alpha[tau]);
      for (int j = 0; j < J; ++j) v -= lambda[j] * mean(p, du(j, t).cwiseProduct(u_tt));
      v += -mean(r, u_tt) + mean(p, u_tt);
      h(J + t, J + tau) = h(J + tau, J + t) = v;
    }
    for (int j = 0; j < J; ++j) {
      double v = -lambda[j] * cov(p, u(j), du(j, t));
      for (int k = 0; k < J; ++k) {
        if (k != j) v -= lambda[k] * mean(p, u(j).cwiseProduct(du(k, t)));
      }
      v += -mean(r, du(j, t)) + mean(p, du(j, t));
      h(j, J + t) = h(J + t, j) = v;
    }
  }
  return h;
}

HessianReport hessian_ml_simple(const ExponentialModel& model, const EmpiricalSample& sample) {
  const int J = model.potentials().J();
  const Eigen::VectorXd& p = model.probabilities();
  const Eigen::MatrixXd& u = model.table().values;
  HessianReport report;
  report.task = "ml_simple";
  report.closed_form.resize(J, J);
  for (int j = 0; j < J; ++j) {
    for (int k = 0; k < J; ++k) report.closed_form(j, k) = -cov(p, u.col(j), u.col(k));
  }
  const ScalarFn loglik = [&](const Eigen::VectorXd& lambda) {
    return log_likelihood(model.with_lambda(lambda), sample);
  };
  report.fd_matrix = fd_hessian(loglik, model.lambda());
  std::vector<BlockSpec> specs = ml_blocks(J, 0);
  report.matrix = adjudicate(report.closed_form, report.fd_matrix, specs, report.blocks);
  finish(report);
  return report;
}

HessianReport hessian_ml_general(const ExponentialModel& model, const EmpiricalSample& sample) {
  const int J = model.potentials().J();
  const int T = model.potentials().T();
  HessianReport report;
  report.task = "ml_general";
  report.closed_form = ml_hessian_closed_form(model, sample);
  const SupportGrid& support = model.support();
  const PotentialSet& pots = model.potentials();
  const ScalarFn loglik = [&](const Eigen::VectorXd& theta) {
    try {
      return log_likelihood(normalize(support, pots, theta.head(J), theta.tail(T)), sample);
    } catch (const DomainError&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  };
  Eigen::VectorXd theta(J + T);
  theta << model.lambda(), model.alpha();
  report.fd_matrix = fd_hessian(loglik, theta);
  report.matrix = adjudicate(report.closed_form, report.fd_matrix, ml_blocks(J, T), report.blocks);
  finish(report);
  return report;
}

double lagrangean(const ExponentialModel& model, const EmpiricalSample& sample) {
  return entropy(model) + model.lambda().dot(moment_gap(model, sample));
}

HessianReport hessian_me(const ExponentialModel& model, const EmpiricalSample& sample) {
  const int J = model.potentials().J();
  const int T = model.potentials().T();
  const Eigen::VectorXd& p = model.probabilities();
  const Eigen::VectorXd& r = sample.freq();
  const Eigen::VectorXd& w = model.support().weights();
  HessianReport report;
  report.task = "me";
  report.p_block = -p.cwiseInverse();

  // d2L/dp_i^2 by differencing L in p_i = p0 (1 + s), other p fixed.
  {
    const Eigen::VectorXd ulam = model.table().values * model.lambda();
    double worst = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double p0 = p[i];
      const ScalarFn part = [&](const Eigen::VectorXd& s) {
        const double pi = p0 * (1.0 + s[0]);
        return -pi * std::log(pi / w[i]) - ulam[i] * pi;
      };
      const double fd = fd_hessian(part, Eigen::VectorXd::Zero(1))(0, 0) / (p0 * p0);
      worst = std::max(worst, std::abs(report.p_block[i] - fd) / (1.0 + std::abs(fd)));
    }
    report.blocks.push_back({"d2L/dp_i^2", worst, worst <= kBlockAgreementTol});
  }

  if (T == 0) {
    report.matrix = report.p_block.asDiagonal();
    report.closed_form = report.matrix;
    finish(report);
    return report;
  }

  const TotalPotential U = total_potential(model);
  report.closed_form.resize(T, T);
  for (int t = 0; t < T; ++t) {
    for (int tau = t; tau < T; ++tau) {
      const Eigen::VectorXd& u_tt = U.d_alpha2[t][tau];
      const double v = mean(r, u_tt) - mean(p, u_tt) + cov(p, U.d_alpha[t], U.d_alpha[tau]);
      report.closed_form(t, tau) = report.closed_form(tau, t) = v;
    }
  }
  const SupportGrid& support = model.support();
  const PotentialSet& pots = model.potentials();
  const Eigen::VectorXd lambda = model.lambda();
  const ScalarFn lag = [&](const Eigen::VectorXd& alpha) {
    try {
      return lagrangean(normalize(support, pots, lambda, alpha), sample);
    } catch (const DomainError&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  };
  report.fd_matrix = fd_hessian(lag, model.alpha());
  std::vector<BlockSpec> specs(2);
  specs[0].name = "d2L/dalpha_t^2";
  specs[1].name = "d2L/dalpha_t dalpha_tau";
  for (int t = 0; t < T; ++t) {
    specs[0].entries.push_back({t, t});
    for (int tau = 0; tau < T; ++tau) {
      if (tau != t) specs[1].entries.push_back({t, tau});
    }
  }
  std::erase_if(specs, [](const BlockSpec& b) { return b.entries.empty(); });
  report.matrix = adjudicate(report.closed_form, report.fd_matrix, specs, report.blocks);

  // Curvature of alpha -> H(p*(alpha)): the Schur complement of the
  // negative log-likelihood Hessian onto alpha.
  const Eigen::MatrixXd h = hessian_ml_general(model, sample).matrix;
  const Eigen::MatrixXd h_ll = h.topLeftCorner(J, J);
  const Eigen::MatrixXd h_la = h.topRightCorner(J, T);
  const Eigen::MatrixXd h_aa = h.bottomRightCorner(T, T);
  report.profile_alpha_block = -(h_aa - h_la.transpose() * h_ll.ldlt().solve(h_la));
  finish(report);
  return report;
}

double tv_to_uniform(const ExponentialModel& model) {
  const Eigen::VectorXd& w = model.support().weights();
  return 0.5 * (model.probabilities() - w / w.sum()).cwiseAbs().sum();
}

// ------------------------------------------------------------------- sweeps

std::vector<SweepRow> entropy_sweep(const SupportGrid& support, const PotentialSet& potentials,
                                    const EmpiricalSample& sample, const std::vector<Eigen::VectorXd>& alpha_grid,
                                    const SolverConfig& config) {
  config.validate();
  const int J = potentials.J();
  std::vector<SweepRow> rows;
  rows.reserve(alpha_grid.size());
  for (const auto& alpha : alpha_grid) {
    SweepRow row;
    row.alpha = alpha;
    row.lambda = Eigen::VectorXd::Constant(J, std::numeric_limits<double>::quiet_NaN());
    row.entropy = row.log_likelihood = row.tv_uniform = std::numeric_limits<double>::quiet_NaN();
    try {
      InnerSolution inner =
          solve_me_dual(support, potentials, sample, alpha, Eigen::VectorXd::Zero(J), config.inner_tol, config);
      if (inner.converged) {
        const ExponentialModel model = normalize(support, potentials, inner.lambda, alpha);
        row.lambda = inner.lambda;
        row.entropy = entropy(model);
        row.log_likelihood = log_likelihood(model, sample);
        row.tv_uniform = tv_to_uniform(model);
        row.feasible = true;
      }
    } catch (const InfeasibleMoments&) {
    } catch (const DomainError&) {
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows, int J, int T) {
  for (int t = 0; t < T; ++t) os << "alpha" << t + 1 << ',';
  for (int j = 0; j < J; ++j) os << "lambda" << j + 1 << ',';
  os << "entropy,loglik,feasible\r\n";
  for (const auto& row : rows) {
    for (int t = 0; t < T; ++t) os << format_double(row.alpha[t]) << ',';
    for (int j = 0; j < J; ++j) os << (row.feasible ? format_double(row.lambda[j]) : "") << ',';
    if (row.feasible) {
      os << format_double(row.entropy) << ',' << format_double(row.log_likelihood) << ",true\r\n";
    } else {
      os << ",,false\r\n";
    }
  }
}

}  // namespace entropic
