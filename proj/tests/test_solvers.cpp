#include <cmath>
#include <random>

#include "doctest.h"
#include "entropic/errors.hpp"
#include "entropic/solvers.hpp"
#include "oracles.hpp"

using namespace entropic;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) out[i++] = d;
  return out;
}

SupportGrid integers(int lo, int hi) { return SupportGrid::uniform(lo, hi, hi - lo + 1, WeightKind::kUnit); }

EmpiricalSample exact_sample(const SupportGrid& s, const PotentialSet& ps, const Eigen::VectorXd& lambda,
                             const Eigen::VectorXd& alpha) {
  return EmpiricalSample::from_frequencies(normalize(s, ps, lambda, alpha).probabilities());
}

double inf_norm(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

// Per-observation log-likelihood computed from scratch as sum r_i ln p_i.
double loglik_oracle(const SupportGrid& s, const PotentialSet& ps, const EmpiricalSample& r, const Eigen::VectorXd& lam,
                     const Eigen::VectorXd& alpha) {
  Eigen::MatrixXd u(s.size(), ps.J());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    for (int j = 0; j < ps.J(); ++j) u(i, j) = ps[j].eval(s.points()[i], alpha);
  }
  const Eigen::VectorXd p = oracle::probabilities(u, lam, s.weights());
  double l = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (r.freq()[i] > 0) l += r.freq()[i] * std::log(p[i] / s.weights()[i]);
  }
  return l;
}

}  // namespace

TEST_CASE("solver configuration validation") {
  SolverConfig c;
  CHECK_NOTHROW(c.validate());
  c.tol = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = {};
  c.inner_tol = 1e-6;
  c.outer_tol = 1e-8;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = {};
  c.max_iter = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = {};
  c.backtrack = 1.5;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("ME recovers the discrete normal multipliers") {
  const auto s = integers(-2, 2);
  const auto ps = PotentialSet::parse({"x", "x^2"}, 0);
  const auto r = exact_sample(s, ps, vec({0.0, 1.0}), Eigen::VectorXd());
  const SolveReport me = solve_me_simple(s, ps, r);
  CHECK(me.converged);
  CHECK(std::abs(me.lambda_hat[0]) <= 1e-8);
  CHECK(std::abs(me.lambda_hat[1] - 1.0) <= 1e-8);
  CHECK(me.alpha_hat.size() == 0);
  CHECK(me.foc_residual.size() == 2);
  CHECK(me.residual_norm() <= me.tol);
  CHECK(me.task == "me");
}

TEST_CASE("uniform sample gives zero multipliers") {
  const auto s = integers(1, 6);
  const auto ps = PotentialSet::parse({"x", "x^2"}, 0);
  const auto r = EmpiricalSample::from_frequencies(Eigen::VectorXd::Constant(6, 1.0 / 6));
  for (const auto& rep : {solve_me_simple(s, ps, r), solve_ml_simple(s, ps, r)}) {
    CHECK(rep.converged);
    CHECK(inf_norm(rep.lambda_hat) <= 1e-10);
    CHECK(rep.entropy == doctest::Approx(std::log(6.0)).epsilon(1e-12));
  }
}

TEST_CASE("ME solution satisfies the x and x^2 consistency system") {
  const auto s = integers(-2, 2);
  const auto ps = PotentialSet::parse({"x", "x^2"}, 0);
  const Eigen::VectorXd r = vec({0.1, 0.25, 0.3, 0.2, 0.15});
  const SolveReport me = solve_me_simple(s, ps, EmpiricalSample::from_frequencies(r));
  REQUIRE(me.converged);
  // Plug p_i = exp(-l1 x - l2 x^2) / Z back into both equations.
  double z = 0, px = 0, px2 = 0, mx = 0, mx2 = 0;
  for (int i = 0; i < 5; ++i) {
    const double x = i - 2;
    const double e = std::exp(-me.lambda_hat[0] * x - me.lambda_hat[1] * x * x);
    z += e;
    px += e * x;
    px2 += e * x * x;
    mx += r[i] * x;
    mx2 += r[i] * x * x;
  }
  CHECK(std::abs(px / z - mx) <= 1e-10);
  CHECK(std::abs(px2 / z - mx2) <= 1e-10);
}

TEST_CASE("closed form two-point fixture") {
  const auto s = integers(0, 1);
  const auto ps = PotentialSet::parse({"x"}, 0);
  const auto r = EmpiricalSample::from_frequencies(vec({0.75, 0.25}));
  CHECK(std::abs(solve_me_simple(s, ps, r).lambda_hat[0] - std::log(3.0)) <= 1e-10);
  CHECK(std::abs(solve_ml_simple(s, ps, r).lambda_hat[0] - std::log(3.0)) <= 1e-10);
}

TEST_CASE("ME and ML agree on random simple instances") {
  std::mt19937_64 rng(1234);
  const std::vector<std::string> pool = {"x", "x^2", "x^3", "ln(x + 3)"};
  for (int n = 0; n < 30; ++n) {
    const int m = std::uniform_int_distribution<int>(5, 40)(rng);
    const int J = std::uniform_int_distribution<int>(1, 3)(rng);
    const auto s = SupportGrid::uniform(-2, 2, m, WeightKind::kUnit);
    std::vector<std::string> src(pool.begin(), pool.begin() + J);
    const auto ps = PotentialSet::parse(src, 0);
    Eigen::VectorXd lam(J);
    for (int j = 0; j < J; ++j) lam[j] = oracle::uniform(rng, -1, 1);
    const auto r = exact_sample(s, ps, lam, Eigen::VectorXd());
    const SolveReport me = solve_me_simple(s, ps, r);
    const SolveReport ml = solve_ml_simple(s, ps, r);
    REQUIRE(me.converged);
    REQUIRE(ml.converged);
    CHECK(inf_norm(me.lambda_hat - ml.lambda_hat) <= 1e-8);
    CHECK(me.residual_norm() <= 1e-10);
    CHECK(ml.residual_norm() <= 1e-10);
    // Entropy of the ME law equals minus the per-observation log-likelihood.
    CHECK(std::abs(me.entropy + ml.log_likelihood) <= 1e-10);
  }
}

TEST_CASE("ML estimate beats random perturbations") {
  std::mt19937_64 rng(8);
  const auto s = integers(-3, 3);
  const auto ps = PotentialSet::parse({"x", "x^2"}, 0);
  const auto r = EmpiricalSample::from_frequencies(vec({0.05, 0.1, 0.2, 0.3, 0.2, 0.1, 0.05}));
  const SolveReport ml = solve_ml_simple(s, ps, r);
  REQUIRE(ml.converged);
  const double best = loglik_oracle(s, ps, r, ml.lambda_hat, Eigen::VectorXd());
  CHECK(best == doctest::Approx(ml.log_likelihood).epsilon(1e-12));
  for (int n = 0; n < 100; ++n) {
    Eigen::VectorXd d(2);
    d << oracle::uniform(rng, -1, 1), oracle::uniform(rng, -1, 1);
    d *= std::pow(10.0, oracle::uniform(rng, -4, 0));
    CHECK(loglik_oracle(s, ps, r, ml.lambda_hat + d, Eigen::VectorXd()) <= best);
  }
}

TEST_CASE("accepted steps never increase the minimized objective") {
  const auto s = integers(-4, 4);
  const auto ps = PotentialSet::parse({"x", "x^2", "x^3"}, 0);
  const auto r = exact_sample(s, ps, vec({0.3, 0.4, -0.05}), Eigen::VectorXd());
  for (const auto& rep : {solve_me_simple(s, ps, r), solve_ml_simple(s, ps, r)}) {
    REQUIRE(rep.trace.size() >= 2);
    for (std::size_t k = 1; k < rep.trace.size(); ++k) {
      CHECK(rep.trace[k].objective <= rep.trace[k - 1].objective + 1e-15 * (1 + std::abs(rep.trace[k - 1].objective)));
    }
  }
  const auto dn = discretize_continuous("dnorm_general", {-5, 5, 11});
  const auto rr = exact_sample(dn.support, dn.potentials, vec({0.7}), vec({0.3}));
  const SolveReport g = solve_ml_general(dn.support, dn.potentials, rr);
  for (std::size_t k = 1; k < g.trace.size(); ++k) {
    CHECK(g.trace[k].objective <= g.trace[k - 1].objective + 1e-15 * (1 + std::abs(g.trace[k - 1].objective)));
  }
}

TEST_CASE("form checks") {
  const auto s = integers(-2, 2);
  const auto simple = PotentialSet::parse({"x"}, 0);
  const auto general = PotentialSet::parse({"(x - a1)^2"}, 1);
  const auto r = EmpiricalSample::from_frequencies(Eigen::VectorXd::Constant(5, 0.2));
  CHECK_THROWS_AS(solve_me_simple(s, general, r), ValidationError);
  CHECK_THROWS_AS(solve_ml_simple(s, general, r), ValidationError);
  CHECK_THROWS_AS(solve_ml_general(s, simple, r), SimplePotentialsError);
  CHECK_THROWS_AS(solve_minimax_ent(s, simple, r), SimplePotentialsError);
  CHECK_THROWS_AS(solve_me_simple(s, simple, EmpiricalSample::from_frequencies(vec({0.5, 0.5}))), DimensionError);
}

TEST_CASE("moments on the boundary are infeasible") {
  const auto s = integers(0, 2);
  const auto ps = PotentialSet::parse({"x"}, 0);
  const auto corner = EmpiricalSample::from_frequencies(vec({1, 0, 0}));
  CHECK_THROWS_AS(solve_me_simple(s, ps, corner), InfeasibleMoments);
  CHECK_THROWS_AS(solve_ml_simple(s, ps, corner), InfeasibleMoments);
  // x^2 equals x on {0, 1} so (x, x^2) moments sit on a face when the sample has no mass at 2.
  const auto ps2 = PotentialSet::parse({"x", "x^2"}, 0);
  const auto face = EmpiricalSample::from_frequencies(vec({0.5, 0.5, 0.0}));
  CHECK_THROWS_AS(solve_me_simple(s, ps2, face), InfeasibleMoments);
  CHECK(InfeasibleMoments("x").exit_code() == ExitCode::kInfeasibleMoments);
}

TEST_CASE("iteration limit is reported, not thrown") {
  const auto s = integers(-2, 2);
  const auto ps = PotentialSet::parse({"x", "x^2"}, 0);
  const auto r = EmpiricalSample::from_frequencies(vec({0.1, 0.2, 0.4, 0.2, 0.1}));
  SolverConfig c;
  c.max_iter = 1;
  const SolveReport me = solve_me_simple(s, ps, r, c);
  CHECK_FALSE(me.converged);
  CHECK(me.iterations <= 1);
  CHECK(me.residual_norm() > c.tol);
}

TEST_CASE("general-form ML recovers the discrete normal") {
  const auto dn = discretize_continuous("dnorm_general", {-5, 5, 11});
  const auto r = exact_sample(dn.support, dn.potentials, vec({0.7}), vec({0.3}));
  const SolveReport ml = solve_ml_general(dn.support, dn.potentials, r);
  REQUIRE(ml.converged);
  CHECK(std::abs(ml.lambda_hat[0] - 0.7) <= 1e-6);
  CHECK(std::abs(ml.alpha_hat[0] - 0.3) <= 1e-6);
  CHECK(ml.residual_norm() <= 1e-10);
  CHECK(ml.candidates.size() == 8);
  CHECK_FALSE(ml.multiple_critical_points);
  CHECK((ml.hessian_mode == "analytic" || ml.hessian_mode == "quasi-newton"));

  const auto at = normalize(dn.support, dn.potentials, ml.lambda_hat, ml.alpha_hat);
  CHECK(inf_norm(compact_foc_residuals(at, r) - foc_residuals(at, r)) <= 1e-12);

  // Mapped into the simple form the estimates match the simple-form ML.
  const auto ds = discretize_continuous("dnorm_simple", {-5, 5, 11});
  const SolveReport simple = solve_ml_simple(ds.support, ds.potentials, r);
  REQUIRE(simple.converged);
  CHECK(std::abs(-2 * ml.alpha_hat[0] * ml.lambda_hat[0] - simple.lambda_hat[0]) <= 1e-6);
  CHECK(std::abs(ml.lambda_hat[0] - simple.lambda_hat[1]) <= 1e-6);
}

TEST_CASE("general-form ML is deterministic for a seed") {
  const auto dn = discretize_continuous("dnorm_general", {-5, 5, 11});
  const auto r = EmpiricalSample::from_frequencies(vec({0, 0.02, 0.05, 0.1, 0.2, 0.25, 0.18, 0.1, 0.06, 0.03, 0.01}));
  SolverConfig c;
  c.seed = 99;
  const SolveReport a = solve_ml_general(dn.support, dn.potentials, r, c);
  const SolveReport b = solve_ml_general(dn.support, dn.potentials, r, c);
  CHECK(a.lambda_hat == b.lambda_hat);
  CHECK(a.alpha_hat == b.alpha_hat);
  REQUIRE(a.candidates.size() == b.candidates.size());
  for (std::size_t k = 0; k < a.candidates.size(); ++k) CHECK(a.candidates[k].alpha == b.candidates[k].alpha);
}

TEST_CASE("box bounds on alpha are respected") {
  const auto dn = discretize_continuous("dnorm_general", {-5, 5, 11});
  const auto r = exact_sample(dn.support, dn.potentials, vec({0.7}), vec({0.3}));
  SolverConfig c;
  c.alpha_lower = vec({1.0});
  c.alpha_upper = vec({3.0});
  const SolveReport ml = solve_ml_general(dn.support, dn.potentials, r, c);
  CHECK(ml.alpha_hat[0] >= 1.0);
  CHECK(ml.alpha_hat[0] <= 3.0);
  for (const auto& cand : ml.candidates) {
    CHECK(cand.alpha[0] >= 1.0);
    CHECK(cand.alpha[0] <= 3.0);
  }
}

TEST_CASE("separated local maxima are surfaced") {
  // A location model with heavy tails fitted to two unequal clusters has a
  // local maximum near each cluster.
  const auto s = SupportGrid::uniform(-6, 6, 49, WeightKind::kUnit);
  const auto ps = PotentialSet::parse({"ln(1 + (x - a1)^2)"}, 1);
  Eigen::VectorXd r = Eigen::VectorXd::Zero(49);
  r[8] = 0.3;   // x = -4
  r[9] = 0.25;
  r[40] = 0.25;  // x = 4
  r[39] = 0.2;
  SolverConfig c;
  c.lambda_init = vec({2.0});
  c.alpha_lower = vec({-6.0});
  c.alpha_upper = vec({6.0});
  const SolveReport ml = solve_ml_general(s, ps, EmpiricalSample::from_frequencies(r), c);
  CHECK(ml.multiple_critical_points);
  int converged = 0;
  double best = -INFINITY;
  for (const auto& cand : ml.candidates) {
    if (!cand.converged) continue;
    ++converged;
    best = std::max(best, cand.objective);
  }
  CHECK(converged >= 2);
  CHECK(ml.log_likelihood == doctest::Approx(best).epsilon(1e-12));
  // Brute-force profile likelihood over an (alpha, lambda) grid.
  double grid_best = -INFINITY, grid_alpha = 0;
  for (double a = -5; a <= 5; a += 0.25) {
    for (double l = -3; l <= 6; l += 0.01) {
      const double v = loglik_oracle(s, ps, EmpiricalSample::from_frequencies(r), vec({l}), vec({a}));
      if (v > grid_best) {
        grid_best = v;
        grid_alpha = a;
      }
    }
  }
  CHECK(ml.log_likelihood >= grid_best - 1e-12);
  CHECK(std::abs(ml.alpha_hat[0] - grid_alpha) <= 0.25);
}

TEST_CASE("first-order conditions are the gradient of the negative log-likelihood") {
  std::mt19937_64 rng(21);
  const auto s = SupportGrid::uniform(-3, 3, 13, WeightKind::kUnit);
  const auto ps = PotentialSet::parse({"(x - a1)^2", "ln(1 + exp(a2 * x))", "x"}, 2);
  Eigen::VectorXd r = Eigen::VectorXd::Zero(13);
  for (int i = 0; i < 13; ++i) r[i] = oracle::uniform(rng, 0.1, 1.0);
  const auto sample = EmpiricalSample::from_frequencies(r / r.sum());
  for (int n = 0; n < 20; ++n) {
    const Eigen::VectorXd lam = vec({oracle::uniform(rng, 0, 1), oracle::uniform(rng, -1, 1), oracle::uniform(rng, -1, 1)});
    const Eigen::VectorXd alp = vec({oracle::uniform(rng, -1, 1), oracle::uniform(rng, -1, 1)});
    const auto model = normalize(s, ps, lam, alp);
    const Eigen::VectorXd foc = foc_residuals(model, sample);
    Eigen::VectorXd theta(5);
    theta << lam, alp;
    auto neg_l = [&](const Eigen::VectorXd& t) { return -loglik_oracle(s, ps, sample, t.head(3), t.tail(2)); };
    const Eigen::VectorXd g = oracle::gradient(neg_l, theta, 1e-4);
    CHECK(oracle::max_rel_err(foc, g) <= 1e-6);
    CHECK(inf_norm(compact_foc_residuals(model, sample) - foc) <= 1e-12);
    CHECK(inf_norm(me_alpha_conditions(model, sample) - foc.tail(2)) <= 1e-10);
    CHECK(inf_norm(foc.head(3) - moment_gap(model, sample)) == 0.0);
  }
}

TEST_CASE("zero multipliers zero the alpha conditions") {
  const auto s = integers(-2, 2);
  const auto ps = PotentialSet::parse({"(x - a1)^2", "exp(a2 * x)"}, 2);
  const auto r = EmpiricalSample::from_frequencies(vec({0.1, 0.2, 0.3, 0.2, 0.2}));
  for (double a : {-1.0, 0.0, 2.5}) {
    const auto m = normalize(s, ps, Eigen::VectorXd::Zero(2), vec({a, -a}));
    const Eigen::VectorXd foc = foc_residuals(m, r);
    CHECK(foc[2] == 0.0);
    CHECK(foc[3] == 0.0);
  }
}

TEST_CASE("dual gradient is the moment gap and the dual is convex") {
  std::mt19937_64 rng(17);
  const auto s = integers(-3, 3);
  const auto ps = PotentialSet::parse({"x", "x^2", "ln(4 + x)"}, 0);
  const auto r = EmpiricalSample::from_frequencies(vec({0.05, 0.1, 0.2, 0.3, 0.2, 0.1, 0.05}));
  auto dual = [&](const Eigen::VectorXd& lam) { return me_dual(normalize(s, ps, lam, Eigen::VectorXd()), r); };
  for (int n = 0; n < 20; ++n) {
    const Eigen::VectorXd lam = vec({oracle::uniform(rng, -1, 1), oracle::uniform(rng, -0.5, 0.5), oracle::uniform(rng, -1, 1)});
    const Eigen::VectorXd g = oracle::gradient(dual, lam, 1e-4);
    // dD/dlambda = m(u) - mu(u), the moment gap.
    CHECK(oracle::max_rel_err(moment_gap(normalize(s, ps, lam, Eigen::VectorXd()), r), g) <= 1e-6);
  }
  for (int n = 0; n < 1000; ++n) {
    Eigen::VectorXd a(3), b(3);
    for (int j = 0; j < 3; ++j) {
      a[j] = oracle::uniform(rng, -3, 3);
      b[j] = oracle::uniform(rng, -3, 3);
    }
    const double t = oracle::uniform(rng, 0, 1);
    CHECK(dual((1 - t) * a + t * b) <= (1 - t) * dual(a) + t * dual(b) + 1e-10);
  }
}

TEST_CASE("inner dual solve at fixed alpha") {
  const auto dn = discretize_continuous("dnorm_general", {-5, 5, 11});
  const auto r = exact_sample(dn.support, dn.potentials, vec({0.7}), vec({0.3}));
  const InnerSolution in = solve_me_dual(dn.support, dn.potentials, r, vec({0.3}), vec({0.0}), 1e-12, {});
  CHECK(in.converged);
  CHECK(std::abs(in.lambda[0] - 0.7) <= 1e-10);
}

TEST_CASE("MiniMax entropy coincides with general ML on the discrete normal") {
  const auto dn = discretize_continuous("dnorm_general", {-5, 5, 11});
  const auto r = exact_sample(dn.support, dn.potentials, vec({0.7}), vec({0.3}));
  const SolverConfig c;
  const SolveReport mm = solve_minimax_ent(dn.support, dn.potentials, r, c);
  const SolveReport ml = solve_ml_general(dn.support, dn.potentials, r, c);
  REQUIRE(mm.converged);
  CHECK(std::abs(mm.alpha_hat[0] - ml.alpha_hat[0]) <= 1e-6);
  CHECK(std::abs(mm.lambda_hat[0] - ml.lambda_hat[0]) <= 1e-6);
  CHECK(inf_norm(mm.outer_stationarity) <= c.outer_tol);
  CHECK(mm.residual_norm() <= c.outer_tol);
  CHECK(mm.max_gradient_check_error <= 1e-4);
  CHECK(mm.entropy == doctest::Approx(-ml.log_likelihood).epsilon(1e-9));
}

TEST_CASE("MiniMax entropy on a noisy sample") {
  const auto dn = discretize_continuous("dnorm_general", {-5, 5, 11});
  const auto r = EmpiricalSample::from_frequencies(vec({0, 0.02, 0.05, 0.1, 0.2, 0.25, 0.18, 0.1, 0.06, 0.03, 0.01}));
  const SolveReport mm = solve_minimax_ent(dn.support, dn.potentials, r);
  const SolveReport ml = solve_ml_general(dn.support, dn.potentials, r);
  REQUIRE(mm.converged);
  REQUIRE(ml.converged);
  CHECK(std::abs(mm.alpha_hat[0] - ml.alpha_hat[0]) <= 1e-6);
  CHECK(std::abs(mm.lambda_hat[0] - ml.lambda_hat[0]) <= 1e-6);
  // The minimax point is no more entropic than nearby most-entropic laws.
  for (double d : {-0.5, -0.1, -0.01, 0.01, 0.1, 0.5}) {
    const InnerSolution in =
        solve_me_dual(dn.support, dn.potentials, r, mm.alpha_hat.array() + d, mm.lambda_hat, 1e-12, {});
    const double h = entropy(normalize(dn.support, dn.potentials, in.lambda, mm.alpha_hat.array() + d));
    CHECK(mm.entropy <= h + 1e-12);
  }
}
