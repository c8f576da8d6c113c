#include <cmath>
#include <random>

#include "doctest.h"
#include "entropic/errors.hpp"
#include "entropic/model.hpp"
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

Eigen::VectorXd random_simplex(std::mt19937_64& rng, Eigen::Index m) {
  Eigen::VectorXd r(m);
  for (Eigen::Index i = 0; i < m; ++i) r[i] = -std::log(oracle::uniform(rng, 1e-12, 1.0));
  return r / r.sum();
}

// Direct evaluation of every potential at every support point.
Eigen::MatrixXd table_oracle(const SupportGrid& s, const PotentialSet& ps, const Eigen::VectorXd& alpha) {
  Eigen::MatrixXd u(s.size(), ps.J());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    for (int j = 0; j < ps.J(); ++j) u(i, j) = ps[j].eval(s.points()[i], alpha);
  }
  return u;
}

}  // namespace

TEST_CASE("support grid validation") {
  CHECK_THROWS_AS(SupportGrid::with_unit_weights(vec({1.0})), InvalidGrid);
  CHECK_THROWS_AS(SupportGrid::with_unit_weights(vec({0.0, 0.0, 1.0})), InvalidGrid);
  CHECK_THROWS_AS(SupportGrid::with_unit_weights(vec({2.0, 1.0})), InvalidGrid);
  CHECK_THROWS_AS(SupportGrid(vec({0.0, 1.0}), vec({1.0, 0.0})), InvalidGrid);
  CHECK_THROWS_AS(SupportGrid(vec({0.0, 1.0}), vec({1.0})), InvalidGrid);
  CHECK_THROWS_AS(SupportGrid::with_unit_weights(vec({0.0, NAN})), InvalidGrid);
  CHECK_THROWS_AS(SupportGrid::uniform(1.0, 1.0, 5, WeightKind::kUnit), InvalidGrid);
  CHECK_THROWS_AS(SupportGrid::uniform(0.0, 1.0, 1, WeightKind::kUnit), InvalidGrid);
  CHECK(InvalidGrid("x").exit_code() == ExitCode::kValidation);
}

TEST_CASE("uniform grids and trapezoid weights") {
  const auto g = SupportGrid::uniform(-5, 5, 11, WeightKind::kUnit);
  for (int i = 0; i < 11; ++i) CHECK(g.points()[i] == -5 + i);
  CHECK(g.unit_weights());
  const auto t = SupportGrid::uniform(0.0, 1.0, 5, WeightKind::kTrapezoid);
  CHECK_FALSE(t.unit_weights());
  CHECK(t.weights()[0] == doctest::Approx(0.125));
  CHECK(t.weights()[2] == doctest::Approx(0.25));
  CHECK(t.weights().sum() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("potential set validation") {
  CHECK_THROWS_AS(PotentialSet({}, 0), ValidationError);
  CHECK_THROWS_AS(PotentialSet({parse_potential("x - a1", 1)}, 2), UnknownSymbol);
  const auto ps = PotentialSet::parse({"x", "x^2"}, 0);
  CHECK(ps.J() == 2);
  CHECK(ps.simple());
  CHECK(ps.sources() == std::vector<std::string>{"x", "x^2"});
}

TEST_CASE("zero multipliers give the uniform law") {
  const auto s = integers(1, 7);
  const auto m = normalize(s, PotentialSet::parse({"x", "x^2"}, 0), Eigen::VectorXd::Zero(2), Eigen::VectorXd());
  for (Eigen::Index i = 0; i < 7; ++i) CHECK(m.probabilities()[i] == doctest::Approx(1.0 / 7).epsilon(1e-15));
  CHECK(m.log_norm() == doctest::Approx(std::log(7.0)));
}

TEST_CASE("discrete normal probabilities") {
  const auto s = integers(-2, 2);
  const auto m = normalize(s, PotentialSet::parse({"(x - a1)^2"}, 1), vec({1.0}), vec({0.0}));
  const Eigen::VectorXd& p = m.probabilities();
  double z = 0;
  for (int x = -2; x <= 2; ++x) z += std::exp(-double(x * x));
  for (int i = 0; i < 5; ++i) {
    const double x = i - 2;
    CHECK(p[i] == doctest::Approx(std::exp(-x * x) / z).epsilon(1e-14));
  }
  Eigen::Index mode;
  p.maxCoeff(&mode);
  CHECK(mode == 2);
}

TEST_CASE("extreme multipliers stay finite and normalized") {
  const auto s = integers(0, 1);
  const auto m = normalize(s, PotentialSet::parse({"x"}, 0), vec({1000.0}), Eigen::VectorXd());
  CHECK(m.probabilities().allFinite());
  CHECK(m.probabilities().sum() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(m.probabilities()[0] == 1.0);
  // ln p_1 = -1000 - ln(1 + e^-1000), which is -1000 in double precision.
  CHECK(m.log_probabilities()[1] == doctest::Approx(-1000.0).epsilon(1e-15));
  CHECK(std::isfinite(m.log_norm()));
  const auto neg = normalize(s, PotentialSet::parse({"x"}, 0), vec({-1000.0}), Eigen::VectorXd());
  CHECK(neg.probabilities()[1] == 1.0);
  CHECK(neg.log_norm() == doctest::Approx(1000.0));
}

TEST_CASE("normalization holds for random parameters") {
  std::mt19937_64 rng(11);
  const auto s = SupportGrid::uniform(-3, 3, 25, WeightKind::kUnit);
  const auto ps = PotentialSet::parse({"(x - a1)^2", "x", "ln(1 + exp(a2 * x))"}, 2);
  for (int n = 0; n < 1000; ++n) {
    const Eigen::VectorXd lam = vec({oracle::uniform(rng, 0, 3), oracle::uniform(rng, -3, 3), oracle::uniform(rng, -3, 3)});
    const Eigen::VectorXd alp = vec({oracle::uniform(rng, -2, 2), oracle::uniform(rng, -2, 2)});
    const auto m = normalize(s, ps, lam, alp);
    REQUIRE(std::abs(m.probabilities().sum() - 1.0) <= 1e-12);
    REQUIRE((m.probabilities().array() > 0).all());
    const Eigen::VectorXd ref = oracle::probabilities(table_oracle(s, ps, alp), lam, s.weights());
    REQUIRE((m.probabilities() - ref).cwiseAbs().maxCoeff() <= 1e-14);
  }
}

TEST_CASE("discrete normal reparameterization gives identical laws") {
  std::mt19937_64 rng(3);
  const auto s = integers(-5, 5);
  const auto simple = PotentialSet::parse({"x", "x^2"}, 0);
  const auto general = PotentialSet::parse({"(x - a1)^2"}, 1);
  for (int n = 0; n < 100; ++n) {
    const double lam = oracle::uniform(rng, 0.05, 3.0);
    const double a = oracle::uniform(rng, -4.0, 4.0);
    const auto ms = normalize(s, simple, vec({-2 * a * lam, lam}), Eigen::VectorXd());
    const auto mg = normalize(s, general, vec({lam}), vec({a}));
    CHECK((ms.probabilities() - mg.probabilities()).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("with_lambda renormalizes at the same alpha") {
  const auto s = integers(-2, 2);
  const auto ps = PotentialSet::parse({"(x - a1)^2"}, 1);
  const auto m = normalize(s, ps, vec({0.5}), vec({0.25}));
  const auto m2 = m.with_lambda(vec({2.0}));
  const auto ref = normalize(s, ps, vec({2.0}), vec({0.25}));
  CHECK(m2.alpha()[0] == 0.25);
  CHECK((m2.probabilities() - ref.probabilities()).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(m.with_lambda(vec({1.0, 2.0})), DimensionError);
  CHECK_THROWS_AS(normalize(s, ps, vec({1.0}), Eigen::VectorXd()), DimensionError);
  CHECK_THROWS_AS(normalize(integers(-1, 1), PotentialSet::parse({"ln(x)"}, 0), vec({1.0}), Eigen::VectorXd()),
                  DomainError);
}

TEST_CASE("tabulated partials") {
  const auto s = integers(-1, 1);
  const auto t = tabulate(s, PotentialSet::parse({"(x - a1)^2", "x * a1 * a2"}, 2), vec({0.5, 2.0}));
  CHECK(t.values.rows() == 3);
  CHECK(t.values(0, 0) == 2.25);
  CHECK(t.first[0](0, 0) == 3.0);
  CHECK(t.first[1](2, 1) == 0.5);
  CHECK(t.hess(0, 1)(0, 0) == 2.0);
  CHECK(t.hess(1, 2)(0, 1) == 1.0);
}

TEST_CASE("model moments") {
  const auto s = integers(1, 3);
  const auto x = parse_potential("x", 0);
  const auto uni = normalize(s, PotentialSet::parse({"x"}, 0), vec({0.0}), Eigen::VectorXd());
  CHECK(model_moment(uni, x) == doctest::Approx(2.0).epsilon(1e-15));

  const auto sym = normalize(integers(-4, 4), PotentialSet::parse({"(x - a1)^2"}, 1), vec({1.0}), vec({0.0}));
  CHECK(std::abs(model_moment(sym, parse_potential("x - 0 * a1", 1))) <= 1e-15);

  const auto cat = discretize_continuous("gamma", {0.01, 30, 500});
  const auto g = normalize(cat.support, cat.potentials, vec({0.5, -1.0}), Eigen::VectorXd());
  long double acc = 0;
  const Eigen::VectorXd p = oracle::probabilities(table_oracle(cat.support, cat.potentials, Eigen::VectorXd()),
                                                  vec({0.5, -1.0}), cat.support.weights());
  for (Eigen::Index i = 0; i < p.size(); ++i) acc += p[i] * std::log(static_cast<long double>(cat.support.points()[i]));
  CHECK(model_moment(g, parse_potential("ln(x)", 0)) == doctest::Approx(static_cast<double>(acc)).epsilon(1e-12));
}

TEST_CASE("sample moments") {
  const auto s = integers(-1, 1);
  const auto none = Eigen::VectorXd();
  CHECK(sample_moment(EmpiricalSample::from_frequencies(vec({0, 1, 0})), s, parse_potential("x", 0), none) == 0.0);
  CHECK(sample_moment(EmpiricalSample::from_frequencies(vec({0, 0, 1})), s, parse_potential("x", 0), none) == 1.0);
  CHECK(sample_moment(EmpiricalSample::from_frequencies(vec({1.0 / 3, 1.0 / 3, 1.0 / 3})), s,
                      parse_potential("x^2", 0), none) == doctest::Approx(2.0 / 3).epsilon(1e-15));
  std::mt19937_64 rng(5);
  const auto grid = SupportGrid::uniform(0.5, 4.0, 15, WeightKind::kUnit);
  const auto e = parse_potential("ln(x) * (x - a1)^3", 1);
  for (int n = 0; n < 20; ++n) {
    const Eigen::VectorXd r = random_simplex(rng, 15);
    const Eigen::VectorXd a = vec({oracle::uniform(rng, -1, 1)});
    double ref = 0;
    for (int i = 0; i < 15; ++i) {
      const double x = grid.points()[i];
      ref += r[i] * std::log(x) * std::pow(x - a[0], 3);
    }
    CHECK(sample_moment(EmpiricalSample::from_frequencies(r), grid, e, a) == doctest::Approx(ref).epsilon(1e-13));
  }
  CHECK_THROWS_AS(sample_moment(EmpiricalSample::from_frequencies(vec({0.5, 0.5})), s, parse_potential("x", 0), none),
                  DimensionError);
}

TEST_CASE("moment gaps") {
  std::mt19937_64 rng(9);
  const auto s = integers(-3, 3);
  const auto ps = PotentialSet::parse({"x", "x^2", "ln(4 + x)"}, 0);
  const auto m = normalize(s, ps, vec({0.2, 0.3, -0.5}), Eigen::VectorXd());
  const auto same = EmpiricalSample::from_frequencies(m.probabilities());
  CHECK(moment_gap(m, same).cwiseAbs().maxCoeff() <= 1e-12);

  // The x and x^2 equations of the discrete normal system.
  const auto dn = normalize(integers(-2, 2), PotentialSet::parse({"x", "x^2"}, 0), vec({-0.4, 0.6}), Eigen::VectorXd());
  const Eigen::VectorXd r = vec({0.1, 0.2, 0.3, 0.25, 0.15});
  double mx = 0, mx2 = 0, px = 0, px2 = 0;
  for (int i = 0; i < 5; ++i) {
    const double x = i - 2;
    mx += r[i] * x;
    mx2 += r[i] * x * x;
    px += dn.probabilities()[i] * x;
    px2 += dn.probabilities()[i] * x * x;
  }
  const Eigen::VectorXd gap = moment_gap(dn, EmpiricalSample::from_frequencies(r));
  CHECK(gap[0] == doctest::Approx(mx - px).epsilon(1e-14));
  CHECK(gap[1] == doctest::Approx(mx2 - px2).epsilon(1e-14));

  for (int n = 0; n < 20; ++n) {
    const Eigen::VectorXd rr = random_simplex(rng, 7);
    const Eigen::VectorXd g = moment_gap(m, EmpiricalSample::from_frequencies(rr));
    const Eigen::MatrixXd u = table_oracle(s, ps, Eigen::VectorXd());
    const Eigen::VectorXd ref = u.transpose() * rr - u.transpose() * m.probabilities();
    CHECK((g - ref).cwiseAbs().maxCoeff() <= 1e-13);
  }
  CHECK_THROWS_AS(moment_gap(m, EmpiricalSample::from_frequencies(vec({0.5, 0.5}))), DimensionError);
}

TEST_CASE("entropy") {
  const auto uni = normalize(integers(1, 5), PotentialSet::parse({"x"}, 0), vec({0.0}), Eigen::VectorXd());
  CHECK(entropy(uni) == doctest::Approx(std::log(5.0)).epsilon(1e-15));

  const auto s = integers(-2, 2);
  const auto ps = PotentialSet::parse({"(x - a1)^2"}, 1);
  double prev = INFINITY;
  for (double lam : {1.0, 2.0, 4.0, 8.0, 16.0, 32.0}) {
    const double h = entropy(normalize(s, ps, vec({lam}), vec({0.0})));
    CHECK(h > 0.0);
    CHECK(h < prev);
    prev = h;
  }
  CHECK(prev < 1e-12);

  const auto m = normalize(s, ps, vec({1.0}), vec({0.0}));
  double z = 0;
  for (int x = -2; x <= 2; ++x) z += std::exp(-double(x * x));
  double ref = 0;
  for (int x = -2; x <= 2; ++x) {
    const double p = std::exp(-double(x * x)) / z;
    ref -= p * std::log(p);
  }
  CHECK(entropy(m) == doctest::Approx(ref).epsilon(1e-14));

  std::mt19937_64 rng(2);
  const auto ps3 = PotentialSet::parse({"x", "x^2", "x^3"}, 0);
  const auto g = SupportGrid::uniform(-1, 1, 9, WeightKind::kUnit);
  for (int n = 0; n < 200; ++n) {
    const auto mm = normalize(g, ps3, vec({oracle::uniform(rng, -20, 20), oracle::uniform(rng, -20, 20),
                                           oracle::uniform(rng, -20, 20)}),
                              Eigen::VectorXd());
    const double h = entropy(mm);
    CHECK(h >= 0.0);
    CHECK(h <= std::log(9.0) + 1e-15);
  }
}

TEST_CASE("log-likelihood") {
  std::mt19937_64 rng(4);
  const auto s = integers(-3, 3);
  const auto ps = PotentialSet::parse({"x", "x^2"}, 0);
  const auto r = EmpiricalSample::from_frequencies(random_simplex(rng, 7));
  CHECK(log_likelihood(normalize(s, ps, vec({0, 0}), Eigen::VectorXd()), r) ==
        doctest::Approx(-std::log(7.0)).epsilon(1e-15));

  const auto m = normalize(s, ps, vec({0.3, 0.2}), Eigen::VectorXd());
  CHECK(log_likelihood(m, EmpiricalSample::from_frequencies(m.probabilities())) ==
        doctest::Approx(-entropy(m)).epsilon(1e-13));

  for (int n = 0; n < 50; ++n) {
    const auto mm = normalize(s, ps, vec({oracle::uniform(rng, -2, 2), oracle::uniform(rng, 0, 2)}), Eigen::VectorXd());
    const Eigen::VectorXd rr = random_simplex(rng, 7);
    double ref = 0;
    for (int i = 0; i < 7; ++i) ref += rr[i] * std::log(mm.probabilities()[i]);
    CHECK(std::abs(log_likelihood(mm, EmpiricalSample::from_frequencies(rr)) - ref) <= 1e-12);
  }

  // With quadrature weights the likelihood is that of the density p_i / w_i.
  const auto t = SupportGrid::uniform(0.1, 3.0, 30, WeightKind::kTrapezoid);
  const auto mt = normalize(t, PotentialSet::parse({"x", "ln(x)"}, 0), vec({1.0, -0.5}), Eigen::VectorXd());
  const Eigen::VectorXd rr = random_simplex(rng, 30);
  double ref = 0;
  for (int i = 0; i < 30; ++i) ref += rr[i] * std::log(mt.probabilities()[i] / t.weights()[i]);
  CHECK(log_likelihood(mt, EmpiricalSample::from_frequencies(rr)) == doctest::Approx(ref).epsilon(1e-12));
}

TEST_CASE("empirical samples") {
  CHECK_THROWS_AS(EmpiricalSample::from_frequencies(vec({0.5, 0.6})), FrequencySumError);
  CHECK_THROWS_AS(EmpiricalSample::from_frequencies(vec({1.5, -0.5})), FrequencySumError);
  CHECK_THROWS_AS(EmpiricalSample::from_frequencies(Eigen::VectorXd()), EmptySample);
  CHECK_THROWS_AS(EmpiricalSample::from_counts(vec({0, 0})), EmptySample);
  const auto c = EmpiricalSample::from_counts(vec({1, 3, 0}));
  CHECK(c.n() == 4);
  CHECK(c.freq()[1] == 0.75);
}

TEST_CASE("binning raw observations") {
  const auto s = integers(0, 3);
  const auto exact = bin_observations({0, 1, 1, 3, 3, 3}, s);
  CHECK(exact.max_distance == 0.0);
  CHECK(exact.sample.freq()[0] == doctest::Approx(1.0 / 6));
  CHECK(exact.sample.freq()[1] == doctest::Approx(2.0 / 6));
  CHECK(exact.sample.freq()[2] == 0.0);
  CHECK(exact.sample.freq()[3] == doctest::Approx(3.0 / 6));

  // Hand-binned: 0.5 ties to the lower point, -1 clamps to 0.
  const auto b = bin_observations({0.1, 0.5, 1.6, 2.4, 3.9, -1.0}, s);
  CHECK(b.sample.freq()[0] == doctest::Approx(3.0 / 6));
  CHECK(b.sample.freq()[1] == 0.0);
  CHECK(b.sample.freq()[2] == doctest::Approx(2.0 / 6));
  CHECK(b.sample.freq()[3] == doctest::Approx(1.0 / 6));
  CHECK(b.max_distance == doctest::Approx(1.0));
  CHECK(b.mean_distance == doctest::Approx(3.3 / 6));
  CHECK(b.sample.n() == 6);
  CHECK_THROWS_AS(bin_observations({}, s), EmptySample);
}

TEST_CASE("catalog models") {
  const auto dn = discretize_continuous("dnorm_general", {-5, 5, 11});
  CHECK(dn.support.size() == 11);
  for (int i = 0; i < 11; ++i) CHECK(dn.support.points()[i] == -5 + i);
  CHECK(dn.potentials.J() == 1);
  CHECK(dn.potentials.T() == 1);
  CHECK(dn.potentials[0] == parse_potential("(x-a1)^2", 1));

  const auto ds = discretize_continuous("dnorm_simple", {-2, 2, 5});
  CHECK(ds.potentials.sources() == std::vector<std::string>{"x", "x^2"});

  const auto g = discretize_continuous("gamma", {0.01, 30, 500});
  CHECK(g.potentials.J() == 2);
  CHECK(g.potentials.T() == 0);
  CHECK(g.potentials[0] == parse_potential("x", 0));
  CHECK(g.potentials[1] == parse_potential("ln(x)", 0));
  CHECK_FALSE(g.support.unit_weights());
  CHECK_THROWS_AS(discretize_continuous("gamma", {0, 30, 500}), InvalidGrid);

  const auto l = discretize_continuous("logistic", {-10, 10, 201});
  CHECK(l.potentials.J() == 2);
  CHECK(l.potentials.T() == 2);
  CHECK(l.note.find("lambda") != std::string::npos);

  CHECK_THROWS_AS(discretize_continuous("cauchy", {0, 1, 5}), UnknownCatalogName);
  CHECK_THROWS_AS(discretize_continuous("dnorm_general", {1, 0, 5}), InvalidGrid);
  CHECK(catalog_names().size() == 4);
}

TEST_CASE("catalog logistic recovers the logistic density with lambda = [1, 2]") {
  const auto l = discretize_continuous("logistic", {-12, 12, 2001});
  const double mu = 0.5, beta = 1.5;
  const auto m = normalize(l.support, l.potentials, vec({1.0, 2.0}), vec({mu, beta}));
  for (Eigen::Index i = 0; i < l.support.size(); i += 200) {
    const double x = l.support.points()[i];
    const double z = std::exp(-(x - mu) / beta);
    const double density = z / (beta * (1 + z) * (1 + z));
    CHECK(m.probabilities()[i] / l.support.weights()[i] == doctest::Approx(density).epsilon(1e-4));
  }
}
