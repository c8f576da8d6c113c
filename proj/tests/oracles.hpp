#pragma once

// Test-side oracles written independently of the library's own finite
// differences and summation code.

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace oracle {

// Five-point central difference of a scalar function of one variable.
inline double d1(const std::function<double(double)>& f, double x, double h) {
  return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h);
}

inline double d2(const std::function<double(double)>& f, double x, double h) {
  return (-f(x + 2 * h) + 16 * f(x + h) - 30 * f(x) + 16 * f(x - h) - f(x - 2 * h)) / (12 * h * h);
}

inline Eigen::VectorXd gradient(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                double h = 1e-4) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    g[k] = d1(
        [&](double t) {
          Eigen::VectorXd y = x;
          y[k] = t;
          return f(y);
        },
        x[k], h);
  }
  return g;
}

inline Eigen::MatrixXd hessian(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                               double h = 1e-3) {
  const Eigen::Index n = x.size();
  Eigen::MatrixXd H(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b < n; ++b) {
      if (a == b) {
        H(a, a) = d2(
            [&](double t) {
              Eigen::VectorXd y = x;
              y[a] = t;
              return f(y);
            },
            x[a], h);
      } else {
        // Nested five-point differences keep the mixed partial fourth order.
        H(a, b) = d1(
            [&](double s) {
              return d1(
                  [&](double t) {
                    Eigen::VectorXd y = x;
                    y[a] = s;
                    y[b] = t;
                    return f(y);
                  },
                  x[b], h);
            },
            x[a], h);
      }
    }
  }
  return H;
}

inline double rel_err(double a, double ref) { return std::abs(a - ref) / (1.0 + std::abs(ref)); }

inline double max_rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& ref) {
  double e = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index k = 0; k < a.cols(); ++k) e = std::max(e, rel_err(a(i, k), ref(i, k)));
  }
  return e;
}

// p_i proportional to w_i exp(-sum_j lambda_j u_ij), summed naively in long double.
inline Eigen::VectorXd probabilities(const Eigen::MatrixXd& u, const Eigen::VectorXd& lambda,
                                     const Eigen::VectorXd& w) {
  std::vector<long double> e(static_cast<std::size_t>(u.rows()));
  long double z = 0;
  long double shift = -INFINITY;
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    long double s = std::log(static_cast<long double>(w[i]));
    for (Eigen::Index j = 0; j < u.cols(); ++j) s -= static_cast<long double>(lambda[j]) * u(i, j);
    e[static_cast<std::size_t>(i)] = s;
    shift = std::max(shift, s);
  }
  for (auto& v : e) z += (v = std::exp(v - shift));
  Eigen::VectorXd p(u.rows());
  for (Eigen::Index i = 0; i < u.rows(); ++i) p[i] = static_cast<double>(e[static_cast<std::size_t>(i)] / z);
  return p;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace oracle
