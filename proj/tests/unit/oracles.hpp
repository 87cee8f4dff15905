#pragma once

// Reference computations used as test oracles. They deliberately avoid the
// library's solver code paths.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

inline double distance(const Eigen::MatrixXi& A, const Eigen::VectorXd& y,
                       const std::vector<std::uint8_t>& x) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    double r = -y(i);
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
      if (x[static_cast<std::size_t>(j)]) r += A(i, j);
    }
    sum += r * r;
  }
  return std::sqrt(sum);
}

/// Smallest distance over every subset of `k` columns.
inline double exhaustive_minimum(const Eigen::MatrixXi& A, const Eigen::VectorXd& y, std::size_t k) {
  const std::size_t n = static_cast<std::size_t>(A.cols());
  std::vector<std::uint8_t> x(n, 0);
  double best = std::numeric_limits<double>::infinity();
  std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t from, std::size_t left) {
    if (left == 0) {
      best = std::min(best, distance(A, y, x));
      return;
    }
    for (std::size_t j = from; j + left <= n; ++j) {
      x[j] = 1;
      rec(j + 1, left - 1);
      x[j] = 0;
    }
  };
  rec(0, k);
  return best;
}

/// Argmin over zeros and argmax over ones by linear scan; lowest index wins.
inline std::pair<std::size_t, std::size_t> scan_pair(const std::vector<double>& g,
                                                     const std::vector<std::uint8_t>& x) {
  std::size_t on = x.size(), off = x.size();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!x[i] && (on == x.size() || g[i] < g[on])) on = i;
    if (x[i] && (off == x.size() || g[i] > g[off])) off = i;
  }
  return {on, off};
}

/// Gradient of 0.5 * ||A x - y||^2 evaluated with plain loops.
inline std::vector<double> normal_gradient(const Eigen::MatrixXi& A, const Eigen::VectorXd& y,
                                           const std::vector<double>& x) {
  std::vector<double> r(static_cast<std::size_t>(A.rows()));
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    double v = -y(i);
    for (Eigen::Index j = 0; j < A.cols(); ++j) v += A(i, j) * x[static_cast<std::size_t>(j)];
    r[static_cast<std::size_t>(i)] = v;
  }
  std::vector<double> g(static_cast<std::size_t>(A.cols()), 0.0);
  for (Eigen::Index j = 0; j < A.cols(); ++j) {
    for (Eigen::Index i = 0; i < A.rows(); ++i) g[static_cast<std::size_t>(j)] += A(i, j) * r[static_cast<std::size_t>(i)];
  }
  return g;
}

}  // namespace oracle
