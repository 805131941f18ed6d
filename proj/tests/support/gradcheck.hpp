#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <random>

namespace pkws::testing {

inline constexpr double kStep = 1e-5;
inline constexpr double kGradTolerance = 1e-4;

/// ||a - b|| / max(||a||, ||b||); zero when both vanish.
inline double relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double scale = std::max(a.norm(), b.norm());
  return scale == 0.0 ? 0.0 : (a - b).norm() / scale;
}

/// Central differences of a scalar function of a matrix.
template <typename F>
Eigen::MatrixXd numeric_gradient(F&& f, Eigen::MatrixXd x, double h = kStep) {
  Eigen::MatrixXd g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x(i);
    x(i) = keep + h;
    const double up = f(x);
    x(i) = keep - h;
    const double down = f(x);
    x(i) = keep;
    g(i) = (up - down) / (2.0 * h);
  }
  return g;
}

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = n(rng);
  return m;
}

}  // namespace pkws::testing
