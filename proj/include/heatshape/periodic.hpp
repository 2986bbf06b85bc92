#pragma once

// Equispaced periodic grids on [0, 2π): trigonometric interpolation,
// spectral differentiation and the log-singular product rule.

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <vector>

#include "errors.hpp"

namespace heatshape {

inline constexpr double two_pi = 2.0 * std::numbers::pi;

inline double node_angle(int j, int n) { return two_pi * j / n; }

inline void require_even(int n, const char* what) {
  if (n < 4 || n % 2 != 0)
    throw GeometryError(std::string(what) + ": node count must be even and >= 4");
}

// Weights R_j with  ∫ ln(4 sin²((θ_0 − τ)/2)) f(τ) dτ ≈ Σ_j R_j f(τ_j)  for the
// target at node 0; shift cyclically for other targets. Exact for trig
// polynomials of degree < n/2.
inline std::vector<double> log_weights(int n) {
  require_even(n, "log_weights");
  const int h = n / 2;
  std::vector<double> r(n);
  for (int j = 0; j < n; ++j) {
    const double t = node_angle(j, n);
    double s = 0.0;
    for (int m = 1; m < h; ++m) s += std::cos(m * t) / m;
    r[j] = -(two_pi / h) * s - (std::numbers::pi / (double(h) * h)) * std::cos(h * t);
  }
  return r;
}

// ln(4 sin²(δ/2)), the kernel removed by the log split.
inline double log_kernel(double delta) {
  const double s = std::sin(0.5 * delta);
  return std::log(4.0 * s * s);
}

// (n·p) × n matrix evaluating the degree-n/2 trigonometric interpolant of
// node values on the p-times finer grid.
inline Eigen::MatrixXd interpolation_matrix(int n, int p) {
  require_even(n, "interpolation_matrix");
  const int h = n / 2, nf = n * p;
  // The matrix is circulant in (f − j·p); tabulate one column.
  std::vector<double> col(nf);
  for (int f = 0; f < nf; ++f) {
    const double d = node_angle(f, nf);
    double s = 1.0;
    for (int m = 1; m < h; ++m) s += 2.0 * std::cos(m * d);
    s += std::cos(h * d);
    col[f] = s / n;
  }
  Eigen::MatrixXd a(nf, n);
  for (int j = 0; j < n; ++j)
    for (int f = 0; f < nf; ++f) a(f, j) = col[((f - j * p) % nf + nf) % nf];
  return a;
}

// d/dθ of the trigonometric interpolant at the nodes (even n).
inline Eigen::MatrixXd derivative_matrix(int n) {
  require_even(n, "derivative_matrix");
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const double sign = ((i - j) % 2 == 0) ? 1.0 : -1.0;
      d(i, j) = 0.5 * sign / std::tan(0.5 * (node_angle(i, n) - node_angle(j, n)));
    }
  return d;
}

}  // namespace heatshape
