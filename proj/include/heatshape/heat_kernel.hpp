#pragma once

// Heat kernel S_n, its gradient, E1, and closed-form time integrals.
//
// With c = r²/4, the time primitives of S₂ are
//   F(s) = ∫₀ˢ S₂ = E1(c/s)/(4π)
//   H(s) = ∫₀ˢ (s−s') S₂(s') ds' = [(s+c)E1(c/s) − s e^{−c/s}]/(4π)
// and ∇ₓH = x·g(s), ∇ₓ∇ₓH = g(s)·I + β(s)·x xᵀ with
//   g(s) = −[(s/c)e^{−c/s} − E1(c/s)]/(8π),   β(s) = (s/c²)e^{−c/s}/(16π).
// A hat function of width Δt centred at lag ℓΔt integrates against the kernel
// to the second difference [H((ℓ+1)Δt) − 2H(ℓΔt) + H((ℓ−1)Δt)]/Δt with H = 0
// for s ≤ 0.

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "errors.hpp"

namespace heatshape {

inline constexpr double euler_gamma = 0.57721566490153286061;
inline constexpr double inv_four_pi = 0.25 / std::numbers::pi;
inline constexpr double inv_eight_pi = 0.125 / std::numbers::pi;

// e^{−z} with exponents below −745 flushed to exactly zero.
inline double gauss_exp(double z) { return z > 745.0 ? 0.0 : std::exp(-z); }

namespace detail {

// Σ_{k≥1} (−1)^{k+1} z^k / (k·k!), accurate for 0 ≤ z ≤ 1.
inline double ein_series(double z) {
  double term = z, sum = z;
  for (int k = 2; k < 60; ++k) {
    term *= -z / k;
    const double add = term / k;
    sum += add;
    if (std::abs(add) <= 1e-17 * std::abs(sum)) break;
  }
  return sum;
}

// e^{z} E1(z) for z > 1 by the modified Lentz continued fraction.
inline double e1_scaled_cf(double z) {
  constexpr double tiny = 1e-300;
  double b = z + 1.0, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i < 500; ++i) {
    const double an = -double(i) * i;
    b += 2.0;
    d = 1.0 / (an * d + b);
    c = b + an / c;
    const double del = c * d;
    h *= del;
    if (std::abs(del - 1.0) < 1e-16) break;
  }
  return h;
}

}  // namespace detail

// E1(z) = ∫_z^∞ e^{−u}/u du.
inline double exp_integral_E1(double z) {
  if (!(z > 0.0)) throw DomainError("exp_integral_E1: z must be positive");
  if (z <= 1.0) return -euler_gamma - std::log(z) + detail::ein_series(z);
  if (z > 745.0) return 0.0;
  return detail::e1_scaled_cf(z) * std::exp(-z);
}

// Entire companion E1(z) + ln z = −γ + Σ (−1)^{k+1} z^k/(k·k!), z ≥ 0.
inline double exp_integral_E1_regular(double z) {
  if (z < 0.0) throw DomainError("exp_integral_E1_regular: z must be non-negative");
  if (z <= 1.0) return -euler_gamma + detail::ein_series(z);
  return exp_integral_E1(z) + std::log(z);
}

// Upper incomplete gamma Γ(a, x) for integer a ≤ 1 and x > 0.
inline double upper_gamma_int(int a, double x) {
  if (a > 1) throw DomainError("upper_gamma_int: a must be <= 1");
  if (a == 1) return gauss_exp(x);
  double g = exp_integral_E1(x);
  // Γ(a,x) = (x^a e^{−x} − Γ(a+1,x)) / (−a)
  for (int b = -1; b >= a; --b) g = (std::pow(x, b) * gauss_exp(x) - g) / double(-b);
  return g;
}

inline double heat_kernel(int n, double t, std::span<const double> x) {
  if (n < 1 || int(x.size()) != n) throw DomainError("heat_kernel: dimension mismatch");
  double r2 = 0.0;
  for (double v : x) r2 += v * v;
  if (t <= 0.0) {
    if (t == 0.0 && r2 == 0.0) throw DomainError("heat_kernel: singular at (0,0)");
    return 0.0;
  }
  return std::pow(4.0 * std::numbers::pi * t, -0.5 * n) * gauss_exp(r2 / (4.0 * t));
}

inline std::vector<double> heat_kernel_grad(int n, double t, std::span<const double> x) {
  std::vector<double> g(x.size(), 0.0);
  if (t <= 0.0) return g;
  const double s = heat_kernel(n, t, x);
  for (size_t i = 0; i < x.size(); ++i) g[i] = -x[i] / (2.0 * t) * s;
  return g;
}

inline double heat_kernel(double t, const Eigen::Vector2d& x) {
  const double v[2] = {x.x(), x.y()};
  return heat_kernel(2, t, v);
}

// ∫_a^b S₂(s, r) ds.
inline double slab_integral(double r, double a, double b) {
  if (r < 0.0 || a < 0.0 || b < a) throw DomainError("slab_integral: need r >= 0, 0 <= a <= b");
  if (a == b) return 0.0;
  if (r == 0.0) {
    if (a == 0.0) throw DomainError("slab_integral: divergent at r = 0, a = 0");
    return inv_four_pi * std::log(b / a);
  }
  const double c = 0.25 * r * r;
  if (a == 0.0) return inv_four_pi * exp_integral_E1(c / b);
  if (c / a <= 1.0)
    return inv_four_pi * (exp_integral_E1_regular(c / b) - exp_integral_E1_regular(c / a) + std::log(b / a));
  return inv_four_pi * (exp_integral_E1(c / b) - exp_integral_E1(c / a));
}

// ∫_a^b ∇ₓS₂(s, x) ds.
inline Eigen::Vector2d slab_integral_grad(const Eigen::Vector2d& x, double a, double b) {
  if (a < 0.0 || b < a) throw DomainError("slab_integral_grad: need 0 <= a <= b");
  const double r2 = x.squaredNorm();
  if (r2 == 0.0) throw DomainError("slab_integral_grad: x = 0");
  if (a == b) return Eigen::Vector2d::Zero();
  const double c = 0.25 * r2;
  // e^{−c/b} − e^{−c/a}
  double diff;
  if (a == 0.0)
    diff = gauss_exp(c / b);
  else if (c / b > 745.0)
    diff = 0.0;
  else
    diff = -std::exp(-c / b) * std::expm1(-c * (1.0 / a - 1.0 / b));
  return -x * (diff / (2.0 * std::numbers::pi * r2));
}

// Second primitive H(s) of the scalar kernel at half squared distance c > 0.
inline double hat_primitive_v(double s, double c) {
  if (s <= 0.0) return 0.0;
  const double z = c / s;
  if (z > 745.0) return 0.0;
  return inv_four_pi * ((s + c) * exp_integral_E1(z) - s * std::exp(-z));
}

// Scalar factor g(s) of the gradient primitive ∇ₓH = x·g(s), c > 0.
inline double hat_primitive_g(double s, double c) {
  if (s <= 0.0) return 0.0;
  const double z = c / s;
  if (z > 745.0) return 0.0;
  return -inv_eight_pi * (std::exp(-z) / z - exp_integral_E1(z));
}

// Factor β(s) of the Hessian primitive ∇ₓ∇ₓH = g·I + β·x xᵀ, c > 0.
inline double hat_primitive_b(double s, double c) {
  if (s <= 0.0) return 0.0;
  const double z = c / s;
  if (z > 745.0) return 0.0;
  return 0.5 * inv_eight_pi * std::exp(-z) / (z * c);
}

// Regular part of H at c = 0: H = H_reg + H_log·ln r² with H_log = −(s+c)/(4π).
inline double hat_primitive_v_regular_at_zero(double s) {
  if (s <= 0.0) return 0.0;
  return inv_four_pi * s * (-euler_gamma + std::log(4.0 * s) - 1.0);
}

// Second difference over lag ℓ of a primitive tabulated at s_m = mΔt, m = 0..L.
inline double hat_difference(const double* prim, int lag, double dt) {
  const double lo = lag >= 1 ? prim[lag - 1] : 0.0;
  return (prim[lag + 1] - 2.0 * prim[lag] + lo) / dt;
}

// Coefficient of ln r² in the lag-ℓ scalar hat kernel.
inline double hat_v_log_coef(int lag, double c, double dt) {
  if (lag == 0) return -inv_four_pi * (dt + c) / dt;
  if (lag == 1) return inv_four_pi * c / dt;
  return 0.0;
}

// Coefficient of ln r² in the lag-ℓ gradient factor g (the gradient kernel's
// log part is x times this).
inline double hat_g_log_coef(int lag, double dt) {
  if (lag == 0) return -inv_eight_pi / dt;
  if (lag == 1) return inv_eight_pi / dt;
  return 0.0;
}

// Lag-ℓ scalar hat kernel at r = 0 with its ln r² part removed.
inline double hat_v_regular_at_zero(int lag, double dt) {
  const double e = hat_primitive_v_regular_at_zero((lag + 1) * dt);
  const double b = hat_primitive_v_regular_at_zero(lag * dt);
  const double a = lag >= 1 ? hat_primitive_v_regular_at_zero((lag - 1) * dt) : 0.0;
  return (e - 2.0 * b + a) / dt;
}

}  // namespace heatshape
