#pragma once

// Solver-independent references: caloric fields from point sources inside the
// hole, central differences in shape direction, and refinement studies.

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "heat_kernel.hpp"
#include "system.hpp"

namespace heatshape {

// Source z with strength a(t) = Σ_p coeffs[p]·t^p; coeffs[0] must be zero.
struct PointSource {
  Vec2 z;
  std::vector<double> coeffs;
};

struct ManufacturedSolution {
  std::vector<PointSource> sources;

  // ∫₀ᵗ S(t−τ, x−z)·a(τ) dτ, expanded through ∫₀ᵗ S(s)s^q ds = c^q Γ(−q, c/t)/4π.
  double value(double t, const Vec2& x) const {
    if (t <= 0.0) return 0.0;
    double u = 0.0;
    for (const auto& s : sources) {
      const double c = 0.25 * (x - s.z).squaredNorm();
      if (c <= 0.0) throw DomainError("manufactured field evaluated at a source point");
      for (int p = 1; p < int(s.coeffs.size()); ++p)
        if (s.coeffs[p] != 0.0) u += s.coeffs[p] * moment(p, t, c, 0);
    }
    return u;
  }

  Vec2 grad(double t, const Vec2& x) const {
    Vec2 g = Vec2::Zero();
    if (t <= 0.0) return g;
    for (const auto& s : sources) {
      const double c = 0.25 * (x - s.z).squaredNorm();
      if (c <= 0.0) throw DomainError("manufactured field evaluated at a source point");
      double w = 0.0;
      for (int p = 1; p < int(s.coeffs.size()); ++p)
        if (s.coeffs[p] != 0.0) w += s.coeffs[p] * moment(p, t, c, 1);
      g -= 0.5 * (x - s.z) * w;
    }
    return g;
  }

  void validate(const ClosedCurve& hole, double clearance) const {
    for (std::size_t m = 0; m < sources.size(); ++m) {
      const auto& s = sources[m];
      const std::string tag = "source " + std::to_string(m);
      if (s.coeffs.empty() || s.coeffs[0] != 0.0) throw DomainError(tag + ": strength must vanish at t = 0");
      if (!hole.contains(s.z)) throw ClearanceError(tag + " lies outside the inner curve");
      if (hole.distance_to(s.z) < clearance) throw ClearanceError(tag + " is too close to the inner curve");
    }
  }

 private:
  // ∫₀ᵗ S(s)·s^{−shift}·(t−s)^p ds for the value (shift 0) and the gradient
  // weight (shift 1, where ∇S = −x·S/(2s)).
  static double moment(int p, double t, double c, int shift) {
    double acc = 0.0, binom = 1.0;
    for (int q = 0; q <= p; ++q) {
      const double sign = (q % 2) ? -1.0 : 1.0;
      acc += sign * binom * std::pow(t, p - q) * std::pow(c, q - shift) * upper_gamma_int(shift - q, c / t);
      binom = binom * (p - q) / (q + 1);
    }
    return inv_four_pi * acc;
  }
};

struct ManufacturedData {
  SpaceTimeGrid g_outer, g_inner;  // g_inner indexed by reference nodes
  SpaceTimeGrid dtn;               // ∂_ν u on outer nodes
  Eigen::VectorXd interior;        // u at the requested targets
  std::vector<SpaceTimeGrid> inner_grad;  // {∂₁u, ∂₂u} at mapped inner nodes
};

inline constexpr double default_source_clearance = 0.05;

inline ManufacturedData manufactured_data(const ManufacturedSolution& ms, const AnnulusProblem& p,
                                          const std::vector<FieldTarget>& targets = {},
                                          double clearance = default_source_clearance) {
  ms.validate(p.phi.image(), clearance);
  const int rows = p.time.steps + 1, no = p.n_outer(), ni = p.n_inner();
  ManufacturedData d{zero_grid(p.time, no), zero_grid(p.time, ni), zero_grid(p.time, no),
                     Eigen::VectorXd::Zero(Eigen::Index(targets.size())),
                     {zero_grid(p.time, ni), zero_grid(p.time, ni)}};
  for (int k = 1; k < rows; ++k) {
    const double t = p.time.t(k);
    for (int j = 0; j < no; ++j) {
      const auto& nd = p.outer.node(j);
      d.g_outer(k, j) = ms.value(t, nd.x);
      d.dtn(k, j) = ms.grad(t, nd.x).dot(nd.normal);
    }
    for (int j = 0; j < ni; ++j) {
      const Vec2 x = p.phi.image().node(j).x;
      d.g_inner(k, j) = ms.value(t, x);
      const Vec2 g = ms.grad(t, x);
      d.inner_grad[0](k, j) = g.x();
      d.inner_grad[1](k, j) = g.y();
    }
  }
  for (std::size_t i = 0; i < targets.size(); ++i) d.interior[Eigen::Index(i)] = ms.value(targets[i].t, targets[i].x);
  return d;
}

// Central differences of φ ↦ f(φ) in direction h at two step sizes.
struct FdResult {
  Eigen::MatrixXd coarse, fine;  // at ε₁ and ε₂ = ε₁/2 by default
  double eps_coarse = 0.0, eps_fine = 0.0;
  double err_coarse = std::numeric_limits<double>::quiet_NaN();
  double err_fine = std::numeric_limits<double>::quiet_NaN();
  double ratio = std::numeric_limits<double>::quiet_NaN();  // err_coarse / err_fine
  double slope = std::numeric_limits<double>::quiet_NaN();  // log(ratio)/log(ε₁/ε₂)
  bool slope_valid = false;  // false when there is no reference or both errors are at roundoff
};

inline constexpr double fd_roundoff_floor = 1e-11;

inline FdResult fd_directional(const std::function<Eigen::MatrixXd(const ShapeMap&)>& f, const ShapeMap& phi0,
                               const PerturbationField& h, const std::optional<Eigen::MatrixXd>& reference = {},
                               const ClosedCurve* outer = nullptr, double eps1 = 1e-3, double eps2 = 5e-4) {
  auto central = [&](double eps) -> Eigen::MatrixXd {
    const ShapeMap plus = phi0.perturbed(h, eps), minus = phi0.perturbed(h, -eps);
    if (outer)
      for (const auto* m : {&plus, &minus}) {
        const auto v = validate_admissible(*m, *outer);
        if (!v.ok()) throw GeometryError("finite-difference oracle: perturbed map not admissible (" + v.detail +
                                         "); use a smaller step");
      }
    return (f(plus) - f(minus)) / (2.0 * eps);
  };
  FdResult r;
  r.eps_coarse = eps1;
  r.eps_fine = eps2;
  r.coarse = central(eps1);
  r.fine = central(eps2);
  if (!reference) return r;
  const double scale = std::max(reference->cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  r.err_coarse = (r.coarse - *reference).cwiseAbs().maxCoeff();
  r.err_fine = (r.fine - *reference).cwiseAbs().maxCoeff();
  r.slope_valid = r.err_coarse > fd_roundoff_floor * scale && r.err_fine > 0.0;
  if (r.slope_valid) {
    r.ratio = r.err_coarse / r.err_fine;
    r.slope = std::log(r.ratio) / std::log(eps1 / eps2);
  }
  return r;
}

// Refinement study.
struct Rung {
  int n = 0, steps = 0;
};

inline const std::vector<Rung>& default_ladder() {
  static const std::vector<Rung> l = {{32, 32}, {64, 64}, {128, 128}};
  return l;
}

struct StudyRow {
  Rung rung;
  double dtn_max = 0.0, dtn_l2 = 0.0;  // relative Λ errors
  double interior = 0.0;               // relative interior-field error
  double seconds = 0.0;
};

struct StudyTable {
  std::vector<StudyRow> rows;
  // Least-squares slopes of −log(error) against log N; empty for fewer than two rungs
  // or when any error is zero.
  std::optional<double> order_max, order_l2, order_interior;
};

inline std::optional<double> fitted_order(const std::vector<double>& n, const std::vector<double>& err) {
  if (n.size() < 2) return std::nullopt;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double m = double(n.size());
  for (std::size_t i = 0; i < n.size(); ++i) {
    if (!(err[i] > 0.0)) return std::nullopt;
    const double x = std::log(n[i]), y = -std::log(err[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

inline StudyTable tabulate(std::vector<StudyRow> rows) {
  StudyTable t{std::move(rows), {}, {}, {}};
  std::vector<double> n, a, b, c;
  for (const auto& r : t.rows) {
    n.push_back(r.rung.n);
    a.push_back(r.dtn_max);
    b.push_back(r.dtn_l2);
    c.push_back(r.interior);
  }
  t.order_max = fitted_order(n, a);
  t.order_l2 = fitted_order(n, b);
  t.order_interior = fitted_order(n, c);
  return t;
}

// A manufactured annulus problem described independently of resolution.
struct ManufacturedCase {
  TrigSeries outer, reference, phi;
  double horizon = 1.0;
  ManufacturedSolution solution;
  std::vector<FieldTarget> targets;
};

inline AnnulusProblem rung_problem(const ManufacturedCase& mc, const Rung& r) {
  const ClosedCurve outer(mc.outer, r.n);
  const ShapeMap phi(ClosedCurve(mc.reference, r.n), mc.phi);
  return make_problem(outer, phi, TimeGrid{r.steps, mc.horizon});
}

inline StudyRow run_rung(const ManufacturedCase& mc, const Rung& r) {
  const auto start = std::chrono::steady_clock::now();
  const AnnulusProblem base = rung_problem(mc, r);
  const auto md = manufactured_data(mc.solution, base, mc.targets);
  const ForwardModel fm(base.with_data(md.g_outer, md.g_inner));
  const auto mu = fm.solve();
  const auto dtn = fm.dtn(mu);
  StudyRow row;
  row.rung = r;
  row.dtn_max = grid_max(dtn - md.dtn) / grid_max(md.dtn);
  row.dtn_l2 = grid_l2(dtn - md.dtn, base.outer, base.time) / grid_l2(md.dtn, base.outer, base.time);
  if (!mc.targets.empty()) {
    const auto u = eval_solution(fm.problem(), mu, mc.targets);
    row.interior = (u - md.interior).cwiseAbs().maxCoeff() / md.interior.cwiseAbs().maxCoeff();
  }
  row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return row;
}

// Rungs are independent; each runs with its own assembly.
inline StudyTable convergence_study(const std::function<StudyRow(const Rung&)>& rung_fn,
                                    const std::vector<Rung>& ladder) {
  std::vector<StudyRow> rows(ladder.size());
  for (std::size_t i = 0; i < ladder.size(); ++i) rows[i] = rung_fn(ladder[i]);
  return tabulate(std::move(rows));
}

inline StudyTable convergence_study(const ManufacturedCase& mc, const std::vector<Rung>& ladder = default_ladder()) {
  return convergence_study([&](const Rung& r) { return run_rung(mc, r); }, ladder);
}

}  // namespace heatshape
