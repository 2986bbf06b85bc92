#pragma once

// Gauss–Newton reconstruction of the inner curve from outer Cauchy data
// (known g°, gⁱ = 0, measured Λ).

#include <Eigen/Dense>
#include <cmath>
#include <exception>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "shape.hpp"
#include "system.hpp"

namespace heatshape {

struct CauchyData {
  SpaceTimeGrid g_outer;
  SpaceTimeGrid dtn;         // measured Λ on the outer nodes
  double noise_level = 0.0;  // informational
};

// Λ·(1 + level·ξ) with ξ standard normal, row-major draw order from `seed`.
inline SpaceTimeGrid add_multiplicative_noise(const SpaceTimeGrid& a, double level, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  SpaceTimeGrid r = a;
  for (int k = 0; k < a.rows(); ++k)
    for (int j = 0; j < a.cols(); ++j) r(k, j) *= 1.0 + level * nd(rng);
  return r;
}

// Coefficients (cos_x[0..D], sin_x[1..D], cos_y[0..D], sin_y[1..D]) as a vector.
struct ShapeSpace {
  int degree = 4;
  int size() const { return 2 * (2 * degree + 1); }

  Eigen::VectorXd pack(const TrigSeries& s) const {
    const TrigSeries p = s.padded(std::max(degree, s.degree()));
    Eigen::VectorXd v(size());
    int i = 0;
    for (int m = 0; m <= degree; ++m) v[i++] = p.cos_x[m];
    for (int m = 1; m <= degree; ++m) v[i++] = p.sin_x[m];
    for (int m = 0; m <= degree; ++m) v[i++] = p.cos_y[m];
    for (int m = 1; m <= degree; ++m) v[i++] = p.sin_y[m];
    return v;
  }
  // Writes v into the first D modes of `base`; higher modes of base are kept.
  TrigSeries unpack(const Eigen::VectorXd& v, const TrigSeries& base) const {
    TrigSeries p = base.padded(std::max(degree, base.degree()));
    int i = 0;
    for (int m = 0; m <= degree; ++m) p.cos_x[m] = v[i++];
    for (int m = 1; m <= degree; ++m) p.sin_x[m] = v[i++];
    for (int m = 0; m <= degree; ++m) p.cos_y[m] = v[i++];
    for (int m = 1; m <= degree; ++m) p.sin_y[m] = v[i++];
    return p;
  }
  PerturbationField basis(int i) const {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(size());
    e[i] = 1.0;
    return {unpack(e, TrigSeries{}.padded(degree))};
  }
};

struct InverseOptions {
  int degree = 4;
  std::optional<double> lambda;  // default 1e-4·‖r₀‖²
  int max_iterations = 20;
  double residual_tol = 1e-10;   // relative to ‖Λ_meas‖
  double step_tol = 1e-7;        // relative to 1 + ‖coefficients‖
  double min_decrease = 1e-6;    // relative residual drop below which the iterate is stationary
  int max_halvings = 10;
};

enum class InverseStatus { converged_residual, converged_step, stationary, max_iterations, stagnation };

inline const char* to_string(InverseStatus s) {
  switch (s) {
    case InverseStatus::converged_residual: return "converged_residual";
    case InverseStatus::converged_step: return "converged_step";
    case InverseStatus::stationary: return "stationary";
    case InverseStatus::max_iterations: return "max_iterations";
    case InverseStatus::stagnation: return "stagnation";
  }
  return "?";
}

struct IterationReport {
  int iteration = 0;
  double residual = 0.0;  // weighted L² of Λ_meas − Λ[φ] after the step
  double step_norm = 0.0;
  double step_scale = 0.0;  // accepted line-search factor
  int rejected = 0;         // halvings that failed (non-decrease or inadmissible)
  double decrease = 0.0;    // relative residual drop
};

struct ReconstructionResult {
  ShapeMap phi;
  InverseStatus status = InverseStatus::max_iterations;
  double initial_residual = 0.0, residual = 0.0, lambda = 0.0;
  std::vector<IterationReport> history;
};

namespace detail {

// √w with the trace L² weights; row-major (k ≥ 1, j).
inline Eigen::VectorXd weighted_vector(const SpaceTimeGrid& a, const ClosedCurve& outer, const TimeGrid& tg) {
  const int n = int(a.cols()), m = int(a.rows()) - 1;
  Eigen::VectorXd v(m * n);
  const double w = tg.dt() * two_pi / n;
  for (int k = 1; k <= m; ++k)
    for (int j = 0; j < n; ++j) v[(k - 1) * n + j] = std::sqrt(w * outer.node(j).speed) * a(k, j);
  return v;
}

}  // namespace detail

inline ReconstructionResult reconstruct(const AnnulusProblem& tmpl, const CauchyData& data, const ShapeMap& guess,
                                        const InverseOptions& opt = {}) {
  if (data.dtn.rows() != tmpl.time.steps + 1 || data.dtn.cols() != tmpl.n_outer())
    throw ValidationError("measurement", "measured trace has wrong shape");
  const auto verdict = validate_admissible(guess, tmpl.outer);
  if (!verdict.ok()) throw GeometryError(std::string("initial guess not admissible: ") + verdict.detail);

  const ShapeSpace space{opt.degree};
  const AnnulusProblem base = tmpl.with_data(data.g_outer, zero_grid(tmpl.time, guess.size()));
  const Eigen::VectorXd meas = detail::weighted_vector(data.dtn, base.outer, base.time);
  const double meas_norm = meas.norm();

  auto residual_of = [&](const ForwardModel& fm, const DensityPair& mu) {
    return Eigen::VectorXd(meas - detail::weighted_vector(fm.dtn(mu), base.outer, base.time));
  };

  ReconstructionResult res{guess, InverseStatus::max_iterations, 0.0, 0.0, 0.0, {}};
  auto fm = std::make_unique<ForwardModel>(base.with_shape(guess));
  DensityPair mu = fm->solve();
  Eigen::VectorXd r = residual_of(*fm, mu);
  res.initial_residual = res.residual = r.norm();
  res.lambda = opt.lambda.value_or(1e-4 * r.squaredNorm());
  if (res.residual <= opt.residual_tol * meas_norm) {
    res.status = InverseStatus::converged_residual;
    return res;
  }

  for (int it = 1; it <= opt.max_iterations; ++it) {
    const int np = space.size();
    Eigen::MatrixXd jac(r.size(), np);
    std::vector<std::exception_ptr> errs(np);
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < np; ++i) {
      try {
        jac.col(i) = detail::weighted_vector(dtn_shape_diff_formula(*fm, mu, space.basis(i)), base.outer, base.time);
      } catch (...) {
        errs[i] = std::current_exception();
      }
    }
    for (auto& e : errs)
      if (e) std::rethrow_exception(e);

    // (JᵀJ + λI)δ = Jᵀr
    Eigen::MatrixXd a = jac.transpose() * jac;
    a.diagonal().array() += res.lambda;
    const Eigen::VectorXd delta = a.ldlt().solve(jac.transpose() * r);
    const Eigen::VectorXd x0 = space.pack(res.phi.coeffs());

    IterationReport rep;
    rep.iteration = it;
    rep.step_norm = delta.norm();
    if (rep.step_norm <= opt.step_tol * (1.0 + x0.norm())) {
      res.status = InverseStatus::converged_step;
      return res;
    }

    bool accepted = false;
    double scale = 1.0;
    for (int hlv = 0; hlv <= opt.max_halvings; ++hlv, scale *= 0.5) {
      const ShapeMap trial = res.phi.with_coeffs(space.unpack(x0 + scale * delta, res.phi.coeffs()));
      if (!validate_admissible(trial, base.outer).ok()) {
        ++rep.rejected;
        continue;
      }
      auto tfm = std::make_unique<ForwardModel>(base.with_shape(trial));
      DensityPair tmu = tfm->solve();
      Eigen::VectorXd tr = residual_of(*tfm, tmu);
      if (tr.norm() < res.residual) {
        rep.decrease = (res.residual - tr.norm()) / res.residual;
        res.phi = trial;
        fm = std::move(tfm);
        mu = std::move(tmu);
        r = std::move(tr);
        res.residual = r.norm();
        accepted = true;
        break;
      }
      ++rep.rejected;
    }
    rep.step_scale = accepted ? scale : 0.0;
    rep.residual = res.residual;
    res.history.push_back(rep);
    if (!accepted) {
      res.status = InverseStatus::stagnation;
      return res;
    }
    if (res.residual <= opt.residual_tol * meas_norm) {
      res.status = InverseStatus::converged_residual;
      return res;
    }
    if (scale * rep.step_norm <= opt.step_tol * (1.0 + x0.norm())) {
      res.status = InverseStatus::converged_step;
      return res;
    }
    if (rep.decrease < opt.min_decrease) {
      res.status = InverseStatus::stationary;
      return res;
    }
  }
  res.status = InverseStatus::max_iterations;
  return res;
}

// Symmetric Hausdorff distance between two closed curves via dense sampling.
inline double curve_distance(const ClosedCurve& a, const ClosedCurve& b, int samples = 1024) {
  double d = 0.0;
  for (const auto& n : a.sample(samples)) d = std::max(d, b.distance_to(n.x));
  for (const auto& n : b.sample(samples)) d = std::max(d, a.distance_to(n.x));
  return d;
}

// Subsamples a trace computed at (r·N, s·M) to (N, M).
inline SpaceTimeGrid subsample(const SpaceTimeGrid& fine, int node_stride, int time_stride) {
  const int m = int(fine.rows() - 1) / time_stride, n = int(fine.cols()) / node_stride;
  if (m * time_stride != fine.rows() - 1 || n * node_stride != fine.cols())
    throw ValidationError("subsample", "grid is not divisible by the stride");
  SpaceTimeGrid r(m + 1, n);
  for (int k = 0; k <= m; ++k)
    for (int j = 0; j < n; ++j) r(k, j) = fine(k * time_stride, j * node_stride);
  return r;
}

}  // namespace heatshape
