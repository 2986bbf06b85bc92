#pragma once

// The annulus system M[φ](μ°, μⁱ) = (g°, gⁱ), its causal solve, interior
// evaluation and the outer Neumann trace Λ.

#include <Eigen/Dense>
#include <memory>
#include <sstream>

#include "errors.hpp"
#include "geometry.hpp"
#include "potentials.hpp"

namespace heatshape {

// Space-time grid values: row k is time level t_k, column j is node θ_j.
using SpaceTimeGrid = Eigen::MatrixXd;

struct AnnulusProblem {
  ClosedCurve outer;
  ShapeMap phi;
  TimeGrid time;
  QuadratureSettings quad;
  SpaceTimeGrid g_outer, g_inner;

  int n_outer() const { return outer.size(); }
  int n_inner() const { return phi.size(); }

  AnnulusProblem with_shape(ShapeMap p) const {
    AnnulusProblem q = *this;
    q.phi = std::move(p);
    return q;
  }
  AnnulusProblem with_data(SpaceTimeGrid go, SpaceTimeGrid gi) const {
    AnnulusProblem q = *this;
    q.g_outer = std::move(go);
    q.g_inner = std::move(gi);
    return q;
  }
};

inline SpaceTimeGrid zero_grid(const TimeGrid& tg, int n) { return SpaceTimeGrid::Zero(tg.steps + 1, n); }

// Problem with zero data and quadrature chosen from the given geometry.
inline AnnulusProblem make_problem(const ClosedCurve& outer, const ShapeMap& phi, const TimeGrid& tg) {
  AnnulusProblem p{outer, phi, tg, auto_quadrature({&outer, &phi.image()}, tg), zero_grid(tg, outer.size()),
                   zero_grid(tg, phi.size())};
  return p;
}

inline void validate_problem(const AnnulusProblem& p) {
  p.outer.require_valid("outer curve");
  const auto v = validate_admissible(p.phi, p.outer);
  if (!v.ok()) throw GeometryError(std::string("inner map not admissible: ") + v.detail);
  const int rows = p.time.steps + 1;
  if (p.g_outer.rows() != rows || p.g_outer.cols() != p.n_outer())
    throw SolverError("outer data grid has wrong shape");
  if (p.g_inner.rows() != rows || p.g_inner.cols() != p.n_inner())
    throw SolverError("inner data grid has wrong shape");
  if (p.g_outer.row(0).cwiseAbs().maxCoeff() > 0.0 || p.g_inner.row(0).cwiseAbs().maxCoeff() > 0.0)
    throw SolverError("boundary data must vanish at t = 0");
}

struct DensityPair {
  SpaceTimeGrid outer, inner;
};

// M[φ] as one causal operator on stacked unknowns (μ°, μⁱ).
struct SystemOperator {
  int n_outer = 0, n_inner = 0;
  CausalBlockOperator op;

  SpaceTimeGrid stack(const SpaceTimeGrid& a, const SpaceTimeGrid& b) const {
    SpaceTimeGrid s(a.rows(), n_outer + n_inner);
    s << a, b;
    return s;
  }
  DensityPair split(const SpaceTimeGrid& s) const {
    return {s.leftCols(n_outer), s.rightCols(n_inner)};
  }
  DensityPair apply(const DensityPair& mu) const { return split(op.apply(stack(mu.outer, mu.inner))); }
};

// Geometry-dependent pieces shared by assembly, trace and shape routines.
struct ProblemGrids {
  SourceGrid outer, inner;  // inner = mapped curve φ(∂Ωⁱ)
  ProblemGrids(const AnnulusProblem& p) : outer(p.outer, p.quad.upsample), inner(p.phi.image(), p.quad.upsample) {}
};

inline SystemOperator assemble_M(const AnnulusProblem& p, const ProblemGrids& g) {
  const double dt = p.time.dt();
  const int no = p.n_outer(), ni = p.n_inner();
  const auto v11 = assemble_block(g.outer.coarse, g.outer, p.time, p.quad, true,
                                  SelfBound<SingleLayerKernel>(SingleLayerKernel{dt}, &g.outer.coarse));
  const auto v12 = assemble_block(g.outer.coarse, g.inner, p.time, p.quad, false, SingleLayerKernel{dt});
  const auto v21 = assemble_block(g.inner.coarse, g.outer, p.time, p.quad, false, SingleLayerKernel{dt});
  const auto v22 = assemble_block(g.inner.coarse, g.inner, p.time, p.quad, true,
                                  SelfBound<SingleLayerKernel>(SingleLayerKernel{dt}, &g.inner.coarse));
  SystemOperator m{no, ni, CausalBlockOperator(no + ni, no + ni, p.time.steps)};
  for (int l = 0; l < p.time.steps; ++l) {
    auto& a = m.op.lag(l);
    a.topLeftCorner(no, no) = v11.lag(l);
    a.topRightCorner(no, ni) = v12.lag(l);
    a.bottomLeftCorner(ni, no) = v21.lag(l);
    a.bottomRightCorner(ni, ni) = v22.lag(l);
  }
  return m;
}

inline SystemOperator assemble_M(const AnnulusProblem& p) {
  validate_problem(p);
  return assemble_M(p, ProblemGrids(p));
}

inline constexpr double max_condition = 1e12;

// Lag-0 factorization reused across time steps and right-hand sides.
class CausalSolver {
 public:
  explicit CausalSolver(SystemOperator m) : m_(std::move(m)) {
    const Eigen::MatrixXd& a0 = m_.op.lag(0);
    lu_.compute(a0);
    const double rc = lu_.rcond();
    cond_ = rc > 0.0 ? 1.0 / rc : std::numeric_limits<double>::infinity();
    if (!(cond_ <= max_condition)) {
      std::ostringstream os;
      os << "lag-0 block ill-conditioned: estimated condition " << cond_ << " (size " << a0.rows() << ")";
      throw SolverError(os.str());
    }
  }

  const SystemOperator& system() const { return m_; }
  double condition() const { return cond_; }

  SpaceTimeGrid solve_stacked(const SpaceTimeGrid& rhs) const {
    const int steps = int(rhs.rows()) - 1;
    SpaceTimeGrid mu = SpaceTimeGrid::Zero(rhs.rows(), rhs.cols());
    for (int k = 1; k <= steps; ++k) {
      const Eigen::VectorXd r = rhs.row(k).transpose() - m_.op.history(mu, k);
      mu.row(k) = lu_.solve(r).transpose();
    }
    return mu;
  }

  DensityPair solve(const SpaceTimeGrid& g_outer, const SpaceTimeGrid& g_inner) const {
    if (g_outer.rows() != g_inner.rows() || g_outer.cols() != m_.n_outer || g_inner.cols() != m_.n_inner)
      throw SolverError("solve: data shape mismatch");
    if (g_outer.row(0).cwiseAbs().maxCoeff() > 0.0 || g_inner.row(0).cwiseAbs().maxCoeff() > 0.0)
      throw SolverError("solve: data must vanish at t = 0");
    return m_.split(solve_stacked(m_.stack(g_outer, g_inner)));
  }

 private:
  SystemOperator m_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
  double cond_ = 0.0;
};

inline DensityPair solve_densities(const SystemOperator& m, const SpaceTimeGrid& g_outer, const SpaceTimeGrid& g_inner) {
  return CausalSolver(m).solve(g_outer, g_inner);
}

// Everything assembled for one problem: M with its factorization and the
// operators of the outer Neumann trace.
class ForwardModel {
 public:
  explicit ForwardModel(AnnulusProblem p) : p_(std::move(p)) {
    validate_problem(p_);
    grids_ = std::make_unique<ProblemGrids>(p_);
    solver_ = std::make_unique<CausalSolver>(assemble_M(p_, *grids_));
    const double dt = p_.time.dt();
    wstar_ = assemble_block(grids_->outer.coarse, grids_->outer, p_.time, p_.quad, true,
                            SelfBound<NormalDerivativeKernel>(NormalDerivativeKernel{dt}, &grids_->outer.coarse));
    inner_flux_ = assemble_block(grids_->outer.coarse, grids_->inner, p_.time, p_.quad, false,
                                 DirectionalGradientKernel{&grids_->outer.coarse.normal});
  }

  const AnnulusProblem& problem() const { return p_; }
  const ProblemGrids& grids() const { return *grids_; }
  const CausalSolver& solver() const { return *solver_; }
  const SystemOperator& system() const { return solver_->system(); }
  const CausalBlockOperator& outer_wstar() const { return wstar_; }
  const CausalBlockOperator& inner_to_outer_flux() const { return inner_flux_; }

  DensityPair solve(const SpaceTimeGrid& g_outer, const SpaceTimeGrid& g_inner) const {
    return solver_->solve(g_outer, g_inner);
  }
  DensityPair solve() const { return solve(p_.g_outer, p_.g_inner); }

  // Λ = ½μ° + W*μ° + ν°·∇(inner layer).
  SpaceTimeGrid dtn(const DensityPair& mu) const {
    return 0.5 * mu.outer + wstar_.apply(mu.outer) + inner_flux_.apply(mu.inner);
  }

 private:
  AnnulusProblem p_;
  std::unique_ptr<ProblemGrids> grids_;
  std::unique_ptr<CausalSolver> solver_;
  CausalBlockOperator wstar_, inner_flux_;
};

inline SpaceTimeGrid dtn_trace(const AnnulusProblem& p, const DensityPair& mu) { return ForwardModel(p).dtn(mu); }

// u = v°[μ°] + vⁱ[μⁱ] at annulus points respecting clearance from both curves.
inline Eigen::VectorXd eval_solution(const AnnulusProblem& p, const DensityPair& mu,
                                     const std::vector<FieldTarget>& targets, double clearance_fraction = 1e-3) {
  for (const auto& t : targets)
    if (!p.outer.contains(t.x) || p.phi.image().contains(t.x))
      throw ClearanceError("eval_solution: target outside the annulus");
  const EvalOptions opt = eval_options(p.quad, clearance_fraction);
  return eval_field(p.outer, mu.outer, p.time, targets, opt) + eval_field(p.phi.image(), mu.inner, p.time, targets, opt);
}

// Grid norms of a trace on a curve: max and L² with weights Δt·(2π/N)·|γ'|.
inline double grid_max(const SpaceTimeGrid& a) { return a.size() ? a.cwiseAbs().maxCoeff() : 0.0; }

inline double grid_l2(const SpaceTimeGrid& a, const ClosedCurve& curve, const TimeGrid& tg) {
  double s = 0.0;
  const double w = tg.dt() * two_pi / curve.size();
  for (int k = 1; k < a.rows(); ++k)
    for (int j = 0; j < a.cols(); ++j) s += w * curve.node(j).speed * a(k, j) * a(k, j);
  return std::sqrt(s);
}

}  // namespace heatshape
