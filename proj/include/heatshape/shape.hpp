#pragma once

// Shape differentials in direction h of the inner map φ.
//
// The derivative operators differentiate the assembled discrete blocks
// entry by entry (quadrature nodes, upsampling and near-lag count held fixed),
// so they are the exact Jacobian-vector products of the discrete maps.

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "potentials.hpp"
#include "system.hpp"

namespace heatshape {

// h and h' sampled on a source grid's coarse and fine nodes.
struct FieldSamples {
  NodeSet coarse, fine;
  FieldSamples(const PerturbationField& h, int n, int p)
      : coarse(NodeSet::from(sample_series(h.coeffs, n))), fine(NodeSet::from(sample_series(h.coeffs, n * p))) {}
  const NodeSet& at(bool fine_grid) const { return fine_grid ? fine : coarse; }
};

namespace detail {

inline double hat_v_log_coef_dc(int lag, double dt) {
  if (lag == 0) return -inv_four_pi / dt;
  if (lag == 1) return inv_four_pi / dt;
  return 0.0;
}

// d|γ'| = γ'·h'/|γ'| at a source node.
inline double speed_diff(const NodeSet& s, const NodeSet& h, int j) { return s.dx[j].dot(h.dx[j]) / s.speed[j]; }

}  // namespace detail

// Derivative of SingleLayerKernel when targets and/or sources move with h.
struct SingleLayerShapeKernel {
  static constexpr unsigned families = family_v | family_g;
  double dt;
  const FieldSamples* tgt_h = nullptr;  // null: targets fixed
  const FieldSamples* src_h = nullptr;  // null: sources fixed

  Vec2 dd(const PairContext& c) const {
    Vec2 r = Vec2::Zero();
    if (tgt_h) r += tgt_h->coarse.x[c.target];
    if (src_h) r -= src_h->at(c.fine).x[c.source];
    return r;
  }
  double dsp(const PairContext& c) const {
    return src_h ? detail::speed_diff(*c.src, src_h->at(c.fine), c.source) : 0.0;
  }
  double value(const PairContext& c, int l) const {
    return c.g[l] * c.d.dot(dd(c)) * c.src->speed[c.source] + c.v[l] * dsp(c);
  }
  double log_coef(const PairContext& c, int l) const {
    return detail::hat_v_log_coef_dc(l, dt) * 0.5 * c.d.dot(dd(c)) * c.src->speed[c.source] +
           hat_v_log_coef(l, c.c, dt) * dsp(c);
  }
  double diagonal(int i, int l, const NodeSet& s) const {
    const double sp = s.speed[i], lc = hat_v_log_coef(l, 0.0, dt);
    return (hat_v_regular_at_zero(l, dt) + lc * (std::log(sp * sp) + 2.0)) * detail::speed_diff(s, src_h->coarse, i);
  }
  double diagonal_log(int i, int l, const NodeSet& s) const {
    return hat_v_log_coef(l, 0.0, dt) * detail::speed_diff(s, src_h->coarse, i);
  }
};

// Derivative of DirectionalGradientKernel (fixed targets and directions) when sources move.
struct DirectionalGradientShapeKernel {
  static constexpr unsigned families = family_g | family_b;
  const std::vector<Vec2>* dir;
  const FieldSamples* src_h;
  double value(const PairContext& c, int l) const {
    const Vec2& a = (*dir)[c.target];
    const Vec2& hs = src_h->at(c.fine).x[c.source];
    const double sp = c.src->speed[c.source];
    return -(c.g[l] * a.dot(hs) + c.b[l] * a.dot(c.d) * c.d.dot(hs)) * sp +
           a.dot(c.d) * c.g[l] * detail::speed_diff(*c.src, src_h->at(c.fine), c.source);
  }
};

// ∂_φ of the four φ-dependent blocks in direction h.
struct ShapeOperators {
  CausalBlockOperator dV1;    // inner ← inner (self block on φ(∂Ωⁱ))
  CausalBlockOperator dV2;    // outer ← inner
  CausalBlockOperator dV3;    // inner ← outer
  CausalBlockOperator dflux;  // outer normal gradient ← inner
};

enum ShapeBlocks : unsigned { block_v1 = 1u, block_v2 = 2u, block_v3 = 4u, block_flux = 8u, block_all = 15u };

inline ShapeOperators assemble_shape_operators(const ForwardModel& fm, const PerturbationField& h,
                                               unsigned which = block_all) {
  const auto& p = fm.problem();
  const auto& g = fm.grids();
  const double dt = p.time.dt();
  const FieldSamples hs(h, g.inner.n, g.inner.p);
  ShapeOperators s;
  if (which & block_v1)
    s.dV1 = assemble_block(g.inner.coarse, g.inner, p.time, p.quad, true,
                           SelfBound<SingleLayerShapeKernel>(SingleLayerShapeKernel{dt, &hs, &hs}, &g.inner.coarse));
  if (which & block_v2)
    s.dV2 = assemble_block(g.outer.coarse, g.inner, p.time, p.quad, false, SingleLayerShapeKernel{dt, nullptr, &hs});
  if (which & block_v3)
    s.dV3 = assemble_block(g.inner.coarse, g.outer, p.time, p.quad, false, SingleLayerShapeKernel{dt, &hs, nullptr});
  if (which & block_flux)
    s.dflux = assemble_block(g.outer.coarse, g.inner, p.time, p.quad, false,
                             DirectionalGradientShapeKernel{&g.outer.coarse.normal, &hs});
  return s;
}

// The φ-dependent blocks themselves, for finite-difference oracles.
inline SpaceTimeGrid apply_V1(const AnnulusProblem& p, const SpaceTimeGrid& mu_inner) {
  const SourceGrid in(p.phi.image(), p.quad.upsample);
  return assemble_block(in.coarse, in, p.time, p.quad, true,
                        SelfBound<SingleLayerKernel>(SingleLayerKernel{p.time.dt()}, &in.coarse))
      .apply(mu_inner);
}

inline SpaceTimeGrid apply_V2(const AnnulusProblem& p, const SpaceTimeGrid& mu_inner) {
  const SourceGrid in(p.phi.image(), p.quad.upsample);
  const NodeSet out = NodeSet::from(p.outer.nodes());
  return assemble_block(out, in, p.time, p.quad, false, SingleLayerKernel{p.time.dt()}).apply(mu_inner);
}

inline SpaceTimeGrid apply_V3(const AnnulusProblem& p, const SpaceTimeGrid& mu_outer) {
  const SourceGrid out(p.outer, p.quad.upsample);
  const NodeSet in = NodeSet::from(p.phi.image().nodes());
  return assemble_block(in, out, p.time, p.quad, false, SingleLayerKernel{p.time.dt()}).apply(mu_outer);
}

inline SpaceTimeGrid dphi_V1(const ForwardModel& fm, const SpaceTimeGrid& mu_inner, const PerturbationField& h) {
  return assemble_shape_operators(fm, h, block_v1).dV1.apply(mu_inner);
}
inline SpaceTimeGrid dphi_V2(const ForwardModel& fm, const SpaceTimeGrid& mu_inner, const PerturbationField& h) {
  return assemble_shape_operators(fm, h, block_v2).dV2.apply(mu_inner);
}
inline SpaceTimeGrid dphi_V3(const ForwardModel& fm, const SpaceTimeGrid& mu_outer, const PerturbationField& h) {
  return assemble_shape_operators(fm, h, block_v3).dV3.apply(mu_outer);
}

struct ShapeDirectionalData {
  PerturbationField h;
  DensityPair base;  // (μ°₀, μⁱ₀)
  DensityPair rhs;   // (g̃°, g̃ⁱ)
  DensityPair dmu;   // (μ°₁, μⁱ₁) = M⁻¹(g̃°, g̃ⁱ)
};

// g̃° = −∂V₂ μⁱ₀, g̃ⁱ = −∂V₃ μ°₀ − ∂V₁ μⁱ₀.
inline DensityPair rhs_tilde(const ShapeOperators& s, const DensityPair& base) {
  return {-s.dV2.apply(base.inner), -s.dV3.apply(base.outer) - s.dV1.apply(base.inner)};
}

inline DensityPair rhs_tilde(const ForwardModel& fm, const DensityPair& base, const PerturbationField& h) {
  return rhs_tilde(assemble_shape_operators(fm, h, block_v1 | block_v2 | block_v3), base);
}

inline DensityPair solve_dmu(const ForwardModel& fm, const DensityPair& rhs) { return fm.solve(rhs.outer, rhs.inner); }

inline ShapeDirectionalData directional_data(const ForwardModel& fm, const ShapeOperators& s, const DensityPair& base,
                                             const PerturbationField& h) {
  ShapeDirectionalData d{h, base, rhs_tilde(s, base), {}};
  d.dmu = solve_dmu(fm, d.rhs);
  return d;
}

// dΛ = ½μ°₁ + W*μ°₁ + F μⁱ₁ + (∂F) μⁱ₀, F the inner-to-outer normal flux.
inline SpaceTimeGrid dtn_shape_diff_formula(const ForwardModel& fm, const DensityPair& base,
                                            const PerturbationField& h) {
  const auto s = assemble_shape_operators(fm, h);
  const auto d = directional_data(fm, s, base, h);
  return fm.dtn(d.dmu) + s.dflux.apply(base.inner);
}

// ∇u on the annulus side of φ(∂Ωⁱ) at the mapped nodes.
struct InnerGradient {
  SpaceTimeGrid normal, tangential;  // ∂_ν u and ∂_τ u (ν out of the hole)
  SpaceTimeGrid gx, gy;
};

inline InnerGradient inner_boundary_gradient(const ForwardModel& fm, const DensityPair& base) {
  const auto& p = fm.problem();
  const auto& g = fm.grids();
  const double dt = p.time.dt();
  const auto wstar = assemble_block(g.inner.coarse, g.inner, p.time, p.quad, true,
                                    SelfBound<NormalDerivativeKernel>(NormalDerivativeKernel{dt}, &g.inner.coarse));
  const auto from_outer = assemble_block(g.inner.coarse, g.outer, p.time, p.quad, false,
                                         DirectionalGradientKernel{&g.inner.coarse.normal});
  InnerGradient r;
  r.normal = -0.5 * base.inner + wstar.apply(base.inner) + from_outer.apply(base.outer);
  // Tangential part from the trace u|φ(∂Ωⁱ) carried by the inner rows of M.
  const SpaceTimeGrid trace = fm.system().apply(base).inner;
  r.tangential = trace * derivative_matrix(g.inner.n).transpose();
  const int ni = g.inner.n;
  r.gx.resize(trace.rows(), ni);
  r.gy.resize(trace.rows(), ni);
  for (int j = 0; j < ni; ++j) {
    const double sp = g.inner.coarse.speed[j];
    r.tangential.col(j) /= sp;
    const Vec2 nu = g.inner.coarse.normal[j], tau = g.inner.coarse.dx[j] / sp;
    r.gx.col(j) = r.normal.col(j) * nu.x() + r.tangential.col(j) * tau.x();
    r.gy.col(j) = r.normal.col(j) * nu.y() + r.tangential.col(j) * tau.y();
  }
  return r;
}

// −h·∇u at the mapped inner nodes.
inline SpaceTimeGrid bvp_inner_data(const ForwardModel& fm, const InnerGradient& grad, const PerturbationField& h) {
  const int ni = fm.problem().n_inner();
  const auto hn = sample_series(h.coeffs, ni);
  SpaceTimeGrid d(grad.gx.rows(), ni);
  for (int j = 0; j < ni; ++j) d.col(j) = -(hn[j].x.x() * grad.gx.col(j) + hn[j].x.y() * grad.gy.col(j));
  return d;
}

// −(h·ν)∂_ν u; only the normal component survives when gⁱ = 0.
inline SpaceTimeGrid cky_inner_data(const ForwardModel& fm, const InnerGradient& grad, const PerturbationField& h) {
  if (fm.problem().g_inner.cwiseAbs().maxCoeff() > 0.0)
    throw DomainError("normal-only inner data requires zero inner boundary data");
  const int ni = fm.problem().n_inner();
  const auto hn = sample_series(h.coeffs, ni);
  SpaceTimeGrid d(grad.normal.rows(), ni);
  for (int j = 0; j < ni; ++j)
    d.col(j) = -hn[j].x.dot(fm.grids().inner.coarse.normal[j]) * grad.normal.col(j);
  return d;
}

inline SpaceTimeGrid cky_inner_data(const ForwardModel& fm, const DensityPair& base, const PerturbationField& h) {
  if (fm.problem().g_inner.cwiseAbs().maxCoeff() > 0.0)
    throw DomainError("normal-only inner data requires zero inner boundary data");
  return cky_inner_data(fm, inner_boundary_gradient(fm, base), h);
}

// Auxiliary problem: u = 0 outside, u = inner_data on φ(∂Ωⁱ); returns its Λ.
inline SpaceTimeGrid dtn_from_inner_data(const ForwardModel& fm, const SpaceTimeGrid& inner_data) {
  const auto& p = fm.problem();
  return fm.dtn(fm.solve(zero_grid(p.time, p.n_outer()), inner_data));
}

inline SpaceTimeGrid dtn_shape_diff_bvp(const ForwardModel& fm, const DensityPair& base, const PerturbationField& h) {
  return dtn_from_inner_data(fm, bvp_inner_data(fm, inner_boundary_gradient(fm, base), h));
}

}  // namespace heatshape
