#pragma once

// Discrete single-layer heat potentials on closed curves.
//
// Densities are continuous and piecewise linear in time (nodal values at
// t_k = kΔt, μ[0] = 0) and collocated at t_k, so every operator is causal and
// block-Toeplitz: (Aμ)[k] = Σ_{ℓ=0}^{k−1} A_ℓ μ[k−ℓ]. Lag kernels come from the
// hat second differences in heat_kernel.hpp. The first `near_lags` lags are
// integrated on a p-times upsampled source grid (density interpolated
// trigonometrically); on self blocks the ln r² part of lags 0 and 1 uses the
// periodic log-product rule there.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "heat_kernel.hpp"
#include "periodic.hpp"

namespace heatshape {

struct TimeGrid {
  int steps = 1;
  double horizon = 1.0;
  double dt() const { return horizon / steps; }
  double t(int k) const { return horizon * k / steps; }
};

struct QuadratureSettings {
  int upsample = 4;
  int near_lags = 2;
};

// Upsampling resolves the e^{−r²/4Δt} scale; lags beyond `near_lags` are wide
// enough for the coarse trapezoid rule.
inline QuadratureSettings auto_quadrature(const std::vector<const ClosedCurve*>& curves, const TimeGrid& tg,
                                          int min_upsample = 4) {
  double h = 0.0;
  for (const auto* c : curves) h = std::max(h, c->max_speed() * two_pi / c->size());
  const double dt = tg.dt();
  QuadratureSettings q;
  q.upsample = std::max(min_upsample, int(std::ceil(1.1 * h / std::sqrt(dt))));
  q.near_lags = std::min(std::max(2, 2 + int(std::ceil(0.91 * h * h / dt))), std::max(tg.steps, 2));
  return q;
}

// Nodes with the data kernels need (θ, position, unit normal, speed, second derivative).
struct NodeSet {
  std::vector<double> theta, speed;
  std::vector<Vec2> x, normal, dx, ddx;
  int size() const { return int(x.size()); }

  static NodeSet from(const std::vector<CurveNode>& nodes) {
    NodeSet s;
    for (const auto& n : nodes) {
      s.theta.push_back(n.theta);
      s.speed.push_back(n.speed);
      s.x.push_back(n.x);
      s.normal.push_back(n.normal);
      s.dx.push_back(n.dx);
      s.ddx.push_back(n.ddx);
    }
    return s;
  }
};

// Source curve sampled on the collocation grid and on the p-times finer grid.
struct SourceGrid {
  int n = 0, p = 1;
  NodeSet coarse, fine;
  Eigen::MatrixXd interp;  // (n·p) × n

  SourceGrid() = default;
  SourceGrid(const ClosedCurve& curve, int upsample)
      : n(curve.size()),
        p(upsample),
        coarse(NodeSet::from(curve.nodes())),
        fine(NodeSet::from(curve.sample(curve.size() * upsample))),
        interp(interpolation_matrix(curve.size(), upsample)) {}
};

class CausalBlockOperator {
 public:
  CausalBlockOperator() = default;
  CausalBlockOperator(int rows, int cols, int lags)
      : rows_(rows), cols_(cols), blocks_(lags, Eigen::MatrixXd::Zero(rows, cols)) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int lags() const { return int(blocks_.size()); }
  Eigen::MatrixXd& lag(int l) { return blocks_[l]; }
  const Eigen::MatrixXd& lag(int l) const { return blocks_[l]; }

  // mu: (steps+1) × cols, row k = time level k. Returns (steps+1) × rows.
  Eigen::MatrixXd apply(const Eigen::MatrixXd& mu) const {
    if (mu.cols() != cols_) throw SolverError("CausalBlockOperator::apply: column mismatch");
    const int m = int(mu.rows()) - 1;
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(m + 1, rows_);
    for (int l = 0; l < std::min(m, lags()); ++l)
      out.middleRows(l + 1, m - l).noalias() += mu.middleRows(1, m - l) * blocks_[l].transpose();
    return out;
  }

  // Σ_{ℓ ≥ 1} A_ℓ μ[k−ℓ]: the part of row k fixed by earlier levels.
  Eigen::VectorXd history(const Eigen::MatrixXd& mu, int k) const {
    Eigen::VectorXd h = Eigen::VectorXd::Zero(rows_);
    for (int l = 1; l < std::min(k, lags()); ++l) h.noalias() += blocks_[l] * mu.row(k - l).transpose();
    return h;
  }

  CausalBlockOperator& operator+=(const CausalBlockOperator& o) {
    for (int l = 0; l < lags(); ++l) blocks_[l] += o.blocks_[l];
    return *this;
  }

 private:
  int rows_ = 0, cols_ = 0;
  std::vector<Eigen::MatrixXd> blocks_;
};

enum KernelFamily : unsigned { family_v = 1u, family_g = 2u, family_b = 4u };

// Per source-target pair data handed to kernel policies.
struct PairContext {
  int target = 0, source = 0;
  bool fine = false;
  const NodeSet* tgt = nullptr;
  const NodeSet* src = nullptr;
  Vec2 d;    // target − source
  double c;  // |d|²/4
  const double* v = nullptr;  // lag-indexed hat kernels
  const double* g = nullptr;
  const double* b = nullptr;
};

namespace detail {

struct PrimitiveTable {
  std::vector<double> v, g, b, lv, lg, lb;
  explicit PrimitiveTable(int m) : v(m + 2), g(m + 2), b(m + 2), lv(m + 1), lg(m + 1), lb(m + 1) {}

  // Fills primitives at s_m = mΔt for m in [m0, m1] and the hat differences
  // whose stencil lies inside that range.
  void fill(double c, double dt, int m0, int m1, unsigned fam) {
    for (int m = std::max(m0, 0); m <= m1; ++m) {
      const double s = m * dt;
      if (m == 0) {
        v[0] = g[0] = b[0] = 0.0;
        continue;
      }
      const double z = c / s;
      if (z > 745.0) {
        v[m] = g[m] = b[m] = 0.0;
        continue;
      }
      const double e1 = exp_integral_E1(z), ex = std::exp(-z);
      if (fam & family_v) v[m] = inv_four_pi * ((s + c) * e1 - s * ex);
      if (fam & family_g) g[m] = -inv_eight_pi * (ex / z - e1);
      if (fam & family_b) b[m] = 0.5 * inv_eight_pi * ex / (z * c);
    }
    for (int l = (m0 <= 0 ? 0 : m0 + 1); l <= m1 - 1; ++l) {
      if (fam & family_v) lv[l] = hat_difference(v.data(), l, dt);
      if (fam & family_g) lg[l] = hat_difference(g.data(), l, dt);
      if (fam & family_b) lb[l] = hat_difference(b.data(), l, dt);
    }
  }
};

}  // namespace detail

// Assembles a causal operator from `kernel`, which must provide
//   unsigned families;
//   double value(const PairContext&, int lag) const;     // kernel × source weight
// and, for self blocks (targets are the source collocation nodes),
//   double log_coef(const PairContext&, int lag) const;  // ln r² coefficient, lags 0, 1
//   double diagonal(int i, int lag) const;              // regular part at coincidence
//   double diagonal_log(int i, int lag) const;          // ln r² coefficient at coincidence
template <class Kernel>
concept SelfKernel = requires(const Kernel& k, const PairContext& c) {
  k.log_coef(c, 0);
  k.diagonal(0, 0);
  k.diagonal_log(0, 0);
};

template <class Kernel>
CausalBlockOperator assemble_block(const NodeSet& targets, const SourceGrid& src, const TimeGrid& tg,
                                   const QuadratureSettings& q, bool self, const Kernel& kernel) {
  const int m = tg.steps, nt = targets.size(), nc = src.n, p = src.p, nf = nc * p;
  const int ln = std::min(std::max(q.near_lags, self ? 2 : 1), m);
  const double dt = tg.dt(), wf = two_pi / nf, wc = two_pi / nc;
  if (self && nt != nc) throw SolverError("assemble_block: self block needs matching nodes");
  if constexpr (!SelfKernel<Kernel>)
    if (self) throw SolverError("assemble_block: kernel has no singular-part hooks");
  const std::vector<double> rw = self ? log_weights(nf) : std::vector<double>{};
  std::vector<Eigen::MatrixXd> near(ln, Eigen::MatrixXd::Zero(nt, nf));
  CausalBlockOperator op(nt, nc, m);
  const unsigned fam = Kernel::families;

#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < nt; ++i) {
    detail::PrimitiveTable tab(m);
    PairContext ctx;
    ctx.target = i;
    ctx.tgt = &targets;
    ctx.v = tab.lv.data();
    ctx.g = tab.lg.data();
    ctx.b = tab.lb.data();

    ctx.fine = true;
    ctx.src = &src.fine;
    for (int f = 0; f < nf; ++f) {
      if (self && f == i * p) continue;
      ctx.source = f;
      ctx.d = targets.x[i] - src.fine.x[f];
      ctx.c = 0.25 * ctx.d.squaredNorm();
      tab.fill(ctx.c, dt, 0, ln, fam);
      for (int l = 0; l < ln; ++l) {
        const double val = kernel.value(ctx, l);
        if constexpr (SelfKernel<Kernel>) {
          if (self && l <= 1) {
            const double lc = kernel.log_coef(ctx, l);
          const double lk = log_kernel(targets.theta[i] - src.fine.theta[f]);
            near[l](i, f) = rw[((f - i * p) % nf + nf) % nf] * lc + wf * (val - lc * lk);
            continue;
          }
        }
        near[l](i, f) = wf * val;
      }
    }
    if constexpr (SelfKernel<Kernel>)
      if (self)
        for (int l = 0; l < ln; ++l)
          near[l](i, i * p) = rw[0] * kernel.diagonal_log(i, l) + wf * kernel.diagonal(i, l);

    if (ln >= m) continue;
    ctx.fine = false;
    ctx.src = &src.coarse;
    for (int j = 0; j < nc; ++j) {
      if constexpr (SelfKernel<Kernel>)
        if (self && j == i) {
          for (int l = ln; l < m; ++l) op.lag(l)(i, i) = wc * kernel.diagonal(i, l);
          continue;
        }
      ctx.source = j;
      ctx.d = targets.x[i] - src.coarse.x[j];
      ctx.c = 0.25 * ctx.d.squaredNorm();
      if (ctx.c / tg.horizon > 745.0) continue;
      tab.fill(ctx.c, dt, ln - 1, m, fam);
      for (int l = ln; l < m; ++l) op.lag(l)(i, j) = wc * kernel.value(ctx, l);
    }
  }
  for (int l = 0; l < ln; ++l) op.lag(l).noalias() = near[l] * src.interp;
  return op;
}

// Scalar single-layer kernel with source weight |γ'|.
struct SingleLayerKernel {
  static constexpr unsigned families = family_v;
  double dt;
  double value(const PairContext& c, int l) const { return c.v[l] * c.src->speed[c.source]; }
  double log_coef(const PairContext& c, int l) const { return hat_v_log_coef(l, c.c, dt) * c.src->speed[c.source]; }
  double diagonal(int i, int l, const NodeSet& s) const {
    const double sp = s.speed[i];
    return (hat_v_regular_at_zero(l, dt) + hat_v_log_coef(l, 0.0, dt) * std::log(sp * sp)) * sp;
  }
  double diagonal_log(int i, int l, const NodeSet& s) const { return hat_v_log_coef(l, 0.0, dt) * s.speed[i]; }
};

// Binds a kernel's diagonal hooks to the self node set.
template <class K>
struct SelfBound : K {
  const NodeSet* nodes;
  SelfBound(K k, const NodeSet* n) : K(std::move(k)), nodes(n) {}
  double diagonal(int i, int l) const { return K::diagonal(i, l, *nodes); }
  double diagonal_log(int i, int l) const { return K::diagonal_log(i, l, *nodes); }
};

// ν(x)·∇ₓ kernel (the W* operator when targets are the source nodes).
struct NormalDerivativeKernel {
  static constexpr unsigned families = family_g;
  double dt;
  double value(const PairContext& c, int l) const {
    return c.tgt->normal[c.target].dot(c.d) * c.g[l] * c.src->speed[c.source];
  }
  double log_coef(const PairContext& c, int l) const {
    return c.tgt->normal[c.target].dot(c.d) * hat_g_log_coef(l, dt) * c.src->speed[c.source];
  }
  // lim_{y→x} ν·(x−y)/|x−y|² = −ν·γ''/(2|γ'|²); only lag 0 keeps a limit.
  double diagonal(int i, int l, const NodeSet& s) const {
    if (l != 0) return 0.0;
    const double q = -s.normal[i].dot(s.ddx[i]) / (2.0 * s.speed[i] * s.speed[i]);
    return -q / two_pi * s.speed[i];
  }
  double diagonal_log(int, int, const NodeSet&) const { return 0.0; }
};

// a(x)·∇ₓ kernel for a per-target vector a; off-diagonal blocks only.
struct DirectionalGradientKernel {
  static constexpr unsigned families = family_g;
  const std::vector<Vec2>* dir;
  double value(const PairContext& c, int l) const {
    return (*dir)[c.target].dot(c.d) * c.g[l] * c.src->speed[c.source];
  }
};

inline CausalBlockOperator assemble_trace_V(const ClosedCurve& curve, const TimeGrid& tg,
                                            const QuadratureSettings& q) {
  SourceGrid src(curve, q.upsample);
  return assemble_block(src.coarse, src, tg, q, true,
                        SelfBound<SingleLayerKernel>(SingleLayerKernel{tg.dt()}, &src.coarse));
}

inline CausalBlockOperator assemble_trace_V(const ClosedCurve& curve, int steps, double horizon) {
  const TimeGrid tg{steps, horizon};
  return assemble_trace_V(curve, tg, auto_quadrature({&curve}, tg));
}

inline CausalBlockOperator assemble_Wstar(const ClosedCurve& curve, const TimeGrid& tg, const QuadratureSettings& q) {
  SourceGrid src(curve, q.upsample);
  return assemble_block(src.coarse, src, tg, q, true,
                        SelfBound<NormalDerivativeKernel>(NormalDerivativeKernel{tg.dt()}, &src.coarse));
}

inline CausalBlockOperator assemble_Wstar(const ClosedCurve& curve, int steps, double horizon) {
  const TimeGrid tg{steps, horizon};
  return assemble_Wstar(curve, tg, auto_quadrature({&curve}, tg));
}

struct FieldTarget {
  double t;
  Vec2 x;
};

struct EvalOptions {
  int upsample = 4;
  int near_lags = 2;
  double clearance_fraction = 1e-3;
};

inline EvalOptions eval_options(const QuadratureSettings& q, double clearance_fraction = 1e-3) {
  return {q.upsample, q.near_lags, clearance_fraction};
}

struct LayerValues {
  Eigen::VectorXd value;
  std::vector<Vec2> grad;
};

// Single-layer potential and gradient at off-boundary points (t, x).
inline LayerValues eval_layer(const ClosedCurve& curve, const Eigen::MatrixXd& mu, const TimeGrid& tg,
                              const std::vector<FieldTarget>& targets, const EvalOptions& opt, bool want_value,
                              bool want_grad) {
  const int m = tg.steps;
  if (mu.rows() != m + 1 || mu.cols() != curve.size()) throw SolverError("eval_layer: density shape mismatch");
  const SourceGrid src(curve, opt.upsample);
  const Eigen::MatrixXd mu_f = mu * src.interp.transpose();
  const double dt = tg.dt(), clearance = opt.clearance_fraction * curve.diameter();
  const int nc = src.n, nf = nc * src.p, ln = std::max(opt.near_lags, 1);
  const double wf = two_pi / nf, wc = two_pi / nc;
  const auto poly = curve.polygon();

  LayerValues out;
  out.value = Eigen::VectorXd::Zero(targets.size());
  out.grad.assign(targets.size(), Vec2::Zero());
  std::vector<int> bad(targets.size(), 0);

#pragma omp parallel for schedule(dynamic)
  for (int q = 0; q < int(targets.size()); ++q) {
    const auto& tgt = targets[q];
    if (tgt.t <= 0.0) continue;
    double dist = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < poly.size(); ++i)
      dist = std::min(dist, detail::point_segment_distance(tgt.x, poly[i], poly[(i + 1) % poly.size()]));
    if (dist < clearance) {
      bad[q] = 1;
      continue;
    }
    const double k = std::min(tgt.t, tg.horizon) / dt;
    const int m_hi = std::min(m, int(std::floor(k)) + 1);
    const int m_near = std::max(1, int(std::floor(k - ln)) + 1);
    std::vector<double> hv(m + 3), hg(m + 3);
    auto prim = [&](const Vec2& y, int j0, int j1) {
      const double c = 0.25 * (tgt.x - y).squaredNorm();
      for (int j = j0; j <= j1; ++j) {
        const double s = tgt.t - j * dt;
        if (want_value) hv[j + 1] = hat_primitive_v(s, c);
        if (want_grad) hg[j + 1] = hat_primitive_g(s, c);
      }
    };
    auto accumulate = [&](const Vec2& y, double w, auto density, int m0, int m1) {
      double sv = 0.0, sg = 0.0;
      for (int mm = m0; mm <= m1; ++mm) {
        const double dens = density(mm);
        if (want_value) sv += (hv[mm] - 2.0 * hv[mm + 1] + hv[mm + 2]) / dt * dens;
        if (want_grad) sg += (hg[mm] - 2.0 * hg[mm + 1] + hg[mm + 2]) / dt * dens;
      }
      out.value[q] += w * sv;
      out.grad[q] += w * sg * (tgt.x - y);
    };
    for (int f = 0; f < nf; ++f) {
      prim(src.fine.x[f], m_near - 1, m_hi + 1);
      accumulate(src.fine.x[f], wf * src.fine.speed[f], [&](int mm) { return mu_f(mm, f); }, m_near, m_hi);
    }
    if (m_near > 1)
      for (int j = 0; j < nc; ++j) {
        prim(src.coarse.x[j], 0, m_near);
        accumulate(src.coarse.x[j], wc * src.coarse.speed[j], [&](int mm) { return mu(mm, j); }, 1, m_near - 1);
      }
  }
  for (size_t q = 0; q < targets.size(); ++q)
    if (bad[q]) throw ClearanceError("eval_field: target closer than clearance to the curve");
  return out;
}

inline Eigen::VectorXd eval_field(const ClosedCurve& curve, const Eigen::MatrixXd& mu, const TimeGrid& tg,
                                  const std::vector<FieldTarget>& targets, const EvalOptions& opt) {
  return eval_layer(curve, mu, tg, targets, opt, true, false).value;
}

inline std::vector<Vec2> eval_field_grad(const ClosedCurve& curve, const Eigen::MatrixXd& mu, const TimeGrid& tg,
                                         const std::vector<FieldTarget>& targets, const EvalOptions& opt) {
  return eval_layer(curve, mu, tg, targets, opt, false, true).grad;
}

}  // namespace heatshape
