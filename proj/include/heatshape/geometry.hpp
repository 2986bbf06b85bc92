#pragma once

// Closed trigonometric curves, shape maps φ (stored as φ∘γ) and perturbation
// fields h (stored as h∘γ).

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "errors.hpp"
#include "periodic.hpp"

namespace heatshape {

using Vec2 = Eigen::Vector2d;

inline constexpr double min_speed = 1e-12;

// x(θ) = Σ_m cos_x[m] cos mθ + sin_x[m] sin mθ, same for y. sin_*[0] is unused.
struct TrigSeries {
  std::vector<double> cos_x, sin_x, cos_y, sin_y;

  int degree() const {
    const size_t n = std::max({cos_x.size(), sin_x.size(), cos_y.size(), sin_y.size()});
    return n == 0 ? 0 : int(n) - 1;
  }

  // k-th θ-derivative.
  Vec2 eval(double th, int k = 0) const {
    Vec2 p(0.0, 0.0);
    const int d = degree();
    for (int m = 0; m <= d; ++m) {
      const double scale = std::pow(double(m), k);
      if (m == 0 && k > 0) continue;
      const double ph = m * th + k * 0.5 * std::numbers::pi;
      const double c = std::cos(ph), s = std::sin(ph);
      p.x() += scale * (at(cos_x, m) * c + at(sin_x, m) * s);
      p.y() += scale * (at(cos_y, m) * c + at(sin_y, m) * s);
    }
    return p;
  }

  TrigSeries padded(int d) const {
    TrigSeries r = *this;
    for (auto* v : {&r.cos_x, &r.sin_x, &r.cos_y, &r.sin_y}) v->resize(std::max<size_t>(v->size(), d + 1), 0.0);
    return r;
  }

  friend TrigSeries operator+(const TrigSeries& a, const TrigSeries& b) {
    const int d = std::max(a.degree(), b.degree());
    TrigSeries r = a.padded(d), q = b.padded(d);
    for (int m = 0; m <= d; ++m) {
      r.cos_x[m] += q.cos_x[m];
      r.sin_x[m] += q.sin_x[m];
      r.cos_y[m] += q.cos_y[m];
      r.sin_y[m] += q.sin_y[m];
    }
    return r;
  }
  friend TrigSeries operator*(double s, TrigSeries a) {
    for (auto* v : {&a.cos_x, &a.sin_x, &a.cos_y, &a.sin_y})
      for (double& x : *v) x *= s;
    return a;
  }
  friend TrigSeries operator-(const TrigSeries& a, const TrigSeries& b) { return a + (-1.0) * b; }

  static TrigSeries circle(double radius, double cx = 0.0, double cy = 0.0) {
    return {{cx, radius}, {0.0, 0.0}, {cy, 0.0}, {0.0, radius}};
  }
  static TrigSeries ellipse(double a, double b) { return {{0.0, a}, {0.0, 0.0}, {0.0, 0.0}, {0.0, b}}; }

  // Discrete Fourier fit of node samples (θ_j = 2πj/n) up to degree d < n/2.
  static TrigSeries fit(const std::vector<Vec2>& samples, int d) {
    const int n = int(samples.size());
    if (2 * d >= n) throw GeometryError("TrigSeries::fit: degree too high for sample count");
    TrigSeries r;
    r = r.padded(d);
    for (int j = 0; j < n; ++j) {
      const double t = node_angle(j, n);
      for (int m = 0; m <= d; ++m) {
        const double w = (m == 0 ? 1.0 : 2.0) / n;
        r.cos_x[m] += w * samples[j].x() * std::cos(m * t);
        r.cos_y[m] += w * samples[j].y() * std::cos(m * t);
        if (m > 0) {
          r.sin_x[m] += w * samples[j].x() * std::sin(m * t);
          r.sin_y[m] += w * samples[j].y() * std::sin(m * t);
        }
      }
    }
    return r;
  }

 private:
  static double at(const std::vector<double>& v, int m) { return m < int(v.size()) ? v[m] : 0.0; }
};

struct CurveNode {
  double theta = 0.0;
  Vec2 x, dx, ddx;
  double speed = 0.0;
  Vec2 tangent, normal;  // unit; normal = outward for counterclockwise curves
};

inline CurveNode make_node(const TrigSeries& c, double th) {
  CurveNode n;
  n.theta = th;
  n.x = c.eval(th, 0);
  n.dx = c.eval(th, 1);
  n.ddx = c.eval(th, 2);
  n.speed = n.dx.norm();
  if (n.speed > 0.0) {
    n.tangent = n.dx / n.speed;
    n.normal = Vec2(n.tangent.y(), -n.tangent.x());
  } else {
    n.tangent = n.normal = Vec2::Zero();
  }
  return n;
}

inline std::vector<CurveNode> sample_series(const TrigSeries& c, int m) {
  std::vector<CurveNode> out(m);
  for (int j = 0; j < m; ++j) out[j] = make_node(c, node_angle(j, m));
  return out;
}

enum class CurveDefect { none, not_immersed, self_intersecting, clockwise };

inline const char* to_string(CurveDefect d) {
  switch (d) {
    case CurveDefect::none: return "ok";
    case CurveDefect::not_immersed: return "not immersed";
    case CurveDefect::self_intersecting: return "self-intersection";
    case CurveDefect::clockwise: return "negative orientation";
  }
  return "?";
}

namespace detail {

inline double cross(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

inline bool segments_cross(const Vec2& p1, const Vec2& p2, const Vec2& q1, const Vec2& q2) {
  const double d1 = cross(p2 - p1, q1 - p1), d2 = cross(p2 - p1, q2 - p1);
  const double d3 = cross(q2 - q1, p1 - q1), d4 = cross(q2 - q1, p2 - q1);
  return ((d1 > 0) != (d2 > 0)) && ((d3 > 0) != (d4 > 0)) && d1 != 0 && d2 != 0 && d3 != 0 && d4 != 0;
}

inline double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double l2 = ab.squaredNorm();
  double t = l2 > 0 ? (p - a).dot(ab) / l2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

inline int polygon_sample_count(int n) { return std::max(4 * n, 512); }

}  // namespace detail

// Parameterized closed curve with cached equispaced nodes θ_j = 2πj/N.
class ClosedCurve {
 public:
  ClosedCurve() = default;
  ClosedCurve(TrigSeries coeffs, int n) : coeffs_(std::move(coeffs)), n_(n) {
    require_even(n, "ClosedCurve");
    nodes_ = sample_series(coeffs_, n);
  }

  int size() const { return n_; }
  const TrigSeries& coeffs() const { return coeffs_; }
  const CurveNode& node(int j) const { return nodes_[j]; }
  const std::vector<CurveNode>& nodes() const { return nodes_; }
  std::vector<CurveNode> sample(int m) const { return sample_series(coeffs_, m); }

  Vec2 position(double th) const { return coeffs_.eval(th, 0); }
  Vec2 velocity(double th) const { return coeffs_.eval(th, 1); }

  // Polygon on a dense sample; used for containment and intersection tests.
  std::vector<Vec2> polygon() const {
    const int m = detail::polygon_sample_count(n_);
    std::vector<Vec2> p(m);
    for (int j = 0; j < m; ++j) p[j] = coeffs_.eval(node_angle(j, m), 0);
    return p;
  }

  double signed_area() const {
    // Exact for trig polynomials: ½∮(x y' − y x') dθ by the trapezoid rule.
    const int m = 4 * (coeffs_.degree() + 1) + 8;
    double a = 0.0;
    for (int j = 0; j < m; ++j) {
      const double t = node_angle(j, m);
      const Vec2 p = coeffs_.eval(t, 0), d = coeffs_.eval(t, 1);
      a += detail::cross(p, d);
    }
    return 0.5 * a * two_pi / m;
  }

  double diameter() const {
    const auto p = polygon();
    double d = 0.0;
    for (size_t i = 0; i < p.size(); ++i)
      for (size_t j = i + 1; j < p.size(); ++j) d = std::max(d, (p[i] - p[j]).squaredNorm());
    return std::sqrt(d);
  }

  double max_speed() const {
    double s = 0.0;
    for (const auto& nd : sample(detail::polygon_sample_count(n_))) s = std::max(s, nd.speed);
    return s;
  }

  CurveDefect defect() const {
    const int m = detail::polygon_sample_count(n_);
    for (const auto& nd : sample(m))
      if (nd.speed < min_speed) return CurveDefect::not_immersed;
    const auto p = polygon();
    for (int i = 0; i < m; ++i)
      for (int j = i + 2; j < m; ++j) {
        if (i == 0 && j == m - 1) continue;
        if (detail::segments_cross(p[i], p[(i + 1) % m], p[j], p[(j + 1) % m]))
          return CurveDefect::self_intersecting;
      }
    if (signed_area() <= 0.0) return CurveDefect::clockwise;
    return CurveDefect::none;
  }

  void require_valid(const char* what) const {
    const auto d = defect();
    if (d != CurveDefect::none) throw GeometryError(std::string(what) + ": " + to_string(d));
  }

  // Crossing-number containment test against the dense polygon.
  bool contains(const Vec2& q) const {
    const auto p = polygon();
    bool in = false;
    for (size_t i = 0, j = p.size() - 1; i < p.size(); j = i++) {
      if (((p[i].y() > q.y()) != (p[j].y() > q.y())) &&
          (q.x() < (p[j].x() - p[i].x()) * (q.y() - p[i].y()) / (p[j].y() - p[i].y()) + p[i].x()))
        in = !in;
    }
    return in;
  }

  double distance_to(const Vec2& q) const {
    const auto p = polygon();
    double d = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < p.size(); ++i) d = std::min(d, detail::point_segment_distance(q, p[i], p[(i + 1) % p.size()]));
    return d;
  }

 private:
  TrigSeries coeffs_;
  int n_ = 0;
  std::vector<CurveNode> nodes_;
};

struct Frame {
  Vec2 point, tangent, normal;
  double speed;
};

inline Frame curve_frame(const ClosedCurve& curve, double th) {
  const CurveNode n = make_node(curve.coeffs(), th);
  if (n.speed < min_speed) throw GeometryError("curve_frame: degenerate speed");
  return {n.x, n.tangent, n.normal, n.speed};
}

// Perturbation field h, stored as h∘γ.
struct PerturbationField {
  TrigSeries coeffs;
  Vec2 value(double th) const { return coeffs.eval(th, 0); }
  Vec2 derivative(double th) const { return coeffs.eval(th, 1); }
};

// Admissible map φ of the reference inner curve, stored as φ∘γ.
class ShapeMap {
 public:
  ShapeMap() = default;
  ShapeMap(ClosedCurve reference, TrigSeries mapped)
      : reference_(std::move(reference)), image_(std::move(mapped), reference_.size()) {}

  static ShapeMap identity(const ClosedCurve& reference) { return ShapeMap(reference, reference.coeffs()); }

  const ClosedCurve& reference() const { return reference_; }
  const ClosedCurve& image() const { return image_; }
  const TrigSeries& coeffs() const { return image_.coeffs(); }
  int size() const { return reference_.size(); }

  ShapeMap perturbed(const PerturbationField& h, double eps) const {
    return ShapeMap(reference_, coeffs() + eps * h.coeffs);
  }
  ShapeMap with_coeffs(TrigSeries c) const { return ShapeMap(reference_, std::move(c)); }

 private:
  ClosedCurve reference_;
  ClosedCurve image_;
};

enum class AdmissibilityDefect { none, self_intersecting, not_immersed, not_inside, clearance, orientation };

inline const char* to_string(AdmissibilityDefect d) {
  switch (d) {
    case AdmissibilityDefect::none: return "admissible";
    case AdmissibilityDefect::self_intersecting: return "self-intersection";
    case AdmissibilityDefect::not_immersed: return "not immersed";
    case AdmissibilityDefect::not_inside: return "not inside outer";
    case AdmissibilityDefect::clearance: return "clearance violated";
    case AdmissibilityDefect::orientation: return "orientation reversed";
  }
  return "?";
}

struct AdmissibilityVerdict {
  AdmissibilityDefect defect = AdmissibilityDefect::none;
  double min_gap = 0.0;
  std::string detail;
  bool ok() const { return defect == AdmissibilityDefect::none; }
};

inline constexpr double default_clearance_fraction = 1e-2;

inline AdmissibilityVerdict validate_admissible(const ShapeMap& phi, const ClosedCurve& outer,
                                                double clearance_fraction = default_clearance_fraction) {
  AdmissibilityVerdict v;
  switch (phi.image().defect()) {
    case CurveDefect::not_immersed: v.defect = AdmissibilityDefect::not_immersed; break;
    case CurveDefect::self_intersecting: v.defect = AdmissibilityDefect::self_intersecting; break;
    case CurveDefect::clockwise: v.defect = AdmissibilityDefect::orientation; break;
    case CurveDefect::none: break;
  }
  if (!v.ok()) {
    v.detail = to_string(v.defect);
    return v;
  }
  const auto inner = phi.image().polygon();
  const auto out = outer.polygon();
  for (const auto& q : inner)
    if (!outer.contains(q)) {
      v.defect = AdmissibilityDefect::not_inside;
      v.detail = "inner curve leaves the outer region";
      return v;
    }
  double gap = std::numeric_limits<double>::infinity();
  for (const auto& q : inner)
    for (size_t i = 0; i < out.size(); ++i)
      gap = std::min(gap, detail::point_segment_distance(q, out[i], out[(i + 1) % out.size()]));
  v.min_gap = gap;
  const double need = clearance_fraction * outer.diameter();
  if (gap < need) {
    v.defect = AdmissibilityDefect::clearance;
    v.detail = "gap " + std::to_string(gap) + " < " + std::to_string(need);
  } else {
    v.detail = "admissible";
  }
  return v;
}

// σ̃[φ](θ_j) = |(φ∘γ)'(θ_j)| / |γ'(θ_j)|.
inline Eigen::VectorXd surface_jacobian(const ShapeMap& phi) {
  const int n = phi.size();
  Eigen::VectorXd s(n);
  for (int j = 0; j < n; ++j) {
    const double si = phi.image().node(j).speed;
    if (si < min_speed) throw GeometryError("surface_jacobian: zero image speed");
    s[j] = si / phi.reference().node(j).speed;
  }
  return s;
}

// Gateaux derivative of surface_jacobian at φ₀ in direction h.
inline Eigen::VectorXd surface_jacobian_diff(const ShapeMap& phi0, const PerturbationField& h) {
  const int n = phi0.size();
  Eigen::VectorXd s(n);
  for (int j = 0; j < n; ++j) {
    const auto& nd = phi0.image().node(j);
    if (nd.speed < min_speed) throw GeometryError("surface_jacobian_diff: zero image speed");
    s[j] = nd.dx.dot(h.derivative(nd.theta)) / (nd.speed * phi0.reference().node(j).speed);
  }
  return s;
}

}  // namespace heatshape
