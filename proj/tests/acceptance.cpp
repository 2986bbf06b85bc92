// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "heatshape/heat_kernel.hpp"
#include "heatshape/inverse.hpp"
#include "heatshape/scenario.hpp"
#include "heatshape/shape.hpp"
#include "heatshape/verify.hpp"
#include "oracles.hpp"

using namespace heatshape;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const char* name, double limit_s, const std::function<Verdict()>& f) {
  const auto start = std::chrono::steady_clock::now();
  Verdict v;
  try {
    v = f();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const bool in_time = limit_s <= 0.0 || secs < limit_s;
  const bool pass = v.pass && in_time;
  if (!pass) ++failures;
  std::printf("criterion %d: %s  %s  %s  (%.1f s%s)\n", id, pass ? "PASS" : "FAIL", name, v.detail.c_str(), secs,
              in_time ? "" : ", over time limit");
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double rel_max(const Eigen::MatrixXd& a, const Eigen::MatrixXd& ref) {
  return (a - ref).cwiseAbs().maxCoeff() / ref.cwiseAbs().maxCoeff();
}

// 1. Closed forms against adaptive quadrature.
Verdict kernel_oracles() {
  std::mt19937_64 rng(20261016);
  std::uniform_real_distribution<double> lz(std::log(1e-8), std::log(700.0)), ur(0.01, 3.0), ua(0.0, 1.0),
      ul(-3.0, 0.0), us(0.01, 1.5), uang(0.0, two_pi);
  double worst = 0.0;
  int checks = 0;
  for (int i = 0; i < 1000; ++i) {
    const double z = std::exp(lz(rng));
    worst = std::max(worst, std::abs(exp_integral_E1(z) / oracle::e1(z) - 1.0));

    const double r = ur(rng), a = (i % 4 == 0) ? 0.0 : ua(rng), b = a + std::pow(10.0, ul(rng));
    const double sref = oracle::slab(r, a, b);
    if (sref > 1e-280) worst = std::max(worst, std::abs(slab_integral(r, a, b) - sref) / sref);
    const double ang = uang(rng);
    const Eigen::Vector2d x(r * std::cos(ang), r * std::sin(ang));
    const auto gref = oracle::slab_grad(x, a, b);
    if (gref.norm() > 1e-280) worst = std::max(worst, (slab_integral_grad(x, a, b) - gref).norm() / gref.norm());

    const double s = us(rng), c = 0.25 * r * r;
    const auto h = oracle::hat_primitives(r, s);
    const double got[3] = {hat_primitive_v(s, c), hat_primitive_g(s, c), hat_primitive_b(s, c)};
    for (int q = 0; q < 3; ++q)
      if (std::abs(h[q]) > 1e-280) worst = std::max(worst, std::abs(got[q] - h[q]) / std::abs(h[q]));
    checks += 6;
  }
  return {worst <= 1e-9, fmt("%.0f checks over 1000 draws, worst rel err %.2e (tol 1e-9)", checks, worst)};
}

// 2. ∂_ν v± − (±½μ + W*μ) by normal extrapolation, unit circle.
double jump_error(int n, int steps, const std::vector<double>& coef) {
  const ClosedCurve c(TrigSeries::circle(1.0), n);
  const TimeGrid tg{steps, 1.0};
  const auto q = auto_quadrature({&c}, tg);
  EvalOptions opt = eval_options(q);
  opt.upsample = 32;
  Eigen::MatrixXd mu(steps + 1, n);
  for (int k = 0; k <= steps; ++k)
    for (int j = 0; j < n; ++j) {
      const double t = tg.t(k), th = c.node(j).theta;
      double s = coef[0];
      for (int m = 1; m <= 4; ++m) s += coef[2 * m - 1] * std::cos(m * th) + coef[2 * m] * std::sin(m * th);
      mu(k, j) = (t * t + coef[9] * t) * s;
    }
  const auto w = assemble_Wstar(c, tg, q).apply(mu);
  const double delta = 0.5 * two_pi / n;
  double err = 0.0;
  for (int j = 0; j < n; j += n / 8) {
    const auto& nd = c.node(j);
    std::vector<FieldTarget> pts;
    for (int side : {1, -1})
      for (int s = 1; s <= 3; ++s) pts.push_back({1.0, nd.x - side * s * delta * nd.normal});
    const auto g = eval_field_grad(c, mu, tg, pts, opt);
    const double plus = (3.0 * g[0] - 3.0 * g[1] + g[2]).dot(nd.normal);
    const double minus = (3.0 * g[3] - 3.0 * g[4] + g[5]).dot(nd.normal);
    err = std::max({err, std::abs(plus - (0.5 * mu(steps, j) + w(steps, j))),
                    std::abs(minus - (-0.5 * mu(steps, j) + w(steps, j)))});
  }
  return err / mu.row(steps).cwiseAbs().maxCoeff();
}

Verdict jump_relations() {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> coef(10);
  for (auto& x : coef) x = u(rng);
  coef[0] = 2.0;
  coef[9] = std::abs(coef[9]);
  std::vector<double> ns = {32, 64, 128};
  std::vector<double> errs;
  for (double n : ns) errs.push_back(jump_error(int(n), int(n), coef));
  const auto order = fitted_order(ns, errs);
  const bool ok = order && *order >= 1.0 && errs.back() <= 1e-2 && errs[1] < errs[0] && errs[2] < errs[1];
  return {ok, fmt("errors %.2e %.2e %.2e, order %.2f", errs[0], errs[1], errs[2], order.value_or(0.0))};
}

TrigSeries bumpy_inner() {
  TrigSeries s = TrigSeries::ellipse(0.9, 0.7).padded(3);
  s.cos_x[2] = 0.08;
  s.sin_y[3] = 0.04;
  s.cos_x[0] = 0.05;
  return s;
}

// 3. Manufactured forward convergence.
Verdict forward_convergence() {
  ManufacturedCase mc;
  mc.outer = TrigSeries::circle(2.0);
  mc.reference = TrigSeries::circle(1.0);
  mc.phi = bumpy_inner();
  mc.solution.sources = {{Vec2(0.15, 0.05), {0.0, 0.0, 1.0, 1.0}}, {Vec2(-0.2, 0.1), {0.0, 0.0, 0.5, -1.0}}};
  for (double t : {0.5, 1.0})
    for (int j = 0; j < 8; ++j) mc.targets.push_back({t, 1.5 * Vec2(std::cos(0.3 + j * 0.785), std::sin(0.3 + j * 0.785))});
  const auto tab = convergence_study(mc, default_ladder());
  bool mono = true;
  for (std::size_t i = 1; i < tab.rows.size(); ++i) mono = mono && tab.rows[i].dtn_max < tab.rows[i - 1].dtn_max;
  const double interior = tab.rows.back().interior;
  const bool ok = mono && tab.order_max && *tab.order_max >= 2.0 && interior <= 1e-3;
  std::ostringstream d;
  d << "dtn rel err";
  for (const auto& r : tab.rows) d << " " << fmt("%.2e", r.dtn_max);
  d << fmt(", order %.2f, interior %.2e", tab.order_max.value_or(0.0), interior);
  return {ok, d.str()};
}

PerturbationField random_field(std::mt19937_64& rng, int degree, double amp) {
  std::uniform_real_distribution<double> u(-amp, amp);
  TrigSeries s = TrigSeries{}.padded(degree);
  for (int m = 0; m <= degree; ++m) {
    const double w = 1.0 / ((m + 1) * (m + 1));
    s.cos_x[m] = u(rng) * w;
    s.cos_y[m] = u(rng) * w;
    if (m) {
      s.sin_x[m] = u(rng) * w;
      s.sin_y[m] = u(rng) * w;
    }
  }
  return {s};
}

SpaceTimeGrid profile(const ClosedCurve& c, const TimeGrid& tg, double a, double b) {
  SpaceTimeGrid g = zero_grid(tg, c.size());
  for (int k = 1; k <= tg.steps; ++k)
    for (int j = 0; j < c.size(); ++j) {
      const double t = tg.t(k), th = c.node(j).theta;
      g(k, j) = t * t * (1.0 + a * std::cos(th) + b * std::sin(2.0 * th));
    }
  return g;
}

AnnulusProblem annulus(const TrigSeries& inner, int n, int steps, bool inner_data) {
  const ClosedCurve outer(TrigSeries::circle(2.0), n);
  const ShapeMap phi(ClosedCurve(TrigSeries::circle(1.0), n), inner);
  auto p = make_problem(outer, phi, TimeGrid{steps, 1.0});
  return p.with_data(profile(outer, p.time, 0.3, 0.2),
                     inner_data ? profile(phi.reference(), p.time, -0.4, 0.1) : zero_grid(p.time, n));
}

Eigen::MatrixXd stacked(const DensityPair& d) {
  Eigen::MatrixXd s(d.outer.rows(), d.outer.cols() + d.inner.cols());
  s << d.outer, d.inner;
  return s;
}

// 4. Analytic directional derivatives against central differences.
Verdict shape_fd() {
  std::mt19937_64 rng(4242);
  double lo = 1e300, hi = 0.0;
  int pairs = 0, bad = 0;
  std::string worst;
  while (pairs < 5) {
    const TrigSeries phi0 = bumpy_inner() + random_field(rng, 3, 0.1).coeffs;
    const auto p = annulus(phi0, 24, 16, true);
    if (!validate_admissible(p.phi, p.outer).ok()) continue;
    ++pairs;
    const ForwardModel fm(p);
    const auto base = fm.solve();
    const auto h = random_field(rng, 3, 0.3);
    const auto s = assemble_shape_operators(fm, h);
    const auto dd = directional_data(fm, s, base, h);
    auto check = [&](const char* what, const std::function<Eigen::MatrixXd(const ShapeMap&)>& f,
                     const Eigen::MatrixXd& ref) {
      const auto r = fd_directional(f, p.phi, h, ref, &p.outer);
      const bool ok = r.slope_valid && r.ratio >= 3.0 && r.ratio <= 5.0;
      if (!ok) {
        ++bad;
        worst = std::string(what) + fmt(" ratio %.3f", r.ratio);
      }
      lo = std::min(lo, r.ratio);
      hi = std::max(hi, r.ratio);
    };
    check("V1", [&](const ShapeMap& f) { return Eigen::MatrixXd(apply_V1(p.with_shape(f), base.inner)); },
          s.dV1.apply(base.inner));
    check("V2", [&](const ShapeMap& f) { return Eigen::MatrixXd(apply_V2(p.with_shape(f), base.inner)); },
          s.dV2.apply(base.inner));
    check("V3", [&](const ShapeMap& f) { return Eigen::MatrixXd(apply_V3(p.with_shape(f), base.outer)); },
          s.dV3.apply(base.outer));
    check("densities", [&](const ShapeMap& f) { return stacked(ForwardModel(p.with_shape(f)).solve()); },
          stacked(dd.dmu));
    check(
        "dtn",
        [&](const ShapeMap& f) {
          const ForwardModel m(p.with_shape(f));
          return Eigen::MatrixXd(m.dtn(m.solve()));
        },
        fm.dtn(dd.dmu) + s.dflux.apply(base.inner));
  }
  return {bad == 0, fmt("5 pairs x 5 quantities, Richardson ratios in [%.3f, %.3f]", lo, hi) +
                        (bad ? ", failing: " + worst : "")};
}

// 5. Formula route vs auxiliary-BVP route.
Verdict route_equivalence() {
  std::mt19937_64 rng(9);
  const auto h = random_field(rng, 3, 0.3);
  std::vector<double> e;
  for (int n : {64, 128}) {
    const ForwardModel fm(annulus(bumpy_inner(), n, n, true));
    const auto base = fm.solve();
    e.push_back(rel_max(dtn_shape_diff_bvp(fm, base, h), dtn_shape_diff_formula(fm, base, h)));
  }
  return {e[0] <= 1e-2 && e[1] < e[0], fmt("rel discrepancy %.2e at 64, %.2e at 128", e[0], e[1])};
}

// 6. Zero inner data: normal-only inner data, and tangential directions.
Verdict cky() {
  std::mt19937_64 rng(10);
  const auto p = annulus(bumpy_inner(), 64, 64, false);
  const ForwardModel fm(p);
  const auto base = fm.solve();
  const auto grad = inner_boundary_gradient(fm, base);
  const auto h = random_field(rng, 3, 0.3);
  const auto full = bvp_inner_data(fm, grad, h);
  const double e_data = grid_max(full - cky_inner_data(fm, grad, h)) / grid_max(full);

  // h = γ' of the mapped curve, and the normal field (y', −x') of equal size for scale.
  const auto& c = p.phi.coeffs();
  TrigSeries tan = c.padded(c.degree()), nrm = tan;
  for (int m = 0; m <= c.degree(); ++m) {
    tan.cos_x[m] = m * c.sin_x[m];
    tan.sin_x[m] = -m * c.cos_x[m];
    tan.cos_y[m] = m * c.sin_y[m];
    tan.sin_y[m] = -m * c.cos_y[m];
  }
  for (int m = 0; m <= c.degree(); ++m) {
    nrm.cos_x[m] = tan.cos_y[m];
    nrm.sin_x[m] = tan.sin_y[m];
    nrm.cos_y[m] = -tan.cos_x[m];
    nrm.sin_y[m] = -tan.sin_x[m];
  }
  const double scale = grid_max(dtn_shape_diff_formula(fm, base, {nrm}));
  const double e_tan = grid_max(dtn_shape_diff_formula(fm, base, {tan})) / scale;
  const double e_tan_bvp = grid_max(dtn_shape_diff_bvp(fm, base, {tan})) / scale;
  const bool ok = e_data <= 1e-3 && e_tan <= 1e-3 && e_tan_bvp <= 1e-3;
  return {ok, fmt("inner data rel diff %.2e; tangential dLambda rel %.2e (formula), %.2e (bvp)", e_data, e_tan,
                  e_tan_bvp)};
}

// 7. Noiseless synthetic twin, truth on a finer grid.
Verdict inverse_twin() {
  const int n = 64, r = 2;
  auto setup = [](int nn) {
    const ClosedCurve outer(TrigSeries::circle(2.0), nn);
    return outer;
  };
  const ClosedCurve outer = setup(n), outer_fine = setup(r * n);
  const ShapeMap truth_fine(ClosedCurve(TrigSeries::circle(1.0), r * n), TrigSeries::circle(1.0));
  auto pf = make_problem(outer_fine, truth_fine, TimeGrid{r * n, 1.0});
  auto g = [](const ClosedCurve& c, const TimeGrid& tg) {
    SpaceTimeGrid a = zero_grid(tg, c.size());
    for (int k = 1; k <= tg.steps; ++k)
      for (int j = 0; j < c.size(); ++j) {
        const double t = tg.t(k), th = c.node(j).theta;
        a(k, j) = t * t * (1.0 + 0.5 * std::cos(th) + 0.3 * std::sin(2.0 * th) + 0.2 * std::cos(3.0 * th));
      }
    return a;
  };
  pf = pf.with_data(g(outer_fine, pf.time), zero_grid(pf.time, r * n));
  const ForwardModel ff(pf);
  const SpaceTimeGrid meas = subsample(ff.dtn(ff.solve()), r, r);

  const ShapeMap guess(ClosedCurve(TrigSeries::circle(1.0), n), TrigSeries::circle(0.8));
  const auto tmpl = make_problem(outer, guess, TimeGrid{n, 1.0});
  const auto res = reconstruct(tmpl, {g(outer, tmpl.time), meas, 0.0}, guess);
  const double dist = curve_distance(res.phi.image(), ClosedCurve(TrigSeries::circle(1.0), n));
  const double tol = 1e-2 * outer.diameter();
  const bool ok = res.status != InverseStatus::stagnation && res.history.size() <= 20 && dist <= tol;
  return {ok, fmt("%.0f iterations, max distance %.2e (tol %.2e), residual %.2e", double(res.history.size()), dist,
                  tol, res.residual) +
                  ", status " + to_string(res.status)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// 8. Two CLI runs per task, outputs compared byte for byte.
Verdict determinism() {
  const fs::path root = fs::temp_directory_path() / "heatshape_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);
  // Noisy inversion exercises the seeded noise path.
  json inv = json::parse(slurp(fs::path(HEATSHAPE_SCENARIO_DIR) / "invert.json"));
  inv["invert"]["noise"] = 0.01;
  inv["invert"]["lambda"] = 1e-3;
  std::ofstream(root / "invert_noisy.json") << inv.dump(2);

  const std::vector<std::pair<std::string, fs::path>> runs = {
      {"solve", fs::path(HEATSHAPE_SCENARIO_DIR) / "solve_zero.json"},
      {"dtn", fs::path(HEATSHAPE_SCENARIO_DIR) / "dtn_manufactured.json"},
      {"shape-diff", fs::path(HEATSHAPE_SCENARIO_DIR) / "shape_diff.json"},
      {"verify", fs::path(HEATSHAPE_SCENARIO_DIR) / "verify.json"},
      {"invert", root / "invert_noisy.json"},
  };
  int files = 0;
  for (const auto& [task, sc] : runs) {
    for (const char* tag : {"a", "b"}) {
      const fs::path out = root / (task + "_" + tag);
      const std::string cmd = std::string(HEATSHAPE_CLI_PATH) + " " + task + " --scenario " + sc.string() + " --out " +
                              out.string() + " >/dev/null 2>&1";
      if (std::system(cmd.c_str()) != 0) return {false, task + " run failed"};
    }
    const json m = json::parse(slurp(root / (task + "_a") / "manifest.json"));
    if (m["outputs"].empty()) return {false, task + " wrote no outputs"};
    for (const auto& f : m["outputs"]) {
      const std::string name = f.get<std::string>();
      if (slurp(root / (task + "_a") / name) != slurp(root / (task + "_b") / name))
        return {false, task + "/" + name + " differs"};
      ++files;
    }
    const json mb = json::parse(slurp(root / (task + "_b") / "manifest.json"));
    if (m["scenario"] != mb["scenario"] || m["results"] != mb["results"]) return {false, task + " manifest differs"};
  }
  return {true, fmt("%.0f output files identical across 5 tasks", files)};
}

}  // namespace

int main() {
  report(1, "kernel oracles", 10.0, kernel_oracles);
  report(2, "jump relations", 120.0, jump_relations);
  report(3, "forward convergence", 300.0, forward_convergence);
  report(4, "shape-derivative finite differences", 600.0, shape_fd);
  report(5, "route equivalence", 0.0, route_equivalence);
  report(6, "zero inner data specialization", 0.0, cky);
  report(7, "inverse twin", 900.0, inverse_twin);
  report(8, "determinism", 0.0, determinism);
  std::printf("%s: %d of 8 criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
