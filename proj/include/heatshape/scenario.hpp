#pragma once

// Scenario files: JSON with geometry, discretization, boundary data and
// task options. Parsing fills defaults; to_json writes the resolved form,
// which parses back to the same scenario.

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "inverse.hpp"
#include "json.hpp"
#include "system.hpp"
#include "verify.hpp"

namespace heatshape {

using json = nlohmann::ordered_json;

// g(t, θ) = (Σ_p time[p] t^p)·(Σ_m cos[m] cos mθ + Σ_m sin[m] sin mθ).
struct DataProfile {
  std::vector<double> time, cos, sin;

  double eval(double t, double th) const {
    double a = 0.0, tp = 1.0;
    for (double c : time) {
      a += c * tp;
      tp *= t;
    }
    double s = 0.0;
    for (std::size_t m = 0; m < cos.size(); ++m) s += cos[m] * std::cos(double(m) * th);
    for (std::size_t m = 0; m < sin.size(); ++m) s += sin[m] * std::sin(double(m) * th);
    return a * s;
  }
  SpaceTimeGrid grid(const ClosedCurve& c, const TimeGrid& tg) const {
    SpaceTimeGrid g = zero_grid(tg, c.size());
    for (int k = 1; k <= tg.steps; ++k)
      for (int j = 0; j < c.size(); ++j) g(k, j) = eval(tg.t(k), c.node(j).theta);
    return g;
  }
  bool is_zero() const {
    auto z = [](const std::vector<double>& v) {
      for (double x : v)
        if (x != 0.0) return false;
      return true;
    };
    return z(time) || (z(cos) && z(sin));
  }
};

struct Scenario {
  std::string task;  // empty: taken from the command line
  std::uint64_t seed = 0;

  TrigSeries outer, reference, phi;
  int n_outer = 64, n_inner = 64, steps = 64;
  double horizon = 1.0;

  // Boundary data: separable profiles, or traces of a manufactured field.
  std::optional<ManufacturedSolution> manufactured;
  DataProfile g_outer, g_inner;
  std::vector<FieldTarget> targets;

  // shape-diff
  TrigSeries h;
  std::vector<double> eps = {1e-3, 5e-4};
  bool finite_difference = true;

  // verify
  std::vector<Rung> ladder = default_ladder();

  // invert
  bool has_invert = false;
  TrigSeries truth, guess;
  int truth_refinement = 2;
  double noise = 0.0;
  InverseOptions inverse;
};

namespace scenario_detail {

inline std::string join(const std::string& a, const std::string& b) { return a.empty() ? b : a + "." + b; }

inline const json& require(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) throw ValidationError(join(path, key), "missing required field");
  return j.at(key);
}

inline double number(const json& j, const std::string& path) {
  if (!j.is_number()) throw ValidationError(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ValidationError(path, "must be finite");
  return v;
}

inline int integer(const json& j, const std::string& path, int lo) {
  if (!j.is_number_integer()) throw ValidationError(path, "expected an integer");
  const auto v = j.get<long long>();
  if (v < lo || v > 1'000'000) throw ValidationError(path, "out of range (minimum " + std::to_string(lo) + ")");
  return int(v);
}

inline std::vector<double> numbers(const json& j, const std::string& path) {
  if (!j.is_array()) throw ValidationError(path, "expected an array of numbers");
  std::vector<double> v;
  for (std::size_t i = 0; i < j.size(); ++i) v.push_back(number(j[i], path + "[" + std::to_string(i) + "]"));
  return v;
}

inline double number_or(const json& j, const std::string& key, const std::string& path, double def) {
  return j.contains(key) ? number(j.at(key), join(path, key)) : def;
}

inline int integer_or(const json& j, const std::string& key, const std::string& path, int lo, int def) {
  return j.contains(key) ? integer(j.at(key), join(path, key), lo) : def;
}

inline Vec2 point(const json& j, const std::string& path) {
  const auto v = numbers(j, path);
  if (v.size() != 2) throw ValidationError(path, "expected [x, y]");
  return {v[0], v[1]};
}

// {"circle": {"radius", "center"}} | {"ellipse": {"a", "b", "center"}} |
// {"coefficients": {"cos_x", "sin_x", "cos_y", "sin_y"}}
inline TrigSeries series(const json& j, const std::string& path) {
  if (!j.is_object() || j.size() != 1) throw ValidationError(path, "expected one of circle, ellipse, coefficients");
  if (j.contains("circle")) {
    const auto& c = j.at("circle");
    const std::string p = join(path, "circle");
    const double r = number(require(c, "radius", p), join(p, "radius"));
    if (!(r > 0.0)) throw ValidationError(join(p, "radius"), "must be positive");
    const Vec2 z = c.contains("center") ? point(c.at("center"), join(p, "center")) : Vec2::Zero();
    return TrigSeries::circle(r, z.x(), z.y());
  }
  if (j.contains("ellipse")) {
    const auto& c = j.at("ellipse");
    const std::string p = join(path, "ellipse");
    const double a = number(require(c, "a", p), join(p, "a")), b = number(require(c, "b", p), join(p, "b"));
    if (!(a > 0.0 && b > 0.0)) throw ValidationError(p, "semi-axes must be positive");
    TrigSeries s = TrigSeries::ellipse(a, b);
    if (c.contains("center")) {
      const Vec2 z = point(c.at("center"), join(p, "center"));
      s.cos_x[0] += z.x();
      s.cos_y[0] += z.y();
    }
    return s;
  }
  if (j.contains("coefficients")) {
    const auto& c = j.at("coefficients");
    const std::string p = join(path, "coefficients");
    TrigSeries s;
    s.cos_x = c.contains("cos_x") ? numbers(c.at("cos_x"), join(p, "cos_x")) : std::vector<double>{};
    s.sin_x = c.contains("sin_x") ? numbers(c.at("sin_x"), join(p, "sin_x")) : std::vector<double>{};
    s.cos_y = c.contains("cos_y") ? numbers(c.at("cos_y"), join(p, "cos_y")) : std::vector<double>{};
    s.sin_y = c.contains("sin_y") ? numbers(c.at("sin_y"), join(p, "sin_y")) : std::vector<double>{};
    return s.padded(s.degree());
  }
  throw ValidationError(path, "expected one of circle, ellipse, coefficients");
}

inline json series_json(const TrigSeries& s) {
  const TrigSeries p = s.padded(s.degree());
  return json{{"coefficients", {{"cos_x", p.cos_x}, {"sin_x", p.sin_x}, {"cos_y", p.cos_y}, {"sin_y", p.sin_y}}}};
}

inline DataProfile profile(const json& j, const std::string& path) {
  if (j.is_string()) {
    if (j.get<std::string>() == "zero") return {};
    throw ValidationError(path, "unknown named profile (expected \"zero\" or an object)");
  }
  DataProfile d;
  d.time = numbers(require(j, "time", path), join(path, "time"));
  d.cos = j.contains("cos") ? numbers(j.at("cos"), join(path, "cos")) : std::vector<double>{};
  d.sin = j.contains("sin") ? numbers(j.at("sin"), join(path, "sin")) : std::vector<double>{};
  if (!d.time.empty() && d.time[0] != 0.0) throw ValidationError(join(path, "time[0]"), "data must vanish at t = 0");
  return d;
}

inline json profile_json(const DataProfile& d) { return json{{"time", d.time}, {"cos", d.cos}, {"sin", d.sin}}; }

inline ManufacturedSolution sources(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw ValidationError(path, "expected a non-empty array of sources");
  ManufacturedSolution ms;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string p = path + "[" + std::to_string(i) + "]";
    PointSource s{point(require(j[i], "z", p), join(p, "z")), numbers(require(j[i], "strength", p), join(p, "strength"))};
    if (s.coeffs.empty() || s.coeffs[0] != 0.0) throw ValidationError(join(p, "strength[0]"), "strength must vanish at t = 0");
    ms.sources.push_back(std::move(s));
  }
  return ms;
}

inline json sources_json(const ManufacturedSolution& ms) {
  json a = json::array();
  for (const auto& s : ms.sources) a.push_back({{"z", {s.z.x(), s.z.y()}}, {"strength", s.coeffs}});
  return a;
}

}  // namespace scenario_detail

inline const std::vector<std::string>& task_names() {
  static const std::vector<std::string> t = {"solve", "dtn", "shape-diff", "verify", "invert"};
  return t;
}

inline Scenario parse_scenario(const json& root_in) {
  using namespace scenario_detail;
  // A manifest carries the resolved scenario under "scenario".
  const json& root = root_in.is_object() && root_in.contains("scenario") ? root_in.at("scenario") : root_in;
  if (!root.is_object()) throw ValidationError("(root)", "expected an object");
  Scenario s;
  if (root.contains("task")) {
    if (!root.at("task").is_string()) throw ValidationError("task", "expected a string");
    s.task = root.at("task").get<std::string>();
    if (std::find(task_names().begin(), task_names().end(), s.task) == task_names().end())
      throw ValidationError("task", "unknown task '" + s.task + "'");
  }
  if (root.contains("seed")) {
    if (!root.at("seed").is_number_unsigned()) throw ValidationError("seed", "expected a non-negative integer");
    s.seed = root.at("seed").get<std::uint64_t>();
  }

  const auto& g = require(root, "geometry", "");
  s.outer = series(require(g, "outer", "geometry"), "geometry.outer");
  s.reference = series(require(g, "reference", "geometry"), "geometry.reference");
  s.phi = g.contains("phi") ? series(g.at("phi"), "geometry.phi") : s.reference;

  const auto& d = require(root, "discretization", "");
  s.n_outer = integer(require(d, "n_outer", "discretization"), "discretization.n_outer", 4);
  s.n_inner = integer(require(d, "n_inner", "discretization"), "discretization.n_inner", 4);
  s.steps = integer(require(d, "steps", "discretization"), "discretization.steps", 1);
  s.horizon = number(require(d, "T", "discretization"), "discretization.T");
  if (!(s.horizon > 0.0)) throw ValidationError("discretization.T", "must be positive");
  if (s.n_outer % 2) throw ValidationError("discretization.n_outer", "must be even");
  if (s.n_inner % 2) throw ValidationError("discretization.n_inner", "must be even");

  if (root.contains("data")) {
    const auto& dt = root.at("data");
    if (dt.contains("manufactured")) {
      s.manufactured = sources(require(dt.at("manufactured"), "sources", "data.manufactured"), "data.manufactured.sources");
    } else {
      s.g_outer = dt.contains("outer") ? profile(dt.at("outer"), "data.outer") : DataProfile{};
      s.g_inner = dt.contains("inner") ? profile(dt.at("inner"), "data.inner") : DataProfile{};
    }
    if (dt.contains("targets")) {
      const auto& t = dt.at("targets");
      if (!t.is_array()) throw ValidationError("data.targets", "expected an array");
      for (std::size_t i = 0; i < t.size(); ++i) {
        const std::string p = "data.targets[" + std::to_string(i) + "]";
        const double tt = number(require(t[i], "t", p), join(p, "t"));
        if (tt < 0.0 || tt > s.horizon) throw ValidationError(join(p, "t"), "outside [0, T]");
        s.targets.push_back({tt, point(require(t[i], "x", p), join(p, "x"))});
      }
    }
  }

  if (root.contains("shape")) {
    const auto& sh = root.at("shape");
    s.h = series(require(sh, "h", "shape"), "shape.h");
    if (sh.contains("eps")) {
      s.eps = numbers(sh.at("eps"), "shape.eps");
      if (s.eps.size() != 2 || !(s.eps[0] > 0.0 && s.eps[1] > 0.0) || s.eps[0] == s.eps[1])
        throw ValidationError("shape.eps", "expected two distinct positive step sizes");
    }
    if (sh.contains("finite_difference")) {
      if (!sh.at("finite_difference").is_boolean()) throw ValidationError("shape.finite_difference", "expected a boolean");
      s.finite_difference = sh.at("finite_difference").get<bool>();
    }
  }

  if (root.contains("verify")) {
    const auto& v = root.at("verify");
    if (v.contains("ladder")) {
      const auto& l = v.at("ladder");
      if (!l.is_array() || l.empty()) throw ValidationError("verify.ladder", "expected a non-empty array of [N, M]");
      s.ladder.clear();
      for (std::size_t i = 0; i < l.size(); ++i) {
        const std::string p = "verify.ladder[" + std::to_string(i) + "]";
        if (!l[i].is_array() || l[i].size() != 2) throw ValidationError(p, "expected [N, M]");
        const int n = integer(l[i][0], p + "[0]", 4), m = integer(l[i][1], p + "[1]", 1);
        if (n % 2) throw ValidationError(p + "[0]", "must be even");
        s.ladder.push_back({n, m});
      }
    }
  }

  if (root.contains("invert")) {
    const auto& iv = root.at("invert");
    s.has_invert = true;
    s.truth = series(require(iv, "truth", "invert"), "invert.truth");
    s.guess = series(require(iv, "guess", "invert"), "invert.guess");
    s.truth_refinement = integer_or(iv, "truth_refinement", "invert", 1, 2);
    s.noise = number_or(iv, "noise", "invert", 0.0);
    if (s.noise < 0.0) throw ValidationError("invert.noise", "must be non-negative");
    s.inverse.degree = integer_or(iv, "degree", "invert", 0, 4);
    if (iv.contains("lambda") && !iv.at("lambda").is_null()) {
      s.inverse.lambda = number(iv.at("lambda"), "invert.lambda");
      if (*s.inverse.lambda < 0.0) throw ValidationError("invert.lambda", "must be non-negative");
    }
    s.inverse.max_iterations = integer_or(iv, "max_iterations", "invert", 0, 20);
    s.inverse.residual_tol = number_or(iv, "residual_tol", "invert", s.inverse.residual_tol);
    s.inverse.step_tol = number_or(iv, "step_tol", "invert", s.inverse.step_tol);
    s.inverse.min_decrease = number_or(iv, "min_decrease", "invert", s.inverse.min_decrease);
    s.inverse.max_halvings = integer_or(iv, "max_halvings", "invert", 0, s.inverse.max_halvings);
  }
  return s;
}

inline json to_json(const Scenario& s) {
  using namespace scenario_detail;
  json j;
  if (!s.task.empty()) j["task"] = s.task;
  j["seed"] = s.seed;
  j["geometry"] = {{"outer", series_json(s.outer)}, {"reference", series_json(s.reference)}, {"phi", series_json(s.phi)}};
  j["discretization"] = {{"n_outer", s.n_outer}, {"n_inner", s.n_inner}, {"steps", s.steps}, {"T", s.horizon}};
  json data;
  if (s.manufactured)
    data["manufactured"] = {{"sources", sources_json(*s.manufactured)}};
  else
    data = {{"outer", profile_json(s.g_outer)}, {"inner", profile_json(s.g_inner)}};
  json targets = json::array();
  for (const auto& t : s.targets) targets.push_back({{"t", t.t}, {"x", {t.x.x(), t.x.y()}}});
  data["targets"] = targets;
  j["data"] = data;
  j["shape"] = {{"h", series_json(s.h)}, {"eps", s.eps}, {"finite_difference", s.finite_difference}};
  json ladder = json::array();
  for (const auto& r : s.ladder) ladder.push_back({r.n, r.steps});
  j["verify"] = {{"ladder", ladder}};
  if (!s.has_invert) return j;
  json iv = {{"truth", series_json(s.truth)},
             {"guess", series_json(s.guess)},
             {"truth_refinement", s.truth_refinement},
             {"noise", s.noise},
             {"degree", s.inverse.degree},
             {"lambda", s.inverse.lambda ? json(*s.inverse.lambda) : json(nullptr)},
             {"max_iterations", s.inverse.max_iterations},
             {"residual_tol", s.inverse.residual_tol},
             {"step_tol", s.inverse.step_tol},
             {"min_decrease", s.inverse.min_decrease},
             {"max_halvings", s.inverse.max_halvings}};
  j["invert"] = iv;
  return j;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("--scenario", "cannot open '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("(root)", std::string("malformed JSON: ") + e.what());
  }
  return parse_scenario(j);
}

// Problem built from the scenario geometry, discretization and data.
inline AnnulusProblem build_problem(const Scenario& s) {
  const ClosedCurve outer(s.outer, s.n_outer);
  const ShapeMap phi(ClosedCurve(s.reference, s.n_inner), s.phi);
  outer.require_valid("geometry.outer");
  const auto verdict = validate_admissible(phi, outer);
  if (!verdict.ok())
    throw GeometryError(std::string("geometry.phi: not admissible (") + to_string(verdict.defect) + "): " +
                        verdict.detail);
  AnnulusProblem p = make_problem(outer, phi, TimeGrid{s.steps, s.horizon});
  if (s.manufactured) {
    const auto md = manufactured_data(*s.manufactured, p);
    return p.with_data(md.g_outer, md.g_inner);
  }
  return p.with_data(s.g_outer.grid(outer, p.time), s.g_inner.grid(phi.reference(), p.time));
}

}  // namespace heatshape
