#pragma once

// Task runners behind the command-line tool. Each task writes CSV files and
// a manifest.json into the output directory and returns a process exit code.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <omp.h>

#include "inverse.hpp"
#include "scenario.hpp"
#include "shape.hpp"
#include "verify.hpp"

namespace heatshape {

inline constexpr const char* version = "0.1.0";

enum ExitCode : int { exit_ok = 0, exit_validation = 2, exit_numerical = 3, exit_stagnation = 4 };

namespace cli_detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class Outputs {
 public:
  explicit Outputs(std::filesystem::path dir) : dir_(std::move(dir)) {}

  // Rows (t, θ, value) for k = 0..M, j = 0..N−1.
  void trace(const std::string& name, const SpaceTimeGrid& g, const ClosedCurve& c, const TimeGrid& tg) {
    auto& o = open(name);
    o << "t,theta,value\n";
    for (int k = 0; k < g.rows(); ++k)
      for (int j = 0; j < g.cols(); ++j) o << fmt(tg.t(k)) << ',' << fmt(c.node(j).theta) << ',' << fmt(g(k, j)) << '\n';
    close(name);
  }

  void table(const std::string& name, const std::vector<std::string>& header,
             const std::vector<std::vector<std::string>>& rows) {
    auto& o = open(name);
    for (std::size_t i = 0; i < header.size(); ++i) o << (i ? "," : "") << header[i];
    o << '\n';
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i) o << (i ? "," : "") << r[i];
      o << '\n';
    }
    close(name);
  }

  const std::vector<std::string>& written() const { return names_; }

 private:
  std::ofstream& open(const std::string& name) {
    out_.open(dir_ / name, std::ios::binary | std::ios::trunc);
    if (!out_) throw ValidationError("--out", "cannot write '" + (dir_ / name).string() + "'");
    return out_;
  }
  void close(const std::string& name) {
    out_.close();
    if (!out_) throw ValidationError("--out", "write failed for '" + name + "'");
    names_.push_back(name);
  }

  std::filesystem::path dir_;
  std::ofstream out_;
  std::vector<std::string> names_;
};

class Timings {
 public:
  template <class F>
  auto time(const std::string& key, F&& f) {
    const auto start = std::chrono::steady_clock::now();
    if constexpr (std::is_void_v<decltype(f())>) {
      f();
      record(key, start);
    } else {
      auto r = f();
      record(key, start);
      return r;
    }
  }
  json to_json() const {
    json j = json::object();
    for (const auto& [k, v] : entries_) j[k] = v;
    return j;
  }
  void set(const std::string& key, double v) { entries_.emplace_back(key, v); }

 private:
  void record(const std::string& key, std::chrono::steady_clock::time_point start) {
    set(key, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  std::vector<std::pair<std::string, double>> entries_;
};

struct TaskContext {
  const Scenario& s;
  Outputs& out;
  Timings& timings;
  json& results;  // small summary values recorded in the manifest
};

inline std::vector<std::string> metric_row(const std::string& k, double v) { return {k, fmt(v)}; }

inline int run_solve(TaskContext& c) {
  const auto p = c.timings.time("build", [&] { return build_problem(c.s); });
  const ForwardModel fm = c.timings.time("assemble", [&] { return ForwardModel(p); });
  const auto mu = c.timings.time("solve", [&] { return fm.solve(); });
  c.out.trace("density_outer.csv", mu.outer, p.outer, p.time);
  c.out.trace("density_inner.csv", mu.inner, p.phi.reference(), p.time);
  if (!c.s.targets.empty()) {
    const auto u = c.timings.time("evaluate", [&] { return eval_solution(p, mu, c.s.targets); });
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < c.s.targets.size(); ++i) {
      const auto& t = c.s.targets[i];
      rows.push_back({fmt(t.t), fmt(t.x.x()), fmt(t.x.y()), fmt(u[Eigen::Index(i)])});
    }
    c.out.table("field.csv", {"t", "x", "y", "value"}, rows);
  }
  c.results["density_max"] = std::max(grid_max(mu.outer), grid_max(mu.inner));
  return exit_ok;
}

inline int run_dtn(TaskContext& c) {
  const auto p = c.timings.time("build", [&] { return build_problem(c.s); });
  const ForwardModel fm = c.timings.time("assemble", [&] { return ForwardModel(p); });
  const auto mu = c.timings.time("solve", [&] { return fm.solve(); });
  const auto dtn = fm.dtn(mu);
  c.out.trace("dtn.csv", dtn, p.outer, p.time);
  c.results["dtn_max"] = grid_max(dtn);
  if (c.s.manufactured) {
    const auto md = manufactured_data(*c.s.manufactured, p);
    const double ref_max = grid_max(md.dtn), ref_l2 = grid_l2(md.dtn, p.outer, p.time);
    const double e_max = grid_max(dtn - md.dtn) / ref_max, e_l2 = grid_l2(dtn - md.dtn, p.outer, p.time) / ref_l2;
    c.out.table("dtn_error.csv", {"metric", "value"}, {metric_row("rel_max", e_max), metric_row("rel_l2", e_l2)});
    c.results["dtn_rel_max"] = e_max;
    c.results["dtn_rel_l2"] = e_l2;
  }
  return exit_ok;
}

inline int run_shape_diff(TaskContext& c) {
  const auto p = c.timings.time("build", [&] { return build_problem(c.s); });
  const ForwardModel fm = c.timings.time("assemble", [&] { return ForwardModel(p); });
  const auto base = c.timings.time("solve", [&] { return fm.solve(); });
  const PerturbationField h{c.s.h};
  const auto ops = c.timings.time("shape_operators", [&] { return assemble_shape_operators(fm, h); });
  const auto dd = directional_data(fm, ops, base, h);
  const SpaceTimeGrid formula = fm.dtn(dd.dmu) + ops.dflux.apply(base.inner);
  const auto bvp = c.timings.time("bvp_route", [&] { return dtn_shape_diff_bvp(fm, base, h); });
  c.out.trace("dtn_shape_formula.csv", formula, p.outer, p.time);
  c.out.trace("dtn_shape_bvp.csv", bvp, p.outer, p.time);

  std::vector<std::vector<std::string>> routes;
  const double scale = grid_max(formula);
  const double route = scale > 0.0 ? grid_max(bvp - formula) / scale : grid_max(bvp);
  routes.push_back(metric_row("route_rel_max", route));
  c.results["route_rel_max"] = route;
  if (grid_max(p.g_inner) == 0.0) {
    const auto cky = dtn_from_inner_data(fm, cky_inner_data(fm, base, h));
    const double e = scale > 0.0 ? grid_max(cky - formula) / scale : grid_max(cky);
    routes.push_back(metric_row("cky_rel_max", e));
    c.results["cky_rel_max"] = e;
  }
  c.out.table("shape_routes.csv", {"metric", "value"}, routes);

  if (c.s.finite_difference) {
    const double e1 = c.s.eps[0], e2 = c.s.eps[1];
    std::vector<std::vector<std::string>> rows;
    auto add = [&](const std::string& name, const std::function<Eigen::MatrixXd(const ShapeMap&)>& f,
                   const Eigen::MatrixXd& ref) {
      const auto r = fd_directional(f, p.phi, h, ref, &p.outer, e1, e2);
      rows.push_back({name, fmt(r.eps_coarse), fmt(r.eps_fine), fmt(r.err_coarse), fmt(r.err_fine), fmt(r.ratio),
                      r.slope_valid ? fmt(r.slope) : "nan"});
      if (name == "dtn") c.results["fd_dtn_slope"] = r.slope_valid ? json(r.slope) : json(nullptr);
    };
    auto stacked = [](const DensityPair& d) {
      Eigen::MatrixXd m(d.outer.rows(), d.outer.cols() + d.inner.cols());
      m << d.outer, d.inner;
      return m;
    };
    c.timings.time("finite_difference", [&] {
      add("V1", [&](const ShapeMap& f) { return Eigen::MatrixXd(apply_V1(p.with_shape(f), base.inner)); },
          ops.dV1.apply(base.inner));
      add("V2", [&](const ShapeMap& f) { return Eigen::MatrixXd(apply_V2(p.with_shape(f), base.inner)); },
          ops.dV2.apply(base.inner));
      add("V3", [&](const ShapeMap& f) { return Eigen::MatrixXd(apply_V3(p.with_shape(f), base.outer)); },
          ops.dV3.apply(base.outer));
      add("densities", [&](const ShapeMap& f) { return stacked(ForwardModel(p.with_shape(f)).solve()); },
          stacked(dd.dmu));
      add(
          "dtn",
          [&](const ShapeMap& f) {
            const ForwardModel m(p.with_shape(f));
            return Eigen::MatrixXd(m.dtn(m.solve()));
          },
          formula);
    });
    c.out.table("shape_fd.csv", {"quantity", "eps_coarse", "eps_fine", "err_coarse", "err_fine", "ratio", "slope"},
                rows);
  }
  return exit_ok;
}

// Midpoints between the two curves at eight angles, at T/2 and T.
inline std::vector<FieldTarget> default_targets(const Scenario& s) {
  const ClosedCurve outer(s.outer, 8);
  const ShapeMap phi(ClosedCurve(s.reference, 8), s.phi);
  std::vector<FieldTarget> t;
  for (double tt : {0.5 * s.horizon, s.horizon})
    for (int j = 0; j < 8; ++j) {
      const Vec2 x = 0.5 * (outer.node(j).x + phi.image().node(j).x);
      if (outer.contains(x) && !phi.image().contains(x)) t.push_back({tt, x});
    }
  return t;
}

inline int run_verify(TaskContext& c) {
  if (!c.s.manufactured) throw ValidationError("data.manufactured", "verify needs manufactured sources");
  ManufacturedCase mc{c.s.outer, c.s.reference, c.s.phi, c.s.horizon, *c.s.manufactured,
                      c.s.targets.empty() ? default_targets(c.s) : c.s.targets};
  const auto table = convergence_study(mc, c.s.ladder);
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : table.rows) {
    rows.push_back({std::to_string(r.rung.n), std::to_string(r.rung.steps), fmt(r.dtn_max), fmt(r.dtn_l2),
                    fmt(r.interior)});
    c.timings.set("rung_" + std::to_string(r.rung.n) + "x" + std::to_string(r.rung.steps), r.seconds);
  }
  c.out.table("convergence.csv", {"n", "steps", "dtn_rel_max", "dtn_rel_l2", "interior_rel_max"}, rows);
  auto ord = [](const std::optional<double>& o) { return o ? fmt(*o) : std::string("nan"); };
  c.out.table("orders.csv", {"metric", "order"},
              {{"dtn_rel_max", ord(table.order_max)},
               {"dtn_rel_l2", ord(table.order_l2)},
               {"interior_rel_max", ord(table.order_interior)}});
  auto oj = [](const std::optional<double>& o) { return o ? json(*o) : json(nullptr); };
  c.results["order_dtn_max"] = oj(table.order_max);
  c.results["order_dtn_l2"] = oj(table.order_l2);
  c.results["order_interior"] = oj(table.order_interior);
  return exit_ok;
}

inline int run_invert(TaskContext& c) {
  const Scenario& s = c.s;
  if (s.manufactured) throw ValidationError("data.manufactured", "invert uses profile data with zero inner data");
  if (!s.g_inner.is_zero()) throw ValidationError("data.inner", "invert requires zero inner data");
  if (!s.has_invert) throw ValidationError("invert", "missing required section");

  const AnnulusProblem tmpl = c.timings.time("build", [&] {
    Scenario g = s;
    g.phi = s.guess;
    return build_problem(g);
  });
  const int r = s.truth_refinement;
  const SpaceTimeGrid measured = c.timings.time("synthesize", [&] {
    Scenario t = s;
    t.phi = s.truth;
    t.n_outer *= r;
    t.n_inner *= r;
    t.steps *= r;
    const ForwardModel fm(build_problem(t));
    return subsample(fm.dtn(fm.solve()), r, r);
  });
  CauchyData data{tmpl.g_outer, measured, s.noise};
  if (s.noise > 0.0) data.dtn = add_multiplicative_noise(data.dtn, s.noise, s.seed);

  const auto res = c.timings.time("reconstruct", [&] { return reconstruct(tmpl, data, tmpl.phi, s.inverse); });

  std::vector<std::vector<std::string>> hist;
  for (const auto& h : res.history)
    hist.push_back({std::to_string(h.iteration), fmt(h.residual), fmt(h.step_norm), fmt(h.step_scale),
                    std::to_string(h.rejected), fmt(h.decrease)});
  c.out.table("history.csv", {"iteration", "residual", "step_norm", "step_scale", "rejected", "decrease"}, hist);

  const ClosedCurve& img = res.phi.image();
  std::vector<std::vector<std::string>> pts;
  for (int j = 0; j < img.size(); ++j) pts.push_back({fmt(img.node(j).theta), fmt(img.node(j).x.x()), fmt(img.node(j).x.y())});
  c.out.table("boundary.csv", {"theta", "x", "y"}, pts);

  const ShapeMap truth(tmpl.phi.reference(), s.truth);
  const double dist = curve_distance(img, truth.image());
  c.out.table("reconstruction.csv", {"metric", "value"},
              {{"status", to_string(res.status)},
               metric_row("initial_residual", res.initial_residual),
               metric_row("residual", res.residual),
               metric_row("lambda", res.lambda),
               metric_row("iterations", double(res.history.size())),
               metric_row("distance_to_truth", dist)});
  c.results["status"] = to_string(res.status);
  c.results["residual"] = res.residual;
  c.results["distance_to_truth"] = dist;
  c.results["iterations"] = res.history.size();
  c.results["coefficients"] = scenario_detail::series_json(res.phi.coeffs());
  return res.status == InverseStatus::stagnation ? exit_stagnation : exit_ok;
}

}  // namespace cli_detail

// Runs `task` on the scenario file and writes outputs to `out_dir`.
// Diagnostics go to `err`; the return value is the process exit code.
inline int run_task(const std::string& task, const std::string& scenario_path, const std::string& out_dir,
                    int threads, std::ostream& err) {
  using namespace cli_detail;
  const auto start = std::chrono::steady_clock::now();
  json manifest;
  manifest["tool"] = "heatshape";
  manifest["version"] = version;
  manifest["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                      std::to_string(EIGEN_MINOR_VERSION);
#ifdef __VERSION__
  manifest["compiler"] = __VERSION__;
#endif
  manifest["task"] = task;
  manifest["threads"] = {{"requested", threads}, {"used", omp_get_max_threads()}};

  int code = exit_ok;
  std::string diagnostic;
  Timings timings;
  json results = json::object();
  std::vector<std::string> written;
  bool have_dir = false;
  try {
    if (std::find(task_names().begin(), task_names().end(), task) == task_names().end())
      throw ValidationError("task", "unknown task '" + task + "'");
    Scenario s = load_scenario(scenario_path);
    if (!s.task.empty() && s.task != task)
      throw ValidationError("task", "scenario is for '" + s.task + "', not '" + task + "'");
    s.task = task;
    manifest["scenario"] = to_json(s);

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw ValidationError("--out", "cannot create '" + out_dir + "': " + ec.message());
    have_dir = true;

    Outputs out(out_dir);
    TaskContext ctx{s, out, timings, results};
    try {
      if (task == "solve") code = run_solve(ctx);
      else if (task == "dtn") code = run_dtn(ctx);
      else if (task == "shape-diff") code = run_shape_diff(ctx);
      else if (task == "verify") code = run_verify(ctx);
      else code = run_invert(ctx);
    } catch (...) {
      written = out.written();
      throw;
    }
    written = out.written();
    if (code == exit_stagnation) diagnostic = "reconstruction stagnated: no admissible decreasing step";
  } catch (const ValidationError& e) {
    code = exit_validation;
    diagnostic = e.what();
    manifest["field"] = e.path;
  } catch (const GeometryError& e) {
    code = exit_validation;
    diagnostic = std::string("geometry: ") + e.what();
  } catch (const ClearanceError& e) {
    code = exit_validation;
    diagnostic = std::string("clearance: ") + e.what();
  } catch (const json::exception& e) {
    code = exit_validation;
    diagnostic = std::string("scenario: ") + e.what();
  } catch (const std::exception& e) {
    code = exit_numerical;
    diagnostic = std::string("numerical failure: ") + e.what();
  }

  timings.set("total", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  manifest["status"] = code == exit_ok ? "ok" : code == exit_validation ? "invalid" : code == exit_numerical ? "failed" : "stagnation";
  manifest["exit_code"] = code;
  if (!diagnostic.empty()) {
    manifest["diagnostic"] = diagnostic;
    err << "heatshape " << task << ": " << diagnostic << '\n';
  }
  manifest["results"] = results;
  manifest["outputs"] = written;
  manifest["timings"] = timings.to_json();
  if (have_dir) {
    std::ofstream m(std::filesystem::path(out_dir) / "manifest.json", std::ios::trunc);
    m << manifest.dump(2) << '\n';
    if (!m) {
      err << "heatshape " << task << ": cannot write manifest\n";
      if (code == exit_ok) code = exit_validation;
    }
  }
  return code;
}

}  // namespace heatshape
