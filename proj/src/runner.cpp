#include "riskpia/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "riskpia/error.hpp"
#include "riskpia/parallel.hpp"
#include "riskpia/toml.hpp"

#ifndef RISKPIA_VERSION
#define RISKPIA_VERSION "0.0.0"
#endif

namespace riskpia {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError("[" + where + "] must be a table");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw ConfigError("unknown key '" + it.key() + "' in [" + where + "]");
    }
  }
}

double as_number(const json& v, const std::string& what) {
  if (!v.is_number()) throw ConfigError(what + " must be a number");
  return v.get<double>();
}

std::vector<double> axis_list(const json& v, std::size_t d, const std::string& what) {
  std::vector<double> out;
  if (v.is_number()) {
    out.assign(d, v.get<double>());
  } else if (v.is_array()) {
    for (const auto& e : v) out.push_back(as_number(e, what));
  } else {
    throw ConfigError(what + " must be a number or an array of numbers");
  }
  if (out.size() != d) throw ConfigError(what + " needs " + std::to_string(d) + " entries");
  return out;
}

std::vector<std::vector<double>> axis_list_list(const json& v, std::size_t d, const std::string& what) {
  if (!v.is_array()) throw ConfigError(what + " must be an array");
  std::vector<std::vector<double>> out;
  for (const auto& e : v) out.push_back(axis_list(e, d, what));
  return out;
}

template <class T>
T get_or(const json& obj, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("bad value for '") + key + "'");
  }
}

double positive(const json& obj, const char* key, double fallback, const std::string& where) {
  const double v = obj.contains(key) ? as_number(obj.at(key), key) : fallback;
  if (!(v > 0.0)) throw ConfigError(where + "." + key + " must be positive");
  return v;
}

std::size_t count_value(const json& obj, const char* key, std::size_t fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  double x = 0.0;
  if (v.is_number_integer()) {
    x = static_cast<double>(v.get<std::int64_t>());
  } else if (v.is_number()) {
    x = v.get<double>();
    if (x != std::floor(x)) throw ConfigError(where + "." + key + " must be an integer");
  } else {
    throw ConfigError(where + "." + key + " must be an integer");
  }
  if (x < 0.0) throw ConfigError(where + "." + key + " must be nonnegative");
  return static_cast<std::size_t>(x);
}

json grid_json(const Grid& g, DriftScheme scheme) {
  json j;
  j["dim"] = g.dim();
  std::vector<double> lo, hi, h;
  for (int a = 0; a < g.dim(); ++a) {
    lo.push_back(g.lower(a));
    hi.push_back(g.upper(a));
    h.push_back(g.step(a));
  }
  j["lower"] = lo;
  j["upper"] = hi;
  j["steps"] = h;
  j["interior_nodes"] = g.interior_count();
  j["scheme"] = to_string(scheme);
  return j;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error("bad number '" + s + "' in " + what);
  }
}

/// Rows of a CSV whose leading columns are interior-node coordinates, in
/// interior order.
std::vector<std::vector<std::string>> read_node_csv(const fs::path& path, const Grid& g, std::size_t columns) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("missing artifact " + path.string());
  std::string line;
  std::getline(in, line);  // header
  std::vector<std::vector<std::string>> rows;
  Point x(static_cast<std::size_t>(g.dim()));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_csv(line);
    if (f.size() < columns) throw Error("short row in " + path.string());
    const std::size_t r = rows.size();
    if (r >= g.interior_count()) throw Error(path.string() + " has more rows than the grid");
    g.coordinates(g.node_of_interior(r), x);
    for (int a = 0; a < g.dim(); ++a) {
      const double v = parse_double(f[static_cast<std::size_t>(a)], path.string());
      if (std::abs(v - x[static_cast<std::size_t>(a)]) > 1e-9 * g.step(a)) {
        throw ConfigError(path.string() + " does not match the configured grid");
      }
    }
    rows.push_back(std::move(f));
  }
  if (rows.size() != g.interior_count()) throw ConfigError(path.string() + " does not match the configured grid");
  return rows;
}

fs::path summary_path(const fs::path& dir) { return dir / "summary.json"; }

std::optional<json> read_summary(const fs::path& dir) {
  const fs::path p = summary_path(dir);
  if (!fs::exists(p)) return std::nullopt;
  try {
    return json::parse(read_text(p));
  } catch (const json::exception& e) {
    throw Error("cannot parse " + p.string() + ": " + e.what());
  }
}

void write_json(const fs::path& p, const json& j) { write_file_atomic(p, j.dump(2) + "\n"); }

std::vector<Point> lattice_sample(const Grid& g) {
  // At most 41 points per axis over the closed box.
  const int d = g.dim();
  std::array<int, Grid::kMaxDim> n{};
  std::size_t total = 1;
  for (int a = 0; a < d; ++a) {
    n[static_cast<std::size_t>(a)] = static_cast<int>(std::min<long>(41, g.count(a)));
    total *= static_cast<std::size_t>(n[static_cast<std::size_t>(a)]);
  }
  std::vector<Point> pts;
  pts.reserve(total);
  for (std::size_t k = 0; k < total; ++k) {
    Point x(static_cast<std::size_t>(d));
    std::size_t rest = k;
    for (int a = d - 1; a >= 0; --a) {
      const auto na = static_cast<std::size_t>(n[static_cast<std::size_t>(a)]);
      const std::size_t i = rest % na;
      rest /= na;
      x[static_cast<std::size_t>(a)] =
          g.lower(a) + (g.upper(a) - g.lower(a)) * static_cast<double>(i) / static_cast<double>(na - 1);
    }
    pts.push_back(std::move(x));
  }
  return pts;
}

json eig_json(const EigenPair& e) {
  double vmin = e.V.empty() ? 0.0 : *std::min_element(e.V.begin(), e.V.end());
  double vmax = e.V.empty() ? 0.0 : *std::max_element(e.V.begin(), e.V.end());
  return json{{"lambda", e.lambda},
              {"certificate", {{"lower", e.cw_lower}, {"upper", e.cw_upper}}},
              {"eig_iterations", e.iterations},
              {"residual", e.residual},
              {"v_min", vmin},
              {"v_max", vmax},
              {"harnack_ratio", vmin > 0.0 ? vmax / vmin : 0.0}};
}

json guard_json(const GuardReport& g) {
  return json{{"pass", g.pass},
              {"lambda0", g.lambda0},
              {"certificate", {{"lower", g.cw_lower}, {"upper", g.cw_upper}}},
              {"boundary_proxy", g.boundary_proxy},
              {"argmax_x", g.argmax_x},
              {"argmax_control", g.argmax_control}};
}

struct Context {
  RunConfig cfg;
  fs::path dir;
  std::ostream& out;
  std::ostream& err;
  bool allow_guard_fail = false;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

int cmd_check(Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  const Grid g = cfg.primary_grid();
  const AssumptionReport rep =
      validate_assumptions(cfg.problem, make_sample(cfg.problem.d, lattice_sample(g)), cfg.check);
  for (const auto& c : rep.checks) {
    ctx.out << c.name << ": " << to_string(c.verdict);
    if (!c.witnesses.empty()) ctx.out << " (" << c.witnesses.size() << " witnesses)";
    ctx.out << "\n";
  }
  fs::create_directories(ctx.dir);
  write_json(ctx.dir / "check.json", json{{"version", RISKPIA_VERSION},
                                          {"command", "check"},
                                          {"all_pass", rep.all_pass()},
                                          {"assumptions", rep.to_json()}});
  return rep.all_pass() ? exit_code::kOk : exit_code::kCheckFailed;
}

int cmd_solve(Context& ctx) {
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  const RunConfig& cfg = ctx.cfg;
  const Grid g = cfg.primary_grid();
  const Discretization disc(cfg.problem, g, cfg.grid.scheme);
  const PolicyField v0 = cfg.initial_policy(g);
  PiaOptions opt = cfg.solve.pia;
  fs::create_directories(ctx.dir);

  json summary;
  summary["version"] = RISKPIA_VERSION;
  summary["command"] = "solve";
  summary["name"] = cfg.name;
  summary["seed"] = cfg.seed;
  summary["config"] = cfg.raw;
  summary["grid"] = grid_json(g, cfg.grid.scheme);
  summary["sense"] = to_string(opt.sense);

  if (opt.sense == Sense::Max) {
    const GuardReport gr = guard_max(disc, v0, opt.eig_tol, opt.eig_max_iter);
    summary["guard"] = guard_json(gr);
    ctx.out << "guard: lambda0 = " << format_double(gr.lambda0)
            << ", boundary cost proxy = " << format_double(gr.boundary_proxy) << " -> "
            << (gr.pass ? "pass" : "fail") << "\n";
    if (!gr.pass && !ctx.allow_guard_fail) {
      write_json(ctx.dir / "guard.json", summary["guard"]);
      throw GuardFailed(gr.lambda0, gr.boundary_proxy);
    }
    opt.allow_guard_fail = true;
  }

  const SolveResult res = solve_pia(disc, v0, opt);
  const GradientReport grad = gradient_diagnostic(g, res.eig.V);
  const AssumptionReport rep =
      validate_assumptions(cfg.problem, make_sample(cfg.problem.d, lattice_sample(g)), cfg.check);

  summary["eigen"] = eig_json(res.eig);
  summary["lambda"] = res.eig.lambda;
  summary["certificate"] = {{"lower", res.eig.cw_lower}, {"upper", res.eig.cw_upper}};
  summary["termination"] = to_string(res.reason);
  summary["outer_iterations"] = res.trace.steps.size();
  summary["psi"] = {{"ball_radius", res.trace.psi_ball_radius},
                    {"ball_volume", res.trace.psi_ball_volume},
                    {"final_l1_ball", res.trace.steps.back().psi_l1_ball},
                    {"final_sup", res.trace.steps.back().psi_sup}};
  summary["gradient"] = {{"C", grad.C}, {"argmax_x", grad.argmax_x}, {"argmax_ratio", grad.argmax_ratio}};
  if (cfg.problem.known_lambda) {
    summary["known_lambda"] = *cfg.problem.known_lambda;
    summary["error_vs_known"] = res.eig.lambda - *cfg.problem.known_lambda;
  }
  summary["assumptions"] = rep.to_json();

  if (cfg.output.csv) {
    write_file_atomic(ctx.dir / "trace.csv", trace_csv(res.trace));
    write_file_atomic(ctx.dir / "eigenfunction.csv", eigenfunction_csv(g, res.eig.V));
    write_file_atomic(ctx.dir / "policy.csv", policy_csv(g, cfg.problem.controls, res.policy));
  }
  if (cfg.output.matrix_dump) {
    std::ostringstream m;
    disc.assemble_policy(res.policy).dump(m);
    write_file_atomic(ctx.dir / "generator.txt", m.str());
  }
  write_file_atomic(ctx.dir / "config.toml", cfg.source_text);
  summary["timing"] = {{"total_ms", std::chrono::duration<double, std::milli>(Clock::now() - t0).count()}};
  write_json(summary_path(ctx.dir), summary);

  ctx.out << "lambda = " << format_double(res.eig.lambda) << "  certified in [" << format_double(res.eig.cw_lower)
          << ", " << format_double(res.eig.cw_upper) << "]  (" << to_string(res.reason) << " after "
          << res.trace.steps.size() << " iterations)\n";
  return exit_code::kOk;
}

int cmd_refine(Context& ctx) {
  const RefineResult r = refine_study(ctx.cfg);
  fs::create_directories(ctx.dir);
  std::string csv = "study,R,h,lambda,cw_lower,cw_upper,outer_iterations,termination\n";
  for (const auto& row : r.rows) {
    csv += row.study + "," + format_double(row.R) + "," + format_double(row.h) + "," + format_double(row.lambda) +
           "," + format_double(row.cw_lower) + "," + format_double(row.cw_upper) + "," +
           std::to_string(row.outer_iterations) + "," + row.termination + "\n";
  }
  if (ctx.cfg.output.csv) write_file_atomic(ctx.dir / "refine.csv", csv);
  const json rj = r.to_json();
  write_json(ctx.dir / "refine.json", rj);
  if (auto s = read_summary(ctx.dir)) {
    (*s)["refinement"] = rj;
    write_json(summary_path(ctx.dir), *s);
  }
  for (const auto& row : r.rows) {
    ctx.out << row.study << "  R = " << format_double(row.R) << "  h = " << format_double(row.h)
            << "  lambda = " << format_double(row.lambda) << "\n";
  }
  ctx.out << "Richardson estimate (order " << r.richardson_order << "): " << format_double(r.richardson) << "\n";
  if (!r.radius_nondecreasing) throw InvariantViolation("Dirichlet eigenvalue decreased as the box grew");
  return exit_code::kOk;
}

int cmd_oracle(Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  const Grid g = cfg.primary_grid();
  const Discretization disc(cfg.problem, g, cfg.grid.scheme);
  const Sense sense = cfg.solve.pia.sense;
  const OracleResult r = brute_optimum(disc, sense, cfg.oracle.options);
  fs::create_directories(ctx.dir);
  if (cfg.output.csv) {
    std::ostringstream t;
    write_oracle_table(t, r);
    write_file_atomic(ctx.dir / "oracle_table.csv", t.str());
  }
  json oj{{"best_lambda", r.best_lambda},
          {"best_policy", policy_digits(r.best_policy, r.controls)},
          {"count", r.count},
          {"sense", to_string(sense)},
          {"eig_tol", cfg.oracle.options.eig_tol}};
  if (cfg.oracle.options.compare_sparse) oj["max_dense_sparse_difference"] = r.max_solver_difference;
  ctx.out << "oracle: " << r.count << " policies, best lambda = " << format_double(r.best_lambda) << " (policy "
          << policy_digits(r.best_policy, r.controls) << ")\n";

  int code = exit_code::kOk;
  auto s = read_summary(ctx.dir);
  if (s && s->contains("lambda") && s->value("grid", json()) == grid_json(g, cfg.grid.scheme)) {
    SolveResult pia;
    pia.eig.lambda = s->at("lambda").get<double>();
    pia.policy = read_policy_csv(ctx.dir / "policy.csv", g, cfg.problem.controls.size());
    const CrosscheckReport c = crosscheck(pia, r, cfg.oracle.tol);
    oj["crosscheck"] = {{"pass", c.pass},
                        {"pia_lambda", c.pia_lambda},
                        {"oracle_lambda", c.oracle_lambda},
                        {"difference", c.difference},
                        {"tol", c.tol},
                        {"pia_policy", policy_digits(c.pia_policy, r.controls)},
                        {"oracle_policy", policy_digits(c.oracle_policy, r.controls)},
                        {"same_policy", c.same_policy}};
    ctx.out << "crosscheck against solve artifact: |difference| = " << format_double(c.difference)
            << (c.pass ? " pass" : " FAIL") << "\n";
    if (!c.pass) code = exit_code::kMismatch;
  }
  write_json(ctx.dir / "oracle.json", oj);
  if (s) {
    (*s)["oracle"] = oj;
    write_json(summary_path(ctx.dir), *s);
  }
  return code;
}

int cmd_simulate(Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  const Grid g = cfg.primary_grid();
  const std::size_t K = cfg.problem.controls.size();
  EigenPair eig;
  PolicyField policy;
  std::optional<json> s = read_summary(ctx.dir);
  const bool have_artifact = s && s->contains("lambda") && fs::exists(ctx.dir / "eigenfunction.csv") &&
                             fs::exists(ctx.dir / "policy.csv");
  if (have_artifact) {
    if (s->value("grid", json()) != grid_json(g, cfg.grid.scheme)) {
      throw ConfigError("solve artifact in " + ctx.dir.string() + " was produced on a different grid");
    }
    eig.lambda = s->at("lambda").get<double>();
    eig.cw_lower = s->at("certificate").at("lower").get<double>();
    eig.cw_upper = s->at("certificate").at("upper").get<double>();
    eig.V = read_eigenfunction_csv(ctx.dir / "eigenfunction.csv", g);
    policy = read_policy_csv(ctx.dir / "policy.csv", g, K);
  } else if (cfg.mc.policy) {
    if (*cfg.mc.policy >= K) throw ConfigError("mc.policy is not a control index");
    policy = constant_policy(g, *cfg.mc.policy);
    eig = principal_eigpair(assemble_policy(cfg.problem, g, policy, cfg.grid.scheme), cfg.solve.pia.eig_tol,
                            cfg.solve.pia.eig_max_iter);
  } else {
    throw MissingArtifact("no solve artifact in " + ctx.dir.string() + " and no mc.policy given");
  }

  json mc;
  mc["seed"] = cfg.seed;
  mc["lambda_used"] = eig.lambda;
  McConfig base = cfg.mc.base;
  base.seed = cfg.seed;
  if (cfg.mc.risk && base.T > 0.0) {
    const McEstimate e = estimate_risk_cost(cfg.problem, g, policy, base);
    mc["risk_cost"] = {{"value", e.value},
                       {"std_error", e.std_error},
                       {"value_half_horizon", e.value_half},
                       {"std_error_half_horizon", e.std_error_half},
                       {"T", e.T},
                       {"dt", base.dt},
                       {"n_paths", e.n_paths},
                       {"n_effective", e.n_effective},
                       {"max_exponent", e.max_exponent},
                       {"exited_fraction", e.exited_fraction},
                       {"x0", base.x0},
                       {"exit", to_string(base.exit)},
                       {"note", "finite-horizon, finite-sample proxy for the long-run criterion"}};
    ctx.out << "risk-sensitive cost estimate = " << format_double(e.value) << " +- " << format_double(e.std_error)
            << " (T/2: " << format_double(e.value_half) << ")\n";
  }

  bool fk_ok = true;
  if (cfg.mc.fk.enabled) {
    std::vector<Point> starts = cfg.mc.fk.x0;
    if (starts.empty()) starts.push_back(base.x0);
    std::string csv = "x0,estimate,std_error,v0,difference,bias_budget,allowance,exited_fraction,pass\n";
    json arr = json::array();
    for (const Point& x0 : starts) {
      McConfig fc = base;
      fc.x0 = x0;
      if (cfg.mc.fk.dt) fc.dt = *cfg.mc.fk.dt;
      if (cfg.mc.fk.n_paths) fc.n_paths = *cfg.mc.fk.n_paths;
      const FkReport r = feynman_kac_check(cfg.problem, g, policy, eig, fc, cfg.mc.fk.options);
      fk_ok = fk_ok && r.pass;
      std::string xs;
      for (std::size_t j = 0; j < x0.size(); ++j) xs += (j ? " " : "") + format_double(x0[j]);
      csv += xs + "," + format_double(r.estimate) + "," + format_double(r.std_error) + "," + format_double(r.v0) +
             "," + format_double(r.difference) + "," + format_double(r.bias_budget) + "," +
             format_double(r.allowance) + "," + format_double(r.exited_fraction) + "," + (r.pass ? "1" : "0") + "\n";
      arr.push_back({{"x0", x0},
                     {"estimate", r.estimate},
                     {"std_error", r.std_error},
                     {"v0", r.v0},
                     {"difference", r.difference},
                     {"bias_budget", r.bias_budget},
                     {"allowance", r.allowance},
                     {"t_max", r.t_max},
                     {"dt", r.dt},
                     {"n_paths", r.n_paths},
                     {"exited_fraction", r.exited_fraction},
                     {"pass", r.pass}});
      ctx.out << "Feynman-Kac at x0 = " << xs << ": " << format_double(r.estimate) << " vs V(x0) = "
              << format_double(r.v0) << " (allowance " << format_double(r.allowance) << ") "
              << (r.pass ? "pass" : "FAIL") << "\n";
    }
    mc["feynman_kac"] = arr;
    mc["feynman_kac_bias_budget"] = {{"dt_coeff", cfg.mc.fk.options.bias_dt_coeff},
                                     {"h_coeff", cfg.mc.fk.options.bias_h_coeff},
                                     {"z", cfg.mc.fk.options.z}};
    fs::create_directories(ctx.dir);
    if (cfg.output.csv) write_file_atomic(ctx.dir / "feynman_kac.csv", csv);
  }

  if (cfg.mc.twisted.enabled) {
    McConfig tc = base;
    tc.T = cfg.mc.twisted.T;
    tc.dt = cfg.mc.twisted.dt;
    tc.n_paths = cfg.mc.twisted.n_paths;
    tc.exit = ExitPolicy::Free;
    if (cfg.mc.twisted.x0) tc.x0 = *cfg.mc.twisted.x0;
    const TwistedReport t = twisted_diagnostics(cfg.problem, g, policy, eig, tc, cfg.mc.twisted.options);
    mc["twisted"] = {{"mean", t.mean},
                     {"variance", t.variance},
                     {"radii", t.radii},
                     {"outside_fraction", t.outside_fraction},
                     {"return_radius", t.return_radius},
                     {"excursions", t.excursions},
                     {"mean_return_time", t.mean_return_time},
                     {"tail_rate", t.tail_rate},
                     {"sampled_time", t.sampled_time},
                     {"T", tc.T},
                     {"dt", tc.dt},
                     {"n_paths", tc.n_paths}};
    if (cfg.output.csv) {
      std::string h = "axis,bin_lower,bin_upper,fraction\n";
      for (std::size_t j = 0; j < t.histograms.size(); ++j) {
        const Histogram& hg = t.histograms[j];
        const double w = (hg.upper - hg.lower) / static_cast<double>(hg.counts.size());
        for (std::size_t b = 0; b < hg.counts.size(); ++b) {
          h += std::to_string(j + 1) + "," + format_double(hg.lower + w * static_cast<double>(b)) + "," +
               format_double(hg.lower + w * static_cast<double>(b + 1)) + "," + format_double(hg.counts[b]) + "\n";
        }
      }
      std::string l = "radius,outside_fraction\n";
      for (std::size_t q = 0; q < t.radii.size(); ++q) {
        l += format_double(t.radii[q]) + "," + format_double(t.outside_fraction[q]) + "\n";
      }
      fs::create_directories(ctx.dir);
      write_file_atomic(ctx.dir / "twisted_histogram.csv", h);
      write_file_atomic(ctx.dir / "twisted_ladder.csv", l);
    }
    for (std::size_t j = 0; j < t.variance.size(); ++j) {
      ctx.out << "twisted process axis " << j + 1 << ": mean " << fmt("%.6g", t.mean[j]) << ", variance "
              << fmt("%.6g", t.variance[j]) << "\n";
    }
  }
  mc["feynman_kac_pass"] = fk_ok;

  fs::create_directories(ctx.dir);
  json out = s ? *s : json{{"version", RISKPIA_VERSION},
                          {"command", "simulate"},
                          {"grid", grid_json(g, cfg.grid.scheme)},
                          {"lambda", eig.lambda},
                          {"certificate", {{"lower", eig.cw_lower}, {"upper", eig.cw_upper}}}};
  out["mc"] = mc;
  write_json(summary_path(ctx.dir), out);
  return fk_ok ? exit_code::kOk : exit_code::kMismatch;
}

}  // namespace

Grid RunConfig::primary_grid() const {
  if (grid.lower) return build_box_grid(problem.d, *grid.lower, grid.radii, grid.steps);
  return build_grid(problem.d, grid.radii, grid.steps);
}

Grid RunConfig::grid_with(const std::vector<double>& radii, const std::vector<double>& steps) const {
  return build_grid(problem.d, radii, steps);
}

PolicyField RunConfig::initial_policy(const Grid& g) const {
  const std::size_t K = problem.controls.size();
  switch (solve.init) {
    case InitialPolicy::Constant:
      if (solve.init_control >= K) throw ConfigError("solve.initial_policy is not a control index");
      return constant_policy(g, solve.init_control);
    case InitialPolicy::Random:
      return random_policy(g, K, seed);
    case InitialPolicy::File:
      return read_policy_csv(solve.init_file, g, K);
  }
  return constant_policy(g, 0);
}

RunConfig load_config_text(const std::string& text, const fs::path& base_dir) {
  RunConfig cfg;
  cfg.source_text = text;
  cfg.raw = parse_toml(text);
  const json& doc = cfg.raw;
  try {
    reject_unknown(doc, {"name", "seed", "problem", "grid", "solve", "mc", "oracle", "output", "check"}, "top level");
    if (!doc.contains("problem")) throw ConfigError("missing [problem] section");
    if (!doc.contains("grid")) throw ConfigError("missing [grid] section");
    cfg.name = get_or<std::string>(doc, "name", "");
    if (doc.contains("seed")) {
      const json& s = doc.at("seed");
      if (!s.is_number_integer() || s.get<std::int64_t>() < 0) throw ConfigError("seed must be a nonnegative integer");
      cfg.seed = static_cast<std::uint64_t>(s.get<std::int64_t>());
    }
    cfg.problem = build_problem(doc.at("problem"));
    const auto d = static_cast<std::size_t>(cfg.problem.d);

    const json& gj = doc.at("grid");
    reject_unknown(gj, {"radii", "lower", "upper", "steps", "scheme", "refine_radii", "refine_steps"}, "grid");
    if (!gj.contains("steps")) throw ConfigError("[grid] needs steps");
    cfg.grid.steps = axis_list(gj.at("steps"), d, "grid.steps");
    if (gj.contains("lower") || gj.contains("upper")) {
      // box [lower, upper] instead of [-radii, radii]
      if (!gj.contains("lower") || !gj.contains("upper") || gj.contains("radii")) {
        throw ConfigError("[grid] needs either radii or both lower and upper");
      }
      cfg.grid.lower = axis_list(gj.at("lower"), d, "grid.lower");
      cfg.grid.radii = axis_list(gj.at("upper"), d, "grid.upper");
    } else {
      if (!gj.contains("radii")) throw ConfigError("[grid] needs radii");
      cfg.grid.radii = axis_list(gj.at("radii"), d, "grid.radii");
    }
    cfg.grid.scheme = parse_drift_scheme(get_or<std::string>(gj, "scheme", "hybrid"));
    if (gj.contains("refine_radii")) {
      cfg.grid.refine_radii = axis_list_list(gj.at("refine_radii"), d, "grid.refine_radii");
      for (std::size_t i = 1; i < cfg.grid.refine_radii.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          if (!(cfg.grid.refine_radii[i][j] > cfg.grid.refine_radii[i - 1][j])) {
            throw ConfigError("grid.refine_radii must be strictly increasing");
          }
        }
      }
    }
    if (gj.contains("refine_steps")) cfg.grid.refine_steps = axis_list_list(gj.at("refine_steps"), d, "grid.refine_steps");
    (void)cfg.primary_grid();  // surfaces lattice errors at load time

    const json sj = doc.value("solve", json::object());
    reject_unknown(sj,
                   {"sense", "tol_lambda", "tie_tol", "max_outer", "eig_tol", "eig_max_iter", "initial_policy",
                    "initial_policy_file", "psi_radius", "warm_start", "check_invariants"},
                   "solve");
    PiaOptions& po = cfg.solve.pia;
    po.sense = parse_sense(get_or<std::string>(sj, "sense", "min"));
    po.tol_lambda = positive(sj, "tol_lambda", po.tol_lambda, "solve");
    if (sj.contains("tie_tol")) {
      po.tie_tol = as_number(sj.at("tie_tol"), "solve.tie_tol");
      if (po.tie_tol < 0.0) throw ConfigError("solve.tie_tol must be nonnegative");
    }
    po.max_outer = count_value(sj, "max_outer", po.max_outer, "solve");
    if (po.max_outer == 0) throw ConfigError("solve.max_outer must be at least 1");
    po.eig_tol = positive(sj, "eig_tol", po.eig_tol, "solve");
    po.eig_max_iter = count_value(sj, "eig_max_iter", po.eig_max_iter, "solve");
    if (sj.contains("psi_radius")) po.psi_radius = positive(sj, "psi_radius", 1.0, "solve");
    po.warm_start = get_or<bool>(sj, "warm_start", true);
    po.check_invariants = get_or<bool>(sj, "check_invariants", true);
    if (sj.contains("initial_policy") && sj.contains("initial_policy_file")) {
      throw ConfigError("give either solve.initial_policy or solve.initial_policy_file");
    }
    if (sj.contains("initial_policy")) {
      const json& ip = sj.at("initial_policy");
      if (ip.is_string() && ip.get<std::string>() == "random") {
        cfg.solve.init = InitialPolicy::Random;
      } else if (ip.is_number_integer() && ip.get<std::int64_t>() >= 0) {
        cfg.solve.init_control = static_cast<std::uint32_t>(ip.get<std::int64_t>());
        if (cfg.solve.init_control >= cfg.problem.controls.size()) {
          throw ConfigError("solve.initial_policy is not a control index");
        }
      } else {
        throw ConfigError("solve.initial_policy must be a control index or \"random\"");
      }
    }
    if (sj.contains("initial_policy_file")) {
      cfg.solve.init = InitialPolicy::File;
      cfg.solve.init_file = base_dir / get_or<std::string>(sj, "initial_policy_file", "");
    }

    const json mj = doc.value("mc", json::object());
    reject_unknown(mj, {"x0", "T", "dt", "n_paths", "exit", "risk", "policy", "fk", "twisted"}, "mc");
    McConfig& b = cfg.mc.base;
    b.x0 = mj.contains("x0") ? axis_list(mj.at("x0"), d, "mc.x0") : Point(d, 0.0);
    if (mj.contains("T")) b.T = as_number(mj.at("T"), "mc.T");
    if (!(b.T >= 0.0)) throw ConfigError("mc.T must be nonnegative");
    b.dt = positive(mj, "dt", b.dt, "mc");
    b.n_paths = count_value(mj, "n_paths", b.n_paths, "mc");
    if (b.n_paths == 0) throw ConfigError("mc.n_paths must be at least 1");
    b.exit = parse_exit_policy(get_or<std::string>(mj, "exit", "free"));
    cfg.mc.risk = get_or<bool>(mj, "risk", true);
    if (mj.contains("policy")) {
      const std::size_t k = count_value(mj, "policy", 0, "mc");
      if (k >= cfg.problem.controls.size()) throw ConfigError("mc.policy is not a control index");
      cfg.mc.policy = static_cast<std::uint32_t>(k);
    }
    const json fj = mj.value("fk", json::object());
    reject_unknown(fj, {"enabled", "x0", "t_max", "dt", "n_paths", "bias_dt", "bias_h", "z"}, "mc.fk");
    FkSection& fk = cfg.mc.fk;
    fk.enabled = get_or<bool>(fj, "enabled", true);
    if (fj.contains("x0")) fk.x0 = axis_list_list(fj.at("x0"), d, "mc.fk.x0");
    if (fj.contains("t_max")) {
      fk.options.t_max = as_number(fj.at("t_max"), "mc.fk.t_max");
      if (!(fk.options.t_max >= 0.0)) throw ConfigError("mc.fk.t_max must be nonnegative");
    }
    if (fj.contains("dt")) fk.dt = positive(fj, "dt", 1.0, "mc.fk");
    if (fj.contains("n_paths")) {
      fk.n_paths = count_value(fj, "n_paths", 1, "mc.fk");
      if (*fk.n_paths == 0) throw ConfigError("mc.fk.n_paths must be at least 1");
    }
    if (fj.contains("bias_dt")) fk.options.bias_dt_coeff = as_number(fj.at("bias_dt"), "mc.fk.bias_dt");
    if (fj.contains("bias_h")) fk.options.bias_h_coeff = as_number(fj.at("bias_h"), "mc.fk.bias_h");
    if (fj.contains("z")) fk.options.z = positive(fj, "z", 3.0, "mc.fk");
    const json tj = mj.value("twisted", json::object());
    reject_unknown(tj, {"enabled", "T", "dt", "n_paths", "x0", "burn_in", "radii", "return_radius", "bins"},
                   "mc.twisted");
    TwistedSection& tw = cfg.mc.twisted;
    tw.enabled = get_or<bool>(tj, "enabled", true);
    tw.T = positive(tj, "T", tw.T, "mc.twisted");
    tw.dt = positive(tj, "dt", tw.dt, "mc.twisted");
    tw.n_paths = count_value(tj, "n_paths", tw.n_paths, "mc.twisted");
    if (tw.n_paths == 0) throw ConfigError("mc.twisted.n_paths must be at least 1");
    if (tj.contains("x0")) tw.x0 = axis_list(tj.at("x0"), d, "mc.twisted.x0");
    if (tj.contains("burn_in")) tw.options.burn_in = as_number(tj.at("burn_in"), "mc.twisted.burn_in");
    if (tj.contains("radii")) {
      if (!tj.at("radii").is_array()) throw ConfigError("mc.twisted.radii must be an array");
      for (const auto& r : tj.at("radii")) tw.options.radii.push_back(as_number(r, "mc.twisted.radii"));
    }
    if (tj.contains("return_radius")) tw.options.return_radius = positive(tj, "return_radius", 1.0, "mc.twisted");
    tw.options.bins = count_value(tj, "bins", tw.options.bins, "mc.twisted");
    if (tw.options.bins == 0) throw ConfigError("mc.twisted.bins must be at least 1");

    const json oj = doc.value("oracle", json::object());
    reject_unknown(oj, {"limit", "tol", "compare_sparse", "eig_tol"}, "oracle");
    cfg.oracle.options.limit = positive(oj, "limit", cfg.oracle.options.limit, "oracle");
    cfg.oracle.tol = positive(oj, "tol", cfg.oracle.tol, "oracle");
    cfg.oracle.options.compare_sparse = get_or<bool>(oj, "compare_sparse", true);
    cfg.oracle.options.eig_tol = positive(oj, "eig_tol", cfg.oracle.options.eig_tol, "oracle");
    cfg.oracle.options.sparse_eig_tol = po.eig_tol;

    const json outj = doc.value("output", json::object());
    reject_unknown(outj, {"dir", "formats", "matrix_dump"}, "output");
    if (outj.contains("dir")) {
      const fs::path p = get_or<std::string>(outj, "dir", "out");
      cfg.output.dir = p.is_absolute() ? p : base_dir / p;
    } else {
      cfg.output.dir = base_dir / "out";
    }
    if (outj.contains("formats")) {
      const auto f = get_or<std::vector<std::string>>(outj, "formats", {});
      for (const auto& x : f) {
        if (x != "csv" && x != "json") throw ConfigError("output.formats entries must be csv or json");
      }
      cfg.output.csv = std::find(f.begin(), f.end(), "csv") != f.end();
    }
    cfg.output.matrix_dump = get_or<bool>(outj, "matrix_dump", false);

    const json cj = doc.value("check", json::object());
    reject_unknown(cj,
                   {"ellipticity_min", "growth_exponent_slack", "gamma_margin", "fd_step", "max_witnesses",
                    "near_monotone"},
                   "check");
    ValidationThresholds& th = cfg.check;
    th.ellipticity_min = positive(cj, "ellipticity_min", th.ellipticity_min, "check");
    th.growth_exponent_slack = cj.contains("growth_exponent_slack")
                                   ? as_number(cj.at("growth_exponent_slack"), "check.growth_exponent_slack")
                                   : th.growth_exponent_slack;
    th.gamma_margin = positive(cj, "gamma_margin", th.gamma_margin, "check");
    th.fd_step = positive(cj, "fd_step", th.fd_step, "check");
    th.max_witnesses = count_value(cj, "max_witnesses", th.max_witnesses, "check");
    th.check_near_monotone = get_or<bool>(cj, "near_monotone", false);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed configuration: ") + e.what());
  }
  return cfg;
}

RunConfig load_config_file(const fs::path& path) {
  return load_config_text(read_text(path), path.has_parent_path() ? path.parent_path() : fs::path("."));
}

json RefineResult::to_json() const {
  json rows_j = json::array();
  for (const auto& r : rows) {
    rows_j.push_back({{"study", r.study},
                      {"R", r.R},
                      {"h", r.h},
                      {"lambda", r.lambda},
                      {"certificate", {{"lower", r.cw_lower}, {"upper", r.cw_upper}}},
                      {"outer_iterations", r.outer_iterations},
                      {"termination", r.termination}});
  }
  json j{{"rows", rows_j},
         {"radius_nondecreasing", radius_nondecreasing},
         {"step_differences_decreasing", step_differences_decreasing},
         {"richardson", richardson},
         {"richardson_order", richardson_order}};
  if (observed_order) j["observed_order"] = *observed_order;
  return j;
}

RefineResult refine_study(const RunConfig& cfg) {
  if (cfg.grid.refine_radii.empty()) throw ConfigError("refine needs grid.refine_radii");
  const Grid g0 = cfg.primary_grid();
  RefineResult out;
  std::map<std::pair<std::vector<double>, std::vector<double>>, RefineRow> cache;

  auto solve_on = [&](const std::vector<double>& radii, const std::vector<double>& steps) {
    const auto key = std::make_pair(radii, steps);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
    const Grid g = cfg.grid_with(radii, steps);
    PiaOptions opt = cfg.solve.pia;
    opt.allow_guard_fail = true;
    const PolicyField v0 = cfg.solve.init == InitialPolicy::File ? constant_policy(g, 0) : cfg.initial_policy(g);
    const SolveResult r = solve_pia(cfg.problem, g, v0, opt, cfg.grid.scheme);
    RefineRow row;
    row.R = radii[0];
    row.h = steps[0];
    row.lambda = r.eig.lambda;
    row.cw_lower = r.eig.cw_lower;
    row.cw_upper = r.eig.cw_upper;
    row.outer_iterations = r.trace.steps.size();
    row.termination = to_string(r.reason);
    cache.emplace(key, row);
    return row;
  };

  std::vector<double> steps0(static_cast<std::size_t>(g0.dim()));
  for (int a = 0; a < g0.dim(); ++a) steps0[static_cast<std::size_t>(a)] = g0.step(a);
  (void)nested_refinements(g0, cfg.grid.refine_radii);  // validates nesting and lattice ratios
  for (const auto& radii : cfg.grid.refine_radii) {
    RefineRow row = solve_on(radii, steps0);
    row.study = "radius";
    out.rows.push_back(row);
  }
  for (std::size_t i = 1; i < out.rows.size(); ++i) {
    const RefineRow& a = out.rows[i - 1];
    const RefineRow& b = out.rows[i];
    // Certified comparison: the intervals must allow lambda(b) >= lambda(a).
    if (b.cw_upper < a.cw_lower) out.radius_nondecreasing = false;
  }

  const std::vector<double>& rmax = cfg.grid.refine_radii.back();
  std::vector<std::vector<double>> hs = cfg.grid.refine_steps;
  if (hs.empty()) {
    std::vector<double> coarse = steps0;
    for (double& h : coarse) h *= 2.0;
    hs = {coarse, steps0};
  }
  std::vector<RefineRow> hrows;
  for (const auto& steps : hs) {
    RefineRow row = solve_on(rmax, steps);
    row.study = "step";
    hrows.push_back(row);
    out.rows.push_back(row);
  }
  for (std::size_t i = 2; i < hrows.size(); ++i) {
    const double d1 = std::abs(hrows[i - 1].lambda - hrows[i - 2].lambda);
    const double d2 = std::abs(hrows[i].lambda - hrows[i - 1].lambda);
    if (!(d2 < d1)) out.step_differences_decreasing = false;
  }
  out.richardson_order = cfg.grid.scheme == DriftScheme::Hybrid ? 2.0 : 1.0;
  out.richardson = hrows.back().lambda;
  if (hrows.size() >= 2) {
    const RefineRow& a = hrows[hrows.size() - 2];
    const RefineRow& b = hrows.back();
    const double ratio = a.h / b.h;
    out.richardson = b.lambda + (b.lambda - a.lambda) / (std::pow(ratio, out.richardson_order) - 1.0);
  }
  if (hrows.size() >= 3) {
    const RefineRow& a = hrows[hrows.size() - 3];
    const RefineRow& b = hrows[hrows.size() - 2];
    const RefineRow& c = hrows.back();
    const double d1 = std::abs(b.lambda - a.lambda);
    const double d2 = std::abs(c.lambda - b.lambda);
    if (d1 > 0.0 && d2 > 0.0) out.observed_order = std::log(d1 / d2) / std::log(b.h / c.h);
  }
  return out;
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream o(tmp, std::ios::binary | std::ios::trunc);
    if (!o) throw Error("cannot write " + tmp.string());
    o << content;
    o.flush();
    if (!o) throw Error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trace_csv(const PiaTrace& t) {
  std::string s = "k,lambda,cw_gap,policy_changes,psi_sup,psi_l1_ball,wall_ms\n";
  for (const PiaStep& st : t.steps) {
    char wall[32];
    std::snprintf(wall, sizeof wall, "%.3f", st.wall_ms);
    s += std::to_string(st.k) + "," + format_double(st.lambda) + "," + format_double(st.gap()) + "," +
         std::to_string(st.changes) + "," + format_double(st.psi_sup) + "," + format_double(st.psi_l1_ball) + "," +
         wall + "\n";
  }
  return s;
}

std::string eigenfunction_csv(const Grid& g, std::span<const double> V) {
  std::string s;
  for (int a = 0; a < g.dim(); ++a) s += "x" + std::to_string(a + 1) + ",";
  s += "V\n";
  Point x(static_cast<std::size_t>(g.dim()));
  for (std::size_t i = 0; i < g.interior_count(); ++i) {
    g.coordinates(g.node_of_interior(i), x);
    for (double c : x) s += format_double(c) + ",";
    s += format_double(V[i]) + "\n";
  }
  return s;
}

std::string policy_csv(const Grid& g, const ControlSet& controls, const PolicyField& v) {
  std::string s;
  for (int a = 0; a < g.dim(); ++a) s += "x" + std::to_string(a + 1) + ",";
  s += "control";
  for (int k = 0; k < controls.dim(); ++k) s += ",u" + std::to_string(k + 1);
  s += "\n";
  Point x(static_cast<std::size_t>(g.dim()));
  for (std::size_t i = 0; i < g.interior_count(); ++i) {
    g.coordinates(g.node_of_interior(i), x);
    for (double c : x) s += format_double(c) + ",";
    s += std::to_string(v[i]);
    for (double u : controls[v[i]]) s += "," + format_double(u);
    s += "\n";
  }
  return s;
}

std::vector<double> read_eigenfunction_csv(const fs::path& path, const Grid& g) {
  const auto rows = read_node_csv(path, g, static_cast<std::size_t>(g.dim()) + 1);
  std::vector<double> V;
  V.reserve(rows.size());
  for (const auto& r : rows) V.push_back(parse_double(r[static_cast<std::size_t>(g.dim())], path.string()));
  return V;
}

PolicyField read_policy_csv(const fs::path& path, const Grid& g, std::size_t controls) {
  const auto rows = read_node_csv(path, g, static_cast<std::size_t>(g.dim()) + 1);
  PolicyField v;
  v.reserve(rows.size());
  for (const auto& r : rows) {
    const double k = parse_double(r[static_cast<std::size_t>(g.dim())], path.string());
    if (k < 0.0 || k != std::floor(k) || k >= static_cast<double>(controls)) {
      throw ConfigError(path.string() + " holds an invalid control index");
    }
    v.push_back(static_cast<std::uint32_t>(k));
  }
  return v;
}

int run_command(const std::string& command, const CommandOptions& opt, std::ostream& out, std::ostream& err) {
  try {
    if (opt.threads) set_thread_count(*opt.threads);
    RunConfig cfg = load_config_file(opt.config);
    if (opt.seed) cfg.seed = *opt.seed;
    Context ctx{std::move(cfg), {}, out, err, opt.allow_guard_fail};
    ctx.dir = opt.out ? *opt.out : ctx.cfg.output.dir;
    if (command == "check") return cmd_check(ctx);
    if (command == "solve") return cmd_solve(ctx);
    if (command == "refine") return cmd_refine(ctx);
    if (command == "oracle") return cmd_oracle(ctx);
    if (command == "simulate") return cmd_simulate(ctx);
    err << "unknown command '" << command << "'\n";
    return exit_code::kError;
  } catch (const GuardFailed& e) {
    err << "initialization guard failed: " << e.what() << "\n";
    return exit_code::kGuardFailed;
  } catch (const NonConvergence& e) {
    err << "eigensolver did not converge: " << e.what() << "\n";
    return exit_code::kNonConvergence;
  } catch (const InvariantViolation& e) {
    err << "invariant violated: " << e.what() << "\n";
    return exit_code::kNonConvergence;
  } catch (const MissingArtifact& e) {
    err << e.what() << "\n";
    return exit_code::kMissingArtifact;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kError;
  }
}

}  // namespace riskpia
