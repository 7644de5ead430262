#include "riskpia/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <set>

#include "riskpia/error.hpp"
#include "riskpia/parallel.hpp"

namespace riskpia {

namespace {

using nlohmann::json;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double norm(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed,
                         const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::none_of(allowed.begin(), allowed.end(),
                     [&](const char* k) { return it.key() == k; })) {
      throw ConfigError("unknown key '" + it.key() + "' in " + where);
    }
  }
}

std::vector<double> number_list(const json& v, const std::string& what) {
  if (!v.is_array()) throw ConfigError(what + " must be an array of numbers");
  std::vector<double> out;
  for (const auto& e : v) {
    if (!e.is_number()) throw ConfigError(what + " must be an array of numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

std::vector<Expr> expr_list(const json& v, const std::string& what, int d, int m,
                            std::size_t expected) {
  if (!v.is_array() || v.size() != expected) {
    throw ConfigError(what + " must be an array of " + std::to_string(expected) +
                      " expression strings");
  }
  std::vector<Expr> out;
  for (const auto& e : v) {
    if (!e.is_string()) throw ConfigError(what + " entries must be strings");
    out.push_back(Expr::parse(e.get<std::string>(), d, m));
  }
  return out;
}

ControlSet parse_controls(const json& v, int m) {
  if (!v.is_object()) throw ConfigError("problem.controls must be a table");
  reject_unknown_keys(v, {"points", "lower", "upper", "counts"}, "problem.controls");
  if (v.contains("points")) {
    if (v.contains("lower") || v.contains("upper") || v.contains("counts")) {
      throw ConfigError("problem.controls: give either points or lower/upper/counts");
    }
    const json& pts = v.at("points");
    if (!pts.is_array()) throw ConfigError("problem.controls.points must be an array");
    std::vector<Point> points;
    for (const auto& p : pts) {
      if (p.is_number()) {
        points.push_back({p.get<double>()});
      } else {
        points.push_back(number_list(p, "control point"));
      }
    }
    return ControlSet(m, std::move(points));
  }
  if (!v.contains("lower") || !v.contains("upper") || !v.contains("counts")) {
    throw ConfigError("problem.controls needs points, or lower, upper and counts");
  }
  const auto lower = number_list(v.at("lower"), "controls.lower");
  const auto upper = number_list(v.at("upper"), "controls.upper");
  std::vector<int> counts;
  for (const auto& c : v.at("counts")) {
    if (!c.is_number_integer()) throw ConfigError("controls.counts must be integers");
    counts.push_back(c.get<int>());
  }
  if (lower.size() != static_cast<std::size_t>(m) || upper.size() != lower.size() ||
      counts.size() != lower.size()) {
    throw ConfigError("controls.lower/upper/counts must each have m entries");
  }
  return ControlSet::uniform_box(lower, upper, counts);
}

struct PointEval {
  double drift_sup = 0.0;   // max over controls of |b(x,u)|
  double cost_sup = 0.0;    // max over controls of |c(x,u)|
  double cost_max = -std::numeric_limits<double>::infinity();  // max over controls of c(x,u)
  double inward_sup = 0.0;  // max over controls of <b(x,u), x>^+
  double diffusion_min = std::numeric_limits<double>::infinity();
  // Lyapunov drift: worst (largest) value of A V(x,u) + rate(x) V(x) over u.
  double lyap_excess = -std::numeric_limits<double>::infinity();
  double lyap_value = 0.0;
  double ell = 0.0;
};

double regression_slope(const std::vector<double>& r, const std::vector<double>& v) {
  std::vector<double> lx;
  std::vector<double> ly;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (v[i] > 0.0 && r[i] > 0.0) {
      lx.push_back(std::log(r[i]));
      ly.push_back(std::log(v[i]));
    }
  }
  if (lx.size() < 2) return 0.0;
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= static_cast<double>(lx.size());
  my /= static_cast<double>(ly.size());
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  return sxx > 0.0 ? sxy / sxx : 0.0;
}

}  // namespace

ControlSet::ControlSet(int control_dim, std::vector<Point> points, std::string provenance)
    : dim_(control_dim), points_(std::move(points)), provenance_(std::move(provenance)) {
  if (points_.empty()) throw EmptyControlSet("control set is empty");
  std::set<Point> seen;
  for (const auto& p : points_) {
    if (p.size() != static_cast<std::size_t>(dim_)) {
      throw ConfigError("control point has " + std::to_string(p.size()) +
                        " components, expected " + std::to_string(dim_));
    }
    if (!seen.insert(p).second) throw ConfigError("duplicate control point");
  }
}

ControlSet ControlSet::uniform_box(std::span<const double> lower, std::span<const double> upper,
                                   std::span<const int> counts) {
  const std::size_t m = lower.size();
  std::size_t total = 1;
  for (std::size_t j = 0; j < m; ++j) {
    if (counts[j] < 1) throw EmptyControlSet("control count must be positive");
    if (counts[j] > 1 && !(upper[j] > lower[j])) {
      throw ConfigError("control box upper bound must exceed lower bound");
    }
    total *= static_cast<std::size_t>(counts[j]);
  }
  std::vector<Point> points;
  points.reserve(total);
  for (std::size_t flat = 0; flat < total; ++flat) {
    Point p(m);
    std::size_t rest = flat;
    for (std::size_t j = m; j-- > 0;) {
      const auto n = static_cast<std::size_t>(counts[j]);
      const std::size_t i = rest % n;
      rest /= n;
      p[j] = n == 1 ? lower[j]
                    : lower[j] + (upper[j] - lower[j]) * static_cast<double>(i) /
                                     static_cast<double>(n - 1);
    }
    points.push_back(std::move(p));
  }
  return ControlSet(static_cast<int>(m), std::move(points), "uniform-box");
}

ProblemSpec build_problem(const json& config) {
  if (!config.is_object()) throw ConfigError("problem section must be a table");
  reject_unknown_keys(config,
                      {"d", "m", "b", "sigma", "c", "controls", "lyapunov", "ell", "known_lambda"},
                      "problem");
  for (const char* key : {"d", "m", "b", "sigma", "c", "controls"}) {
    if (!config.contains(key)) throw ConfigError(std::string("problem.") + key + " is required");
  }
  if (!config.at("d").is_number_integer() || !config.at("m").is_number_integer()) {
    throw ConfigError("problem.d and problem.m must be integers");
  }
  ProblemSpec p;
  p.d = config.at("d").get<int>();
  p.m = config.at("m").get<int>();
  if (p.d != 1 && p.d != 2) {
    throw InvalidDimension("state dimension " + std::to_string(p.d) + " not supported (1 or 2)");
  }
  if (p.m < 1) throw InvalidDimension("control dimension must be at least 1");

  const auto ud = static_cast<std::size_t>(p.d);
  p.b = expr_list(config.at("b"), "problem.b", p.d, p.m, ud);
  p.sigma = expr_list(config.at("sigma"), "problem.sigma", p.d, p.m, ud);
  for (const auto& s : p.sigma) {
    if (s.depends_on_controls()) throw ConfigError("diffusion may not depend on control");
  }
  if (!config.at("c").is_string()) throw ConfigError("problem.c must be an expression string");
  p.c = Expr::parse(config.at("c").get<std::string>(), p.d, p.m);
  p.controls = parse_controls(config.at("controls"), p.m);
  if (config.contains("lyapunov")) {
    p.lyapunov = Expr::parse(config.at("lyapunov").get<std::string>(), p.d, 0);
  }
  if (config.contains("ell")) {
    p.ell = Expr::parse(config.at("ell").get<std::string>(), p.d, 0);
  }
  if (p.ell && !p.lyapunov) throw ConfigError("problem.ell requires problem.lyapunov");
  if (config.contains("known_lambda")) {
    if (!config.at("known_lambda").is_number()) {
      throw ConfigError("problem.known_lambda must be a number");
    }
    p.known_lambda = config.at("known_lambda").get<double>();
  }
  return p;
}

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::Pass: return "pass";
    case Verdict::Fail: return "fail";
    case Verdict::NotChecked: return "not-checked";
  }
  return "?";
}

const AssumptionCheck& AssumptionReport::at(const std::string& name) const {
  for (const auto& c : checks) {
    if (c.name == name) return c;
  }
  throw Error("no assumption check named '" + name + "'");
}

bool AssumptionReport::all_pass() const {
  return std::none_of(checks.begin(), checks.end(),
                      [](const AssumptionCheck& c) { return c.verdict == Verdict::Fail; });
}

json AssumptionReport::to_json() const {
  json out = json::object();
  for (const auto& c : checks) {
    json w = json::array();
    for (const auto& wit : c.witnesses) w.push_back({{"x", wit.x}, {"detail", wit.detail}});
    out[c.name] = {{"verdict", to_string(c.verdict)}, {"constants", c.constants}, {"witnesses", w}};
  }
  return out;
}

SampleSet make_sample(int d, std::vector<Point> domain) {
  SampleSet s;
  s.domain = std::move(domain);
  for (const auto& x : s.domain) s.domain_radius = std::max(s.domain_radius, norm(x));
  const double base = s.domain_radius > 0.0 ? s.domain_radius : 1.0;
  for (double f : {1.0, 1.25, 1.5, 1.75, 2.0}) {
    const double r = base * f;
    std::vector<Point> shell;
    if (d == 1) {
      shell = {{-r}, {r}};
    } else {
      constexpr int kAngles = 32;
      for (int k = 0; k < kAngles; ++k) {
        const double t = 2.0 * std::numbers::pi * k / kAngles;
        shell.push_back({r * std::cos(t), r * std::sin(t)});
      }
    }
    s.shell_radii.push_back(r);
    s.shells.push_back(std::move(shell));
  }
  return s;
}

AssumptionReport validate_assumptions(const ProblemSpec& p, const SampleSet& sample,
                                      const ValidationThresholds& th) {
  // Flatten domain + shells; shell k occupies [shell_begin[k], shell_begin[k+1]).
  std::vector<Point> pts = sample.domain;
  std::vector<std::size_t> shell_begin;
  for (const auto& shell : sample.shells) {
    shell_begin.push_back(pts.size());
    pts.insert(pts.end(), shell.begin(), shell.end());
  }
  shell_begin.push_back(pts.size());
  const std::size_t n_domain = sample.domain.size();

  const bool bounded_variant = p.lyapunov && !p.ell;
  std::vector<PointEval> ev(pts.size());

  // Cost sup is needed before the bounded-cost Lyapunov rate is known, so
  // the evaluation runs in two passes.
  parallel_for(pts.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Point& x = pts[i];
      PointEval& e = ev[i];
      for (int j = 0; j < p.d; ++j) e.diffusion_min = std::min(e.diffusion_min, p.diffusion(j, x));
      for (const auto& u : p.controls.points()) {
        double b2 = 0.0;
        double inward = 0.0;
        for (int j = 0; j < p.d; ++j) {
          const double bj = p.drift(j, x, u);
          b2 += bj * bj;
          inward += bj * x[static_cast<std::size_t>(j)];
        }
        const double c = p.cost(x, u);
        e.drift_sup = std::max(e.drift_sup, std::sqrt(b2));
        e.cost_sup = std::max(e.cost_sup, std::abs(c));
        e.cost_max = std::max(e.cost_max, c);
        e.inward_sup = std::max(e.inward_sup, std::max(inward, 0.0));
      }
    }
  });

  double cost_bound = 0.0;
  for (const auto& e : ev) cost_bound = std::max(cost_bound, e.cost_sup);
  const double gamma = cost_bound + th.gamma_margin;

  if (p.lyapunov) {
    const Expr& lyap = *p.lyapunov;
    parallel_for(pts.size(), [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        Point x = pts[i];
        PointEval& e = ev[i];
        const double v0 = lyap.eval(x, {});
        const double h = th.fd_step;
        std::vector<double> grad(static_cast<std::size_t>(p.d));
        double second = 0.0;
        for (int j = 0; j < p.d; ++j) {
          const auto uj = static_cast<std::size_t>(j);
          const double xj = x[uj];
          x[uj] = xj + h;
          const double vp = lyap.eval(x, {});
          x[uj] = xj - h;
          const double vm = lyap.eval(x, {});
          x[uj] = xj;
          grad[uj] = (vp - vm) / (2.0 * h);
          second += p.diffusion(j, x) * (vp - 2.0 * v0 + vm) / (h * h);
        }
        e.lyap_value = v0;
        e.ell = p.ell ? p.ell->eval(x, {}) : gamma;
        for (const auto& u : p.controls.points()) {
          double gen = second;
          for (int j = 0; j < p.d; ++j) gen += p.drift(j, x, u) * grad[static_cast<std::size_t>(j)];
          e.lyap_excess = std::max(e.lyap_excess, gen + e.ell * v0);
        }
      }
    });
  }

  auto describe = [](std::initializer_list<std::pair<const char*, double>> kv) {
    std::string s;
    for (const auto& [k, v] : kv) {
      if (!s.empty()) s += ", ";
      s += std::string(k) + "=" + fmt(v);
    }
    return s;
  };

  const std::size_t far_begin = shell_begin[shell_begin.size() - 2];
  const std::size_t far_end = shell_begin.back();
  auto shell_max = [&](auto field) {
    std::vector<double> out;
    for (std::size_t k = 0; k + 1 < shell_begin.size(); ++k) {
      double mx = 0.0;
      for (std::size_t i = shell_begin[k]; i < shell_begin[k + 1]; ++i) {
        mx = std::max(mx, field(ev[i]));
      }
      out.push_back(mx);
    }
    return out;
  };

  AssumptionReport report;

  // Linear growth of the drift.
  {
    AssumptionCheck chk;
    chk.name = "drift_growth";
    double c0 = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      c0 = std::max(c0, ev[i].drift_sup / (1.0 + norm(pts[i])));
    }
    const auto sup = shell_max([](const PointEval& e) { return e.drift_sup; });
    const double slope = regression_slope(sample.shell_radii, sup);
    chk.constants = {{"C0", c0}, {"far_field_exponent", slope}};
    chk.verdict = slope <= 1.0 + th.growth_exponent_slack ? Verdict::Pass : Verdict::Fail;
    if (chk.verdict == Verdict::Fail) {
      for (std::size_t i = far_begin; i < far_end && chk.witnesses.size() < th.max_witnesses; ++i) {
        chk.witnesses.push_back({pts[i], describe({{"sup_b", ev[i].drift_sup}})});
      }
    }
    report.checks.push_back(std::move(chk));
  }

  // Uniform ellipticity of the diagonal diffusion.
  {
    AssumptionCheck chk;
    chk.name = "nondegeneracy";
    double amin = std::numeric_limits<double>::infinity();
    std::size_t violations = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      amin = std::min(amin, ev[i].diffusion_min);
      if (!(ev[i].diffusion_min >= th.ellipticity_min)) {
        ++violations;
        if (chk.witnesses.size() < th.max_witnesses) {
          chk.witnesses.push_back({pts[i], describe({{"min_a", ev[i].diffusion_min}})});
        }
      }
    }
    chk.constants = {{"C", amin}, {"violation_count", violations}, {"sample_size", pts.size()}};
    chk.verdict = violations == 0 ? Verdict::Pass : Verdict::Fail;
    report.checks.push_back(std::move(chk));
  }

  // Quadratic growth of the running cost.
  {
    AssumptionCheck chk;
    chk.name = "cost_growth";
    double cc = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double r = norm(pts[i]);
      cc = std::max(cc, ev[i].cost_sup / (1.0 + r * r));
    }
    const auto sup = shell_max([](const PointEval& e) { return e.cost_sup; });
    const double slope = regression_slope(sample.shell_radii, sup);
    chk.constants = {{"C", cc}, {"far_field_exponent", slope}};
    chk.verdict = slope <= 2.0 + th.growth_exponent_slack ? Verdict::Pass : Verdict::Fail;
    if (chk.verdict == Verdict::Fail) {
      for (std::size_t i = far_begin; i < far_end && chk.witnesses.size() < th.max_witnesses; ++i) {
        chk.witnesses.push_back({pts[i], describe({{"sup_c", ev[i].cost_sup}})});
      }
    }
    report.checks.push_back(std::move(chk));
  }

  // Foster-Lyapunov drift inequality.
  {
    AssumptionCheck chk;
    chk.name = "lyapunov_drift";
    if (!p.lyapunov) {
      chk.verdict = Verdict::NotChecked;
    } else {
      double k_radius = 0.0;
      double c_hat = 0.0;
      bool far_violation = false;
      double lyap_min = std::numeric_limits<double>::infinity();
      std::vector<Witness> wit;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        lyap_min = std::min(lyap_min, ev[i].lyap_value);
        if (ev[i].lyap_excess > 0.0) {
          k_radius = std::max(k_radius, norm(pts[i]));
          c_hat = std::max(c_hat, ev[i].lyap_excess);
          if (i >= far_begin) {
            far_violation = true;
            if (wit.size() < th.max_witnesses) {
              wit.push_back({pts[i], describe({{"AV_plus_rate_V", ev[i].lyap_excess}})});
            }
          }
        }
      }
      // Inf-compactness proxies: the rate and rate - max_u c must grow from
      // the inner half of the domain to the far-field shell.
      bool inf_compact = true;
      if (p.ell) {
        auto probe = [&](auto g, const char* label) {
          double inner_max = -std::numeric_limits<double>::infinity();
          for (std::size_t i = 0; i < n_domain; ++i) {
            if (norm(pts[i]) <= 0.5 * sample.domain_radius) inner_max = std::max(inner_max, g(i));
          }
          for (std::size_t i = far_begin; i < far_end; ++i) {
            if (!(g(i) > inner_max)) {
              inf_compact = false;
              if (wit.size() < th.max_witnesses) {
                wit.push_back({pts[i], std::string(label) + ": " +
                                           describe({{"far_value", g(i)}, {"inner_max", inner_max}})});
              }
            }
          }
        };
        probe([&](std::size_t i) { return ev[i].ell; }, "ell not inf-compact");
        probe([&](std::size_t i) { return ev[i].ell - ev[i].cost_max; },
              "ell - max_u c not inf-compact");
      }
      chk.constants = {{"variant", bounded_variant ? "bounded_cost" : "unbounded_cost"},
                       {"K_radius", k_radius},
                       {"C_hat", c_hat},
                       {"lyapunov_min", lyap_min}};
      if (bounded_variant) chk.constants["gamma"] = gamma;
      chk.verdict = (!far_violation && inf_compact) ? Verdict::Pass : Verdict::Fail;
      chk.witnesses = std::move(wit);
    }
    report.checks.push_back(std::move(chk));
  }

  // Sublinear growth for the near-monotone minimization family.
  {
    AssumptionCheck chk;
    chk.name = "near_monotone_growth";
    if (!th.check_near_monotone) {
      chk.verdict = Verdict::NotChecked;
    } else {
      const auto bsup = shell_max([](const PointEval& e) { return e.drift_sup; });
      const auto csup = shell_max([](const PointEval& e) { return e.cost_sup; });
      const double theta_b = std::max(0.0, regression_slope(sample.shell_radii, bsup));
      const double theta_c = std::max(0.0, regression_slope(sample.shell_radii, csup) / 2.0);
      const double theta = std::max(theta_b, theta_c);
      double kappa0 = 0.0;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        const double r = norm(pts[i]);
        kappa0 = std::max({kappa0, ev[i].drift_sup / (1.0 + std::pow(r, theta)),
                           ev[i].cost_sup / (1.0 + std::pow(r, 2.0 * theta))});
      }
      std::vector<double> outward;
      for (std::size_t k = 0; k + 1 < shell_begin.size(); ++k) {
        double mx = 0.0;
        for (std::size_t i = shell_begin[k]; i < shell_begin[k + 1]; ++i) {
          mx = std::max(mx, ev[i].inward_sup / std::pow(sample.shell_radii[k], 1.0 - theta));
        }
        outward.push_back(mx);
      }
      bool decaying = true;
      for (std::size_t k = 1; k < outward.size(); ++k) decaying = decaying && outward[k] <= outward[k - 1];
      chk.constants = {{"theta", theta}, {"kappa0", kappa0}, {"outward_drift_ratio", outward}};
      chk.verdict = (theta < 1.0 && decaying) ? Verdict::Pass : Verdict::Fail;
      if (chk.verdict == Verdict::Fail) {
        for (std::size_t i = far_begin; i < far_end && chk.witnesses.size() < th.max_witnesses; ++i) {
          chk.witnesses.push_back({pts[i], describe({{"theta", theta}, {"sup_b", ev[i].drift_sup}})});
        }
      }
    }
    report.checks.push_back(std::move(chk));
  }

  return report;
}

}  // namespace riskpia
