#include "riskpia/howard.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

#include "riskpia/error.hpp"
#include "riskpia/parallel.hpp"

namespace riskpia {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

bool better(Sense s, double a, double b) { return s == Sense::Min ? a < b : a > b; }

struct Proxy {
  double value = -std::numeric_limits<double>::infinity();
  Point x;
  std::size_t control = 0;
};

Proxy boundary_proxy(const Discretization& disc) {
  const Grid& g = disc.grid();
  const ProblemSpec& p = disc.problem();
  Proxy out;
  Point x(static_cast<std::size_t>(g.dim()));
  for (std::size_t node = 0; node < g.node_count(); ++node) {
    if (!g.is_boundary(node)) continue;
    g.coordinates(node, x);
    for (std::size_t k = 0; k < p.controls.size(); ++k) {
      const double c = p.cost(x, p.controls[k]);
      if (c > out.value) {
        out.value = c;
        out.x = x;
        out.control = k;
      }
    }
  }
  return out;
}

double norm(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

}  // namespace

const char* to_string(Sense s) { return s == Sense::Min ? "min" : "max"; }

Sense parse_sense(const std::string& s) {
  if (s == "min") return Sense::Min;
  if (s == "max") return Sense::Max;
  throw ConfigError("unknown sense '" + s + "' (expected min or max)");
}

const char* to_string(Termination t) {
  switch (t) {
    case Termination::Converged: return "converged";
    case Termination::PolicyFixed: return "policy-fixed";
    case Termination::MaxIterations: return "max-iterations";
  }
  return "?";
}

PolicyField improve(const Discretization& disc, std::span<const double> V,
                    const PolicyField& current, Sense sense, double tie_tol) {
  validate_policy(current, disc.grid(), disc.controls());
  if (V.size() != disc.rows()) throw Error("field length does not match the grid");
  const std::size_t K = disc.controls();
  PolicyField next(current.size());
  parallel_for(
      disc.rows(),
      [&](std::size_t begin, std::size_t end) {
        std::vector<double> q(K);
        for (std::size_t i = begin; i < end; ++i) {
          if (K == 1) {
            next[i] = current[i];
            continue;
          }
          std::size_t best = 0;
          for (std::size_t z = 0; z < K; ++z) {
            q[z] = disc.row_apply(z, i, V);
            if (better(sense, q[z], q[best])) best = z;
          }
          const double qs = q[best];
          const double qc = q[current[i]];
          const double slack = tie_tol * (1.0 + std::abs(qs));
          const bool keep = sense == Sense::Min ? qc <= qs + slack : qc >= qs - slack;
          next[i] = keep ? current[i] : static_cast<std::uint32_t>(best);
        }
      },
      64);
  return next;
}

PolicyField improve(const ProblemSpec& p, const Grid& g, std::span<const double> V,
                    const PolicyField& current, Sense sense, double tie_tol, DriftScheme scheme) {
  return improve(Discretization(p, g, scheme), V, current, sense, tie_tol);
}

double psi_slack(double lambda, double eig_tol) {
  return std::max(1e-9, 2.0 * eig_tol) * (1.0 + std::abs(lambda));
}

std::vector<double> psi_residual(const Discretization& disc, std::span<const double> V,
                                 double lambda, Sense sense, double slack) {
  if (V.size() != disc.rows()) throw Error("field length does not match the grid");
  const std::size_t K = disc.controls();
  std::vector<double> psi(disc.rows());
  parallel_for(
      disc.rows(),
      [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
          if (!(V[i] > 0.0)) throw NonPositiveVector("psi residual needs a positive field");
          double best = disc.row_apply(0, i, V);
          for (std::size_t z = 1; z < K; ++z) {
            const double q = disc.row_apply(z, i, V);
            if (better(sense, q, best)) best = q;
          }
          psi[i] = sense == Sense::Min ? lambda - best / V[i] : best / V[i] - lambda;
        }
      },
      64);
  if (slack >= 0.0) {
    for (std::size_t i = 0; i < psi.size(); ++i) {
      if (psi[i] < -slack) {
        const auto x = disc.grid().coordinates(disc.grid().node_of_interior(i));
        char buf[200];
        std::snprintf(buf, sizeof buf, "psi residual %.6g below -%.3g at row %zu (x1 = %.6g)", psi[i],
                      slack, i, x[0]);
        throw InvariantViolation(buf);
      }
    }
  }
  return psi;
}

double ball_volume(int d, double radius) {
  if (d == 1) return 2.0 * radius;
  if (d == 2) return std::numbers::pi * radius * radius;
  return std::pow(std::numbers::pi, d / 2.0) / std::tgamma(d / 2.0 + 1.0) * std::pow(radius, d);
}

PsiNorms psi_norms(const Grid& g, std::span<const double> psi, double radius) {
  PsiNorms n;
  n.min = std::numeric_limits<double>::infinity();
  double cell = 1.0;
  for (int j = 0; j < g.dim(); ++j) cell *= g.step(j);
  Point x(static_cast<std::size_t>(g.dim()));
  for (std::size_t i = 0; i < psi.size(); ++i) {
    n.sup = std::max(n.sup, std::abs(psi[i]));
    n.min = std::min(n.min, psi[i]);
    g.coordinates(g.node_of_interior(i), x);
    if (norm(x) <= radius * (1.0 + 1e-12)) n.l1_ball += std::abs(psi[i]) * cell;
  }
  if (psi.empty()) n.min = 0.0;
  return n;
}

GuardReport guard_max(const Discretization& disc, const PolicyField& v0, double eig_tol,
                      std::size_t eig_max_iter) {
  const EigenPair e = principal_eigpair(disc.assemble_policy(v0), eig_tol, eig_max_iter);
  const Proxy px = boundary_proxy(disc);
  GuardReport r;
  r.lambda0 = e.lambda;
  r.cw_lower = e.cw_lower;
  r.cw_upper = e.cw_upper;
  r.boundary_proxy = px.value;
  r.argmax_x = px.x;
  r.argmax_control = px.control;
  r.pass = e.lambda > px.value;
  return r;
}

GradientReport gradient_diagnostic(const Grid& g, std::span<const double> V) {
  if (V.size() != g.interior_count()) throw Error("field length does not match the grid");
  GradientReport r;
  Point x(static_cast<std::size_t>(g.dim()));
  for (std::size_t i : g.deep_interior()) {
    if (!(V[i] > 0.0)) throw NonPositiveVector("gradient diagnostic needs a positive field");
    double s = 0.0;
    for (int j = 0; j < g.dim(); ++j) {
      const auto up = static_cast<std::size_t>(g.neighbour(i, j, +1));
      const auto dn = static_cast<std::size_t>(g.neighbour(i, j, -1));
      const double dv = (V[up] - V[dn]) / (2.0 * g.step(j));
      s += dv * dv;
    }
    const double ratio = std::sqrt(s) / V[i];
    g.coordinates(g.node_of_interior(i), x);
    const double c = ratio / (1.0 + norm(x));
    ++r.nodes;
    if (c > r.C || r.argmax_x.empty()) {
      r.C = std::max(r.C, c);
      r.argmax_x = x;
      r.argmax_ratio = ratio;
    }
  }
  return r;
}

SolveResult solve_pia(const Discretization& disc, const PolicyField& v0, const PiaOptions& opt) {
  using Clock = std::chrono::steady_clock;
  validate_policy(v0, disc.grid(), disc.controls());
  if (opt.max_outer == 0) throw Error("max_outer must be at least 1");
  const Grid& g = disc.grid();

  SolveResult res;
  res.sense = opt.sense;
  double r0 = std::numeric_limits<double>::infinity();
  for (int j = 0; j < g.dim(); ++j) r0 = std::min({r0, g.upper(j), -g.lower(j)});
  res.trace.psi_ball_radius = opt.psi_radius.value_or(0.5 * r0);
  res.trace.psi_ball_volume = ball_volume(g.dim(), res.trace.psi_ball_radius);

  PolicyField v = v0;
  std::vector<double> warm;
  for (std::size_t k = 0;; ++k) {
    const auto t0 = Clock::now();
    const GeneratorMatrix M = disc.assemble_policy(v);
    EigenPair e = principal_eigpair(M, opt.eig_tol, opt.eig_max_iter,
                                    opt.warm_start ? std::span<const double>(warm) : std::span<const double>());

    if (k == 0 && opt.sense == Sense::Max && !opt.allow_guard_fail) {
      const Proxy px = boundary_proxy(disc);
      if (!(e.lambda > px.value)) throw GuardFailed(e.lambda, px.value);
    }

    const double slack = opt.check_invariants ? psi_slack(e.lambda, opt.eig_tol) : -1.0;
    const std::vector<double> psi = psi_residual(disc, e.V, e.lambda, opt.sense, slack);
    const PsiNorms pn = psi_norms(g, psi, res.trace.psi_ball_radius);
    PolicyField next = improve(disc, e.V, v, opt.sense, opt.tie_tol);
    std::size_t changes = 0;
    for (std::size_t i = 0; i < v.size(); ++i) changes += next[i] != v[i];

    PiaStep st;
    st.k = k;
    st.lambda = e.lambda;
    st.cw_lower = e.cw_lower;
    st.cw_upper = e.cw_upper;
    st.eig_iterations = e.iterations;
    st.changes = changes;
    st.psi_sup = pn.sup;
    st.psi_min = pn.min;
    st.psi_l1_ball = pn.l1_ball;
    if (opt.record_iterates) {
      st.policy = v;
      st.V = e.V;
    }
    st.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();

    if (opt.check_invariants && !res.trace.steps.empty()) {
      // Collatz-Wielandt with test vector V_{k-1} on M_k, plus rounding in
      // the ratio computation.
      const PiaStep& prev = res.trace.steps.back();
      const double allow = prev.gap() + st.gap() + 8.0 * kEps * M.shift_hint() * (1.0 + std::abs(st.lambda));
      const bool ok = opt.sense == Sense::Min ? st.lambda <= prev.lambda + allow
                                              : st.lambda >= prev.lambda - allow;
      if (!ok) {
        char buf[200];
        std::snprintf(buf, sizeof buf, "monotonicity violated at k=%zu: lambda %.17g after %.17g (%s sense)",
                      k, st.lambda, prev.lambda, to_string(opt.sense));
        throw InvariantViolation(buf);
      }
    }

    const bool have_prev = !res.trace.steps.empty();
    // A policy that is already stable at k = 0 has nothing left to change.
    const double dlambda = have_prev ? std::abs(st.lambda - res.trace.steps.back().lambda) : 0.0;
    res.trace.steps.push_back(std::move(st));

    if (changes == 0) {
      res.reason = dlambda <= opt.tol_lambda ? Termination::Converged : Termination::PolicyFixed;
      res.eig = std::move(e);
      res.policy = std::move(v);
      return res;
    }
    if (k + 1 >= opt.max_outer) {
      res.reason = Termination::MaxIterations;
      res.eig = std::move(e);
      res.policy = std::move(v);
      return res;
    }
    warm = std::move(e.V);
    v = std::move(next);
  }
}

SolveResult solve_pia(const ProblemSpec& p, const Grid& g, const PolicyField& v0,
                      const PiaOptions& opt, DriftScheme scheme) {
  return solve_pia(Discretization(p, g, scheme), v0, opt);
}

}  // namespace riskpia
