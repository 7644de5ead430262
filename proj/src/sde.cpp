#include "riskpia/sde.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "riskpia/error.hpp"
#include "riskpia/parallel.hpp"
#include "riskpia/rng.hpp"

namespace riskpia {

namespace {

constexpr std::uint32_t kStreamControlled = 1;
constexpr std::uint32_t kStreamTwisted = 2;

/// Running mean and sum of squared deviations (Welford). The mean of
/// identical inputs is exactly that input.
struct Moments {
  double n = 0.0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    n += 1.0;
    const double d = x - mean;
    mean += d / n;
    m2 += d * (x - mean);
  }
  void merge(const Moments& o) {
    if (o.n == 0.0) return;
    if (n == 0.0) {
      *this = o;
      return;
    }
    const double tot = n + o.n;
    const double d = o.mean - mean;
    mean += d * o.n / tot;
    m2 += o.m2 + d * d * n * o.n / tot;
    n = tot;
  }
  double variance() const { return n > 1.0 ? m2 / (n - 1.0) : 0.0; }
  double pop_variance() const { return n > 0.0 ? m2 / n : 0.0; }
};

/// Problem plus policy in a form cheap to query along a path.
class PathModel {
 public:
  PathModel(const ProblemSpec& p, const Grid& g, const PolicyField& policy)
      : p_(p), g_(g), d_(static_cast<std::size_t>(g.dim())) {
    if (p.d != g.dim()) throw DimensionError("problem and grid dimensions differ");
    validate_policy(policy, g, p.controls.size());
    single_ = p.controls.size() == 1;
    node_control_.assign(g.node_count(), 0);
    for (std::size_t r = 0; r < policy.size(); ++r) node_control_[g.node_of_interior(r)] = policy[r];
    std::size_t stride = 1;
    for (std::size_t j = d_; j-- > 0;) {
      stride_[j] = stride;
      stride *= static_cast<std::size_t>(g.count(static_cast<int>(j)));
    }
    for (std::size_t j = 0; j < d_; ++j) {
      const auto& s = p.sigma[j];
      sigma_const_[j] = s.is_constant();
      if (sigma_const_[j]) sigma_val_[j] = s.eval(std::span<const double>(zero_.data(), d_), {});
      lo_[j] = g.lower(static_cast<int>(j));
      hi_[j] = g.upper(static_cast<int>(j));
    }
  }

  std::size_t dim() const { return d_; }
  double lower(std::size_t j) const { return lo_[j]; }
  double upper(std::size_t j) const { return hi_[j]; }

  const Point& control(const double* x) const {
    if (single_) return p_.controls[0];
    std::size_t node = 0;
    for (std::size_t j = 0; j < d_; ++j) {
      const int a = static_cast<int>(j);
      long i = std::lround(x[j] / g_.step(a));
      i = std::clamp(i, g_.lower_index(a) + 1, g_.upper_index(a) - 1);
      node += static_cast<std::size_t>(i - g_.lower_index(a)) * stride_[j];
    }
    return p_.controls[node_control_[node]];
  }

  double drift(std::size_t j, const double* x, const Point& u) const {
    return p_.b[j].eval(std::span<const double>(x, d_), u);
  }
  double sigma(std::size_t j, const double* x) const {
    return sigma_const_[j] ? sigma_val_[j] : p_.sigma[j].eval(std::span<const double>(x, d_), {});
  }
  double cost(const double* x, const Point& u) const { return p_.c.eval(std::span<const double>(x, d_), u); }

  bool outside_open(const double* x) const {
    for (std::size_t j = 0; j < d_; ++j) {
      if (!(x[j] > lo_[j] && x[j] < hi_[j])) return true;
    }
    return false;
  }
  void reflect(double* x) const {
    for (std::size_t j = 0; j < d_; ++j) {
      for (int rep = 0; rep < 4 && (x[j] < lo_[j] || x[j] > hi_[j]); ++rep) {
        x[j] = x[j] < lo_[j] ? 2.0 * lo_[j] - x[j] : 2.0 * hi_[j] - x[j];
      }
      x[j] = std::clamp(x[j], lo_[j], hi_[j]);
    }
  }

 private:
  const ProblemSpec& p_;
  const Grid& g_;
  std::size_t d_;
  bool single_ = false;
  std::vector<std::uint32_t> node_control_;
  std::array<std::size_t, Grid::kMaxDim> stride_{};
  std::array<bool, Grid::kMaxDim> sigma_const_{};
  std::array<double, Grid::kMaxDim> sigma_val_{};
  std::array<double, Grid::kMaxDim> lo_{};
  std::array<double, Grid::kMaxDim> hi_{};
  std::array<double, Grid::kMaxDim> zero_{};
};

struct PathOutcome {
  std::array<double, Grid::kMaxDim> x{};
  double cost_mean = 0.0;
  double half_cost_mean = 0.0;
  std::size_t steps = 0;
  std::size_t half_steps = 0;
  bool exited = false;
};

struct NoExtraDrift {
  void operator()(const double*, double*) const {}
};
struct NoObserver {
  void operator()(std::size_t, const double*) {}
};

/// Euler-Maruyama for one path. `extra` adds to the drift; `observe` sees
/// the state after every step.
template <class Extra, class Observe>
PathOutcome run_path(const PathModel& m, const McConfig& cfg, std::uint32_t stream, std::size_t path,
                     std::size_t n_steps, double dt, bool need_cost, Extra&& extra, Observe&& observe) {
  const std::size_t d = m.dim();
  PathOutcome out;
  for (std::size_t j = 0; j < d; ++j) out.x[j] = cfg.x0[j];
  if (path > std::numeric_limits<std::uint32_t>::max()) throw Error("too many paths");
  NormalStream rng(cfg.seed, stream, static_cast<std::uint32_t>(path));
  const double sqdt = std::sqrt(dt);
  const std::size_t half = n_steps / 2;
  std::array<double, Grid::kMaxDim> mu{};
  double* x = out.x.data();
  std::size_t k = 0;
  try {
    for (; k < n_steps; ++k) {
      if (cfg.exit == ExitPolicy::Stop && m.outside_open(x)) {
        out.exited = true;
        break;
      }
      const Point& u = m.control(x);
      if (need_cost) {
        const double c = m.cost(x, u);
        out.cost_mean += (c - out.cost_mean) / static_cast<double>(k + 1);
      }
      for (std::size_t j = 0; j < d; ++j) mu[j] = m.drift(j, x, u);
      extra(x, mu.data());
      std::array<double, Grid::kMaxDim> sg{};
      for (std::size_t j = 0; j < d; ++j) sg[j] = m.sigma(j, x);
      for (std::size_t j = 0; j < d; ++j) x[j] += mu[j] * dt + sg[j] * sqdt * rng.next();
      if (cfg.exit == ExitPolicy::Reflect) m.reflect(x);
      for (std::size_t j = 0; j < d; ++j) {
        if (!std::isfinite(x[j])) throw DomainError("state became non-finite");
      }
      if (k + 1 == half) {
        out.half_cost_mean = out.cost_mean;
        out.half_steps = half;
      }
      observe(k, x);
    }
  } catch (const DomainError& e) {
    char buf[96];
    std::snprintf(buf, sizeof buf, " (path %zu, t = %.6g)", path, static_cast<double>(k) * dt);
    throw DomainError(e.what() + std::string(buf));
  }
  if (cfg.exit == ExitPolicy::Stop && k == n_steps && m.outside_open(x)) out.exited = true;
  out.steps = k;
  if (k < half) {
    out.half_cost_mean = out.cost_mean;
    out.half_steps = k;
  }
  return out;
}

std::size_t step_count(double T, double dt) {
  if (T == 0.0) return 0;
  const double r = T / dt;
  const double n = std::ceil(r - 1e-9 * r);
  return static_cast<std::size_t>(std::max(1.0, n));
}

/// Node values of grad log V: central differences inside, one-sided next to
/// the boundary, boundary nodes copy their nearest interior node.
std::vector<double> log_gradient_field(const Grid& g, std::span<const double> V) {
  const auto d = static_cast<std::size_t>(g.dim());
  const std::size_t n = g.interior_count();
  std::vector<double> logv(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(V[i] > 0.0)) throw NonPositiveVector("eigenvector must be positive");
    logv[i] = std::log(V[i]);
  }
  std::vector<double> field(g.node_count() * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t node = g.node_of_interior(i);
    for (std::size_t j = 0; j < d; ++j) {
      const int a = static_cast<int>(j);
      const std::int64_t up = g.neighbour(i, a, +1);
      const std::int64_t dn = g.neighbour(i, a, -1);
      const double h = g.step(a);
      double gr = 0.0;
      if (up >= 0 && dn >= 0) {
        gr = (logv[static_cast<std::size_t>(up)] - logv[static_cast<std::size_t>(dn)]) / (2.0 * h);
      } else if (up >= 0) {
        gr = (logv[static_cast<std::size_t>(up)] - logv[i]) / h;
      } else if (dn >= 0) {
        gr = (logv[i] - logv[static_cast<std::size_t>(dn)]) / h;
      }
      field[node * d + j] = gr;
    }
  }
  for (std::size_t node = 0; node < g.node_count(); ++node) {
    if (!g.is_boundary(node)) continue;
    Grid::Index idx = g.multi_index(node);
    for (std::size_t j = 0; j < d; ++j) {
      idx[j] = std::clamp(idx[j], g.lower_index(static_cast<int>(j)) + 1, g.upper_index(static_cast<int>(j)) - 1);
    }
    const std::size_t src = g.node_at(idx);
    for (std::size_t j = 0; j < d; ++j) field[node * d + j] = field[src * d + j];
  }
  return field;
}

/// Multilinear interpolation of node data (`width` values per node) at a
/// point clamped to the closed box.
void interpolate_nodes(const Grid& g, std::span<const double> data, std::size_t width, const double* x,
                       double* out) {
  const auto d = static_cast<std::size_t>(g.dim());
  std::array<long, Grid::kMaxDim> i0{};
  std::array<double, Grid::kMaxDim> t{};
  for (std::size_t j = 0; j < d; ++j) {
    const int a = static_cast<int>(j);
    const double xc = std::clamp(x[j], g.lower(a), g.upper(a));
    const double s = (xc - g.lower(a)) / g.step(a);
    long c = static_cast<long>(std::floor(s));
    c = std::clamp(c, 0L, g.count(a) - 2);
    i0[j] = c;
    t[j] = std::clamp(s - static_cast<double>(c), 0.0, 1.0);
  }
  for (std::size_t w = 0; w < width; ++w) out[w] = 0.0;
  const std::size_t corners = std::size_t{1} << d;
  for (std::size_t mask = 0; mask < corners; ++mask) {
    double wt = 1.0;
    Grid::Index idx{};
    for (std::size_t j = 0; j < d; ++j) {
      const bool hi = (mask >> j) & 1U;
      wt *= hi ? t[j] : 1.0 - t[j];
      idx[j] = g.lower_index(static_cast<int>(j)) + i0[j] + (hi ? 1 : 0);
    }
    if (wt == 0.0) continue;
    const std::size_t node = g.node_at(idx);
    for (std::size_t w = 0; w < width; ++w) out[w] += wt * data[node * width + w];
  }
}

}  // namespace

const char* to_string(ExitPolicy e) {
  switch (e) {
    case ExitPolicy::Free: return "free";
    case ExitPolicy::Stop: return "stop";
    case ExitPolicy::Reflect: return "reflect";
  }
  return "?";
}

ExitPolicy parse_exit_policy(const std::string& s) {
  if (s == "free") return ExitPolicy::Free;
  if (s == "stop") return ExitPolicy::Stop;
  if (s == "reflect") return ExitPolicy::Reflect;
  throw ConfigError("unknown exit policy '" + s + "' (expected free, stop or reflect)");
}

std::size_t McConfig::steps() const { return step_count(T, dt); }

void McConfig::validate(int d) const {
  if (x0.size() != static_cast<std::size_t>(d)) throw DimensionError("x0 needs one entry per state axis");
  if (!(dt > 0.0)) throw Error("dt must be positive");
  if (!(T >= 0.0) || !std::isfinite(T)) throw Error("horizon T must be finite and nonnegative");
  if (n_paths < 1) throw Error("n_paths must be at least 1");
}

PathEnsemble simulate_paths(const ProblemSpec& p, const Grid& g, const PolicyField& policy,
                            const McConfig& cfg) {
  cfg.validate(g.dim());
  const PathModel model(p, g, policy);
  const std::size_t N = cfg.steps();
  const double dt = N ? cfg.T / static_cast<double>(N) : cfg.dt;
  const auto d = static_cast<std::size_t>(g.dim());

  PathEnsemble e;
  e.d = g.dim();
  e.n_paths = cfg.n_paths;
  e.dt = dt;
  e.steps = N;
  e.final_state.resize(cfg.n_paths * d);
  e.cost_mean.resize(cfg.n_paths);
  e.half_cost_mean.resize(cfg.n_paths);
  e.time.resize(cfg.n_paths);
  e.exited.resize(cfg.n_paths);
  e.half_time.resize(cfg.n_paths);

  parallel_for(
      cfg.n_paths,
      [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
          const PathOutcome o =
              run_path(model, cfg, kStreamControlled, i, N, dt, true, NoExtraDrift{}, NoObserver{});
          for (std::size_t j = 0; j < d; ++j) e.final_state[i * d + j] = o.x[j];
          e.cost_mean[i] = o.cost_mean;
          e.half_cost_mean[i] = o.half_cost_mean;
          e.half_time[i] = static_cast<double>(o.half_steps) * dt;
          e.time[i] = o.steps == N ? cfg.T : static_cast<double>(o.steps) * dt;
          e.exited[i] = o.exited;
        }
      },
      16);

  e.mean.assign(d, 0.0);
  e.std_error.assign(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    Moments mo;
    for (std::size_t i = 0; i < cfg.n_paths; ++i) mo.add(e.final_state[i * d + j]);
    e.mean[j] = mo.mean;
    e.std_error[j] = std::sqrt(mo.variance() / mo.n);
  }
  std::size_t ex = 0;
  for (auto f : e.exited) ex += f;
  e.exited_fraction = static_cast<double>(ex) / static_cast<double>(cfg.n_paths);
  return e;
}

namespace {

/// (1/T) log mean exp(T a_i) written as max a + (1/T) log mean exp(T (a_i - max a)).
void log_mean_exp(std::span<const double> rate, double T, double& value, double& se, double& neff,
                  double& amax) {
  amax = -std::numeric_limits<double>::infinity();
  for (double a : rate) amax = std::max(amax, a);
  Moments w;
  double s1 = 0.0;
  double s2 = 0.0;
  for (double a : rate) {
    const double x = std::exp(T * (a - amax));
    w.add(x);
    s1 += x;
    s2 += x * x;
  }
  value = amax + std::log(w.mean) / T;
  se = std::sqrt(w.variance() / w.n) / w.mean / T;
  neff = s1 * s1 / s2;
}

}  // namespace

McEstimate risk_cost_from(const PathEnsemble& e, double T) {
  if (!(T > 0.0)) throw Error("risk-sensitive cost needs a positive horizon");
  McEstimate m;
  m.T = T;
  m.n_paths = e.n_paths;
  m.exited_fraction = e.exited_fraction;
  const std::size_t half = e.steps / 2;
  std::vector<double> rate(e.n_paths);
  for (std::size_t i = 0; i < e.n_paths; ++i) rate[i] = e.time[i] == T ? e.cost_mean[i] : e.cost_mean[i] * (e.time[i] / T);
  double amax = 0.0;
  log_mean_exp(rate, T, m.value, m.std_error, m.n_effective, amax);
  m.max_exponent = amax * T;
  if (half > 0) {
    const double Th = static_cast<double>(half) * e.dt;
    for (std::size_t i = 0; i < e.n_paths; ++i) {
      const double th = e.half_time[i];
      rate[i] = th == Th ? e.half_cost_mean[i] : e.half_cost_mean[i] * (th / Th);
    }
    double neff = 0.0;
    log_mean_exp(rate, Th, m.value_half, m.std_error_half, neff, amax);
  } else {
    m.value_half = m.value;
    m.std_error_half = m.std_error;
  }
  return m;
}

McEstimate estimate_risk_cost(const ProblemSpec& p, const Grid& g, const PolicyField& policy,
                              const McConfig& cfg) {
  cfg.validate(g.dim());
  if (!(cfg.T > 0.0)) throw Error("risk-sensitive cost needs a positive horizon");
  return risk_cost_from(simulate_paths(p, g, policy, cfg), cfg.T);
}

double interpolate(const Grid& g, std::span<const double> interior_values, std::span<const double> x) {
  if (interior_values.size() != g.interior_count()) throw Error("field length does not match the grid");
  for (int j = 0; j < g.dim(); ++j) {
    if (x[static_cast<std::size_t>(j)] < g.lower(j) || x[static_cast<std::size_t>(j)] > g.upper(j)) return 0.0;
  }
  const auto d = static_cast<std::size_t>(g.dim());
  std::array<long, Grid::kMaxDim> i0{};
  std::array<double, Grid::kMaxDim> t{};
  for (std::size_t j = 0; j < d; ++j) {
    const int a = static_cast<int>(j);
    const double s = (x[j] - g.lower(a)) / g.step(a);
    long c = static_cast<long>(std::floor(s));
    c = std::clamp(c, 0L, g.count(a) - 2);
    i0[j] = c;
    t[j] = std::clamp(s - static_cast<double>(c), 0.0, 1.0);
  }
  double v = 0.0;
  for (std::size_t mask = 0; mask < (std::size_t{1} << d); ++mask) {
    double wt = 1.0;
    Grid::Index idx{};
    for (std::size_t j = 0; j < d; ++j) {
      const bool hi = (mask >> j) & 1U;
      wt *= hi ? t[j] : 1.0 - t[j];
      idx[j] = g.lower_index(static_cast<int>(j)) + i0[j] + (hi ? 1 : 0);
    }
    if (wt == 0.0) continue;
    const std::int64_t row = g.interior_index(g.node_at(idx));
    if (row >= 0) v += wt * interior_values[static_cast<std::size_t>(row)];
  }
  return v;
}

FkSamples feynman_kac_samples(const ProblemSpec& p, const Grid& g, const PolicyField& policy,
                              const EigenPair& eig, const McConfig& cfg_in, double t_max) {
  McConfig cfg = cfg_in;
  cfg.T = t_max;
  cfg.exit = ExitPolicy::Stop;
  cfg.validate(g.dim());
  if (eig.V.size() != g.interior_count()) throw Error("eigenvector does not match the grid");
  const PathModel model(p, g, policy);
  const std::size_t N = cfg.steps();
  const double dt = N ? t_max / static_cast<double>(N) : cfg.dt;
  const auto d = static_cast<std::size_t>(g.dim());

  FkSamples s;
  s.v0 = interpolate(g, eig.V, cfg.x0);
  s.dt = dt;
  s.t_max = t_max;
  for (int j = 0; j < g.dim(); ++j) s.h = std::max(s.h, g.step(j));
  s.cost_mean.resize(cfg.n_paths);
  s.time.resize(cfg.n_paths);
  s.v_end.resize(cfg.n_paths);
  std::vector<std::uint8_t> exited(cfg.n_paths);
  parallel_for(
      cfg.n_paths,
      [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
          const PathOutcome o =
              run_path(model, cfg, kStreamControlled, i, N, dt, true, NoExtraDrift{}, NoObserver{});
          s.cost_mean[i] = o.cost_mean;
          s.time[i] = o.steps == N ? t_max : static_cast<double>(o.steps) * dt;
          exited[i] = o.exited;
          s.v_end[i] = o.exited ? 0.0 : interpolate(g, eig.V, std::span<const double>(o.x.data(), d));
        }
      },
      16);
  std::size_t ex = 0;
  for (auto f : exited) ex += f;
  s.exited_fraction = static_cast<double>(ex) / static_cast<double>(cfg.n_paths);
  return s;
}

FkReport feynman_kac_evaluate(const FkSamples& s, double lambda, const FkOptions& opt) {
  FkReport r;
  r.v0 = s.v0;
  r.lambda = lambda;
  r.t_max = s.t_max;
  r.dt = s.dt;
  r.n_paths = s.cost_mean.size();
  r.exited_fraction = s.exited_fraction;
  Moments m;
  for (std::size_t i = 0; i < s.cost_mean.size(); ++i) {
    m.add(std::exp((s.cost_mean[i] - lambda) * s.time[i]) * s.v_end[i]);
  }
  r.estimate = m.mean;
  r.std_error = std::sqrt(m.variance() / m.n);
  r.difference = r.estimate - r.v0;
  r.bias_budget = s.v0 * (opt.bias_dt_coeff * s.dt * s.t_max + opt.bias_h_coeff * s.h);
  if (s.t_max == 0.0) r.bias_budget = 0.0;
  r.allowance = opt.z * r.std_error + r.bias_budget;
  r.pass = std::abs(r.difference) <= r.allowance;
  return r;
}

FkReport feynman_kac_check(const ProblemSpec& p, const Grid& g, const PolicyField& policy,
                           const EigenPair& eig, const McConfig& cfg, const FkOptions& opt) {
  if (!(opt.t_max >= 0.0)) throw Error("t_max must be nonnegative");
  return feynman_kac_evaluate(feynman_kac_samples(p, g, policy, eig, cfg, opt.t_max), eig.lambda, opt);
}

TwistedReport twisted_diagnostics(const ProblemSpec& p, const Grid& g, const PolicyField& policy,
                                  const EigenPair& eig, const McConfig& cfg, const TwistedOptions& opt) {
  cfg.validate(g.dim());
  if (eig.V.size() != g.interior_count()) throw Error("eigenvector does not match the grid");
  if (opt.bins < 1) throw Error("histogram needs at least one bin");
  const PathModel model(p, g, policy);
  const auto d = static_cast<std::size_t>(g.dim());
  const std::size_t N = cfg.steps();
  const double dt = N ? cfg.T / static_cast<double>(N) : cfg.dt;
  const auto burn = static_cast<std::size_t>(std::llround(opt.burn_in / dt));
  if (burn >= N && N > 0) throw Error("burn-in must be shorter than the horizon");

  double R = std::numeric_limits<double>::infinity();
  for (int j = 0; j < g.dim(); ++j) R = std::min({R, g.upper(j), -g.lower(j)});
  TwistedReport rep;
  rep.radii = opt.radii;
  if (rep.radii.empty()) {
    for (int k = 1; k <= 8; ++k) rep.radii.push_back(R * k / 8.0);
  }
  std::sort(rep.radii.begin(), rep.radii.end());
  rep.return_radius = opt.return_radius > 0.0 ? opt.return_radius : R / 4.0;

  const std::vector<double> grad = opt.untwisted ? std::vector<double>{} : log_gradient_field(g, eig.V);
  // 2a is evaluated at the current state; a does not depend on the control.
  auto extra = [&](const double* x, double* mu) {
    if (opt.untwisted) return;
    std::array<double, Grid::kMaxDim> gr{};
    interpolate_nodes(g, grad, d, x, gr.data());
    for (std::size_t j = 0; j < d; ++j) {
      const double s = model.sigma(j, x);
      mu[j] += s * s * gr[j];
    }
  };

  struct PathStats {
    std::vector<Moments> axis;
    std::vector<std::vector<double>> hist;
    std::vector<double> below, above;
    std::vector<double> outside;
    std::vector<double> excursions;
    double samples = 0.0;
  };
  std::vector<PathStats> stats(cfg.n_paths);
  rep.final_state.resize(cfg.n_paths * d);
  const std::size_t nr = rep.radii.size();
  const double r0 = rep.return_radius;

  parallel_for(
      cfg.n_paths,
      [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
          PathStats& st = stats[i];
          st.axis.assign(d, Moments{});
          st.hist.assign(d, std::vector<double>(opt.bins, 0.0));
          st.below.assign(d, 0.0);
          st.above.assign(d, 0.0);
          st.outside.assign(nr, 0.0);
          bool out_now = false;
          double out_start = 0.0;
          auto observe = [&](std::size_t k, const double* x) {
            double r2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) r2 += x[j] * x[j];
            const double r = std::sqrt(r2);
            const double t = static_cast<double>(k + 1) * dt;
            if (k + 1 > burn) {
              st.samples += 1.0;
              for (std::size_t j = 0; j < d; ++j) {
                st.axis[j].add(x[j]);
                const int a = static_cast<int>(j);
                const double s = (x[j] - g.lower(a)) / (g.upper(a) - g.lower(a)) * static_cast<double>(opt.bins);
                if (s < 0.0) {
                  st.below[j] += 1.0;
                } else if (s >= static_cast<double>(opt.bins)) {
                  st.above[j] += 1.0;
                } else {
                  st.hist[j][static_cast<std::size_t>(s)] += 1.0;
                }
              }
              for (std::size_t q = 0; q < nr; ++q) st.outside[q] += r > rep.radii[q] ? 1.0 : 0.0;
            }
            if (r > r0 && !out_now) {
              out_now = true;
              out_start = t;
            } else if (r <= r0 && out_now) {
              out_now = false;
              if (k + 1 > burn) st.excursions.push_back(t - out_start);
            }
          };
          const PathOutcome o = run_path(model, cfg, kStreamTwisted, i, N, dt, false, extra, observe);
          for (std::size_t j = 0; j < d; ++j) rep.final_state[i * d + j] = o.x[j];
        }
      },
      1);

  // Fixed-order reduction.
  std::vector<Moments> axis(d);
  rep.histograms.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    rep.histograms[j].lower = g.lower(static_cast<int>(j));
    rep.histograms[j].upper = g.upper(static_cast<int>(j));
    rep.histograms[j].counts.assign(opt.bins, 0.0);
  }
  rep.outside_fraction.assign(nr, 0.0);
  std::vector<double> exc;
  double samples = 0.0;
  for (const PathStats& st : stats) {
    samples += st.samples;
    for (std::size_t j = 0; j < d; ++j) {
      axis[j].merge(st.axis[j]);
      for (std::size_t b = 0; b < opt.bins; ++b) rep.histograms[j].counts[b] += st.hist[j][b];
      rep.histograms[j].below += st.below[j];
      rep.histograms[j].above += st.above[j];
    }
    for (std::size_t q = 0; q < nr; ++q) rep.outside_fraction[q] += st.outside[q];
    exc.insert(exc.end(), st.excursions.begin(), st.excursions.end());
  }
  rep.sampled_time = samples * dt;
  const double norm = samples > 0.0 ? 1.0 / samples : 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    rep.mean.push_back(axis[j].mean);
    rep.variance.push_back(axis[j].pop_variance());
    for (double& c : rep.histograms[j].counts) c *= norm;
    rep.histograms[j].below *= norm;
    rep.histograms[j].above *= norm;
  }
  for (double& f : rep.outside_fraction) f *= norm;

  rep.excursions = exc.size();
  if (!exc.empty()) {
    Moments em;
    for (double e : exc) em.add(e);
    rep.mean_return_time = em.mean;
    // Least-squares slope of log survival against excursion length.
    std::sort(exc.begin(), exc.end());
    const double tmax = exc[static_cast<std::size_t>(0.99 * static_cast<double>(exc.size() - 1))];
    double sx = 0, sy = 0, sxx = 0, sxy = 0, np = 0;
    for (int q = 0; q < 20 && tmax > 0.0; ++q) {
      const double t = tmax * q / 20.0;
      const auto above = static_cast<double>(exc.end() - std::upper_bound(exc.begin(), exc.end(), t));
      if (above < 10.0) break;
      const double y = std::log(above / static_cast<double>(exc.size()));
      sx += t;
      sy += y;
      sxx += t * t;
      sxy += t * y;
      np += 1.0;
    }
    rep.tail_points = static_cast<std::size_t>(np);
    if (np >= 3.0) {
      const double den = np * sxx - sx * sx;
      if (den > 0.0) rep.tail_rate = -(np * sxy - sx * sy) / den;
    }
  }
  return rep;
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw Error("KS statistic needs two nonempty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0;
  std::size_t j = 0;
  double dmax = 0.0;
  const auto na = static_cast<double>(a.size());
  const auto nb = static_cast<double>(b.size());
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    dmax = std::max(dmax, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return dmax;
}

}  // namespace riskpia
