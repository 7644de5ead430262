#include "riskpia/perron.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "riskpia/error.hpp"

namespace riskpia {

namespace {

void check_structure(const GeneratorMatrix& M) {
  if (M.size() == 0) throw StructureError("empty generator matrix");
  const double m = M.min_offdiagonal();
  if (m < 0.0) throw StructureError("negative off-diagonal entry in generator matrix");
}

// Power sweeps before switching to shifted inverse steps, and the largest
// banded factorization (n * bandwidth^2) worth doing per step.
constexpr std::size_t kPlainSweeps = 16;
constexpr double kMaxFactorWork = 2e8;

// Banded LU of mu I - M without pivoting. For mu above the Perron root this
// is a nonsingular M-matrix: the factors keep its sign pattern, so every
// solve is a sum of nonnegative terms and maps positive vectors to positive
// vectors, also in floating point. A nonpositive pivot means mu was too small.
class ShiftedBandSolver {
 public:
  explicit ShiftedBandSolver(const GeneratorMatrix& M) : n_(M.size()) {
    const auto ptr = M.row_ptr();
    const auto cols = M.cols();
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t k = ptr[i]; k < ptr[i + 1]; ++k) {
        bw_ = std::max(bw_, cols[k] > i ? cols[k] - i : i - cols[k]);
      }
    }
    width_ = 2 * bw_ + 1;
    const auto exit = M.exit_rate();
    const auto vals = M.values();
    outflow_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      double o = exit[i];
      for (std::size_t k = ptr[i]; k < ptr[i + 1]; ++k) o += vals[k];
      outflow_[i] = o;
    }
  }

  bool affordable() const {
    return static_cast<double>(n_) * static_cast<double>(bw_ + 1) * static_cast<double>(bw_ + 1) <= kMaxFactorWork;
  }

  bool factor(const GeneratorMatrix& M, double mu) {
    a_.assign(n_ * width_, 0.0);
    const auto cost = M.cost();
    const auto ptr = M.row_ptr();
    const auto cols = M.cols();
    const auto vals = M.values();
    for (std::size_t i = 0; i < n_; ++i) {
      at(i, i) = (mu - cost[i]) + outflow_[i];
      for (std::size_t k = ptr[i]; k < ptr[i + 1]; ++k) at(i, cols[k]) = -vals[k];
    }
    for (std::size_t k = 0; k < n_; ++k) {
      const double pivot = at(k, k);
      if (!(pivot > 0.0) || !std::isfinite(pivot)) return false;
      const std::size_t last = std::min(n_ - 1, k + bw_);
      for (std::size_t i = k + 1; i <= last; ++i) {
        double& lik = at(i, k);
        if (lik == 0.0) continue;
        lik /= pivot;
        for (std::size_t j = k + 1; j <= last; ++j) at(i, j) -= lik * at(k, j);
      }
    }
    return true;
  }

  void solve(std::vector<double>& x) const {
    for (std::size_t i = 0; i < n_; ++i) {
      const std::size_t first = i > bw_ ? i - bw_ : 0;
      double s = x[i];
      for (std::size_t j = first; j < i; ++j) s -= at(i, j) * x[j];
      x[i] = s;
    }
    for (std::size_t i = n_; i-- > 0;) {
      const std::size_t last = std::min(n_ - 1, i + bw_);
      double s = x[i];
      for (std::size_t j = i + 1; j <= last; ++j) s -= at(i, j) * x[j];
      x[i] = s / at(i, i);
    }
  }

 private:
  double& at(std::size_t i, std::size_t j) { return a_[i * width_ + (j + bw_ - i)]; }
  double at(std::size_t i, std::size_t j) const { return a_[i * width_ + (j + bw_ - i)]; }

  std::size_t n_ = 0;
  std::size_t bw_ = 0;
  std::size_t width_ = 1;
  std::vector<double> outflow_;  // exit rate plus off-diagonal row sum
  std::vector<double> a_;
};
}  // namespace

CwBounds cw_certificate(const GeneratorMatrix& M, std::span<const double> V) {
  if (V.size() != M.size()) throw Error("vector length does not match matrix size");
  CwBounds b{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (std::size_t i = 0; i < M.size(); ++i) {
    if (!(V[i] > 0.0)) throw NonPositiveVector("test vector has a non-positive entry at row " + std::to_string(i));
  }
  for (std::size_t i = 0; i < M.size(); ++i) {
    const double r = M.row_dot(i, V) / V[i];
    b.lower = std::min(b.lower, r);
    b.upper = std::max(b.upper, r);
  }
  return b;
}

EigenPair principal_eigpair(const GeneratorMatrix& M, double tol, std::size_t max_iter,
                            std::span<const double> start) {
  check_structure(M);
  if (!(tol > 0.0)) throw Error("eigensolver tolerance must be positive");
  const std::size_t n = M.size();
  const double s = M.shift_hint();

  std::vector<double> v(n, 1.0);
  if (!start.empty()) {
    if (start.size() != n) throw Error("start vector length does not match matrix size");
    double mx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!(start[i] > 0.0)) throw NonPositiveVector("start vector must be positive");
      mx = std::max(mx, start[i]);
    }
    for (std::size_t i = 0; i < n; ++i) v[i] = start[i] / mx;
  }
  std::vector<double> next(n);
  std::vector<double> x;
  ShiftedBandSolver solver(M);
  int failures = solver.affordable() ? 0 : 8;
  double margin = 1.0;
  bool polished = false;

  const auto exit = M.exit_rate();
  const auto cost = M.cost();
  const auto ptr = M.row_ptr();
  const auto cols = M.cols();
  const auto vals = M.values();
  // Transport part of (M V)_i; the full product is this plus cost_i V_i.
  auto transport = [&](std::span<const double> w, std::size_t i) {
    double t = -exit[i] * w[i];
    for (std::size_t k = ptr[i]; k < ptr[i + 1]; ++k) t += vals[k] * (w[cols[k]] - w[i]);
    return t;
  };
  std::vector<double> r;

  double lo = 0.0;
  double hi = 0.0;
  std::size_t it = 0;
  for (;; ++it) {
    lo = std::numeric_limits<double>::infinity();
    hi = -std::numeric_limits<double>::infinity();
    double top = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double y = transport(v, i) + cost[i] * v[i];
      const double r = y / v[i];
      lo = std::min(lo, r);
      hi = std::max(hi, r);
      const double w = y + s * v[i];
      next[i] = w;
      top = std::max(top, w);
    }
    // Shifted inverse step with mu = U + margin (U - L) > lambda. If the
    // factorization or the solve loses positivity to rounding, do a plain
    // sweep and widen the margin.
    auto inverse_step = [&] {
      const double mu = hi + margin * (hi - lo);
      if (!solver.factor(M, mu)) return false;
      x.assign(v.begin(), v.end());
      solver.solve(x);
      // One step of iterative refinement against the generator-form residual.
      r.resize(n);
      for (std::size_t i = 0; i < n; ++i) r[i] = v[i] - ((mu - cost[i]) * x[i] - transport(x, i));
      solver.solve(r);
      bool refined = true;
      for (std::size_t i = 0; i < n; ++i) {
        r[i] += x[i];
        if (!(r[i] > 0.0) || !std::isfinite(r[i])) refined = false;
      }
      if (refined) x.swap(r);
      double mx = 0.0;
      for (double xi : x) {
        if (!(xi > 0.0) || !std::isfinite(xi)) return false;
        mx = std::max(mx, xi);
      }
      for (double& xi : x) {
        xi /= mx;
        if (!(xi > 0.0)) return false;
      }
      v.swap(x);
      return true;
    };
    const bool accelerate = failures < 8 && it >= kPlainSweeps;
    if (!(hi - lo > tol)) {  // also stops on NaN, caught below
      // One more inverse step once converged pushes V to the rounding
      // floor, so results no longer depend on where the gap crossed tol.
      if (!accelerate || polished || !(hi - lo > 0.0)) break;
      polished = true;
      const std::vector<double> keep = v;
      const double keep_lo = lo, keep_hi = hi;
      if (inverse_step()) {
        const CwBounds b = cw_certificate(M, v);
        if (b.upper - b.lower <= keep_hi - keep_lo) {
          ++it;
          lo = b.lower;
          hi = b.upper;
          break;
        }
      }
      v = keep;
      lo = keep_lo;
      hi = keep_hi;
      break;
    }
    if (it >= max_iter) throw NonConvergence(it, hi - lo);
    if (accelerate) {
      if (inverse_step()) continue;
      ++failures;
      margin *= 8.0;
    }
    const double scale = 1.0 / top;
    for (std::size_t i = 0; i < n; ++i) {
      v[i] = next[i] * scale;
      if (!(v[i] > 0.0)) {
        throw NonConvergence(it, std::numeric_limits<double>::infinity());
      }
    }
  }
  if (!std::isfinite(lo) || !std::isfinite(hi)) throw NonConvergence(it, hi - lo);

  EigenPair out;
  out.cw_lower = lo;
  out.cw_upper = hi;
  out.lambda = 0.5 * (lo + hi);
  out.iterations = it;
  const double anchor = v[M.normalize_row()];
  for (double& x : v) x /= anchor;
  // Renormalization can move the ratios by rounding; keep the interval
  // consistent with the stored vector.
  const CwBounds cw = cw_certificate(M, v);
  out.cw_lower = std::min(out.cw_lower, cw.lower);
  out.cw_upper = std::max(out.cw_upper, cw.upper);
  out.lambda = std::clamp(out.lambda, out.cw_lower, out.cw_upper);

  double res = 0.0;
  double vmax = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    res = std::max(res, std::abs(M.row_dot(i, v) - out.lambda * v[i]));
    vmax = std::max(vmax, std::abs(v[i]));
  }
  out.residual = res / vmax;
  out.V = std::move(v);
  return out;
}

}  // namespace riskpia
