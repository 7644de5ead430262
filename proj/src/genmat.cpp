#include "riskpia/genmat.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "riskpia/error.hpp"
#include "riskpia/parallel.hpp"
#include "riskpia/rng.hpp"

namespace riskpia {

namespace {

std::string point_text(std::span<const double> x) {
  std::string s = "(";
  char buf[64];
  for (std::size_t j = 0; j < x.size(); ++j) {
    std::snprintf(buf, sizeof buf, "%s%.17g", j ? ", " : "", x[j]);
    s += buf;
  }
  return s + ")";
}

double compute_shift(std::span<const double> diag) {
  double mx = 0.0;
  for (double v : diag) mx = std::max(mx, std::abs(v));
  return 1.0 + mx;
}

}  // namespace

PolicyField constant_policy(const Grid& g, std::uint32_t control) {
  return PolicyField(g.interior_count(), control);
}

PolicyField random_policy(const Grid& g, std::size_t controls, std::uint64_t seed) {
  if (controls == 0) throw Error("no controls");
  PolicyField v(g.interior_count());
  const Philox4x32::Key key{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto r = Philox4x32::apply({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i >> 32), 0u, 3u}, key);
    const std::uint64_t w = (std::uint64_t{r[0]} << 32) | r[1];
    v[i] = static_cast<std::uint32_t>(w % controls);
  }
  return v;
}

void validate_policy(const PolicyField& v, const Grid& g, std::size_t controls) {
  if (v.size() != g.interior_count()) {
    throw Error("policy has " + std::to_string(v.size()) + " entries, grid has " +
                std::to_string(g.interior_count()) + " interior nodes");
  }
  for (auto k : v) {
    if (k >= controls) throw Error("policy control index " + std::to_string(k) + " out of range");
  }
}

const char* to_string(DriftScheme s) { return s == DriftScheme::Upwind ? "upwind" : "hybrid"; }

DriftScheme parse_drift_scheme(const std::string& s) {
  if (s == "upwind") return DriftScheme::Upwind;
  if (s == "hybrid") return DriftScheme::Hybrid;
  throw ConfigError("unknown drift scheme '" + s + "' (expected upwind or hybrid)");
}

GeneratorMatrix::GeneratorMatrix(std::vector<double> diagonal, std::vector<std::size_t> row_ptr,
                                 std::vector<std::size_t> cols, std::vector<double> values,
                                 std::size_t normalize_row, std::vector<double> exit,
                                 std::vector<double> cost)
    : diag_(std::move(diagonal)),
      row_ptr_(std::move(row_ptr)),
      cols_(std::move(cols)),
      vals_(std::move(values)),
      exit_(std::move(exit)),
      cost_(std::move(cost)),
      normalize_row_(normalize_row),
      shift_(compute_shift(diag_)) {
  if (row_ptr_.size() != diag_.size() + 1 || cols_.size() != vals_.size() ||
      row_ptr_.back() != cols_.size()) {
    throw Error("inconsistent compressed-row layout");
  }
  if (!diag_.empty() && normalize_row_ >= diag_.size()) throw Error("normalization row out of range");
  if (exit_.empty()) exit_.assign(diag_.size(), 0.0);
  if (cost_.empty()) {
    cost_.resize(diag_.size());
    for (std::size_t i = 0; i < diag_.size(); ++i) {
      double r = diag_[i];
      for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) r += vals_[k];
      cost_[i] = r;
    }
  }
  if (exit_.size() != diag_.size() || cost_.size() != diag_.size()) {
    throw Error("exit and cost vectors must have one entry per row");
  }
}

GeneratorMatrix GeneratorMatrix::from_dense(const std::vector<std::vector<double>>& rows,
                                            std::size_t normalize_row) {
  std::vector<double> diag;
  std::vector<std::size_t> ptr{0};
  std::vector<std::size_t> cols;
  std::vector<double> vals;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.size()) throw Error("dense matrix must be square");
    diag.push_back(rows[i][i]);
    for (std::size_t j = 0; j < rows.size(); ++j) {
      if (j != i && rows[i][j] != 0.0) {
        cols.push_back(j);
        vals.push_back(rows[i][j]);
      }
    }
    ptr.push_back(cols.size());
  }
  return GeneratorMatrix(std::move(diag), std::move(ptr), std::move(cols), std::move(vals),
                         normalize_row);
}

double GeneratorMatrix::at(std::size_t i, std::size_t j) const {
  if (i == j) return diag_[i];
  for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) {
    if (cols_[k] == j) return vals_[k];
  }
  return 0.0;
}

double GeneratorMatrix::row_dot(std::size_t i, std::span<const double> v) const {
  double t = -exit_[i] * v[i];
  for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) t += vals_[k] * (v[cols_[k]] - v[i]);
  return t + cost_[i] * v[i];
}

void GeneratorMatrix::multiply(std::span<const double> v, std::span<double> out) const {
  for (std::size_t i = 0; i < diag_.size(); ++i) out[i] = row_dot(i, v);
}

GeneratorMatrix GeneratorMatrix::shifted(double delta) const {
  GeneratorMatrix m = *this;
  for (double& d : m.diag_) d += delta;
  for (double& c : m.cost_) c += delta;
  m.shift_ = compute_shift(m.diag_);
  return m;
}

double GeneratorMatrix::min_offdiagonal() const {
  if (vals_.empty()) return 0.0;
  return *std::min_element(vals_.begin(), vals_.end());
}

void GeneratorMatrix::dump(std::ostream& os) const {
  char buf[96];
  for (std::size_t i = 0; i < diag_.size(); ++i) {
    // Entries in column order, diagonal included.
    std::vector<std::pair<std::size_t, double>> row{{i, diag_[i]}};
    for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) row.emplace_back(cols_[k], vals_[k]);
    std::sort(row.begin(), row.end());
    for (const auto& [j, v] : row) {
      std::snprintf(buf, sizeof buf, "%zu %zu %.17g\n", i, j, v);
      os << buf;
    }
  }
}

Discretization::Discretization(const ProblemSpec& p, const Grid& g, DriftScheme scheme)
    : problem_(&p), grid_(&g), scheme_(scheme) {
  if (p.d != g.dim()) throw DimensionError("problem and grid dimensions differ");
  const std::size_t n = g.interior_count();
  const auto d = static_cast<std::size_t>(g.dim());
  coords_.resize(n * d);
  diffusion_.resize(n * d);
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t row = begin; row < end; ++row) {
      std::span<double> x(coords_.data() + row * d, d);
      g.coordinates(g.node_of_interior(row), x);
      for (std::size_t j = 0; j < d; ++j) {
        try {
          diffusion_[row * d + j] = p.diffusion(static_cast<int>(j), x);
        } catch (const DomainError& e) {
          throw DomainError(std::string(e.what()) + " at node " + point_text(x));
        }
      }
    }
  });
}

std::span<const double> Discretization::coordinates(std::size_t row) const {
  const auto d = static_cast<std::size_t>(grid_->dim());
  return {coords_.data() + row * d, d};
}

RowStencil Discretization::stencil(std::size_t row, std::size_t control) const {
  const auto d = static_cast<std::size_t>(grid_->dim());
  const std::span<const double> x = coordinates(row);
  const Point& u = problem_->controls[control];
  RowStencil st;
  try {
    for (std::size_t j = 0; j < d; ++j) {
      const double h = grid_->step(static_cast<int>(j));
      const double a = diffusion_[row * d + j];
      const double beta = problem_->drift(static_cast<int>(j), x, u);
      const double diff = a / (h * h);
      double plus;
      double minus;
      if (scheme_ == DriftScheme::Hybrid && std::abs(beta) * h < 2.0 * a) {
        plus = diff + beta / (2.0 * h);
        minus = diff - beta / (2.0 * h);
        st.diagonal -= 2.0 * diff;
      } else {
        plus = diff + std::max(beta, 0.0) / h;
        minus = diff + std::max(-beta, 0.0) / h;
        st.diagonal -= 2.0 * diff + std::abs(beta) / h;
      }
      const std::int64_t lo = grid_->neighbour(row, static_cast<int>(j), -1);
      const std::int64_t hi = grid_->neighbour(row, static_cast<int>(j), +1);
      if (lo >= 0) {
        st.off[static_cast<std::size_t>(st.count)] = minus;
        st.neighbour[static_cast<std::size_t>(st.count++)] = lo;
      } else {
        st.exit += minus;
      }
      if (hi >= 0) {
        st.off[static_cast<std::size_t>(st.count)] = plus;
        st.neighbour[static_cast<std::size_t>(st.count++)] = hi;
      } else {
        st.exit += plus;
      }
    }
    st.cost = problem_->cost(x, u);
    st.diagonal += st.cost;
  } catch (const DomainError& e) {
    throw DomainError(std::string(e.what()) + " at node " + point_text(x) + " with control " +
                      std::to_string(control));
  }
  return st;
}

double Discretization::row_apply(std::size_t control, std::size_t row,
                                 std::span<const double> V) const {
  const RowStencil st = stencil(row, control);
  double t = -st.exit * V[row];
  for (int k = 0; k < st.count; ++k) {
    const auto j = static_cast<std::size_t>(st.neighbour[static_cast<std::size_t>(k)]);
    t += st.off[static_cast<std::size_t>(k)] * (V[j] - V[row]);
  }
  return t + st.cost * V[row];
}

GeneratorMatrix Discretization::assemble_control(std::size_t control) const {
  if (control >= controls()) throw Error("control index out of range");
  return assemble_policy(PolicyField(rows(), static_cast<std::uint32_t>(control)));
}

GeneratorMatrix Discretization::assemble_policy(const PolicyField& v) const {
  validate_policy(v, *grid_, controls());
  const std::size_t n = rows();
  std::vector<RowStencil> stencils(n);
  parallel_for(
      n,
      [&](std::size_t begin, std::size_t end) {
        for (std::size_t row = begin; row < end; ++row) stencils[row] = stencil(row, v[row]);
      },
      256);

  std::vector<double> diag(n);
  std::vector<double> exit(n);
  std::vector<double> cost(n);
  std::vector<std::size_t> ptr{0};
  std::vector<std::size_t> cols;
  std::vector<double> vals;
  ptr.reserve(n + 1);
  for (std::size_t row = 0; row < n; ++row) {
    RowStencil& st = stencils[row];
    diag[row] = st.diagonal;
    exit[row] = st.exit;
    cost[row] = st.cost;
    std::array<std::size_t, 2 * Grid::kMaxDim> order{};
    for (int k = 0; k < st.count; ++k) order[static_cast<std::size_t>(k)] = static_cast<std::size_t>(k);
    std::sort(order.begin(), order.begin() + st.count,
              [&](std::size_t a, std::size_t b) { return st.neighbour[a] < st.neighbour[b]; });
    for (int k = 0; k < st.count; ++k) {
      const std::size_t o = order[static_cast<std::size_t>(k)];
      cols.push_back(static_cast<std::size_t>(st.neighbour[o]));
      vals.push_back(st.off[o]);
    }
    ptr.push_back(cols.size());
  }
  GeneratorMatrix m(std::move(diag), std::move(ptr), std::move(cols), std::move(vals),
                    grid_->origin_interior(), std::move(exit), std::move(cost));
  m.label = std::string(to_string(scheme_)) + " generator";
  return m;
}

GeneratorMatrix assemble_control(const ProblemSpec& p, const Grid& g, std::size_t control,
                                 DriftScheme scheme) {
  return Discretization(p, g, scheme).assemble_control(control);
}

GeneratorMatrix assemble_policy(const ProblemSpec& p, const Grid& g, const PolicyField& v,
                                DriftScheme scheme) {
  return Discretization(p, g, scheme).assemble_policy(v);
}

double row_apply(const ProblemSpec& p, const Grid& g, std::size_t control, std::size_t row,
                 std::span<const double> V, DriftScheme scheme) {
  if (control >= p.controls.size()) throw Error("control index out of range");
  return Discretization(p, g, scheme).row_apply(control, row, V);
}

}  // namespace riskpia
