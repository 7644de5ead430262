#include "riskpia/lattice.hpp"

#include <cmath>
#include <cstdio>
#include <string>

#include "riskpia/error.hpp"

namespace riskpia {

namespace {

constexpr double kRatioTol = 1e-9;

long integer_ratio(double value, double step, const char* what, int axis) {
  const double ratio = value / step;
  const double rounded = std::round(ratio);
  if (!(std::abs(ratio - rounded) <= kRatioTol * std::max(1.0, std::abs(ratio)))) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s/h on axis %d is %.17g, not an integer", what, axis + 1,
                  ratio);
    throw NonIntegerRatio(buf);
  }
  return static_cast<long>(rounded);
}

void check_dim(int d) {
  if (d != 1 && d != 2) {
    throw UnsupportedDimension("grid dimension " + std::to_string(d) + " not supported (1 or 2)");
  }
}

}  // namespace

bool Grid::symmetric() const {
  for (int j = 0; j < dim_; ++j) {
    if (lo_[ax(j)] != -hi_[ax(j)]) return false;
  }
  return true;
}

Grid::Index Grid::multi_index(std::size_t node) const {
  Index idx{};
  std::size_t rest = node;
  for (int j = dim_ - 1; j >= 0; --j) {
    const auto n = static_cast<std::size_t>(count(j));
    idx[ax(j)] = lo_[ax(j)] + static_cast<long>(rest % n);
    rest /= n;
  }
  return idx;
}

std::size_t Grid::node_at(const Index& idx) const {
  std::size_t node = 0;
  for (int j = 0; j < dim_; ++j) {
    node = node * static_cast<std::size_t>(count(j)) + static_cast<std::size_t>(idx[ax(j)] - lo_[ax(j)]);
  }
  return node;
}

bool Grid::contains(const Index& idx) const {
  for (int j = 0; j < dim_; ++j) {
    if (idx[ax(j)] < lo_[ax(j)] || idx[ax(j)] > hi_[ax(j)]) return false;
  }
  return true;
}

void Grid::coordinates(std::size_t node, std::span<double> out) const {
  const Index idx = multi_index(node);
  for (int j = 0; j < dim_; ++j) out[ax(j)] = static_cast<double>(idx[ax(j)]) * step_[ax(j)];
}

std::vector<double> Grid::coordinates(std::size_t node) const {
  std::vector<double> x(static_cast<std::size_t>(dim_));
  coordinates(node, x);
  return x;
}

std::int64_t Grid::neighbour(std::size_t row, int axis, int dir) const {
  return neighbours_[row * 2 * ax(dim_) + 2 * ax(axis) + (dir < 0 ? 0 : 1)];
}

std::vector<std::size_t> Grid::deep_interior() const {
  std::vector<std::size_t> out;
  for (std::size_t row = 0; row < interior_count(); ++row) {
    bool deep = true;
    for (int j = 0; j < dim_ && deep; ++j) {
      deep = neighbour(row, j, +1) >= 0 && neighbour(row, j, -1) >= 0;
    }
    if (deep) out.push_back(row);
  }
  return out;
}

bool Grid::same_lattice(const Grid& other) const {
  return dim_ == other.dim_ && step_ == other.step_ && lo_ == other.lo_ && hi_ == other.hi_;
}

Grid build_box_grid(int d, std::span<const double> lower, std::span<const double> upper,
                    std::span<const double> steps) {
  check_dim(d);
  const auto ud = static_cast<std::size_t>(d);
  if (lower.size() != ud || upper.size() != ud || steps.size() != ud) {
    throw DimensionError("grid bounds and steps need one entry per axis");
  }
  Grid g;
  g.dim_ = d;
  std::size_t total = 1;
  for (std::size_t j = 0; j < ud; ++j) {
    if (!(steps[j] > 0.0)) throw Error("grid step must be positive");
    if (!(upper[j] > 0.0) || !(lower[j] < 0.0)) {
      throw Error("grid box must contain the origin strictly inside");
    }
    g.step_[j] = steps[j];
    g.lo_[j] = integer_ratio(lower[j], steps[j], "lower bound", static_cast<int>(j));
    g.hi_[j] = integer_ratio(upper[j], steps[j], "radius", static_cast<int>(j));
    if (g.lo_[j] > -1 || g.hi_[j] < 1) throw Error("grid box must contain the origin strictly inside");
    total *= static_cast<std::size_t>(g.hi_[j] - g.lo_[j] + 1);
  }

  g.interior_of_node_.assign(total, -1);
  for (std::size_t node = 0; node < total; ++node) {
    const Grid::Index idx = g.multi_index(node);
    bool interior = true;
    for (std::size_t j = 0; j < ud; ++j) {
      interior = interior && idx[j] > g.lo_[j] && idx[j] < g.hi_[j];
    }
    if (interior) {
      g.interior_of_node_[node] = static_cast<std::int64_t>(g.node_of_interior_.size());
      g.node_of_interior_.push_back(node);
    }
  }
  g.neighbours_.reserve(g.node_of_interior_.size() * 2 * ud);
  for (std::size_t node : g.node_of_interior_) {
    for (std::size_t j = 0; j < ud; ++j) {
      for (int dir : {-1, 1}) {
        Grid::Index idx = g.multi_index(node);
        idx[j] += dir;
        g.neighbours_.push_back(g.interior_of_node_[g.node_at(idx)]);
      }
    }
  }
  g.origin_node_ = g.node_at(Grid::Index{});
  g.origin_interior_ = static_cast<std::size_t>(g.interior_of_node_[g.origin_node_]);
  return g;
}

Grid build_grid(int d, std::span<const double> radii, std::span<const double> steps) {
  check_dim(d);
  std::vector<double> lower(radii.begin(), radii.end());
  for (double& v : lower) {
    if (!(v > 0.0)) throw Error("grid radius must be positive");
    v = -v;
  }
  return build_box_grid(d, lower, radii, steps);
}

std::vector<Grid> nested_refinements(const Grid& g, const std::vector<std::vector<double>>& radii_list) {
  const auto ud = static_cast<std::size_t>(g.dim());
  std::vector<double> steps(ud);
  for (std::size_t j = 0; j < ud; ++j) steps[j] = g.step(static_cast<int>(j));

  std::vector<Grid> out;
  std::vector<double> previous;
  for (const auto& entry : radii_list) {
    std::vector<double> radii = entry;
    if (radii.size() == 1 && ud > 1) radii.assign(ud, entry[0]);
    if (radii.size() != ud) throw DimensionError("refinement radius needs one value per axis");
    if (!previous.empty()) {
      for (std::size_t j = 0; j < ud; ++j) {
        if (!(radii[j] > previous[j])) throw Error("refinement radii must be strictly increasing");
      }
    }
    out.push_back(build_grid(g.dim(), radii, steps));
    previous = radii;
  }
  return out;
}

}  // namespace riskpia
