#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace riskpia {

/// Tensor lattice on the box [lower_j, upper_j] with step h_j per axis.
///
/// Both bounds are integer multiples of the step, so x = 0 is always a
/// node. Nodes are ordered lexicographically in the multi-index (first axis
/// slowest); interior nodes (all 2d neighbours inside the closed box) keep
/// that order. The Dirichlet eigenproblem lives on the interior nodes.
class Grid {
 public:
  static constexpr int kMaxDim = 2;
  using Index = std::array<long, kMaxDim>;

  Grid() = default;

  int dim() const noexcept { return dim_; }
  double step(int axis) const { return step_[static_cast<std::size_t>(axis)]; }
  double lower(int axis) const { return step_[ax(axis)] * static_cast<double>(lo_[ax(axis)]); }
  double upper(int axis) const { return step_[ax(axis)] * static_cast<double>(hi_[ax(axis)]); }
  /// Radius of a symmetric box; the upper bound for asymmetric ones.
  double radius(int axis) const { return upper(axis); }
  long lower_index(int axis) const { return lo_[ax(axis)]; }
  long upper_index(int axis) const { return hi_[ax(axis)]; }
  long count(int axis) const { return hi_[ax(axis)] - lo_[ax(axis)] + 1; }
  bool symmetric() const;

  std::size_t node_count() const noexcept { return interior_of_node_.size(); }
  std::size_t interior_count() const noexcept { return node_of_interior_.size(); }
  std::size_t origin_node() const noexcept { return origin_node_; }
  std::size_t origin_interior() const noexcept { return origin_interior_; }

  /// Signed lattice multi-index of a node (coordinate = index * h).
  Index multi_index(std::size_t node) const;
  /// Node for a signed multi-index; the index must lie inside the box.
  std::size_t node_at(const Index& idx) const;
  bool contains(const Index& idx) const;

  void coordinates(std::size_t node, std::span<double> out) const;
  std::vector<double> coordinates(std::size_t node) const;

  bool is_interior(std::size_t node) const { return interior_of_node_[node] >= 0; }
  bool is_boundary(std::size_t node) const { return interior_of_node_[node] < 0; }
  /// Interior row for a node, or -1 for boundary nodes.
  std::int64_t interior_index(std::size_t node) const { return interior_of_node_[node]; }
  std::size_t node_of_interior(std::size_t row) const { return node_of_interior_[row]; }

  /// Interior row of the neighbour of interior row `row` along `axis` in
  /// direction `dir` (+1 / -1), or -1 if the neighbour is a boundary node.
  std::int64_t neighbour(std::size_t row, int axis, int dir) const;

  /// Interior rows all of whose neighbours are interior too.
  std::vector<std::size_t> deep_interior() const;

  /// Identity of the lattice (dimension, steps, bounds).
  bool same_lattice(const Grid& other) const;

 private:
  static std::size_t ax(int axis) { return static_cast<std::size_t>(axis); }

  friend Grid build_box_grid(int, std::span<const double>, std::span<const double>,
                             std::span<const double>);

  int dim_ = 0;
  std::array<double, kMaxDim> step_{};
  Index lo_{};
  Index hi_{};
  std::vector<std::int64_t> interior_of_node_;
  std::vector<std::size_t> node_of_interior_;
  std::vector<std::int64_t> neighbours_;  // [row][axis][dir<0 ? 0 : 1]
  std::size_t origin_node_ = 0;
  std::size_t origin_interior_ = 0;
};

/// Symmetric box [-R_j, R_j].
Grid build_grid(int d, std::span<const double> radii, std::span<const double> steps);

/// Box [lower_j, upper_j]; lower_j <= -h_j and upper_j >= h_j so that the
/// origin is an interior node.
Grid build_box_grid(int d, std::span<const double> lower, std::span<const double> upper,
                    std::span<const double> steps);

/// Nested symmetric grids sharing the step sizes of `g`. Each entry of
/// `radii_list` holds one radius per axis (a single value applies to all
/// axes) and the list must be strictly increasing on every axis.
std::vector<Grid> nested_refinements(const Grid& g, const std::vector<std::vector<double>>& radii_list);

}  // namespace riskpia
