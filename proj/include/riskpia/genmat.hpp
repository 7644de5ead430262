#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "riskpia/lattice.hpp"
#include "riskpia/model.hpp"

namespace riskpia {

/// Stationary Markov policy: control index for every interior row.
using PolicyField = std::vector<std::uint32_t>;

PolicyField constant_policy(const Grid& g, std::uint32_t control);
/// Uniformly random control per row, a pure function of (seed, row).
PolicyField random_policy(const Grid& g, std::size_t controls, std::uint64_t seed);
/// Throws if the policy is not total on `g` or indexes past `controls`.
void validate_policy(const PolicyField& v, const Grid& g, std::size_t controls);

/// First-order drift differencing. `Hybrid` uses central differences where
/// they keep the off-diagonals nonnegative (|b| h < 2a) and upwind
/// differences elsewhere; `Upwind` uses upwind differences everywhere.
enum class DriftScheme { Upwind, Hybrid };
const char* to_string(DriftScheme s);
DriftScheme parse_drift_scheme(const std::string& s);

/// Square sparse matrix over interior nodes: a diagonal plus off-diagonal
/// entries in compressed-row layout. Off-diagonals are nonnegative.
///
/// Products are evaluated in generator form,
///   (MV)_i = sum_j M_ij (V_j - V_i) - exit_i V_i + cost_i V_i,
/// with exit_i the rate of jumps to the boundary, so that the large
/// diffusive terms cancel before the cost is added. Without explicit exit
/// and cost vectors, exit = 0 and cost_i is the row sum.
class GeneratorMatrix {
 public:
  GeneratorMatrix() = default;
  GeneratorMatrix(std::vector<double> diagonal, std::vector<std::size_t> row_ptr,
                  std::vector<std::size_t> cols, std::vector<double> values,
                  std::size_t normalize_row = 0, std::vector<double> exit = {},
                  std::vector<double> cost = {});

  static GeneratorMatrix from_dense(const std::vector<std::vector<double>>& rows,
                                    std::size_t normalize_row = 0);

  std::size_t size() const noexcept { return diag_.size(); }
  std::size_t nonzeros() const noexcept { return cols_.size() + diag_.size(); }
  double diagonal(std::size_t i) const { return diag_[i]; }
  std::span<const double> diagonal() const noexcept { return diag_; }
  std::span<const std::size_t> row_ptr() const noexcept { return row_ptr_; }
  std::span<const std::size_t> cols() const noexcept { return cols_; }
  std::span<const double> values() const noexcept { return vals_; }
  std::span<const double> exit_rate() const noexcept { return exit_; }
  std::span<const double> cost() const noexcept { return cost_; }

  /// Row used for the V = 1 normalization of eigenvectors (the origin).
  std::size_t normalize_row() const noexcept { return normalize_row_; }
  /// s = 1 + max_i |M_ii|; M + sI is entrywise nonnegative with a positive
  /// diagonal.
  double shift_hint() const noexcept { return shift_; }

  double at(std::size_t i, std::size_t j) const;
  double row_dot(std::size_t i, std::span<const double> v) const;
  void multiply(std::span<const double> v, std::span<double> out) const;

  /// M + delta * I
  GeneratorMatrix shifted(double delta) const;

  /// Smallest off-diagonal entry (0 if there are none).
  double min_offdiagonal() const;

  /// Coordinate triplets, one "row col value" per line, 17 significant digits.
  void dump(std::ostream& os) const;

  std::string label;

 private:
  std::vector<double> diag_;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::size_t> cols_;
  std::vector<double> vals_;
  std::vector<double> exit_;
  std::vector<double> cost_;
  std::size_t normalize_row_ = 0;
  double shift_ = 1.0;
};

/// Stencil of one interior row for one control point.
struct RowStencil {
  double diagonal = 0.0;
  double exit = 0.0;  // rate of jumps to boundary nodes
  double cost = 0.0;
  std::array<double, 2 * Grid::kMaxDim> off{};
  std::array<std::int64_t, 2 * Grid::kMaxDim> neighbour{};
  int count = 0;
};

/// Problem + lattice + scheme with per-row caches (coordinates and
/// diffusion coefficients, which do not depend on the control).
class Discretization {
 public:
  Discretization(const ProblemSpec& p, const Grid& g, DriftScheme scheme = DriftScheme::Hybrid);

  const ProblemSpec& problem() const noexcept { return *problem_; }
  const Grid& grid() const noexcept { return *grid_; }
  DriftScheme scheme() const noexcept { return scheme_; }
  std::size_t rows() const noexcept { return grid_->interior_count(); }
  std::size_t controls() const noexcept { return problem_->controls.size(); }
  std::span<const double> coordinates(std::size_t row) const;

  RowStencil stencil(std::size_t row, std::size_t control) const;
  /// (M_control V)_row with V given on interior rows.
  double row_apply(std::size_t control, std::size_t row, std::span<const double> V) const;

  GeneratorMatrix assemble_control(std::size_t control) const;
  GeneratorMatrix assemble_policy(const PolicyField& v) const;

 private:
  const ProblemSpec* problem_;
  const Grid* grid_;
  DriftScheme scheme_;
  std::vector<double> coords_;     // rows * d
  std::vector<double> diffusion_;  // rows * d, a_jj = sigma_j^2 / 2
};

GeneratorMatrix assemble_control(const ProblemSpec& p, const Grid& g, std::size_t control,
                                 DriftScheme scheme = DriftScheme::Hybrid);
GeneratorMatrix assemble_policy(const ProblemSpec& p, const Grid& g, const PolicyField& v,
                                DriftScheme scheme = DriftScheme::Hybrid);
double row_apply(const ProblemSpec& p, const Grid& g, std::size_t control, std::size_t row,
                 std::span<const double> V, DriftScheme scheme = DriftScheme::Hybrid);

}  // namespace riskpia
