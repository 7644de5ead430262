#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "riskpia/genmat.hpp"

namespace riskpia {

/// Principal eigenpair of a generator matrix with a Collatz-Wielandt
/// enclosure cw_lower <= lambda <= cw_upper.
struct EigenPair {
  double lambda = 0.0;
  std::vector<double> V;  // strictly positive, V[normalize_row] == 1
  double cw_lower = 0.0;
  double cw_upper = 0.0;
  std::size_t iterations = 0;
  double residual = 0.0;  // ||M V - lambda V||_inf / ||V||_inf

  double gap() const noexcept { return cw_upper - cw_lower; }
};

struct CwBounds {
  double lower;
  double upper;
};

/// min_i and max_i of (M V)_i / V_i. For an irreducible matrix with
/// nonnegative off-diagonals the principal eigenvalue lies in the interval
/// for every positive V. The ratios are taken of (M + sI)V and shifted back,
/// which is the same quantity as (MV)_i / V_i.
CwBounds cw_certificate(const GeneratorMatrix& M, std::span<const double> V);

constexpr double kDefaultEigTol = 1e-10;
constexpr std::size_t kDefaultEigMaxIter = 20'000'000;

/// Shifted power iteration on M + sI (s = shift hint). Starts from the
/// all-ones vector, or from `start` when given (a positive vector, e.g. the
/// previous eigenvector in policy iteration). Stops once the Collatz-Wielandt
/// gap is at most `tol`.
EigenPair principal_eigpair(const GeneratorMatrix& M, double tol = kDefaultEigTol,
                            std::size_t max_iter = kDefaultEigMaxIter,
                            std::span<const double> start = {});

}  // namespace riskpia
