#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "riskpia/genmat.hpp"
#include "riskpia/perron.hpp"

namespace riskpia {

enum class Sense { Min, Max };
const char* to_string(Sense s);
Sense parse_sense(const std::string& s);

enum class Termination { Converged, PolicyFixed, MaxIterations };
const char* to_string(Termination t);

struct PiaOptions {
  Sense sense = Sense::Min;
  double tol_lambda = 1e-10;
  double tie_tol = 1e-9;
  std::size_t max_outer = 200;
  double eig_tol = kDefaultEigTol;
  std::size_t eig_max_iter = kDefaultEigMaxIter;
  /// Radius of the psi reporting ball; unset means half the smallest box
  /// radius.
  std::optional<double> psi_radius;
  /// Start each eigensolve from the previous eigenvector.
  bool warm_start = true;
  /// Raise InvariantViolation when monotonicity or psi >= 0 fails.
  bool check_invariants = true;
  /// Keep every policy iterate and eigenvector in the trace.
  bool record_iterates = false;
  /// Max sense only: run even if the initialization guard fails.
  bool allow_guard_fail = false;
};

struct PiaStep {
  std::size_t k = 0;
  double lambda = 0.0;
  double cw_lower = 0.0;
  double cw_upper = 0.0;
  std::size_t eig_iterations = 0;
  std::size_t changes = 0;  // nodes whose control differs in the next policy
  double psi_sup = 0.0;
  double psi_min = 0.0;
  double psi_l1_ball = 0.0;
  double wall_ms = 0.0;
  PolicyField policy;      // only with record_iterates
  std::vector<double> V;   // only with record_iterates

  double gap() const noexcept { return cw_upper - cw_lower; }
};

struct PiaTrace {
  std::vector<PiaStep> steps;
  double psi_ball_radius = 0.0;
  double psi_ball_volume = 0.0;
};

struct SolveResult {
  EigenPair eig;
  PolicyField policy;
  PiaTrace trace;
  Termination reason = Termination::MaxIterations;
  Sense sense = Sense::Min;
};

/// Row-wise optimization of (M_zeta V)_i over the control set. The incumbent
/// stays if it is within tie_tol * (1 + |q*|) of the optimum; otherwise the
/// optimal control with the smallest index is taken.
PolicyField improve(const Discretization& disc, std::span<const double> V,
                    const PolicyField& current, Sense sense, double tie_tol = 1e-9);
PolicyField improve(const ProblemSpec& p, const Grid& g, std::span<const double> V,
                    const PolicyField& current, Sense sense, double tie_tol = 1e-9,
                    DriftScheme scheme = DriftScheme::Hybrid);

/// psi(i) = lambda - min_zeta (M_zeta V)_i / V_i for the min sense and
/// max_zeta (M_zeta V)_i / V_i - lambda for the max sense. Both are
/// nonnegative for an exact eigenpair. Entries below -slack raise
/// InvariantViolation (pass slack < 0 to disable the check).
std::vector<double> psi_residual(const Discretization& disc, std::span<const double> V,
                                 double lambda, Sense sense, double slack);

/// Default slack used by the solver: max(1e-9, 2 eig_tol) * (1 + |lambda|).
double psi_slack(double lambda, double eig_tol);

struct PsiNorms {
  double sup = 0.0;
  double min = 0.0;
  double l1_ball = 0.0;
};
PsiNorms psi_norms(const Grid& g, std::span<const double> psi, double radius);
/// Lebesgue measure of the Euclidean ball of the given radius in dimension d.
double ball_volume(int d, double radius);

struct GuardReport {
  bool pass = false;
  double lambda0 = 0.0;
  double cw_lower = 0.0;
  double cw_upper = 0.0;
  double boundary_proxy = 0.0;
  Point argmax_x;
  std::size_t argmax_control = 0;
};

/// Compares the principal eigenvalue of the initial policy with the largest
/// cost over the boundary nodes of the box and all controls.
GuardReport guard_max(const Discretization& disc, const PolicyField& v0,
                      double eig_tol = kDefaultEigTol, std::size_t eig_max_iter = kDefaultEigMaxIter);

struct GradientReport {
  double C = 0.0;  // smallest C with |grad V| / V <= C (1 + |x|)
  Point argmax_x;
  double argmax_ratio = 0.0;
  std::size_t nodes = 0;
};

/// Central-difference |grad V| / V on rows whose neighbours are all interior.
GradientReport gradient_diagnostic(const Grid& g, std::span<const double> V);

/// Policy iteration: alternate value determination (principal eigenpair of
/// the current policy) and row-wise improvement.
SolveResult solve_pia(const Discretization& disc, const PolicyField& v0, const PiaOptions& opt = {});
SolveResult solve_pia(const ProblemSpec& p, const Grid& g, const PolicyField& v0,
                      const PiaOptions& opt = {}, DriftScheme scheme = DriftScheme::Hybrid);

}  // namespace riskpia
