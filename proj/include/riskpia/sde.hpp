#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "riskpia/genmat.hpp"
#include "riskpia/perron.hpp"

namespace riskpia {

/// What happens when a path leaves the open box of the grid. `Free` keeps
/// simulating on the whole space (controls come from the nearest interior
/// node), `Stop` freezes the path at the exit time, `Reflect` mirrors it back.
enum class ExitPolicy { Free, Stop, Reflect };
const char* to_string(ExitPolicy e);
ExitPolicy parse_exit_policy(const std::string& s);

struct McConfig {
  Point x0;
  double T = 1.0;
  double dt = 1e-3;
  std::size_t n_paths = 1000;
  std::uint64_t seed = 0;
  ExitPolicy exit = ExitPolicy::Free;

  /// Number of Euler steps; the step actually used is T / steps().
  std::size_t steps() const;
  void validate(int d) const;
};

/// Per-path results of an Euler-Maruyama run. The running cost is kept as
/// its time average over the steps taken, so the integral is
/// cost_mean * time.
struct PathEnsemble {
  int d = 1;
  std::size_t n_paths = 0;
  double dt = 0.0;  // effective step
  std::size_t steps = 0;
  std::vector<double> final_state;  // n_paths * d, state at T or at exit
  std::vector<double> cost_mean;    // average of c over the steps taken
  std::vector<double> time;         // T, or the exit time with ExitPolicy::Stop
  std::vector<double> half_cost_mean;  // average over the first half of the steps
  std::vector<double> half_time;
  std::vector<std::uint8_t> exited;
  std::vector<double> mean;       // per axis, mean of final_state
  std::vector<double> std_error;  // per axis
  double exited_fraction = 0.0;
};

PathEnsemble simulate_paths(const ProblemSpec& p, const Grid& g, const PolicyField& policy,
                            const McConfig& cfg);

struct McEstimate {
  double value = 0.0;
  double std_error = 0.0;
  double n_effective = 0.0;  // Kish effective sample size of the exponential weights
  double max_exponent = 0.0;
  double exited_fraction = 0.0;
  double T = 0.0;
  /// Same estimator at horizon T/2 from the same paths.
  double value_half = 0.0;
  double std_error_half = 0.0;
  std::size_t n_paths = 0;
};

/// (1/T) log of the sample mean of exp(int_0^T c) over paths: a finite-T,
/// finite-sample (and downward biased) proxy for the long-run criterion.
/// The standard error comes from the delta method.
McEstimate estimate_risk_cost(const ProblemSpec& p, const Grid& g, const PolicyField& policy,
                              const McConfig& cfg);
McEstimate risk_cost_from(const PathEnsemble& e, double T);

/// Multilinear interpolation of a field given on interior rows (zero on the
/// boundary nodes). Points outside the closed box get 0.
double interpolate(const Grid& g, std::span<const double> interior_values, std::span<const double> x);

struct FkOptions {
  double t_max = 5.0;
  /// Declared bias budget: V(x0) * (dt_coeff * dt * t_max + h_coeff * h).
  double bias_dt_coeff = 1.0;
  double bias_h_coeff = 1.0;
  double z = 3.0;  // number of standard errors allowed
};

/// Per-path ingredients of the martingale estimate; lambda enters only at
/// evaluation, so one simulation serves several eigenvalue candidates.
struct FkSamples {
  std::vector<double> cost_mean;
  std::vector<double> time;      // t_max or exit time
  std::vector<double> v_end;     // V at the stopped position (0 after exit)
  double v0 = 0.0;
  double dt = 0.0;
  double h = 0.0;
  double t_max = 0.0;
  double exited_fraction = 0.0;
};

struct FkReport {
  bool pass = false;
  double estimate = 0.0;
  double std_error = 0.0;
  double v0 = 0.0;
  double lambda = 0.0;
  double difference = 0.0;
  double bias_budget = 0.0;
  double allowance = 0.0;
  double exited_fraction = 0.0;
  double t_max = 0.0;
  double dt = 0.0;
  std::size_t n_paths = 0;
};

FkSamples feynman_kac_samples(const ProblemSpec& p, const Grid& g, const PolicyField& policy,
                              const EigenPair& eig, const McConfig& cfg, double t_max);
FkReport feynman_kac_evaluate(const FkSamples& s, double lambda, const FkOptions& opt = {});
/// E[exp(int_0^{t ^ tau} (c - lambda)) V(X_{t ^ tau})] against V(x0), with tau
/// the exit time from the open box.
FkReport feynman_kac_check(const ProblemSpec& p, const Grid& g, const PolicyField& policy,
                           const EigenPair& eig, const McConfig& cfg, const FkOptions& opt = {});

struct TwistedOptions {
  double burn_in = 10.0;
  /// Radii for the time-outside-ball ladder; empty means R/8, 2R/8, ..., R.
  std::vector<double> radii;
  /// Ball for return times; 0 means R/4.
  double return_radius = 0.0;
  std::size_t bins = 64;
  /// Replace the twisted drift by the plain policy drift (reference runs).
  bool untwisted = false;
};

struct Histogram {
  double lower = 0.0;
  double upper = 0.0;
  std::vector<double> counts;  // time fraction per bin
  double below = 0.0;
  double above = 0.0;
};

struct TwistedReport {
  std::vector<double> mean;      // per axis
  std::vector<double> variance;  // per axis
  std::vector<Histogram> histograms;
  std::vector<double> radii;
  std::vector<double> outside_fraction;
  double return_radius = 0.0;
  std::size_t excursions = 0;
  double mean_return_time = 0.0;
  double tail_rate = 0.0;  // fitted exponential decay rate of excursion lengths
  std::size_t tail_points = 0;
  double sampled_time = 0.0;
  std::vector<double> final_state;  // n_paths * d
};

/// Simulates the process with drift b + 2a grad log V and reports occupation
/// statistics. The gradient is a finite-difference field on the nodes,
/// interpolated multilinearly and frozen at the box outside it.
TwistedReport twisted_diagnostics(const ProblemSpec& p, const Grid& g, const PolicyField& policy,
                                  const EigenPair& eig, const McConfig& cfg,
                                  const TwistedOptions& opt = {});

/// Two-sample Kolmogorov-Smirnov statistic.
double ks_statistic(std::vector<double> a, std::vector<double> b);

}  // namespace riskpia
