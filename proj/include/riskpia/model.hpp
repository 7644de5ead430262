#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "riskpia/expr.hpp"

namespace riskpia {

using Point = std::vector<double>;

/// Finite, ordered set of control points. The order is fixed and drives
/// deterministic tie-breaking in the improvement step.
class ControlSet {
 public:
  ControlSet() = default;
  ControlSet(int control_dim, std::vector<Point> points, std::string provenance = "explicit");

  /// Tensor-product uniform discretization of the box [lower, upper]
  /// (lexicographic, first axis slowest).
  static ControlSet uniform_box(std::span<const double> lower, std::span<const double> upper,
                                std::span<const int> counts);

  std::size_t size() const noexcept { return points_.size(); }
  int dim() const noexcept { return dim_; }
  const Point& operator[](std::size_t k) const { return points_[k]; }
  const std::vector<Point>& points() const noexcept { return points_; }
  const std::string& provenance() const noexcept { return provenance_; }

 private:
  int dim_ = 0;
  std::vector<Point> points_;
  std::string provenance_;
};

/// Controlled diffusion dX = b(X,U)dt + sigma(X)dW with diagonal sigma and
/// running cost c(X,U). The generator uses a = sigma^2 / 2 on the diagonal.
struct ProblemSpec {
  int d = 1;
  int m = 1;
  std::vector<Expr> b;
  std::vector<Expr> sigma;
  Expr c;
  ControlSet controls;
  std::optional<Expr> lyapunov;
  std::optional<Expr> ell;
  std::optional<double> known_lambda;

  double drift(int axis, std::span<const double> x, std::span<const double> u) const {
    return b[static_cast<std::size_t>(axis)].eval(x, u);
  }
  double diffusion(int axis, std::span<const double> x) const {
    const double s = sigma[static_cast<std::size_t>(axis)].eval(x, {});
    return 0.5 * s * s;
  }
  double cost(std::span<const double> x, std::span<const double> u) const { return c.eval(x, u); }
};

/// Build a problem from the `[problem]` section of a run configuration.
/// Recognized keys: d, m, b, sigma, c, controls, lyapunov, ell, known_lambda.
ProblemSpec build_problem(const nlohmann::json& config);

enum class Verdict { Pass, Fail, NotChecked };
const char* to_string(Verdict v);

struct Witness {
  Point x;
  std::string detail;
};

struct AssumptionCheck {
  std::string name;
  Verdict verdict = Verdict::NotChecked;
  std::vector<Witness> witnesses;
  nlohmann::json constants = nlohmann::json::object();
};

struct AssumptionReport {
  std::vector<AssumptionCheck> checks;

  const AssumptionCheck& at(const std::string& name) const;
  bool all_pass() const;  // NotChecked does not count as a failure
  nlohmann::json to_json() const;
};

struct ValidationThresholds {
  double ellipticity_min = 1e-9;
  /// Allowed excess of the fitted far-field growth exponent over 1 (drift)
  /// or 2 (cost).
  double growth_exponent_slack = 0.25;
  /// gamma = sup|c| + gamma_margin for the bounded-cost Lyapunov check.
  double gamma_margin = 1e-3;
  double fd_step = 1e-5;
  std::size_t max_witnesses = 8;
  /// The sublinear-growth check for near-monotone minimization problems is
  /// opt-in; most bundled problems have linear drift and would fail it.
  bool check_near_monotone = false;
};

/// Sampling plan: domain points plus a radial ladder of far-field shells.
struct SampleSet {
  std::vector<Point> domain;
  double domain_radius = 0.0;
  /// shells[i] holds points at radius shell_radii[i]; the last one is the
  /// far-field shell.
  std::vector<double> shell_radii;
  std::vector<std::vector<Point>> shells;
};

/// Default sample: `domain` points (typically grid nodes) plus shells at
/// radius r * {1, 1.25, 1.5, 1.75, 2} where r is the largest sample norm.
SampleSet make_sample(int d, std::vector<Point> domain);

AssumptionReport validate_assumptions(const ProblemSpec& p, const SampleSet& sample,
                                      const ValidationThresholds& thresholds = {});

}  // namespace riskpia
