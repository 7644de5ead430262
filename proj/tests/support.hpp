#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "riskpia/genmat.hpp"
#include "riskpia/lattice.hpp"
#include "riskpia/model.hpp"

namespace testing {

using nlohmann::json;

inline json problem_json(int d, int m, std::vector<std::string> b, std::vector<std::string> sigma, std::string c,
                         json controls) {
  return json{{"d", d}, {"m", m}, {"b", b}, {"sigma", sigma}, {"c", c}, {"controls", controls}};
}

inline json points(std::vector<double> pts) {
  json arr = json::array();
  for (double p : pts) arr.push_back(json::array({p}));
  return json{{"points", arr}};
}

inline json uniform(double lo, double hi, int count) {
  return json{{"lower", {lo}}, {"upper", {hi}}, {"counts", {count}}};
}

inline riskpia::ProblemSpec make(int d, int m, std::vector<std::string> b, std::vector<std::string> sigma,
                                 std::string c, json controls) {
  return riskpia::build_problem(problem_json(d, m, std::move(b), std::move(sigma), std::move(c), controls));
}

// OU benchmark: b = -x, a = 1, c = 3x^2/16. lambda = 1/4, V = exp(x^2/8).
inline riskpia::ProblemSpec ou(const std::string& cost = "0.1875*x1^2") {
  return make(1, 1, {"-x1"}, {"sqrt(2)"}, cost, points({0.0}));
}

// LQ benchmark: lambda = 1/3, feedback -x/6.
inline riskpia::ProblemSpec lq(int controls = 25, const std::string& cost = "0.25*x1^2 + u1^2") {
  return make(1, 1, {"-x1 + u1"}, {"sqrt(2)"}, cost, uniform(-1, 1, controls));
}

// Six interior nodes on [-3, 4] with unit spacing, two controls.
inline riskpia::ProblemSpec oracle6(const std::string& cost = "0.1*x1^2 + 0.3*u1*x1 + 0.05*u1") {
  return make(1, 1, {"-0.5*x1 + u1"}, {"1"}, cost, points({-1.0, 1.0}));
}
inline riskpia::Grid oracle6_grid() {
  const double lo[] = {-3}, hi[] = {4}, h[] = {1};
  return riskpia::build_box_grid(1, lo, hi, h);
}

inline riskpia::Grid grid1(double R, double h) {
  const double r[] = {R}, s[] = {h};
  return riskpia::build_grid(1, r, s);
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace testing
