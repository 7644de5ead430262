#include <doctest.h>

#include <cmath>

#include "riskpia/error.hpp"
#include "riskpia/howard.hpp"
#include "riskpia/parallel.hpp"
#include "riskpia/rng.hpp"
#include "riskpia/sde.hpp"
#include "support.hpp"

using namespace riskpia;

TEST_SUITE("sde") {

TEST_CASE("Philox4x32-10 known answers") {
  using B = Philox4x32::Block;
  CHECK(Philox4x32::apply({0, 0, 0, 0}, {0, 0}) == B{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(Philox4x32::apply({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}) ==
        B{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(Philox4x32::apply({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}) ==
        B{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("normal streams") {
  NormalStream a(11, 1, 5), b(11, 1, 5), c(11, 1, 6);
  bool differ = false;
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = a.next();
    CHECK(x == b.next());
    differ = differ || x != c.next();
    s += x;
    s2 += x * x;
  }
  CHECK(differ);
  CHECK(std::abs(s / n) < 4.0 / std::sqrt(n));
  CHECK(std::abs(s2 / n - 1.0) < 4.0 * std::sqrt(2.0 / n));
  CHECK(NormalStream::uniform(0) > 0.0);
  CHECK(NormalStream::uniform(0xffffffffu) < 1.0);
}

TEST_CASE("degenerate dynamics") {
  const ProblemSpec p = testing::make(1, 1, {"0"}, {"0"}, "0.5 + x1^2", testing::points({0.0}));
  const Grid g = testing::grid1(4, 0.5);
  McConfig cfg;
  cfg.x0 = {0.75};
  cfg.T = 2.0;
  cfg.dt = 0.01;
  cfg.n_paths = 10;
  const PathEnsemble e = simulate_paths(p, g, constant_policy(g, 0), cfg);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(e.final_state[i] == 0.75);
    CHECK(e.cost_mean[i] * e.time[i] == doctest::Approx((0.5 + 0.5625) * 2.0).epsilon(1e-15));
  }
  CHECK(e.std_error[0] == 0.0);
}

TEST_CASE("constant cost gives an exact estimate") {
  const ProblemSpec p = testing::make(1, 1, {"-x1"}, {"sqrt(2)"}, "0.7", testing::points({0.0}));
  const Grid g = testing::grid1(4, 0.5);
  McConfig cfg;
  cfg.x0 = {0.0};
  cfg.T = 3.0;
  cfg.dt = 0.01;
  cfg.n_paths = 500;
  const McEstimate e = estimate_risk_cost(p, g, constant_policy(g, 0), cfg);
  CHECK(e.value == 0.7);
  CHECK(e.std_error == 0.0);
  CHECK(e.value_half == 0.7);
  CHECK(e.n_effective == doctest::Approx(500.0));
}

TEST_CASE("large exponents do not overflow") {
  const ProblemSpec p = testing::make(1, 1, {"-x1"}, {"1"}, "350 + 0.5*tanh(x1)", testing::points({0.0}));
  const Grid g = testing::grid1(4, 0.5);
  McConfig cfg;
  cfg.x0 = {0.0};
  cfg.T = 2.0;
  cfg.dt = 0.01;
  cfg.n_paths = 200;
  const McEstimate e = estimate_risk_cost(p, g, constant_policy(g, 0), cfg);
  CHECK(std::isfinite(e.value));
  CHECK(std::isfinite(e.std_error));
  CHECK(e.max_exponent > 699.0);
  CHECK(e.value == doctest::Approx(350.0).epsilon(1e-2));
}

TEST_CASE("preconditions") {
  const ProblemSpec p = testing::ou();
  const Grid g = testing::grid1(4, 0.5);
  McConfig cfg;
  cfg.x0 = {0.0};
  cfg.n_paths = 0;
  CHECK_THROWS(estimate_risk_cost(p, g, constant_policy(g, 0), cfg));
  cfg.n_paths = 1;
  cfg.dt = 0.0;
  CHECK_THROWS(simulate_paths(p, g, constant_policy(g, 0), cfg));
  cfg.dt = 0.1;
  cfg.T = -1.0;
  CHECK_THROWS(simulate_paths(p, g, constant_policy(g, 0), cfg));
  cfg.T = 1.0;
  cfg.x0 = {0.0, 0.0};
  CHECK_THROWS(simulate_paths(p, g, constant_policy(g, 0), cfg));
  cfg.x0 = {0.0};
  CHECK_THROWS(simulate_paths(p, g, PolicyField{0}, cfg));
}

TEST_CASE("expression failures name the path") {
  const ProblemSpec p = testing::make(1, 1, {"-1"}, {"0.1"}, "log(x1 + 10)", testing::points({0.0}));
  const Grid g = testing::grid1(4, 0.5);
  McConfig cfg;
  cfg.x0 = {-9.5};
  cfg.T = 1.0;
  cfg.dt = 0.1;
  cfg.n_paths = 50;
  CHECK_THROWS_WITH_AS(simulate_paths(p, g, constant_policy(g, 0), cfg), doctest::Contains("path"), DomainError);
}

TEST_CASE("results do not depend on the thread count") {
  const ProblemSpec p = testing::lq(5);
  const Grid g = testing::grid1(3, 0.125);
  const PolicyField v = random_policy(g, 5, 9);
  McConfig cfg;
  cfg.x0 = {0.3};
  cfg.T = 1.0;
  cfg.dt = 0.01;
  cfg.n_paths = 333;
  cfg.seed = 77;
  cfg.exit = ExitPolicy::Reflect;
  set_thread_count(1);
  const PathEnsemble a = simulate_paths(p, g, v, cfg);
  const McEstimate ea = estimate_risk_cost(p, g, v, cfg);
  set_thread_count(4);
  const PathEnsemble b = simulate_paths(p, g, v, cfg);
  const McEstimate eb = estimate_risk_cost(p, g, v, cfg);
  set_thread_count(0);
  CHECK(a.final_state == b.final_state);
  CHECK(a.cost_mean == b.cost_mean);
  CHECK(a.mean == b.mean);
  CHECK(a.std_error == b.std_error);
  CHECK(ea.value == eb.value);
  CHECK(ea.std_error == eb.std_error);
  for (double x : a.final_state) CHECK(std::abs(x) <= 3.0);
}

TEST_CASE("exit policies") {
  const ProblemSpec p = testing::make(1, 1, {"0"}, {"2"}, "0", testing::points({0.0}));
  const Grid g = testing::grid1(1, 0.25);
  McConfig cfg;
  cfg.x0 = {0.0};
  cfg.T = 4.0;
  cfg.dt = 0.01;
  cfg.n_paths = 200;
  cfg.exit = ExitPolicy::Stop;
  const PathEnsemble s = simulate_paths(p, g, constant_policy(g, 0), cfg);
  CHECK(s.exited_fraction > 0.9);
  for (std::size_t i = 0; i < s.n_paths; ++i) {
    if (s.exited[i]) CHECK(s.time[i] < 4.0 + 1e-12);
  }
  cfg.exit = ExitPolicy::Free;
  const PathEnsemble f = simulate_paths(p, g, constant_policy(g, 0), cfg);
  double far = 0.0;
  for (double x : f.final_state) far = std::max(far, std::abs(x));
  CHECK(far > 1.0);
}

TEST_CASE("OU mean at the horizon") {
  const ProblemSpec p = testing::ou("0");
  const Grid g = testing::grid1(8, 0.5);
  McConfig cfg;
  cfg.x0 = {0.0};
  cfg.T = 1.0;
  cfg.dt = 0.01;
  cfg.n_paths = 10000;
  cfg.seed = 4;
  const PathEnsemble e = simulate_paths(p, g, constant_policy(g, 0), cfg);
  CHECK(std::abs(e.mean[0]) <= 3.0 * e.std_error[0]);
  // Var X_T = 1 - exp(-2T) for this OU process.
  double v = 0.0;
  for (double x : e.final_state) v += x * x;
  v /= static_cast<double>(e.n_paths);
  CHECK(v == doctest::Approx(1.0 - std::exp(-2.0)).epsilon(0.05));
}

TEST_CASE("interpolation") {
  const Grid g = testing::grid1(2, 1);
  const std::vector<double> V{1.0, 2.0, 4.0};
  CHECK(interpolate(g, V, std::vector<double>{0.0}) == 2.0);
  CHECK(interpolate(g, V, std::vector<double>{0.5}) == 3.0);
  CHECK(interpolate(g, V, std::vector<double>{-1.5}) == 0.5);
  CHECK(interpolate(g, V, std::vector<double>{2.0}) == 0.0);
  CHECK(interpolate(g, V, std::vector<double>{2.5}) == 0.0);
  const double r[] = {1, 1}, h[] = {1, 1};
  const Grid g2 = build_grid(2, r, h);
  CHECK(interpolate(g2, std::vector<double>{1.0}, std::vector<double>{0.5, 0.5}) == 0.25);
}

TEST_CASE("Feynman-Kac at t = 0 is exact") {
  const ProblemSpec p = testing::ou();
  const Grid g = testing::grid1(4, 0.125);
  const SolveResult r = solve_pia(p, g, constant_policy(g, 0));
  McConfig cfg;
  cfg.x0 = {0.3};
  cfg.n_paths = 100;
  FkOptions opt;
  opt.t_max = 0.0;
  const FkReport f = feynman_kac_check(p, g, r.policy, r.eig, cfg, opt);
  CHECK(f.estimate == interpolate(g, r.eig.V, cfg.x0));
  CHECK(f.estimate == f.v0);
  CHECK(f.std_error == 0.0);
  CHECK(f.pass);
}

TEST_CASE("Feynman-Kac detects a wrong eigenvalue") {
  const ProblemSpec p = testing::ou();
  const Grid g = testing::grid1(8, 1.0 / 32);
  const SolveResult r = solve_pia(p, g, constant_policy(g, 0));
  McConfig cfg;
  cfg.x0 = {0.5};
  cfg.dt = 2e-3;
  cfg.n_paths = 4000;
  cfg.seed = 21;
  const FkSamples s = feynman_kac_samples(p, g, r.policy, r.eig, cfg, 5.0);
  const FkReport ok = feynman_kac_evaluate(s, r.eig.lambda);
  const FkReport bad = feynman_kac_evaluate(s, r.eig.lambda + 0.05);
  CHECK(ok.pass);
  CHECK_FALSE(bad.pass);
  CHECK(bad.estimate / ok.estimate == doctest::Approx(std::exp(-0.05 * 5.0)).epsilon(0.02));
  CHECK(ok.bias_budget == doctest::Approx(ok.v0 * (2e-3 * 5.0 + 1.0 / 32)));
}

TEST_CASE("twisted process with a flat eigenfunction") {
  const ProblemSpec p = testing::ou("0");
  const Grid g = testing::grid1(8, 0.125);
  EigenPair flat;
  flat.V.assign(g.interior_count(), 1.0);
  McConfig cfg;
  cfg.x0 = {0.0};
  cfg.T = 20.0;
  cfg.dt = 0.01;
  cfg.n_paths = 2000;
  cfg.seed = 8;
  const TwistedReport y = twisted_diagnostics(p, g, constant_policy(g, 0), flat, cfg);
  TwistedOptions plain;
  plain.untwisted = true;
  const TwistedReport x = twisted_diagnostics(p, g, constant_policy(g, 0), flat, cfg, plain);
  CHECK(x.final_state == y.final_state);
  const PathEnsemble e = simulate_paths(p, g, constant_policy(g, 0), cfg);
  const double n = static_cast<double>(cfg.n_paths);
  CHECK(ks_statistic(e.final_state, y.final_state) < 1.63 * std::sqrt(2.0 / n));
}

TEST_CASE("occupation ladder") {
  const ProblemSpec p = testing::ou();
  const Grid g = testing::grid1(8, 1.0 / 16);
  const SolveResult r = solve_pia(p, g, constant_policy(g, 0));
  McConfig cfg;
  cfg.x0 = {0.0};
  cfg.T = 200.0;
  cfg.dt = 0.01;
  cfg.n_paths = 8;
  cfg.seed = 2;
  const TwistedReport t = twisted_diagnostics(p, g, r.policy, r.eig, cfg);
  REQUIRE(t.radii.size() == 8);
  CHECK(t.radii.back() == 8.0);
  for (std::size_t i = 1; i < t.radii.size(); ++i) CHECK(t.outside_fraction[i] <= t.outside_fraction[i - 1]);
  CHECK(t.excursions > 0);
  CHECK(t.variance[0] == doctest::Approx(2.0).epsilon(0.15));
  double total = t.histograms[0].below + t.histograms[0].above;
  for (double c : t.histograms[0].counts) total += c;
  CHECK(total == doctest::Approx(1.0));
}

TEST_CASE("Kolmogorov-Smirnov statistic") {
  CHECK(ks_statistic({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(ks_statistic({1, 2, 3}, {4, 5, 6}) == 1.0);
  CHECK(ks_statistic({1, 2, 3, 4}, {3, 4, 5, 6}) == doctest::Approx(0.5));
}

TEST_CASE("time step refinement trend") {
  const ProblemSpec p = testing::ou();
  const Grid g = testing::grid1(8, 0.125);
  McConfig cfg;
  cfg.x0 = {0.0};
  cfg.T = 8.0;
  cfg.n_paths = 4000;
  cfg.seed = 5;
  McEstimate prev;
  bool first = true;
  for (double dt : {4e-3, 2e-3, 1e-3}) {
    cfg.dt = dt;
    const McEstimate e = estimate_risk_cost(p, g, constant_policy(g, 0), cfg);
    if (!first) {
      const bool closer = std::abs(e.value - 0.25) <= std::abs(prev.value - 0.25);
      const bool within = std::abs(e.value - prev.value) <= 3.0 * std::hypot(e.std_error, prev.std_error);
      CHECK((closer || within));
    }
    prev = e;
    first = false;
  }
}

TEST_CASE("risk-sensitive cost of the OU benchmark") {
  // Reduced-size run of the T = 40 check: dt = 1e-2, 2e4 paths.
  const ProblemSpec p = testing::ou();
  const Grid g = testing::grid1(8, 0.125);
  McConfig cfg;
  cfg.x0 = {0.0};
  cfg.T = 40.0;
  cfg.dt = 1e-2;
  cfg.n_paths = 20000;
  cfg.seed = 13;
  const McEstimate e = estimate_risk_cost(p, g, constant_policy(g, 0), cfg);
  MESSAGE("estimate " << e.value << " +- " << e.std_error << ", T/2 " << e.value_half);
  CHECK(std::abs(e.value - 0.25) <= 3.0 * e.std_error + 0.01);
}

}
