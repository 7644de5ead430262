#include <doctest.h>

#include <cmath>
#include <numbers>

#include "riskpia/error.hpp"
#include "riskpia/perron.hpp"
#include "support.hpp"

using namespace riskpia;

TEST_SUITE("perron") {

namespace {

const double kLap3 = -4.0 * std::pow(std::sin(std::numbers::pi / 8.0), 2);

GeneratorMatrix laplacian3() {
  return GeneratorMatrix::from_dense({{-2, 1, 0}, {1, -2, 1}, {0, 1, -2}}, 1);
}

}  // namespace

TEST_CASE("three-node Laplacian") {
  const EigenPair e = principal_eigpair(laplacian3(), 1e-13);
  CHECK(std::abs(e.lambda - kLap3) <= 1e-12);
  CHECK(e.cw_lower <= kLap3);
  CHECK(e.cw_upper >= kLap3);
  CHECK(e.gap() <= 1e-13);
  CHECK(e.V[1] == 1.0);
  CHECK(e.V[0] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(e.V[2] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(e.residual <= 1e-12);
}

TEST_CASE("exchange matrix") {
  const EigenPair e = principal_eigpair(GeneratorMatrix::from_dense({{0, 1}, {1, 0}}), 1e-12);
  CHECK(e.lambda == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(e.V[0] == 1.0);
  CHECK(e.V[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("Collatz-Wielandt certificate") {
  const GeneratorMatrix M = laplacian3();
  const double r2 = std::sqrt(2.0);
  const std::vector<double> exact{1.0, r2, 1.0};
  const CwBounds b = cw_certificate(M, exact);
  CHECK(std::abs(b.lower - kLap3) <= 1e-12);
  CHECK(std::abs(b.upper - kLap3) <= 1e-12);
  // Any positive vector brackets the eigenvalue.
  const CwBounds ones = cw_certificate(M, std::vector<double>(3, 1.0));
  CHECK(ones.lower == -1.0);
  CHECK(ones.upper == 0.0);
  CHECK(ones.lower <= kLap3);
  CHECK(kLap3 <= ones.upper);
  CHECK_THROWS_AS(cw_certificate(M, std::vector<double>{1.0, 0.0, 1.0}), NonPositiveVector);
  CHECK_THROWS_AS(cw_certificate(M, std::vector<double>{1.0, -1.0, 1.0}), NonPositiveVector);
}

TEST_CASE("errors") {
  CHECK_THROWS_AS(principal_eigpair(GeneratorMatrix::from_dense({{0, -1}, {1, 0}})), StructureError);
  CHECK_THROWS_AS(principal_eigpair(GeneratorMatrix()), StructureError);
  try {
    (void)principal_eigpair(assemble_control(testing::ou(), testing::grid1(8, 0.125), 0), 1e-10, 5);
    FAIL("expected NonConvergence");
  } catch (const NonConvergence& e) {
    CHECK(e.iterations() == 5);
    CHECK(e.last_gap() > 1e-10);
  }
}

TEST_CASE("stored eigenvectors certify their eigenvalue") {
  const ProblemSpec p = testing::lq(9);
  const Grid g = testing::grid1(4, 0.0625);
  for (std::uint32_t k = 0; k < 9; k += 2) {
    const GeneratorMatrix M = assemble_control(p, g, k);
    const EigenPair e = principal_eigpair(M);
    CHECK(e.gap() <= 1e-10 * (1 + 1e-3));  // widened by renormalization rounding
    const CwBounds b = cw_certificate(M, e.V);
    CHECK(b.lower <= e.lambda);
    CHECK(e.lambda <= b.upper);
    CHECK(e.cw_lower <= e.lambda);
    CHECK(e.lambda <= e.cw_upper);
    double vmin = 1e300;
    for (double v : e.V) vmin = std::min(vmin, v);
    CHECK(vmin > 0.0);
    CHECK(e.V[g.origin_interior()] == 1.0);
  }
}

TEST_CASE("diagonal shift") {
  const ProblemSpec p = testing::oracle6();
  const Grid g = testing::oracle6_grid();
  const GeneratorMatrix M = assemble_control(p, g, 1);
  const double delta = 0.37;
  const GeneratorMatrix S = M.shifted(delta);
  const EigenPair a = principal_eigpair(M, 1e-12);
  const EigenPair b = principal_eigpair(S, 1e-12);
  CHECK(std::abs((b.lambda - a.lambda) - delta) <= 1e-12);
  CHECK(testing::max_abs_diff(a.V, b.V) <= 1e-12);
  // With a shift that keeps the iteration matrix identical the iterates agree bitwise.
  const GeneratorMatrix Z = M.shifted(0.0);
  const EigenPair z = principal_eigpair(Z, 1e-12);
  CHECK(z.V == a.V);
  CHECK(z.iterations == a.iterations);
}

TEST_CASE("shift invariance on a fine grid") {
  // Diagonal entries near -8000: the products must not lose the cost term.
  const Grid g = testing::grid1(6, 1.0 / 64);
  const GeneratorMatrix M = assemble_control(testing::lq(25), g, 12);
  const GeneratorMatrix N = assemble_control(testing::lq(25, "0.25*x1^2 + u1^2 + 0.37"), g, 12);
  const EigenPair a = principal_eigpair(M);
  const EigenPair b = principal_eigpair(N);
  CHECK(std::abs((b.lambda - a.lambda) - 0.37) <= 1e-12);
  double rel = 0.0;
  for (std::size_t i = 0; i < a.V.size(); ++i) rel = std::max(rel, std::abs(a.V[i] - b.V[i]) / a.V[i]);
  CHECK(rel <= 1e-12);
  CHECK(a.residual <= 1e-9);
}

TEST_CASE("wide bands and plain sweeps agree") {
  // 2D lattice (bandwidth = row length) against a tiny iteration budget per sweep.
  const double r[] = {2, 2}, h[] = {0.25, 0.25};
  const Grid g = build_grid(2, r, h);
  const ProblemSpec q = testing::make(2, 1, {"-x1 + 0.3*x2", "-x2"}, {"1", "1.3"}, "0.2*x1^2 + 0.1*x2^2",
                                      testing::points({0.0}));
  const GeneratorMatrix M = assemble_control(q, g, 0);
  const EigenPair e = principal_eigpair(M, 1e-12);
  const CwBounds b = cw_certificate(M, e.V);
  CHECK(b.lower <= e.lambda);
  CHECK(e.lambda <= b.upper);
  CHECK(e.gap() <= 1e-12 * 1.001);
  // Dense check of the eigen-equation.
  for (std::size_t i = 0; i < M.size(); ++i) {
    double y = 0.0;
    for (std::size_t j = 0; j < M.size(); ++j) y += M.at(i, j) * e.V[j];
    CHECK(y == doctest::Approx(e.lambda * e.V[i]).epsilon(1e-9).scale(1.0));
  }
}

TEST_CASE("warm start") {
  const ProblemSpec p = testing::ou();
  const Grid g = testing::grid1(6, 0.0625);
  const GeneratorMatrix M = assemble_control(p, g, 0);
  const EigenPair cold = principal_eigpair(M);
  const EigenPair warm = principal_eigpair(M, 1e-10, kDefaultEigMaxIter, cold.V);
  CHECK(warm.iterations < cold.iterations);
  CHECK(std::abs(warm.lambda - cold.lambda) <= 1e-10);
}

TEST_CASE("domain monotonicity over nested grids") {
  const ProblemSpec p = testing::make(1, 1, {"-x1 + 0.3*sin(3*x1)"}, {"1 + 0.2*cos(x1)"}, "0.2*x1^2 - 0.1*x1",
                                      testing::points({0.0}));
  const Grid g = testing::grid1(1, 0.125);
  const auto gs = nested_refinements(g, {{1}, {1.5}, {2}, {3}, {4}});
  double prev = -1e300;
  for (const Grid& h : gs) {
    const EigenPair e = principal_eigpair(assemble_control(p, h, 0), 1e-12);
    CHECK(e.cw_lower >= prev);
    prev = e.cw_upper;
  }
  const double r[] = {1, 1}, hh[] = {0.25, 0.25};
  const ProblemSpec q = testing::make(2, 1, {"-x1", "-x2 + 0.5*x1"}, {"1", "1.2"}, "0.1*(x1^2 + x2^2)",
                                      testing::points({0.0}));
  const auto g2 = nested_refinements(build_grid(2, r, hh), {{1, 1}, {1.5, 1.25}, {2, 2}});
  double prev2 = -1e300;
  for (const Grid& h : g2) {
    const EigenPair e = principal_eigpair(assemble_control(q, h, 0), 1e-12);
    CHECK(e.lambda > prev2);
    prev2 = e.lambda;
  }
}

}
