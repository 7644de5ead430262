#include <doctest.h>

#include <cmath>
#include <sstream>

#include "riskpia/error.hpp"
#include "riskpia/oracle.hpp"
#include "riskpia/parallel.hpp"
#include "support.hpp"

using namespace riskpia;

TEST_SUITE("oracle") {

TEST_CASE("policy enumeration") {
  CHECK(policy_count(2, 6) == 64.0);
  CHECK(policy_count(3, 20) == std::pow(3.0, 20));
  CHECK(policy_from_index(0, 2, 6) == PolicyField(6, 0));
  CHECK(policy_from_index(1, 2, 6) == PolicyField{0, 0, 0, 0, 0, 1});
  CHECK(policy_from_index(32, 2, 6) == PolicyField{1, 0, 0, 0, 0, 0});
  CHECK(policy_digits(PolicyField{1, 0, 2}, 3) == "102");
  CHECK(policy_digits(PolicyField{11, 0}, 40) == "11.0");
}

TEST_CASE("dense solver on the three-node Laplacian") {
  const DenseEigen e = dense_principal({-2, 1, 0, 1, -2, 1, 0, 1, -2}, 3, 1);
  CHECK(std::abs(e.lambda + 4 * std::pow(std::sin(std::numbers::pi / 8), 2)) <= 1e-12);
  CHECK(e.V[1] == 1.0);
  CHECK(e.lower <= e.lambda);
  CHECK(e.lambda <= e.upper);
}

TEST_CASE("64-policy instance") {
  const ProblemSpec p = testing::oracle6();
  const Grid g = testing::oracle6_grid();
  const Discretization disc(p, g, DriftScheme::Upwind);
  OracleOptions opt;
  opt.limit = 1e6;
  opt.compare_sparse = true;
  const OracleResult r = brute_optimum(disc, Sense::Min, opt);
  CHECK(r.count == 64);
  REQUIRE(r.table.size() == 64);
  for (std::size_t i = 0; i < 64; ++i) {
    CHECK(r.table[i].policy == policy_from_index(i, 2, 6));
    CHECK(r.best_lambda <= r.table[i].lambda);
    CHECK(std::abs(r.table[i].lambda - r.table[i].sparse_lambda) <= 1e-10);
  }
  CHECK(r.table[r.best_index].lambda == r.best_lambda);
  CHECK(r.max_solver_difference <= 1e-10);

  const SolveResult pia = solve_pia(disc, constant_policy(g, 0));
  const CrosscheckReport c = crosscheck(pia, r, 1e-10);
  CHECK(c.pass);
  CHECK(c.difference <= 1e-10);

  SolveResult off = pia;
  off.eig.lambda += 1e-6;
  const CrosscheckReport bad = crosscheck(off, r, 1e-10);
  CHECK_FALSE(bad.pass);
  CHECK(bad.difference == doctest::Approx(1e-6).epsilon(1e-3));

  const OracleResult mx = brute_optimum(disc, Sense::Max, opt);
  for (const auto& e : mx.table) CHECK(mx.best_lambda >= e.lambda);
}

TEST_CASE("singleton control set") {
  const ProblemSpec p = testing::make(1, 1, {"-0.5*x1"}, {"1"}, "0.1*x1^2", testing::points({0.0}));
  const Grid g = testing::oracle6_grid();
  const Discretization disc(p, g);
  const OracleResult r = brute_optimum(disc, Sense::Min);
  CHECK(r.count == 1);
  const EigenPair e = principal_eigpair(disc.assemble_policy(constant_policy(g, 0)));
  CHECK(std::abs(r.best_lambda - e.lambda) <= 1e-10);
}

TEST_CASE("too many policies") {
  const ProblemSpec p = testing::make(1, 1, {"u1"}, {"1"}, "0", testing::points({-1.0, 0.0, 1.0}));
  const Grid g20 = [] {
    const double lo[] = {-10}, hi[] = {11}, h[] = {1};
    return build_box_grid(1, lo, hi, h);
  }();
  REQUIRE(g20.interior_count() == 20);
  OracleOptions opt;
  opt.limit = 1e6;
  try {
    (void)brute_optimum(Discretization(p, g20), Sense::Min, opt);
    FAIL("expected TooLarge");
  } catch (const TooLarge& e) {
    CHECK(e.count() == std::pow(3.0, 20));
  }
}

TEST_CASE("tie-degenerate instance") {
  // Neither drift nor cost depends on the control: every policy has the same matrix.
  const ProblemSpec p = testing::make(1, 1, {"-0.5*x1"}, {"1"}, "0.2*x1^2", testing::points({-1.0, 1.0}));
  const Grid g = testing::oracle6_grid();
  const Discretization disc(p, g);
  const OracleResult r = brute_optimum(disc, Sense::Min);
  const SolveResult pia = solve_pia(disc, constant_policy(g, 1));
  CHECK(pia.policy == constant_policy(g, 1));
  const CrosscheckReport c = crosscheck(pia, r, 1e-10);
  CHECK(c.pass);
  CHECK_FALSE(c.same_policy);
}

TEST_CASE("table output and thread independence") {
  const ProblemSpec p = testing::oracle6();
  const Grid g = testing::oracle6_grid();
  const Discretization disc(p, g, DriftScheme::Upwind);
  std::string out[2];
  const unsigned threads[] = {1, 3};
  for (int t = 0; t < 2; ++t) {
    set_thread_count(threads[t]);
    std::ostringstream os;
    write_oracle_table(os, brute_optimum(disc, Sense::Min));
    out[t] = os.str();
  }
  set_thread_count(0);
  CHECK(out[0] == out[1]);
  CHECK(out[0].rfind("policy,lambda\n000000,", 0) == 0);
  std::istringstream in(out[0]);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) ++n;
  CHECK(n == 65);
}

}
