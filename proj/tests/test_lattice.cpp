#include <doctest.h>

#include <set>

#include "riskpia/error.hpp"
#include "riskpia/lattice.hpp"
#include "support.hpp"

using namespace riskpia;

TEST_SUITE("lattice") {

TEST_CASE("one-dimensional enumeration") {
  const Grid g = testing::grid1(2, 1);
  REQUIRE(g.node_count() == 5);
  REQUIRE(g.interior_count() == 3);
  for (std::size_t n = 0; n < 5; ++n) CHECK(g.coordinates(n)[0] == static_cast<double>(n) - 2.0);
  CHECK(g.origin_node() == 2);
  CHECK(g.is_boundary(0));
  CHECK(g.is_boundary(4));
  CHECK(g.coordinates(g.node_of_interior(g.origin_interior()))[0] == 0.0);
  CHECK(g.coordinates(g.node_of_interior(0))[0] == -1.0);
}

TEST_CASE("two-dimensional enumeration") {
  const double r[] = {1, 1}, h[] = {1, 1};
  const Grid g = build_grid(2, r, h);
  CHECK(g.node_count() == 9);
  REQUIRE(g.interior_count() == 1);
  const auto x = g.coordinates(g.node_of_interior(0));
  CHECK(x == std::vector<double>{0.0, 0.0});
  CHECK(g.neighbour(0, 0, -1) < 0);
  CHECK(g.neighbour(0, 1, +1) < 0);
}

TEST_CASE("node counts and lexicographic order") {
  const double r[] = {2, 1.5}, h[] = {0.5, 0.25};
  const Grid g = build_grid(2, r, h);
  CHECK(g.node_count() == static_cast<std::size_t>((2 * 2 / 0.5 + 1) * (2 * 1.5 / 0.25 + 1)));
  CHECK(g.interior_count() == static_cast<std::size_t>((2 * 2 / 0.5 - 1) * (2 * 1.5 / 0.25 - 1)));
  for (std::size_t n = 1; n < g.node_count(); ++n) {
    const auto a = g.multi_index(n - 1), b = g.multi_index(n);
    CHECK((a[0] < b[0] || (a[0] == b[0] && a[1] < b[1])));
  }
  const auto o = g.coordinates(g.origin_node());
  CHECK(o == std::vector<double>{0.0, 0.0});
  // Interior nodes are exactly those whose neighbours all lie in the closed box.
  for (std::size_t n = 0; n < g.node_count(); ++n) {
    const auto idx = g.multi_index(n);
    bool inside = true;
    for (int a = 0; a < 2; ++a) {
      for (int s : {-1, 1}) {
        auto k = idx;
        k[static_cast<std::size_t>(a)] += s;
        inside = inside && g.contains(k);
      }
    }
    CHECK(g.is_interior(n) == inside);
  }
}

TEST_CASE("invalid grids") {
  const double r[] = {1}, h[] = {0.3};
  CHECK_THROWS_AS(build_grid(1, r, h), NonIntegerRatio);
  const double r3[] = {1, 1, 1}, h3[] = {1, 1, 1};
  CHECK_THROWS_AS(build_grid(3, r3, h3), UnsupportedDimension);
  const double zero[] = {0.0};
  CHECK_THROWS(build_grid(1, r, zero));
  // The origin must be an interior node of a box grid.
  const double lo[] = {0}, hi[] = {3}, s[] = {1};
  CHECK_THROWS(build_box_grid(1, lo, hi, s));
}

TEST_CASE("asymmetric box") {
  const Grid g = testing::oracle6_grid();
  CHECK(g.interior_count() == 6);
  CHECK(g.lower(0) == -3.0);
  CHECK(g.upper(0) == 4.0);
  CHECK(g.coordinates(g.node_of_interior(g.origin_interior()))[0] == 0.0);
  CHECK_FALSE(g.symmetric());
}

TEST_CASE("nested refinements") {
  const Grid g = testing::grid1(2, 0.5);
  const auto gs = nested_refinements(g, {{2}, {4}, {8}});
  REQUIRE(gs.size() == 3);
  CHECK(gs[2].interior_count() == 31);
  CHECK_THROWS(nested_refinements(g, {{4}, {2}}));
  CHECK_NOTHROW(nested_refinements(g, {{2}, {3}, {4}}));
  CHECK_THROWS_AS(nested_refinements(g, {{2}, {2.25}}), NonIntegerRatio);

  // Interior node sets are nested as sets of points.
  for (std::size_t k = 0; k + 1 < gs.size(); ++k) {
    std::set<std::vector<double>> big;
    for (std::size_t i = 0; i < gs[k + 1].interior_count(); ++i) {
      big.insert(gs[k + 1].coordinates(gs[k + 1].node_of_interior(i)));
    }
    for (std::size_t i = 0; i < gs[k].interior_count(); ++i) {
      CHECK(big.count(gs[k].coordinates(gs[k].node_of_interior(i))) == 1);
    }
  }
}

TEST_CASE("nesting in two dimensions") {
  const double r[] = {1, 2}, h[] = {0.5, 0.5};
  const Grid g = build_grid(2, r, h);
  const auto gs = nested_refinements(g, {{1, 2}, {2, 3}});
  REQUIRE(gs.size() == 2);
  CHECK(gs[1].radius(0) == 2.0);
  CHECK(gs[1].radius(1) == 3.0);
  CHECK_THROWS(nested_refinements(g, {{1, 2}, {2, 2}}));
}

}
