#include <doctest.h>

#include "msms/baseline.hpp"
#include "test_util.hpp"

using namespace msms;


TEST_CASE("cumulative baseline worked example") {
  PiecewiseBaseline b{{{1, 2}, 5.0}, {0.5, 0.2}};
  CHECK(cumulative_baseline(b, 3.0) == doctest::Approx(0.7).epsilon(1e-14));
  CHECK(cumulative_baseline(b, 1.0) == 0.0);
  CHECK(cumulative_baseline(b, 0.4) == 0.0);
  CHECK(cumulative_baseline(b, 9.0) == doctest::Approx(0.5 + 0.2 * 3).epsilon(1e-14));
}

TEST_CASE("single interval is linear in elapsed time") {
  PiecewiseBaseline b{{{1}, kInf}, {0.03}};
  for (double x : {0.0, 0.5, 7.0, 300.0}) {
    CHECK(cumulative_baseline(b, 1.0 + x) == doctest::Approx(0.03 * x).epsilon(1e-14));
  }
}

TEST_CASE("cumulative baseline agrees with quadrature on random grids") {
  std::mt19937_64 gen(11);
  for (int rep = 0; rep < 300; ++rep) {
    const auto b = testing::random_baseline(gen, rep % 2 == 0);
    const double span = (b.grid.bounded() ? b.grid.upper : b.grid.breaks.back() + 30.0) + 5.0;
    std::uniform_real_distribution<double> tt(0.0, span);
    const double t = tt(gen);
    const double closed = cumulative_baseline(b, t);
    const double quad = testing::quadrature_cumulative(b, t);
    CHECK(std::abs(closed - quad) <= 1e-10 * std::max(1.0, std::abs(quad)));
  }
}

TEST_CASE("interval lookup respects the day-one start and closed horizon") {
  PiecewiseGrid g{{1, 3, 6}, 30.0};
  CHECK(g.interval_of(0.5) == -1);
  CHECK(g.interval_of(1.0) == 0);
  CHECK(g.interval_of(2.999) == 0);
  CHECK(g.interval_of(3.0) == 1);
  CHECK(g.interval_of(29.9) == 2);
  CHECK(g.interval_of(30.0) == 2);
  CHECK(g.interval_of(30.1) == -1);
  PiecewiseGrid open{{1, 18}, kInf};
  CHECK(open.interval_of(1e6) == 1);
}

TEST_CASE("grid validation") {
  CHECK_THROWS_AS((PiecewiseGrid{{}, kInf}.validate()), InputError);
  CHECK_THROWS_AS((PiecewiseGrid{{1, 1}, kInf}.validate()), InputError);
  CHECK_THROWS_AS((PiecewiseGrid{{1, 5}, 4.0}.validate()), InputError);
  CHECK_THROWS_AS((PiecewiseBaseline{{{1, 2}, kInf}, {0.1}}.validate()), InputError);
  CHECK_THROWS_AS((PiecewiseBaseline{{{1}, kInf}, {-0.1}}.validate()), InputError);
  for (auto r : kAllTransitions) CHECK_NOTHROW(default_grid(r).validate());
}

TEST_CASE("clamped exponential counts clamps") {
  ClampTally t;
  CHECK(clamped_exp(1.0, &t) == doctest::Approx(std::exp(1.0)));
  CHECK(t.count == 0);
  CHECK(clamped_exp(800.0, &t) == std::exp(kExpClamp));
  CHECK(clamped_exp(-800.0, &t) == std::exp(-kExpClamp));
  CHECK(t.count == 2);
}
