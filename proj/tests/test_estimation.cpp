#include <doctest.h>

#include <cmath>

#include "msms/estimation.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

using namespace msms;
using namespace msms::testing;

namespace {

Design toy_design(int patients, std::uint64_t seed, bool frailty, int draws = 10) {
  auto sc = testing::toy_scenario(patients, seed, true);
  auto spec = sc.model_spec();
  spec.frailty = frailty;
  spec.draws = draws;
  return build_design(simulate_population(sc).spells, spec);
}

Eigen::VectorXd jitter(const Eigen::VectorXd& x, std::mt19937_64& gen, double sd) {
  std::normal_distribution<double> n01;
  Eigen::VectorXd out = x;
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] += sd * n01(gen) * std::max(0.05, std::abs(x[i]));
  return out;
}

}  // namespace

TEST_CASE("no-frailty likelihood matches the scalar oracle") {
  const auto d = toy_design(100, 21, false);
  SimulatedLikelihood ll(d, FrailtyDraws::zeros(d.patients.size(), 1));
  std::mt19937_64 gen(3);
  const auto truth = truth_vector(testing::toy_scenario(100, 21, false), d.layout);
  for (int rep = 0; rep < 5; ++rep) {
    const auto theta = jitter(truth, gen, 0.2);
    const double a = ll.value(theta);
    const double b = scalar_loglik(d, theta, nullptr);
    CHECK(std::abs(a - b) <= 1e-10 * std::abs(b));
  }
}

TEST_CASE("simulated likelihood matches a brute-force mixture") {
  const auto d = toy_design(40, 22, true, 3);
  FrailtyDraws draws(d.patients, 3, 99);
  SimulatedLikelihood ll(d, draws);
  const auto truth = truth_vector(testing::toy_scenario(40, 22), d.layout);
  const double a = ll.value(truth);
  const double b = scalar_loglik(d, truth, &draws);
  CHECK(std::abs(a - b) <= 1e-12 * std::abs(b));
}

TEST_CASE("zero draws with frailty on equal the no-frailty likelihood") {
  const auto d_on = toy_design(60, 23, true);
  const auto d_off = toy_design(60, 23, false);
  SimulatedLikelihood on(d_on, FrailtyDraws::zeros(d_on.patients.size(), 1));
  SimulatedLikelihood off(d_off, FrailtyDraws::zeros(d_off.patients.size(), 1));
  const auto t_on = truth_vector(testing::toy_scenario(60, 23), d_on.layout);
  const auto t_off = truth_vector(testing::toy_scenario(60, 23, false), d_off.layout);
  CHECK(on.value(t_on) == doctest::Approx(off.value(t_off)).epsilon(1e-13));
}

TEST_CASE("analytic gradient matches central differences") {
  const auto d = toy_design(100, 24, true, 8);
  SimulatedLikelihood ll(d, FrailtyDraws(d.patients, 8, 5));
  std::mt19937_64 gen(8);
  const auto truth = truth_vector(testing::toy_scenario(100, 24), d.layout);
  for (int rep = 0; rep < 5; ++rep) {
    const auto x = jitter(truth, gen, 0.1);
    Eigen::VectorXd g;
    ll.value_and_gradient(x, g);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double h = 1e-5 * std::max(1.0, std::abs(x[i]));
      Eigen::VectorXd a = x, b = x;
      a[i] += h;
      b[i] -= h;
      const double fd = (ll.value(a) - ll.value(b)) / (2 * h);
      worst = std::max(worst, std::abs(fd - g[i]) / std::max(1.0, std::abs(g[i])));
    }
    CHECK(worst <= 1e-5);
  }
}

TEST_CASE("likelihood is deterministic across thread counts") {
  const auto d = toy_design(1200, 25, true, 10);
  const FrailtyDraws draws(d.patients, 10, 5);
  SimulatedLikelihood one(d, draws, 1), four(d, draws, 4);
  const auto x = truth_vector(testing::toy_scenario(1200, 25), d.layout);
  const double a = one.value(x), b = four.value(x);
  CHECK(a == b);
  CHECK(one.value(x) == a);
  Eigen::VectorXd ga, gb;
  one.value_and_gradient(x, ga);
  four.value_and_gradient(x, gb);
  CHECK(ga == gb);
}

TEST_CASE("antithetic draws mirror the first half") {
  FrailtyDraws d({"a", "b"}, 4, 3, DrawType::Antithetic);
  CHECK(d.at(1, 2).e1 == -d.at(1, 0).e1);
  CHECK(d.at(1, 3).e2 == -d.at(1, 1).e2);
  CHECK_THROWS_AS(FrailtyDraws({"a"}, 3, 3, DrawType::Antithetic), InputError);
}

TEST_CASE("explicit draws are laid out patient-major") {
  const auto d = FrailtyDraws::from_values(2, {0.1, 0.2, 0.3, 0.4}, {-1, -2, -3, -4});
  CHECK(d.patients() == 2);
  CHECK(d.at(1, 0).e1 == 0.3);
  CHECK(d.at(0, 1).e2 == -2);
  CHECK_THROWS_AS(FrailtyDraws::from_values(3, {0.1, 0.2}, {0.1, 0.2}), InputError);
  CHECK_THROWS_AS(FrailtyDraws::from_values(1, {0.1}, {}), InputError);

  const auto design = toy_design(60, 30, true, 4);
  const FrailtyDraws pseudo(design.patients, 4, 7);
  std::vector<double> e1, e2;
  for (std::size_t p = 0; p < pseudo.patients(); ++p) {
    for (int k = 0; k < 4; ++k) {
      e1.push_back(pseudo.at(p, k).e1);
      e2.push_back(pseudo.at(p, k).e2);
    }
  }
  const auto theta = truth_vector(testing::toy_scenario(60, 30), design.layout);
  CHECK(SimulatedLikelihood(design, FrailtyDraws::from_values(4, e1, e2)).value(theta) ==
        SimulatedLikelihood(design, pseudo).value(theta));
}

TEST_CASE("no-frailty fit is a stationary point of the scalar oracle") {
  const auto d = toy_design(1500, 26, false);
  FitOptions o;
  o.covariance = false;
  const auto f = fit(d, o);
  REQUIRE(f.converged);
  // Five-point stencil; the age coefficients multiply values near 60, which
  // makes plain central differences too coarse here.
  double worst = 0.0;
  for (Eigen::Index i = 0; i < f.estimate.size(); ++i) {
    const double h = 1e-4 * std::max(1.0, std::abs(f.estimate[i]));
    auto at = [&](double step) {
      Eigen::VectorXd a = f.estimate;
      a[i] += step;
      return scalar_loglik(d, a, nullptr);
    };
    const double g = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
    worst = std::max(worst, std::abs(g));
  }
  CHECK(worst <= 1e-3);
  CHECK(f.loglik == doctest::Approx(scalar_loglik(d, f.estimate, nullptr)).epsilon(1e-12));
}

TEST_CASE("iteration cap is reported as non-convergence") {
  const auto d = toy_design(300, 27, false);
  FitOptions o;
  o.max_iter = 1;
  o.covariance = false;
  const auto f = fit(d, o);
  CHECK_FALSE(f.converged);
  CHECK(f.iterations <= 1);
}

TEST_CASE("fit with covariance, serialization round trip") {
  const auto d = toy_design(800, 28, true, 10);
  const auto f = fit(d);
  INFO(f.message << " " << f.iterations << " " << f.gradient_supnorm << " " << f.loglik);
  REQUIRE(f.converged);
  REQUIRE(f.covariance.has_value());
  CHECK(f.clamps == 0);
  const Eigen::MatrixXd& v = *f.covariance;
  CHECK((v - v.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * v.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < v.rows(); ++i) CHECK(f.se[i] == doctest::Approx(std::sqrt(v(i, i))));
  REQUIRE(f.correlation.has_value());
  REQUIRE(f.correlation_se.has_value());

  const auto dir = testing::scratch_dir("fit_rt");
  f.write(dir);
  const auto g = FitResult::read(dir);
  CHECK(g.estimate == f.estimate);
  CHECK(*g.covariance == v);
  CHECK(g.layout.entries().size() == f.layout.entries().size());
  CHECK(g.spec.to_json() == f.spec.to_json());
  CHECK(g.converged);
}

TEST_CASE("Wald test identities") {
  const auto d = toy_design(100, 29, false);
  FitResult f;
  f.layout = d.layout;
  f.estimate = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d.layout.size()));
  f.covariance = Eigen::MatrixXd::Identity(f.estimate.size(), f.estimate.size()) * 0.04;
  f.converged = true;
  auto w = wald_test(f, {"r1.beta.mc", "r2.beta.mc"});
  CHECK(w.statistic == 0.0);
  CHECK(w.p_value == doctest::Approx(1.0));
  CHECK(w.df == 2);

  f.estimate[static_cast<Eigen::Index>(d.layout.index("r3.beta.mc"))] = 0.5;
  w = wald_test(f, {"r3.beta.mc"});
  CHECK(w.statistic == doctest::Approx(6.25).epsilon(1e-14));
  CHECK(w.p_value == doctest::Approx(std::erfc(2.5 / std::sqrt(2.0))).epsilon(1e-12));

  CHECK_THROWS_AS(wald_test(f, {"r3.beta.nope"}), InputError);
  (*f.covariance)(0, 0) = 0.0;
  CHECK_THROWS_AS(wald_test(f, {"r1.baseline.a1"}), NumericalError);
  f.covariance.reset();
  CHECK_THROWS_AS(wald_test(f, {"r3.beta.mc"}), InputError);
}

TEST_CASE("chi-square tail") {
  CHECK(chi_square_sf(3.841458820694124, 1) == doctest::Approx(0.05).epsilon(1e-10));
  CHECK(chi_square_sf(5.991464547107979, 2) == doctest::Approx(0.05).epsilon(1e-10));
  CHECK(chi_square_sf(0.0, 3) == 1.0);
}

TEST_CASE("information covariance rejects indefinite Hessians") {
  Eigen::MatrixXd h(2, 2);
  h << -2, 0, 0, 1;
  std::string why;
  CHECK_FALSE(information_covariance(h, &why).has_value());
  CHECK_FALSE(why.empty());
  h(1, 1) = -4;
  const auto c = information_covariance(h);
  REQUIRE(c.has_value());
  CHECK((*c)(1, 1) == doctest::Approx(0.25));
}
