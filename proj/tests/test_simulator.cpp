#include <doctest.h>

#include <algorithm>
#include <fstream>

#include "msms/simulator.hpp"
#include "msms/model.hpp"
#include "test_util.hpp"

using namespace msms;

namespace {

// No covariates, one interval per transition.
ModelParams constant_params(double h1, double h2, double h3, double h4) {
  std::array<PiecewiseGrid, kNumTransitions> grids;
  std::array<std::vector<std::string>, kNumTransitions> cov;
  for (auto r : kAllTransitions) grids[index_of(r)] = {{1}, kInf};
  auto p = ParamLayout(grids, cov, false).zeros();
  const double h[] = {h1, h2, h3, h4};
  for (int i = 0; i < 4; ++i) p.tr[i].log_alpha[0] = std::log(h[i]);
  return p;
}

const std::array<std::span<const double>, 2> kNoX = {std::span<const double>(), std::span<const double>()};

}  // namespace

TEST_CASE("single-risk sampled durations have the shifted exponential mean") {
  const double h = 0.2;
  const auto p = constant_params(h, 1e-300, 0.1, 0.1);
  Rng rng(1, "test", "mean");
  const int n = 100000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto d = sample_spell(StateId::Hospital, p, kNoX, {}, rng);
    s += d.duration;
    s2 += d.duration * d.duration;
  }
  const double mean = s / n, se = std::sqrt((s2 / n - mean * mean) / n);
  CHECK(std::abs(mean - (1 + 1 / h)) <= 3 * se);
}

TEST_CASE("competing exponentials split by hazard share") {
  const auto p = constant_params(0.3, 0.1, 0.1, 0.1);
  Rng rng(2, "test", "shares");
  const int n = 100000;
  int first = 0;
  for (int i = 0; i < n; ++i) first += *sample_spell(StateId::Hospital, p, kNoX, {}, rng).realized == TransitionId::HospitalToHome;
  const double share = static_cast<double>(first) / n;
  CHECK(std::abs(share - 0.75) <= 3 * std::sqrt(0.75 * 0.25 / n));
}

TEST_CASE("sampled duration inverts the survival") {
  auto sc = testing::toy_scenario(10, 5);
  const auto p = sc.true_params();
  Rng rng(3, "test", "inverse");
  std::normal_distribution<double> n01;
  std::mt19937_64 gen(4);
  for (int i = 0; i < 500; ++i) {
    const std::vector<double> x = {static_cast<double>(i % 2), 1.0, 50 + 20 * n01(gen), 1.0, 30.0};
    const std::array<std::span<const double>, 2> xs = {std::span<const double>(x), std::span<const double>(x)};
    const Eps e{n01(gen), n01(gen)};
    const StateId origin = i % 3 == 0 ? StateId::Hospital : StateId::Home;
    const auto d = sample_spell(origin, p, xs, e, rng);
    if (!d.realized) {
      CHECK(origin == StateId::Home);
      CHECK(d.duration == 365.0);
      CHECK(-log_survival(p, origin, d.duration, xs, e) <= d.target);
      continue;
    }
    CHECK(-log_survival(p, origin, d.duration, xs, e) == doctest::Approx(d.target).epsilon(1e-10));
    if (*d.realized == TransitionId::HomeToReadmission) CHECK(d.duration <= 30.0);
  }
}

TEST_CASE("latent durations pass a Kolmogorov-Smirnov test") {
  std::mt19937_64 gen(101);
  const int n = 10000;
  const double critical = 1.628 / std::sqrt(static_cast<double>(n));  // alpha = 0.01
  for (int rep = 0; rep < 20; ++rep) {
    const auto b = testing::random_baseline(gen, rep % 2 == 1);
    Rng rng(static_cast<std::uint64_t>(rep), "test", "ks");
    std::vector<double> t(n);
    for (auto& v : t) v = sample_latent(b, 1.0, rng);
    std::sort(t.begin(), t.end());
    double d = 0.0;
    for (int i = 0; i < n && std::isfinite(t[static_cast<std::size_t>(i)]); ++i) {
      const double f = 1.0 - std::exp(-cumulative_baseline(b, t[static_cast<std::size_t>(i)]));
      d = std::max({d, std::abs(f - static_cast<double>(i) / n), std::abs(f - static_cast<double>(i + 1) / n)});
    }
    CHECK_MESSAGE(d <= critical, "baseline " << rep);
  }
}

TEST_CASE("simulation is deterministic and thread independent") {
  auto sc = testing::toy_scenario(1500, 8);
  const auto a = simulate_population(sc, 1);
  const auto b = simulate_population(sc, 3);
  CHECK(a.spells == b.spells);
  const auto dir = testing::scratch_dir("sim_det");
  write_population(a, sc, dir / "a");
  write_population(b, sc, dir / "b");
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  CHECK(slurp(dir / "a" / "spells.csv") == slurp(dir / "b" / "spells.csv"));
  CHECK(slurp(dir / "a" / "truth.json") == slurp(dir / "b" / "truth.json"));
  sc.seed = 9;
  CHECK_FALSE(simulate_population(sc, 1).spells == a.spells);
}

TEST_CASE("daily event streams reproduce the spells under ingestion") {
  auto sc = testing::toy_scenario(3000, 12);
  sc.daily = true;
  const auto pop = simulate_population(sc);
  const auto res = build_spells(pop.events, sc.ingest_rules());
  CHECK(res.exclusions.empty());
  CHECK(res.spells == pop.spells);
  CHECK(check_horizon_rules(res.spells, sc.ingest_rules()).empty());
}

TEST_CASE("continuous spells respect the horizons") {
  const auto pop = simulate_population(testing::toy_scenario(2000, 13));
  for (const auto& s : pop.spells) {
    CHECK(s.duration >= 1.0);
    if (s.transition == 3) CHECK(s.duration <= 30.0);
    if (s.origin == StateId::Home) CHECK(s.duration <= 365.0);
  }
}

TEST_CASE("calibration hits the reference transition table") {
  auto sc = testing::toy_scenario(30000, 14);
  for (auto& rates : sc.truth.rates) {
    for (auto& r : rates) r *= 1.6;
  }
  const TransitionTable target{0.975, 0.025, 0.020, 0.031, 0.0};
  const auto cal = calibrate_table1(sc, target, 10000, 3);
  const auto t = transition_table(simulate_population(cal).spells);
  CHECK(std::abs(t.hospital_home - 0.975) <= 0.005);
  CHECK(std::abs(t.hospital_death - 0.025) <= 0.005);
  CHECK(std::abs(t.home_readmission - 0.020) <= 0.005);
  CHECK(std::abs(t.home_death - 0.031) <= 0.005);
}

TEST_CASE("empirical shares agree with the analytic incidences") {
  auto sc = testing::toy_scenario(20000, 15);
  const auto pop = simulate_population(sc);
  const auto emp = transition_table(pop.spells);
  const auto exp = expected_table(sc, pop);
  std::size_t home = 0;
  for (const auto& s : pop.spells) home += s.origin == StateId::Home;
  const double se4 = std::sqrt(exp.home_death * (1 - exp.home_death) / static_cast<double>(home));
  CHECK(std::abs(emp.home_death - exp.home_death) <= 3 * se4);
  const double se3 = std::sqrt(exp.home_readmission * (1 - exp.home_readmission) / static_cast<double>(home));
  CHECK(std::abs(emp.home_readmission - exp.home_readmission) <= 3 * se3);
}

TEST_CASE("scenario JSON") {
  ScenarioSpec sc;
  sc.patients = 77;
  sc.truth.pretrend_slope[0] = 0.02;
  const auto j = sc.to_json();
  CHECK(ScenarioSpec::from_json(j).to_json() == j);
  auto bad = j;
  bad["population"]["shoe_size"] = 3;
  CHECK_THROWS_AS(ScenarioSpec::from_json(bad), InputError);
  bad = j;
  bad["transitions"]["1"]["beta"] = {1.0};
  CHECK_THROWS_AS(ScenarioSpec::from_json(bad), InputError);
  const auto truth = truth_json(sc);
  CHECK(truth["rng"]["version"] == kRngVersion);
  CHECK(truth["parameters"]["r3.beta.mc"] == 0.18);
  CHECK(truth["parameters"]["r4.loading.psi"] == 0.3);
}
