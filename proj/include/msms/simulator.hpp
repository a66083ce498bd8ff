#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "msms/design.hpp"
#include "msms/rng.hpp"
#include "msms/spells.hpp"

namespace msms {

// True hazard model of a scenario. Every transition uses the same covariate
// names; supported names are "mc" and the scalar controls.
struct TrueModel {
  std::array<PiecewiseGrid, kNumTransitions> grids = {
      default_grid(TransitionId::HospitalToHome), default_grid(TransitionId::HospitalToDeath),
      default_grid(TransitionId::HomeToReadmission), default_grid(TransitionId::HomeToDeath)};
  std::array<std::vector<double>, kNumTransitions> rates;
  std::vector<std::string> covariates = {"mc", "female", "age", "cci", "dept_size"};
  std::array<std::vector<double>, kNumTransitions> beta;
  bool frailty = true;
  std::array<double, kNumTransitions> loading = {0.3, 0.3, 0.3, 0.3};  // free loading
  // Later-adopter log-hazard drift per calendar quarter (pre-trend injection).
  std::array<double, kNumTransitions> pretrend_slope{};
};

struct DepartmentSchedule {
  int count = 40;
  int hospitals = 12;
  std::vector<std::string> specialties = {"IM", "GS", "CARD", "OBGYN", "PSY", "URO", "ORL", "PED"};
  int regions = 6;
  double treated_share = 0.5;
  Day adoption_start = parse_date("1999-10-01");
  Day adoption_end = parse_date("2002-12-31");
  int size_min = 5;
  int size_max = 60;
};

struct PopulationProfile {
  double female_share = 0.5;
  double age_mean = 62.0;  // at the window start
  double age_sd = 15.0;
  double age_min = 18.0;
  double age_max = 95.0;
  double cci_mean = 1.2;
  int cci_max = 10;
  int drg_codes = 40;
};

struct ScenarioSpec {
  TrueModel truth;
  int patients = 50000;
  Day window_start = parse_date("1996-01-01");
  Day window_end = parse_date("2003-12-31");  // inclusive
  double unrelated_admission_rate = 1.0 / 365.0;  // per day at home, from day 1
  bool daily = false;  // integer-day event streams instead of continuous time
  std::uint64_t seed = 1;
  DepartmentSchedule departments;
  PopulationProfile population;
  int draws = 100;  // for the estimation spec derived from the scenario

  ScenarioSpec();  // the reference scenario: default grids, 5 covariates, loadings 0.3
  static ScenarioSpec from_json(const nlohmann::json& j);  // unknown keys rejected
  nlohmann::json to_json() const;

  void validate() const;
  ModelParams true_params() const;
  // Estimation spec matching the data-generating process (entry clock,
  // same covariates, no dummies or trends).
  ModelSpec model_spec() const;
  IngestRules ingest_rules() const;
};

ScenarioSpec load_scenario(const std::filesystem::path& path);

// Flat truth for `layout`; throws InputError for a coefficient the scenario
// does not define.
Eigen::VectorXd truth_vector(const ScenarioSpec& scenario, const ParamLayout& layout);

struct SampledSpell {
  double duration = 0.0;                 // +inf when no hazard mass remains
  std::optional<TransitionId> realized;  // nullopt: censored at the horizon
  double target = 0.0;                   // -ln u that was inverted
};

// Competing-risk draw for a spell leaving `origin`: inverts the summed
// scaled step hazards in closed form, then picks the transition with
// probability proportional to its hazard at the sampled time. When no event
// occurs before the last bounded horizon the spell is censored there.
SampledSpell sample_spell(StateId origin, const ModelParams& params,
                          const std::array<std::span<const double>, 2>& x, const Eps& eps,
                          Rng& rng);

// Single-risk latent duration with hazard k·λ0(t); +inf past a bounded grid.
double sample_latent(const PiecewiseBaseline& baseline, double k, Rng& rng);

struct Department {
  std::string id;
  std::string hospital;
  std::string specialty;
  int region = 1;
  double size = 0.0;
  std::optional<Day> adoption;
};

struct Population {
  std::vector<Department> departments;
  std::vector<RawEvent> events;  // daily mode only
  std::vector<SpellRecord> spells;
  std::vector<Eps> spell_eps;  // patient frailty behind each spell
};

std::vector<Department> make_departments(const ScenarioSpec& scenario);

Population simulate_population(const ScenarioSpec& scenario, int threads = 1);

// spells.csv, truth.json, model.json (matching estimation spec), rules.json
// (matching ingestion rules) and, in daily mode, events.csv in `dir`.
void write_population(const Population& pop, const ScenarioSpec& scenario,
                      const std::filesystem::path& dir);
nlohmann::json truth_json(const ScenarioSpec& scenario);

// Transition shares laid out like the reference table: hospital exits among
// completed hospital spells, home outcomes among all home spells.
struct TransitionTable {
  double hospital_home = 0.0;
  double hospital_death = 0.0;
  double home_readmission = 0.0;
  double home_death = 0.0;
  double home_censored = 0.0;
};

TransitionTable transition_table(const std::vector<SpellRecord>& spells);

// Expected shares of the same table for given spells under the scenario's
// hazards, from the closed-form cumulative incidences of each spell (each
// with its own frailty, entry date and window end).
TransitionTable expected_table(const ScenarioSpec& scenario, const Population& pop);

// Rescales each transition's baseline so that expected shares hit the
// targets, iterating over pilot populations.
ScenarioSpec calibrate_table1(ScenarioSpec scenario, const TransitionTable& target,
                              int pilot_patients = 20000, int iterations = 4, int threads = 1);

// Covariate value of a DGP column at clock time `t`.
double scenario_covariate(const std::string& name, const SpellRecord& s, double t);

}  // namespace msms
