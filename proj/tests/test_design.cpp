#include <doctest.h>

#include <algorithm>

#include "msms/design.hpp"
#include "test_util.hpp"

using namespace msms;

namespace {

SpellRecord make_spell(const std::string& pid, int idx, Day entry, double duration, int transition,
                       const std::string& hospital = "H1", std::optional<Day> adoption = std::nullopt) {
  SpellRecord s;
  s.patient_id = pid;
  s.spell_index = idx;
  s.origin = StateId::Hospital;
  s.entry_day = entry;
  s.duration = duration;
  s.transition = transition;
  s.attr.birth_date = parse_date("1950-01-01");
  s.attr.department_id = "DEP";
  s.attr.hospital_id = hospital;
  s.attr.specialty = "IM";
  s.attr.drg = "D1";
  s.attr.mc_adoption_date = adoption;
  s.attr.female = idx % 2;
  s.attr.cci = idx;
  return s;
}

ModelSpec bare_spec() {
  ModelSpec spec;
  spec.covariates = {"female", "cci"};
  spec.specialty_dummies = 0;
  spec.hospital_dummies = 0;
  spec.diagnosis_dummies = false;
  spec.region_dummies = false;
  spec.year_dummies = false;
  spec.trends = false;
  return spec;
}

double value(const Design& d, TransitionId r, std::size_t row, const std::string& col) {
  const auto& td = d.at(r);
  auto it = std::find(td.columns.begin(), td.columns.end(), col);
  REQUIRE(it != td.columns.end());
  return td.x(static_cast<Eigen::Index>(row), it - td.columns.begin());
}

}  // namespace

TEST_CASE("never-adopting department has MC 0") {
  const Day t0 = parse_date("2001-01-01");
  auto spec = bare_spec();
  const auto d = build_design({make_spell("A", 0, t0, 5, 1), make_spell("B", 1, t0, 5, 1, "H1", t0 - 100)}, spec);
  CHECK(value(d, TransitionId::HospitalToHome, 0, "mc") == 0.0);
  CHECK(value(d, TransitionId::HospitalToHome, 1, "mc") == 1.0);
  CHECK(d.at(TransitionId::HospitalToHome).treatment_columns.size() == 1);
}

TEST_CASE("experience bins use time since the department's adoption") {
  auto spec = bare_spec();
  spec.mc_mode = McMode::ByExperience;
  const Day adopt = parse_date("1999-10-01");
  const Day exit = parse_date("2001-03-15");
  std::vector<SpellRecord> spells = {make_spell("A", 0, exit - 4, 4, 1, "H1", adopt),
                                     make_spell("B", 1, exit + 2000, 4, 1, "H1", adopt),
                                     make_spell("C", 2, exit, 4, 1)};
  const auto d = build_design(spells, spec);
  CHECK(value(d, TransitionId::HospitalToHome, 0, "mc:exp<2") == 1.0);
  CHECK(value(d, TransitionId::HospitalToHome, 1, "mc:exp<2") == 0.0);
  CHECK(mc_experience_years(spells[0], exit) == doctest::Approx(1.45).epsilon(0.01));
}

TEST_CASE("spells differing only in hospital differ only in hospital dummies") {
  auto spec = bare_spec();
  spec.hospital_dummies = 2;
  const Day t0 = parse_date("2001-01-01");
  std::vector<SpellRecord> spells;
  for (int i = 0; i < 6; ++i) spells.push_back(make_spell("P" + std::to_string(i), i, t0, 3, 1, i < 3 ? "H1" : (i < 5 ? "H2" : "H3")));
  spells[5].attr.female = spells[3].attr.female;
  spells[5].attr.cci = spells[3].attr.cci;
  const auto d = build_design(spells, spec);
  const auto& td = d.at(TransitionId::HospitalToHome);
  for (Eigen::Index c = 0; c < td.x.cols(); ++c) {
    if (td.x(3, c) != td.x(5, c)) CHECK(td.columns[static_cast<std::size_t>(c)].rfind("hosp:", 0) == 0);
  }
}

TEST_CASE("pre-trend design columns") {
  auto spec = bare_spec();
  spec.pretrend.min_events = 1;
  const Day t0 = parse_date("1997-05-10");  // quarter 6 from 1996Q1
  std::vector<SpellRecord> spells = {make_spell("A", 0, t0, 5, 1), make_spell("B", 1, t0, 5, 1, "H1", parse_date("2001-01-01")),
                                     make_spell("C", 2, parse_date("2000-01-01"), 5, 1, "H1", parse_date("2001-01-01"))};
  spec.covariate_clock = CovariateClock::Entry;
  auto d = build_pretrend_design(spells, spec);
  CHECK(d.spells.size() == 2);  // the post-cutoff spell is dropped
  CHECK(value(d, TransitionId::HospitalToHome, 0, "pretrend_q") == 0.0);
  CHECK(value(d, TransitionId::HospitalToHome, 1, "pretrend_q") == 6.0);
  CHECK(value(d, TransitionId::HospitalToHome, 1, "pretrend_q2") == 36.0);
  const auto& cols = d.at(TransitionId::HospitalToHome).columns;
  CHECK(std::find(cols.begin(), cols.end(), "mc") == cols.end());
  CHECK(pretrend_coefficients(d, TransitionId::HospitalToHome).size() == 2);

  spec.pretrend.cubic = true;
  d = build_pretrend_design(spells, spec);
  CHECK(value(d, TransitionId::HospitalToHome, 1, "pretrend_q3") == 216.0);

  spells.erase(spells.begin() + 1, spells.end());
  CHECK_THROWS_AS(build_pretrend_design(spells, spec), InputError);
}

TEST_CASE("pre-trend test needs enough treated events") {
  auto spec = bare_spec();
  spec.pretrend.min_events = 5;
  const Day t0 = parse_date("1997-05-10");
  const auto d = build_pretrend_design({make_spell("A", 0, t0, 5, 1), make_spell("B", 1, t0, 5, 1, "H1", parse_date("2001-01-01"))}, spec);
  CHECK(pretrend_coefficients(d, TransitionId::HospitalToHome).empty());
  CHECK_FALSE(d.warnings.empty());
}

TEST_CASE("spells are cut at the pre-trend cutoff") {
  auto spec = bare_spec();
  spec.pretrend.min_events = 1;
  const Day cutoff = spec.pretrend.cutoff;
  const auto d = build_pretrend_design({make_spell("A", 0, cutoff - 3, 10, 1, "H1", cutoff + 50),
                                        make_spell("B", 0, cutoff - 30, 10, 1, "H1", cutoff + 50)},
                                       spec);
  CHECK(d.spells[0].duration == 3);
  CHECK(d.spells[0].censored());
  CHECK(d.spells[1].transition == 1);
}

TEST_CASE("constant control is reported as rank deficient") {
  auto spec = bare_spec();
  const Day t0 = parse_date("2001-01-01");
  std::vector<SpellRecord> spells;
  for (int i = 0; i < 8; ++i) {
    auto s = make_spell("P" + std::to_string(i), i, t0 + i, 2 + i, 1);
    s.attr.female = 1;
    spells.push_back(s);
  }
  const auto issues = check_rank(build_design(spells, spec));
  REQUIRE_FALSE(issues.empty());
  const auto& cols = issues.front().columns;
  CHECK(std::find(cols.begin(), cols.end(), "female") != cols.end());
}

TEST_CASE("model spec JSON round trip and validation") {
  ModelSpec spec;
  spec.mc_mode = McMode::BySpecialty;
  spec.draws = 37;
  spec.pretrend.cubic = true;
  const auto j = spec.to_json();
  CHECK(ModelSpec::from_json(j).to_json() == j);
  auto bad = j;
  bad["unknown_key"] = 1;
  CHECK_THROWS_AS(ModelSpec::from_json(bad), InputError);
}

TEST_CASE("events outside the hazard support are rejected") {
  auto spec = bare_spec();
  auto s = make_spell("A", 0, parse_date("2001-01-01"), 40, 3);
  s.origin = StateId::Home;
  CHECK_THROWS_AS(build_design({s}, spec), InputError);
}
