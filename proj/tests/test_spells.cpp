#include <doctest.h>

#include <fstream>
#include <sstream>

#include "msms/spells.hpp"
#include "test_util.hpp"

using namespace msms;

namespace {

const Day d0 = parse_date("2000-03-01");

RawEvent admit(Day day, const std::string& dept = "DEP1", const std::string& drg = "D1") {
  RawEvent e;
  e.patient_id = "A";
  e.kind = EventKind::Admit;
  e.date = day;
  e.department_id = dept;
  e.hospital_id = "H1";
  e.specialty = "IM";
  e.drg = drg;
  e.birth_date = parse_date("1940-01-01");
  return e;
}

RawEvent simple(EventKind k, Day day) {
  RawEvent e;
  e.patient_id = "A";
  e.kind = k;
  e.date = day;
  return e;
}

IngestRules rules_until(Day end) {
  IngestRules r;
  r.sample_start = parse_date("1996-01-01");
  r.sample_end = end;
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("readmission within the window to the same department and DRG") {
  const auto res = build_spells({admit(d0), simple(EventKind::Discharge, d0 + 8), admit(d0 + 21),
                                 simple(EventKind::Discharge, d0 + 25)},
                                rules_until(d0 + 1000));
  REQUIRE(res.exclusions.empty());
  REQUIRE(res.spells.size() == 4);
  CHECK(res.spells[0].origin == StateId::Hospital);
  CHECK(res.spells[0].duration == 8);
  CHECK(res.spells[0].transition == 1);
  CHECK(res.spells[1].origin == StateId::Home);
  CHECK(res.spells[1].duration == 13);
  CHECK(res.spells[1].transition == 3);
  CHECK(res.spells[3].duration == 365);
  CHECK(res.spells[3].censored());
}

TEST_CASE("home spell censored at the death horizon") {
  const auto res = build_spells({admit(d0), simple(EventKind::Discharge, d0 + 8)}, rules_until(d0 + 408));
  REQUIRE(res.spells.size() == 2);
  CHECK(res.spells[1].duration == 365);
  CHECK(res.spells[1].censored());
}

TEST_CASE("late readmission starts a new admission") {
  const auto res = build_spells({admit(d0), simple(EventKind::Discharge, d0 + 8), admit(d0 + 53),
                                 simple(EventKind::Discharge, d0 + 60)},
                                rules_until(d0 + 100));
  REQUIRE(res.spells.size() == 4);
  CHECK(res.spells[1].duration == 45);
  CHECK(res.spells[1].censored());
  CHECK(res.spells[2].origin == StateId::Hospital);
  CHECK(res.spells[3].duration == 40);  // open at the sample end
}

TEST_CASE("different DRG within the window is not a readmission") {
  const auto res = build_spells({admit(d0), simple(EventKind::Discharge, d0 + 3), admit(d0 + 10, "DEP1", "D2"),
                                 simple(EventKind::Discharge, d0 + 12)},
                                rules_until(d0 + 1000));
  REQUIRE(res.spells.size() == 4);
  CHECK(res.spells[1].duration == 7);
  CHECK(res.spells[1].censored());
}

TEST_CASE("deaths at home and in hospital") {
  auto res = build_spells({admit(d0), simple(EventKind::Discharge, d0 + 5), simple(EventKind::Death, d0 + 105)},
                          rules_until(d0 + 1000));
  REQUIRE(res.spells.size() == 2);
  CHECK(res.spells[1].transition == 4);
  CHECK(res.spells[1].duration == 100);

  res = build_spells({admit(d0), simple(EventKind::Discharge, d0 + 5), simple(EventKind::Death, d0 + 505)},
                     rules_until(d0 + 1000));
  REQUIRE(res.spells.size() == 2);
  CHECK(res.spells[1].censored());
  CHECK(res.spells[1].duration == 365);

  // Death on the discharge day counts as an in-hospital death.
  res = build_spells({admit(d0), simple(EventKind::Death, d0 + 5), simple(EventKind::Discharge, d0 + 5)},
                     rules_until(d0 + 1000));
  REQUIRE(res.spells.size() == 1);
  CHECK(res.spells[0].transition == 2);
}

TEST_CASE("same-day discharge and readmission gives a one-day home spell") {
  const auto res = build_spells({admit(d0), simple(EventKind::Discharge, d0 + 4), admit(d0 + 4),
                                 simple(EventKind::Discharge, d0 + 6)},
                                rules_until(d0 + 30));
  REQUIRE(res.spells.size() == 4);
  CHECK(res.spells[1].duration == 1);
  CHECK(res.spells[1].transition == 3);
}

TEST_CASE("overlapping stays exclude the patient") {
  const auto res = build_spells({admit(d0), admit(d0 + 2), simple(EventKind::Discharge, d0 + 5)},
                                rules_until(d0 + 100));
  CHECK(res.spells.empty());
  REQUIRE(res.exclusions.size() == 1);
  CHECK(res.exclusions[0].reason == "overlapping_stay");
}

TEST_CASE("within-day input order does not matter") {
  std::vector<RawEvent> ev = {admit(d0), simple(EventKind::Discharge, d0 + 4), admit(d0 + 4),
                              simple(EventKind::Discharge, d0 + 9)};
  std::vector<RawEvent> swapped = {ev[0], ev[2], ev[1], ev[3]};
  CHECK(build_spells(ev, rules_until(d0 + 50)).spells == build_spells(swapped, rules_until(d0 + 50)).spells);
}

TEST_CASE("spell CSV round trip is byte identical") {
  const auto dir = testing::scratch_dir("csv");
  const auto spells = testing::toy_spells(2000, 3);
  write_spell_csv(spells, dir / "a.csv");
  const auto back = load_spell_csv(dir / "a.csv");
  CHECK(back == spells);
  write_spell_csv(back, dir / "b.csv");
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
}

TEST_CASE("spell CSV errors are collected with row numbers") {
  const auto dir = testing::scratch_dir("csv_bad");
  const auto spells = testing::toy_spells(20, 4);
  write_spell_csv(spells, dir / "a.csv");
  std::string text = slurp(dir / "a.csv");
  // Break the duration of the first and third data rows.
  std::vector<std::string> lines;
  std::stringstream ss(text);
  for (std::string l; std::getline(ss, l);) lines.push_back(l);
  for (int row : {1, 3}) {
    auto& l = lines[static_cast<std::size_t>(row)];
    std::vector<std::string> f;
    std::stringstream ls(l);
    for (std::string x; std::getline(ls, x, ',');) f.push_back(x);
    if (l.back() == ',') f.emplace_back();
    f[4] = row == 1 ? "0" : "abc";
    l.clear();
    for (std::size_t i = 0; i < f.size(); ++i) l += (i ? "," : "") + f[i];
  }
  std::ofstream out(dir / "bad.csv");
  for (const auto& l : lines) out << l << "\n";
  out.close();
  try {
    load_spell_csv(dir / "bad.csv");
    FAIL("expected a CsvError");
  } catch (const CsvError& e) {
    REQUIRE(e.diagnostics().size() == 2);
    CHECK(e.diagnostics()[0].find(":2: ") != std::string::npos);
    CHECK(e.diagnostics()[1].find(":4: ") != std::string::npos);
  }
}

TEST_CASE("summary of a single discharge") {
  SpellRecord s;
  s.patient_id = "A";
  s.duration = 3;
  s.transition = 1;
  const auto sum = summarize({s});
  CHECK(sum.hospital_shares[0] == 1.0);
  CHECK(sum.stays == 1);
  CHECK_THROWS_AS(summarize({}), InputError);
}

TEST_CASE("ingest rules reject unknown keys") {
  CHECK_THROWS_AS(IngestRules::from_json({{"sample_end", "2000-01-01"}, {"bogus", 1}}), InputError);
}
