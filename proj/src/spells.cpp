#include "msms/spells.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "csv.hpp"

namespace msms {

std::string_view event_kind_name(EventKind k) {
  switch (k) {
    case EventKind::Admit: return "admit";
    case EventKind::Discharge: return "discharge";
    case EventKind::Death: return "death";
  }
  return "?";
}

namespace {

EventKind parse_event_kind(std::string_view s) {
  if (s == "admit") return EventKind::Admit;
  if (s == "discharge") return EventKind::Discharge;
  if (s == "death") return EventKind::Death;
  throw std::invalid_argument("unknown event kind '" + std::string(s) + "'");
}

// Same-day ordering: a discharge closes the stay before a death or a new
// admission on that day.
int kind_rank(EventKind k) {
  switch (k) {
    case EventKind::Discharge: return 0;
    case EventKind::Death: return 1;
    case EventKind::Admit: return 2;
  }
  return 3;
}

SpellAttributes attributes_of(const RawEvent& admit) {
  return {admit.female,   admit.birth_date,      admit.cci,    admit.department_id,
          admit.hospital_id, admit.specialty,    admit.drg,    admit.diagnosis_group,
          admit.region,   admit.dept_size,       admit.mc_adoption_date};
}

double at_least_one(double days) { return days < 1.0 ? 1.0 : days; }

class PatientBuilder {
 public:
  PatientBuilder(const IngestRules& rules, std::string patient_id)
      : rules_(rules), id_(std::move(patient_id)) {}

  // Returns an exclusion reason or nothing.
  std::optional<Exclusion> run(std::vector<const RawEvent*>& events) {
    std::stable_sort(events.begin(), events.end(), [](const RawEvent* a, const RawEvent* b) {
      if (a->date != b->date) return a->date < b->date;
      return kind_rank(a->kind) < kind_rank(b->kind);
    });
    std::vector<const RawEvent*> in_window;
    for (const auto* e : events) {
      if (e->date >= rules_.sample_start && e->date <= rules_.sample_end) in_window.push_back(e);
    }
    for (std::size_t i = 0; i < in_window.size(); ++i) {
      const RawEvent& e = *in_window[i];
      switch (state_) {
        case State::Outside:
          if (e.kind == EventKind::Admit) {
            admit(e);
          } else if (e.kind == EventKind::Death) {
            state_ = State::Dead;
          }
          // A discharge before any in-window admission closes a stay that
          // began before the sample start; it is ignored.
          break;
        case State::InHospital:
          if (e.kind == EventKind::Admit) {
            return Exclusion{id_, "overlapping_stay",
                             "admission on " + format_date(e.date) + " during stay admitted " +
                                 format_date(stay_.date)};
          }
          if (e.kind == EventKind::Discharge) {
            const bool dies_same_day = i + 1 < in_window.size() &&
                                       in_window[i + 1]->kind == EventKind::Death &&
                                       in_window[i + 1]->date == e.date;
            if (dies_same_day) {
              close_hospital(e.date, TransitionId::HospitalToDeath);
              state_ = State::Dead;
              ++i;
            } else {
              close_hospital(e.date, TransitionId::HospitalToHome);
              state_ = State::AtHome;
              discharge_ = e.date;
            }
          } else {
            close_hospital(e.date, TransitionId::HospitalToDeath);
            state_ = State::Dead;
          }
          break;
        case State::AtHome:
          if (e.kind == EventKind::Discharge) {
            return Exclusion{id_, "discharge_without_admission",
                             "discharge on " + format_date(e.date) + " while at home"};
          }
          if (e.kind == EventKind::Admit) {
            const int days = e.date - discharge_;
            const bool readmission = days <= rules_.readmission_window &&
                                     e.department_id == stay_attr_.department_id &&
                                     e.drg == stay_attr_.drg;
            if (readmission) {
              push_home(at_least_one(days), TransitionId::HomeToReadmission);
            } else {
              push_home(at_least_one(std::min(days, rules_.death_horizon)), std::nullopt);
            }
            admit(e);
          } else {
            const int days = e.date - discharge_;
            if (days <= rules_.death_horizon) {
              push_home(at_least_one(days), TransitionId::HomeToDeath);
            } else {
              push_home(rules_.death_horizon, std::nullopt);
            }
            state_ = State::Dead;
          }
          break;
        case State::Dead: {
          const std::string reason = e.kind == EventKind::Discharge ? "death_before_discharge"
                                                                    : "events_after_death";
          return Exclusion{id_, reason,
                           std::string(event_kind_name(e.kind)) + " on " + format_date(e.date) +
                               " after death"};
        }
      }
    }
    if (state_ == State::InHospital) {
      push_hospital(at_least_one(rules_.sample_end - stay_.date), std::nullopt);
    } else if (state_ == State::AtHome) {
      const int days = std::min(rules_.sample_end - discharge_, rules_.death_horizon);
      push_home(at_least_one(days), std::nullopt);
    }
    return std::nullopt;
  }

  std::vector<SpellRecord> take() { return std::move(spells_); }

 private:
  enum class State { Outside, InHospital, AtHome, Dead };

  void admit(const RawEvent& e) {
    stay_ = e;
    stay_attr_ = attributes_of(e);
    state_ = State::InHospital;
  }

  void close_hospital(Day end, TransitionId r) {
    push_hospital(at_least_one(end - stay_.date), r);
  }

  void push_hospital(double duration, std::optional<TransitionId> r) {
    push(StateId::Hospital, stay_.date, duration, r);
  }

  void push_home(double duration, std::optional<TransitionId> r) {
    push(StateId::Home, discharge_, duration, r);
  }

  void push(StateId origin, Day entry, double duration, std::optional<TransitionId> r) {
    SpellRecord s;
    s.patient_id = id_;
    s.spell_index = static_cast<int>(spells_.size());
    s.origin = origin;
    s.entry_day = entry;
    s.duration = duration;
    s.transition = r ? number_of(*r) : 0;
    s.attr = stay_attr_;
    spells_.push_back(std::move(s));
  }

  const IngestRules& rules_;
  std::string id_;
  State state_ = State::Outside;
  RawEvent stay_;
  SpellAttributes stay_attr_;
  Day discharge_ = 0;
  std::vector<SpellRecord> spells_;
};

}  // namespace

IngestRules IngestRules::from_json(const nlohmann::json& j) {
  IngestRules r;
  for (const auto& [key, value] : j.items()) {
    if (key == "sample_start") {
      r.sample_start = parse_date(value.get<std::string>());
    } else if (key == "sample_end") {
      r.sample_end = parse_date(value.get<std::string>());
    } else if (key == "readmission_window") {
      r.readmission_window = value.get<int>();
    } else if (key == "death_horizon") {
      r.death_horizon = value.get<int>();
    } else {
      throw InputError("unknown key '" + key + "' in ingest rules");
    }
  }
  if (r.sample_end < r.sample_start) throw InputError("sample_end precedes sample_start");
  if (r.readmission_window < 1 || r.death_horizon < r.readmission_window) {
    throw InputError("horizons must satisfy 1 <= readmission_window <= death_horizon");
  }
  return r;
}

nlohmann::json IngestRules::to_json() const {
  return {{"sample_start", format_date(sample_start)},
          {"sample_end", format_date(sample_end)},
          {"readmission_window", readmission_window},
          {"death_horizon", death_horizon}};
}

IngestResult build_spells(const std::vector<RawEvent>& events, const IngestRules& rules) {
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<const RawEvent*>> by_patient;
  for (const auto& e : events) {
    auto [it, inserted] = by_patient.try_emplace(e.patient_id);
    if (inserted) order.push_back(e.patient_id);
    it->second.push_back(&e);
  }
  IngestResult result;
  for (const auto& id : order) {
    PatientBuilder builder(rules, id);
    auto& evs = by_patient[id];
    if (auto excl = builder.run(evs)) {
      result.exclusions.push_back(std::move(*excl));
      continue;
    }
    for (auto& s : builder.take()) result.spells.push_back(std::move(s));
  }
  return result;
}

std::vector<std::string> check_horizon_rules(const std::vector<SpellRecord>& spells,
                                             const IngestRules& rules) {
  std::vector<std::string> out;
  for (const auto& s : spells) {
    auto where = [&] {
      return s.patient_id + " spell " + std::to_string(s.spell_index) + ": ";
    };
    if (!(s.duration >= 1.0)) out.push_back(where() + "duration below 1 day");
    if (s.origin == StateId::Home) {
      if (s.transition == 3 && s.duration > rules.readmission_window) {
        out.push_back(where() + "readmission after the readmission window");
      }
      if (s.transition == 4 && s.duration > rules.death_horizon) {
        out.push_back(where() + "home death after the death horizon");
      }
      if (s.censored() && s.duration > rules.death_horizon) {
        out.push_back(where() + "censored home spell longer than the death horizon");
      }
      if (s.transition == 1 || s.transition == 2) {
        out.push_back(where() + "hospital transition recorded on a home spell");
      }
    } else if (s.transition == 3 || s.transition == 4) {
      out.push_back(where() + "home transition recorded on a hospital spell");
    }
  }
  return out;
}

CsvError::CsvError(std::vector<std::string> diagnostics)
    : InputError([&] {
        std::string msg = std::to_string(diagnostics.size()) + " CSV problem(s)";
        for (std::size_t i = 0; i < diagnostics.size() && i < 20; ++i) {
          msg += "\n  " + diagnostics[i];
        }
        return msg;
      }()),
      diagnostics_(std::move(diagnostics)) {}

const std::vector<std::string> kEventColumns = {
    "patient_id", "kind",   "date",   "department_id", "hospital_id",
    "specialty",  "drg",    "diagnosis_group", "cci",  "female",
    "birth_date", "mc_adoption_date", "region", "dept_size"};

const std::vector<std::string> kSpellColumns = {
    "patient_id", "spell_index", "origin", "entry_day", "duration",
    "transition", "female", "birth_date", "cci", "department_id",
    "hospital_id", "specialty", "drg", "diagnosis_group", "region",
    "dept_size", "mc_adoption_date"};

namespace {

std::optional<Day> parse_optional_date(std::string_view s) {
  if (s.empty()) return std::nullopt;
  return parse_date(s);
}

std::string format_optional_date(const std::optional<Day>& d) {
  return d ? format_date(*d) : std::string();
}

template <typename Row>
void read_rows(csv::Reader& reader, const std::filesystem::path& path, Row&& row) {
  std::vector<std::string> problems;
  while (reader.next()) {
    try {
      if (reader.fields() != reader.columns()) {
        throw std::invalid_argument("expected " + std::to_string(reader.columns()) +
                                    " fields, found " + std::to_string(reader.fields()));
      }
      row();
    } catch (const std::exception& ex) {
      problems.push_back(path.string() + ":" + std::to_string(reader.line_no()) + ": " +
                         ex.what());
    }
  }
  if (!problems.empty()) throw CsvError(std::move(problems));
}

}  // namespace

std::vector<RawEvent> load_event_csv(const std::filesystem::path& path) {
  csv::Reader reader(path, kEventColumns);
  std::vector<RawEvent> events;
  read_rows(reader, path, [&] {
    RawEvent e;
    e.patient_id = std::string(reader.get("patient_id"));
    if (e.patient_id.empty()) throw std::invalid_argument("empty patient_id");
    e.kind = parse_event_kind(reader.get("kind"));
    e.date = parse_date(reader.get("date"));
    if (e.kind == EventKind::Admit) {
      e.department_id = std::string(reader.get("department_id"));
      e.hospital_id = std::string(reader.get("hospital_id"));
      e.specialty = std::string(reader.get("specialty"));
      e.drg = std::string(reader.get("drg"));
      e.diagnosis_group = static_cast<int>(csv::parse_int(reader.get("diagnosis_group")));
      if (e.diagnosis_group < 1 || e.diagnosis_group > 18) {
        throw std::invalid_argument("diagnosis_group outside 1..18");
      }
      e.cci = static_cast<int>(csv::parse_int(reader.get("cci")));
      if (e.cci < 0) throw std::invalid_argument("negative cci");
      e.female = static_cast<int>(csv::parse_int(reader.get("female")));
      if (e.female != 0 && e.female != 1) throw std::invalid_argument("female must be 0 or 1");
      e.birth_date = parse_date(reader.get("birth_date"));
      e.mc_adoption_date = parse_optional_date(reader.get("mc_adoption_date"));
      e.region = static_cast<int>(csv::parse_int(reader.get("region")));
      e.dept_size = csv::parse_double(reader.get("dept_size"));
    }
    events.push_back(std::move(e));
  });
  return events;
}

void write_event_csv(const std::vector<RawEvent>& events, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  for (std::size_t i = 0; i < kEventColumns.size(); ++i) {
    out << (i ? "," : "") << kEventColumns[i];
  }
  out << '\n';
  for (const auto& e : events) {
    csv::check_field(e.patient_id, "patient_id");
    out << e.patient_id << ',' << event_kind_name(e.kind) << ',' << format_date(e.date) << ',';
    if (e.kind == EventKind::Admit) {
      csv::check_field(e.department_id, "department_id");
      csv::check_field(e.hospital_id, "hospital_id");
      csv::check_field(e.specialty, "specialty");
      csv::check_field(e.drg, "drg");
      out << e.department_id << ',' << e.hospital_id << ',' << e.specialty << ',' << e.drg << ','
          << e.diagnosis_group << ',' << e.cci << ',' << e.female << ','
          << format_date(e.birth_date) << ',' << format_optional_date(e.mc_adoption_date) << ','
          << e.region << ',' << csv::format_double(e.dept_size);
    } else {
      out << ",,,,,,,,,,";
    }
    out << '\n';
  }
}

std::vector<SpellRecord> load_spell_csv(const std::filesystem::path& path) {
  csv::Reader reader(path, kSpellColumns);
  std::vector<SpellRecord> spells;
  read_rows(reader, path, [&] {
    SpellRecord s;
    s.patient_id = std::string(reader.get("patient_id"));
    if (s.patient_id.empty()) throw std::invalid_argument("empty patient_id");
    s.spell_index = static_cast<int>(csv::parse_int(reader.get("spell_index")));
    s.origin = parse_state(reader.get("origin"));
    if (s.origin == StateId::Death) throw std::invalid_argument("spell cannot start in death");
    s.entry_day = csv::parse_double(reader.get("entry_day"));
    s.duration = csv::parse_double(reader.get("duration"));
    if (!(s.duration >= 1.0)) {
      throw std::invalid_argument("duration " + std::string(reader.get("duration")) +
                                  " is below 1 day");
    }
    s.transition = static_cast<int>(csv::parse_int(reader.get("transition")));
    if (s.transition < 0 || s.transition > 4) {
      throw std::invalid_argument("transition outside 0..4");
    }
    if (s.transition != 0 && origin_of(static_cast<TransitionId>(s.transition)) != s.origin) {
      throw std::invalid_argument("transition " + std::to_string(s.transition) +
                                  " does not leave state " + std::string(state_name(s.origin)));
    }
    auto& a = s.attr;
    a.female = static_cast<int>(csv::parse_int(reader.get("female")));
    if (a.female != 0 && a.female != 1) throw std::invalid_argument("female must be 0 or 1");
    a.birth_date = parse_date(reader.get("birth_date"));
    a.cci = static_cast<int>(csv::parse_int(reader.get("cci")));
    if (a.cci < 0) throw std::invalid_argument("negative cci");
    a.department_id = std::string(reader.get("department_id"));
    a.hospital_id = std::string(reader.get("hospital_id"));
    a.specialty = std::string(reader.get("specialty"));
    a.drg = std::string(reader.get("drg"));
    a.diagnosis_group = static_cast<int>(csv::parse_int(reader.get("diagnosis_group")));
    if (a.diagnosis_group < 1 || a.diagnosis_group > 18) {
      throw std::invalid_argument("diagnosis_group outside 1..18");
    }
    a.region = static_cast<int>(csv::parse_int(reader.get("region")));
    a.dept_size = csv::parse_double(reader.get("dept_size"));
    a.mc_adoption_date = parse_optional_date(reader.get("mc_adoption_date"));
    spells.push_back(std::move(s));
  });
  return spells;
}

void write_spell_csv(const std::vector<SpellRecord>& spells, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  for (std::size_t i = 0; i < kSpellColumns.size(); ++i) {
    out << (i ? "," : "") << kSpellColumns[i];
  }
  out << '\n';
  for (const auto& s : spells) {
    const auto& a = s.attr;
    csv::check_field(s.patient_id, "patient_id");
    csv::check_field(a.department_id, "department_id");
    csv::check_field(a.hospital_id, "hospital_id");
    csv::check_field(a.specialty, "specialty");
    csv::check_field(a.drg, "drg");
    out << s.patient_id << ',' << s.spell_index << ',' << state_name(s.origin) << ','
        << csv::format_double(s.entry_day) << ',' << csv::format_double(s.duration) << ','
        << s.transition << ',' << a.female << ',' << format_date(a.birth_date) << ',' << a.cci
        << ',' << a.department_id << ',' << a.hospital_id << ',' << a.specialty << ',' << a.drg
        << ',' << a.diagnosis_group << ',' << a.region << ',' << csv::format_double(a.dept_size)
        << ',' << format_optional_date(a.mc_adoption_date) << '\n';
  }
}

void write_exclusions_jsonl(const std::vector<Exclusion>& exclusions,
                            const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& e : exclusions) {
    out << nlohmann::json{{"patient_id", e.patient_id}, {"reason", e.reason}, {"detail", e.detail}}
               .dump()
        << '\n';
  }
}

namespace {

class Moments {
 public:
  void add(double x) {
    ++n_;
    const double d = x - mean_;
    mean_ += d / static_cast<double>(n_);
    m2_ += d * (x - mean_);
    min_ = n_ == 1 ? x : std::min(min_, x);
    max_ = n_ == 1 ? x : std::max(max_, x);
  }
  DurationStats stats() const {
    DurationStats s;
    s.n = n_;
    s.mean = mean_;
    s.sd = n_ > 1 ? std::sqrt(m2_ / static_cast<double>(n_ - 1)) : 0.0;
    s.min = min_;
    s.max = max_;
    return s;
  }

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0, m2_ = 0.0, min_ = 0.0, max_ = 0.0;
};

}  // namespace

SpellSummary summarize(const std::vector<SpellRecord>& spells) {
  if (spells.empty()) throw InputError("cannot summarize an empty spell list");
  SpellSummary out;
  out.stays = spells.size();
  std::array<Moments, 5> dur;
  std::array<double, 5> female{}, age{}, cci{}, mc{};
  std::array<std::size_t, 3> hosp{}, home{};
  std::unordered_map<std::string, bool> patients;
  for (const auto& s : spells) {
    patients.emplace(s.patient_id, true);
    int slot = 0;
    if (s.origin == StateId::Hospital) {
      ++out.hospital_spells;
      slot = s.transition == 0 ? -1 : s.transition - 1;
      ++hosp[s.transition == 0 ? 2 : static_cast<std::size_t>(s.transition - 1)];
    } else {
      ++out.home_spells;
      slot = s.transition == 0 ? 4 : s.transition - 1;
      ++home[s.transition == 0 ? 2 : static_cast<std::size_t>(s.transition - 3)];
    }
    if (slot < 0) continue;
    const auto k = static_cast<std::size_t>(slot);
    dur[k].add(s.duration);
    female[k] += s.attr.female;
    age[k] += (s.exit_day() - s.attr.birth_date) / kDaysPerYear;
    cci[k] += s.attr.cci;
    mc[k] += (s.attr.mc_adoption_date && *s.attr.mc_adoption_date <= s.exit_day()) ? 1.0 : 0.0;
  }
  out.patients = patients.size();
  for (std::size_t k = 0; k < 3; ++k) {
    out.hospital_shares[k] = out.hospital_spells
                                 ? static_cast<double>(hosp[k]) / out.hospital_spells
                                 : 0.0;
    out.home_shares[k] =
        out.home_spells ? static_cast<double>(home[k]) / out.home_spells : 0.0;
  }
  for (std::size_t k = 0; k < 5; ++k) {
    out.duration[k] = dur[k].stats();
    const double n = static_cast<double>(out.duration[k].n);
    if (n > 0) {
      out.mean_female[k] = female[k] / n;
      out.mean_age[k] = age[k] / n;
      out.mean_cci[k] = cci[k] / n;
      out.mean_mc[k] = mc[k] / n;
    }
  }
  return out;
}

nlohmann::json SpellSummary::to_json() const {
  nlohmann::json j;
  j["stays"] = stays;
  j["patients"] = patients;
  j["transition_shares"] = {
      {"hospital", {{"home", hospital_shares[0]}, {"death", hospital_shares[1]},
                    {"censored", hospital_shares[2]}, {"spells", hospital_spells}}},
      {"home", {{"readmission", home_shares[0]}, {"death", home_shares[1]},
                {"censored", home_shares[2]}, {"spells", home_spells}}}};
  static const char* labels[] = {"1", "2", "3", "4", "home_censored"};
  for (std::size_t k = 0; k < 5; ++k) {
    const auto& d = duration[k];
    j["by_outcome"][labels[k]] = {{"n", d.n},          {"duration_mean", d.mean},
                                  {"duration_sd", d.sd}, {"duration_min", d.min},
                                  {"duration_max", d.max}, {"female", mean_female[k]},
                                  {"age", mean_age[k]},  {"cci", mean_cci[k]},
                                  {"mc", mean_mc[k]}};
  }
  return j;
}

std::string SpellSummary::to_text() const {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(3);
  os << "Transition shares\n"
     << "             Home   Re-admission  Death  Censored\n"
     << "Hospital     " << hospital_shares[0] << "               " << hospital_shares[1] << "  "
     << hospital_shares[2] << "\n"
     << "Home                " << home_shares[0] << "         " << home_shares[1] << "  "
     << home_shares[2] << "\n\n";
  os.precision(2);
  static const char* labels[] = {"Ad(RAd) -> Home", "Ad(RAd) -> Death", "Home -> RAd",
                                 "Home -> Death", "Home censored"};
  os << "Outcome            n        mean     sd       min   max     female  age    cci   mc\n";
  for (std::size_t k = 0; k < 5; ++k) {
    const auto& d = duration[k];
    os << labels[k] << std::string(19 - std::string(labels[k]).size(), ' ') << d.n << "  "
       << d.mean << "  " << d.sd << "  " << d.min << "  " << d.max << "  " << mean_female[k]
       << "  " << mean_age[k] << "  " << mean_cci[k] << "  " << mean_mc[k] << "\n";
  }
  os << "\nStays: " << stays << "  Patients: " << patients << "\n";
  return os.str();
}

}  // namespace msms
