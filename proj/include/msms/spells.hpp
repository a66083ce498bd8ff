#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msms/dates.hpp"
#include "msms/types.hpp"

namespace msms {

enum class EventKind { Admit, Discharge, Death };

std::string_view event_kind_name(EventKind k);

// One administrative record. Stay attributes are read from admission rows;
// discharge and death rows need only the id columns and the date.
struct RawEvent {
  std::string patient_id;
  EventKind kind = EventKind::Admit;
  Day date = 0;
  std::string department_id;
  std::string hospital_id;
  std::string specialty;
  std::string drg;
  int diagnosis_group = 1;  // 1..18, ICD-9 chapter groups
  int cci = 0;
  int female = 0;
  Day birth_date = 0;
  std::optional<Day> mc_adoption_date;  // of the department; nullopt = never adopts
  int region = 1;                       // 1..19
  double dept_size = 0.0;               // specialists in the department
};

// Attributes a spell inherits from its hospital stay. Home spells carry the
// attributes of the preceding stay.
struct SpellAttributes {
  int female = 0;
  Day birth_date = 0;
  int cci = 0;
  std::string department_id;
  std::string hospital_id;
  std::string specialty;
  std::string drg;
  int diagnosis_group = 1;
  int region = 1;
  double dept_size = 0.0;
  std::optional<Day> mc_adoption_date;

  bool operator==(const SpellAttributes&) const = default;
};

struct SpellRecord {
  std::string patient_id;
  int spell_index = 0;  // 0-based position within the patient
  StateId origin = StateId::Hospital;
  double entry_day = 0.0;  // clock time T₀, days since 1970-01-01
  double duration = 1.0;   // days, ≥ 1
  int transition = 0;      // realized transition 1..4, 0 when censored
  SpellAttributes attr;

  bool censored() const { return transition == 0; }
  std::optional<TransitionId> realized() const {
    if (transition == 0) return std::nullopt;
    return static_cast<TransitionId>(transition);
  }
  double exit_day() const { return entry_day + duration; }

  bool operator==(const SpellRecord&) const = default;
};

struct IngestRules {
  Day sample_start = parse_date("1996-01-01");
  Day sample_end = parse_date("2016-12-31");  // last observed day, inclusive
  int readmission_window = 30;
  int death_horizon = 365;

  static IngestRules from_json(const nlohmann::json& j);  // unknown keys rejected
  nlohmann::json to_json() const;
};

struct Exclusion {
  std::string patient_id;
  std::string reason;  // overlapping_stay, death_before_discharge, ...
  std::string detail;
};

struct IngestResult {
  std::vector<SpellRecord> spells;
  std::vector<Exclusion> exclusions;
};

// Turns raw events into spells. Events are grouped by patient (first
// appearance order) and sorted by (date, kind) with discharge < death <
// admit on the same day, so input order within a day does not matter.
//   * Hospital spell: admission to discharge (r=1) or death (r=2). Death on
//     the discharge day counts as in-hospital death. Open at the sample end:
//     censored.
//   * Home spell: readmission to the same department and DRG within the
//     readmission window (r=3); death within the death horizon (r=4);
//     otherwise censored at min(horizon, next admission, sample end).
//   * Durations below one day are raised to one day.
// Patients with inconsistent histories are excluded as a whole.
IngestResult build_spells(const std::vector<RawEvent>& events, const IngestRules& rules);

// Hard checks on the horizon rules; returns human-readable violations.
std::vector<std::string> check_horizon_rules(const std::vector<SpellRecord>& spells,
                                             const IngestRules& rules);

// CSV I/O. Column order is fixed (see README). Per-row problems are collected
// over the whole file and thrown together as a CsvError.
class CsvError : public InputError {
 public:
  explicit CsvError(std::vector<std::string> diagnostics);
  const std::vector<std::string>& diagnostics() const { return diagnostics_; }

 private:
  std::vector<std::string> diagnostics_;
};

extern const std::vector<std::string> kEventColumns;
extern const std::vector<std::string> kSpellColumns;

std::vector<RawEvent> load_event_csv(const std::filesystem::path& path);
void write_event_csv(const std::vector<RawEvent>& events, const std::filesystem::path& path);

std::vector<SpellRecord> load_spell_csv(const std::filesystem::path& path);
void write_spell_csv(const std::vector<SpellRecord>& spells, const std::filesystem::path& path);

void write_exclusions_jsonl(const std::vector<Exclusion>& exclusions,
                            const std::filesystem::path& path);

struct DurationStats {
  std::size_t n = 0;
  double mean = 0.0;
  double sd = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct SpellSummary {
  std::size_t stays = 0;
  std::size_t patients = 0;
  // Shares by origin: hospital {home, death, censored}, home {readmission, death, censored}.
  std::array<double, 3> hospital_shares{};
  std::array<double, 3> home_shares{};
  std::size_t hospital_spells = 0;
  std::size_t home_spells = 0;
  // Index 0..3 = transitions 1..4, index 4 = censored home spells.
  std::array<DurationStats, 5> duration{};
  std::array<double, 5> mean_female{};
  std::array<double, 5> mean_age{};
  std::array<double, 5> mean_cci{};
  std::array<double, 5> mean_mc{};

  nlohmann::json to_json() const;
  std::string to_text() const;
};

// Throws InputError on an empty list.
SpellSummary summarize(const std::vector<SpellRecord>& spells);

}  // namespace msms
