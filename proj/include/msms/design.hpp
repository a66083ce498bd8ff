#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <span>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "msms/model.hpp"
#include "msms/params.hpp"
#include "msms/spells.hpp"

namespace msms {

enum class McMode { None, Overall, BySpecialty, ByExperience };

// When covariates are evaluated: on leaving the state (exit, the default) or
// on entering it.
enum class CovariateClock { Exit, Entry };

enum class DrawType { Pseudo, Antithetic };

struct PretrendOptions {
  Day cutoff = parse_date("1999-08-31");
  bool cubic = false;
  int min_events = 20;  // treated events per transition below which the test is NA
};

// Model configuration. Serialized as JSON; unknown keys are rejected.
struct ModelSpec {
  std::array<PiecewiseGrid, kNumTransitions> grids = {
      default_grid(TransitionId::HospitalToHome), default_grid(TransitionId::HospitalToDeath),
      default_grid(TransitionId::HomeToReadmission), default_grid(TransitionId::HomeToDeath)};

  McMode mc_mode = McMode::Overall;
  std::vector<double> experience_bins = {2.0, 5.0, 10.0};  // years; bins <2, 2-4, 5-9, >=10

  // Scalar controls, any of: female, age, age_sq, cci, dept_size.
  std::vector<std::string> covariates = {"female", "age", "age_sq", "cci", "dept_size"};

  int specialty_dummies = 12;  // K^D categories: largest K^D-1 specialties + "Others"
  std::vector<std::string> specialty_groups;  // explicit categories; overrides the count
  int hospital_dummies = 10;                  // K^I largest hospitals
  bool diagnosis_dummies = true;
  bool region_dummies = true;
  bool year_dummies = true;
  bool trends = true;            // linear + quadratic quarterly trend
  bool specialty_trends = false; // specialty x linear trend

  bool frailty = true;
  int draws = 100;
  std::uint64_t seed = 1;
  DrawType draw_type = DrawType::Pseudo;

  Day sample_start = parse_date("1996-01-01");
  CovariateClock covariate_clock = CovariateClock::Exit;
  PretrendOptions pretrend;

  static ModelSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

ModelSpec load_model_spec(const std::filesystem::path& path);

// Covariate rows of one transition. Rows are the spells leaving origin_of(r)
// in patient-grouped order.
struct TransitionDesign {
  TransitionId transition = TransitionId::HospitalToHome;
  std::vector<std::string> columns;
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> x;
  std::vector<double> duration;
  std::vector<unsigned char> event;  // 1 when the row's spell realized this transition
  std::vector<int> patient;          // index into Design::patients
  std::vector<int> spell;            // index into Design::spells
  std::vector<int> interval;         // baseline interval of the duration, -1 outside
  std::vector<int> treatment_columns;  // MC columns (θ block)
  std::vector<int> group;              // specialty category per row (index into Design::specialty_categories)

  std::size_t rows() const { return duration.size(); }
  std::span<const double> row(std::size_t i) const {
    return {x.data() + static_cast<Eigen::Index>(i) * x.cols(), static_cast<std::size_t>(x.cols())};
  }
  // Any treatment column nonzero.
  bool treated(std::size_t i) const;
};

struct RankIssue {
  TransitionId transition;
  std::vector<std::string> columns;  // columns involved in a null-space direction
};

struct Design {
  ModelSpec spec;
  std::vector<SpellRecord> spells;      // grouped by patient
  std::vector<std::string> patients;    // first-appearance order
  std::vector<std::pair<int, int>> patient_spells;  // [begin, end) into spells
  std::array<TransitionDesign, kNumTransitions> tr;
  std::vector<std::string> specialty_categories;
  ParamLayout layout;
  std::vector<std::string> warnings;

  const TransitionDesign& at(TransitionId r) const { return tr[index_of(r)]; }

  // Model-core view of spell `s` (rows must outlive the view).
  SpellView spell_view(std::size_t s) const;

 private:
  friend Design assemble_design(std::vector<SpellRecord>, const ModelSpec&, bool);
  std::vector<std::array<int, 2>> spell_rows_;  // row index per slot
};

// Builds per-transition covariate rows and the parameter layout.
// Errors: unknown specialty in an explicit group list.
Design build_design(std::vector<SpellRecord> spells, const ModelSpec& spec);

// Pre-reform variant: keeps spells whose exit clock precedes the cutoff,
// drops the MC level block and adds later-adopter x quarter interactions
// (pretrend_q, pretrend_q2[, pretrend_q3]). Transitions with fewer than
// spec.pretrend.min_events treated events keep no interaction columns.
// Throws InputError when no later-adopting department is present.
Design build_pretrend_design(std::vector<SpellRecord> spells, const ModelSpec& spec);

// Names of the pre-trend interaction coefficients present for `r` (empty
// when the test cannot be run for that transition).
std::vector<std::string> pretrend_coefficients(const Design& design, TransitionId r);

// Rank check of [1 | X] for every transition; reports the columns spanning
// each null-space direction.
std::vector<RankIssue> check_rank(const Design& design);

// Clock time at which covariates are evaluated for a spell.
double covariate_time(const SpellRecord& s, CovariateClock clock);

// Scalar control value ("female", "age", "age_sq", "cci", "dept_size").
double control_value(const SpellRecord& s, const std::string& name, double clock_time);

// MC(T): department adopted on or before T.
bool mc_active(const SpellRecord& s, double clock_time);

// Years under MC at T (negative when not adopted).
double mc_experience_years(const SpellRecord& s, double clock_time);

std::string mc_mode_name(McMode m);

}  // namespace msms
