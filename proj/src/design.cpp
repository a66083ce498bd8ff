#include "msms/design.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_map>

#include <Eigen/LU>

namespace msms {

std::string mc_mode_name(McMode m) {
  switch (m) {
    case McMode::None: return "none";
    case McMode::Overall: return "overall";
    case McMode::BySpecialty: return "by_specialty";
    case McMode::ByExperience: return "by_experience";
  }
  return "?";
}

namespace {

McMode parse_mc_mode(const std::string& s) {
  if (s == "none") return McMode::None;
  if (s == "overall") return McMode::Overall;
  if (s == "by_specialty") return McMode::BySpecialty;
  if (s == "by_experience") return McMode::ByExperience;
  throw InputError("unknown mc_effect '" + s + "'");
}

const std::set<std::string> kControls = {"female", "age", "age_sq", "cci", "dept_size"};

nlohmann::json grid_to_json(const PiecewiseGrid& g) {
  nlohmann::json j;
  j["breaks"] = g.breaks;
  if (g.bounded()) {
    j["upper"] = g.upper;
  } else {
    j["upper"] = nullptr;
  }
  return j;
}

PiecewiseGrid grid_from_json(const nlohmann::json& j) {
  PiecewiseGrid g;
  for (const auto& [key, value] : j.items()) {
    if (key == "breaks") {
      g.breaks = value.get<std::vector<double>>();
    } else if (key == "upper") {
      g.upper = value.is_null() ? kInf : value.get<double>();
    } else {
      throw InputError("unknown key '" + key + "' in interval grid");
    }
  }
  g.validate();
  return g;
}

}  // namespace

ModelSpec ModelSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("model spec must be a JSON object");
  ModelSpec s;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "grids") {
        for (const auto& [tk, tv] : value.items()) {
          s.grids[index_of(transition_from_number(std::stoi(tk)))] = grid_from_json(tv);
        }
      } else if (key == "mc_effect") {
        s.mc_mode = parse_mc_mode(value.get<std::string>());
      } else if (key == "experience_bins") {
        s.experience_bins = value.get<std::vector<double>>();
        if (!std::is_sorted(s.experience_bins.begin(), s.experience_bins.end()) ||
            s.experience_bins.empty() || s.experience_bins.front() <= 0.0) {
          throw InputError("experience_bins must be positive and increasing");
        }
      } else if (key == "covariates") {
        s.covariates = value.get<std::vector<std::string>>();
        for (const auto& c : s.covariates) {
          if (!kControls.count(c)) throw InputError("unknown covariate '" + c + "'");
        }
      } else if (key == "specialty_dummies") {
        s.specialty_dummies = value.get<int>();
      } else if (key == "specialty_groups") {
        s.specialty_groups = value.get<std::vector<std::string>>();
      } else if (key == "hospital_dummies") {
        s.hospital_dummies = value.get<int>();
      } else if (key == "diagnosis_dummies") {
        s.diagnosis_dummies = value.get<bool>();
      } else if (key == "region_dummies") {
        s.region_dummies = value.get<bool>();
      } else if (key == "year_dummies") {
        s.year_dummies = value.get<bool>();
      } else if (key == "trends") {
        s.trends = value.get<bool>();
      } else if (key == "specialty_trends") {
        s.specialty_trends = value.get<bool>();
      } else if (key == "frailty") {
        s.frailty = value.get<bool>();
      } else if (key == "draws") {
        s.draws = value.get<int>();
        if (s.draws < 1) throw InputError("draws must be at least 1");
      } else if (key == "seed") {
        s.seed = value.get<std::uint64_t>();
      } else if (key == "draw_type") {
        const auto t = value.get<std::string>();
        if (t == "pseudo") {
          s.draw_type = DrawType::Pseudo;
        } else if (t == "antithetic") {
          s.draw_type = DrawType::Antithetic;
        } else {
          throw InputError("unknown draw_type '" + t + "'");
        }
      } else if (key == "sample_start") {
        s.sample_start = parse_date(value.get<std::string>());
      } else if (key == "covariate_clock") {
        const auto c = value.get<std::string>();
        if (c == "exit") {
          s.covariate_clock = CovariateClock::Exit;
        } else if (c == "entry") {
          s.covariate_clock = CovariateClock::Entry;
        } else {
          throw InputError("unknown covariate_clock '" + c + "'");
        }
      } else if (key == "pretrend") {
        for (const auto& [pk, pv] : value.items()) {
          if (pk == "cutoff") {
            s.pretrend.cutoff = parse_date(pv.get<std::string>());
          } else if (pk == "cubic") {
            s.pretrend.cubic = pv.get<bool>();
          } else if (pk == "min_events") {
            s.pretrend.min_events = pv.get<int>();
          } else {
            throw InputError("unknown key '" + pk + "' in pretrend");
          }
        }
      } else {
        throw InputError("unknown key '" + key + "' in model spec");
      }
    }
  } catch (const nlohmann::json::exception& ex) {
    throw InputError(std::string("model spec: ") + ex.what());
  } catch (const std::invalid_argument&) {
    throw InputError("model spec: grid keys must be transition numbers 1..4");
  }
  return s;
}

nlohmann::json ModelSpec::to_json() const {
  nlohmann::json j;
  for (auto r : kAllTransitions) {
    j["grids"][std::to_string(number_of(r))] = grid_to_json(grids[index_of(r)]);
  }
  j["mc_effect"] = mc_mode_name(mc_mode);
  j["experience_bins"] = experience_bins;
  j["covariates"] = covariates;
  j["specialty_dummies"] = specialty_dummies;
  j["specialty_groups"] = specialty_groups;
  j["hospital_dummies"] = hospital_dummies;
  j["diagnosis_dummies"] = diagnosis_dummies;
  j["region_dummies"] = region_dummies;
  j["year_dummies"] = year_dummies;
  j["trends"] = trends;
  j["specialty_trends"] = specialty_trends;
  j["frailty"] = frailty;
  j["draws"] = draws;
  j["seed"] = seed;
  j["draw_type"] = draw_type == DrawType::Pseudo ? "pseudo" : "antithetic";
  j["sample_start"] = format_date(sample_start);
  j["covariate_clock"] = covariate_clock == CovariateClock::Exit ? "exit" : "entry";
  j["pretrend"] = {{"cutoff", format_date(pretrend.cutoff)},
                   {"cubic", pretrend.cubic},
                   {"min_events", pretrend.min_events}};
  return j;
}

ModelSpec load_model_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw InputError(path.string() + ": " + ex.what());
  }
  return ModelSpec::from_json(j);
}

double covariate_time(const SpellRecord& s, CovariateClock clock) {
  return clock == CovariateClock::Exit ? s.exit_day() : s.entry_day;
}

double control_value(const SpellRecord& s, const std::string& name, double clock_time) {
  if (name == "female") return s.attr.female;
  if (name == "age") return (clock_time - s.attr.birth_date) / kDaysPerYear;
  if (name == "age_sq") {
    const double a = (clock_time - s.attr.birth_date) / kDaysPerYear / 150.0;
    return a * a;
  }
  if (name == "cci") return s.attr.cci;
  if (name == "dept_size") return s.attr.dept_size;
  throw InputError("unknown covariate '" + name + "'");
}

bool mc_active(const SpellRecord& s, double clock_time) {
  return s.attr.mc_adoption_date && static_cast<double>(*s.attr.mc_adoption_date) <= clock_time;
}

double mc_experience_years(const SpellRecord& s, double clock_time) {
  if (!s.attr.mc_adoption_date) return -1.0;
  return (clock_time - static_cast<double>(*s.attr.mc_adoption_date)) / kDaysPerYear;
}

bool TransitionDesign::treated(std::size_t i) const {
  for (int c : treatment_columns) {
    if (x(static_cast<Eigen::Index>(i), c) != 0.0) return true;
  }
  return false;
}

SpellView Design::spell_view(std::size_t s) const {
  const auto& rec = spells[s];
  SpellView v;
  v.origin = rec.origin;
  v.duration = rec.duration;
  v.realized = rec.realized();
  const auto out = transitions_from(rec.origin);
  for (std::size_t slot = 0; slot < 2; ++slot) {
    v.x[slot] = tr[index_of(out[slot])].row(static_cast<std::size_t>(spell_rows_[s][slot]));
  }
  return v;
}

namespace {

struct Categories {
  std::vector<std::string> names;  // category labels
  std::unordered_map<std::string, int> of_value;
  int reference = -1;
};

// Orders values by descending count (ties by value) and keeps the first
// `keep` as their own category; the rest pool into `pool_label`.
Categories top_categories(const std::map<std::string, std::size_t>& counts, int keep,
                          const std::string& pool_label) {
  std::vector<std::pair<std::string, std::size_t>> sorted(counts.begin(), counts.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Categories c;
  std::vector<std::size_t> sizes;
  const std::size_t k = keep < 0 ? sorted.size() : std::min<std::size_t>(keep, sorted.size());
  for (std::size_t i = 0; i < k; ++i) {
    c.of_value[sorted[i].first] = static_cast<int>(c.names.size());
    c.names.push_back(sorted[i].first);
    sizes.push_back(sorted[i].second);
  }
  if (k < sorted.size()) {
    std::size_t pooled = 0;
    for (std::size_t i = k; i < sorted.size(); ++i) {
      c.of_value[sorted[i].first] = static_cast<int>(c.names.size());
      pooled += sorted[i].second;
    }
    c.names.push_back(pool_label);
    sizes.push_back(pooled);
  }
  if (!sizes.empty()) {
    c.reference = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  }
  return c;
}

Categories explicit_categories(const std::vector<std::string>& groups,
                               const std::map<std::string, std::size_t>& counts) {
  Categories c;
  std::vector<std::size_t> sizes;
  for (const auto& g : groups) {
    if (!counts.count(g)) throw InputError("specialty group '" + g + "' does not occur in the data");
    c.of_value[g] = static_cast<int>(c.names.size());
    c.names.push_back(g);
    sizes.push_back(counts.at(g));
  }
  std::size_t pooled = 0;
  bool any_other = false;
  for (const auto& [value, n] : counts) {
    if (!c.of_value.count(value)) {
      any_other = true;
      pooled += n;
    }
  }
  if (any_other) {
    const int idx = static_cast<int>(c.names.size());
    for (const auto& [value, n] : counts) {
      if (!c.of_value.count(value)) c.of_value[value] = idx;
    }
    c.names.push_back("Others");
    sizes.push_back(pooled);
  }
  c.reference = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  return c;
}

std::string experience_label(const std::vector<double>& bins, std::size_t k) {
  auto fmt = [](double v) {
    std::string s = std::to_string(v);
    s.erase(s.find_last_not_of('0') + 1);
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
  };
  if (k == 0) return "mc:exp<" + fmt(bins[0]);
  if (k == bins.size()) return "mc:exp>=" + fmt(bins.back());
  return "mc:exp" + fmt(bins[k - 1]) + "-" + fmt(bins[k]);
}

// Column generator: named columns, each a function of a spell.
struct Column {
  std::string name;
  bool treatment = false;
  std::function<double(const SpellRecord&, double /*clock*/)> value;
};

struct PretrendSetup {
  bool enabled = false;
  std::array<bool, kNumTransitions> active{};
};

}  // namespace

// Shared by build_design and build_pretrend_design.
Design assemble_design(std::vector<SpellRecord> spells, const ModelSpec& spec, bool pretrend) {
  Design d;
  d.spec = spec;
  for (const auto& g : spec.grids) g.validate();

  // Group spells by patient, first-appearance order, then by spell index.
  {
    std::unordered_map<std::string, int> pos;
    std::vector<std::vector<SpellRecord>> grouped;
    for (auto& s : spells) {
      auto [it, inserted] = pos.try_emplace(s.patient_id, static_cast<int>(grouped.size()));
      if (inserted) {
        grouped.emplace_back();
        d.patients.push_back(s.patient_id);
      }
      grouped[static_cast<std::size_t>(it->second)].push_back(std::move(s));
    }
    for (auto& g : grouped) {
      std::stable_sort(g.begin(), g.end(), [](const SpellRecord& a, const SpellRecord& b) {
        return a.spell_index < b.spell_index;
      });
      const int begin = static_cast<int>(d.spells.size());
      for (auto& s : g) d.spells.push_back(std::move(s));
      d.patient_spells.emplace_back(begin, static_cast<int>(d.spells.size()));
    }
  }
  if (d.spells.empty()) throw InputError("no spells to build a design from");

  for (const auto& s : d.spells) {
    if (s.origin == StateId::Death) throw InputError("spell originating in death for " + s.patient_id);
    if (!(s.duration >= 1.0)) throw InputError("spell duration below 1 for " + s.patient_id);
  }

  // Category tables (counts over all spells).
  std::map<std::string, std::size_t> spec_counts, hosp_counts;
  std::set<int> diag_seen, region_seen, years_seen;
  for (const auto& s : d.spells) {
    ++spec_counts[s.attr.specialty];
    ++hosp_counts[s.attr.hospital_id];
    diag_seen.insert(s.attr.diagnosis_group);
    region_seen.insert(s.attr.region);
    years_seen.insert(year_of(static_cast<Day>(std::floor(covariate_time(s, spec.covariate_clock)))));
  }
  Categories specialties;
  if (!spec.specialty_groups.empty()) {
    specialties = explicit_categories(spec.specialty_groups, spec_counts);
  } else if (spec.specialty_dummies > 0) {
    specialties = top_categories(spec_counts, std::max(spec.specialty_dummies - 1, 1), "Others");
  } else {
    specialties = top_categories(spec_counts, -1, "Others");
  }
  d.specialty_categories = specialties.names;
  const bool specialty_block = spec.specialty_dummies > 0 || !spec.specialty_groups.empty();
  Categories hospitals = top_categories(hosp_counts, std::max(spec.hospital_dummies, 0), "other");

  std::vector<Column> cols;
  const auto clock = spec.covariate_clock;
  const Day start = spec.sample_start;
  const std::vector<double> bins = spec.experience_bins;

  if (!pretrend) {
    switch (spec.mc_mode) {
      case McMode::None: break;
      case McMode::Overall:
        cols.push_back({"mc", true, [](const SpellRecord& s, double t) {
                          return mc_active(s, t) ? 1.0 : 0.0;
                        }});
        break;
      case McMode::BySpecialty:
        for (std::size_t g = 0; g < specialties.names.size(); ++g) {
          const int gi = static_cast<int>(g);
          auto cats = specialties.of_value;
          cols.push_back({"mc:" + specialties.names[g], true,
                          [gi, cats](const SpellRecord& s, double t) {
                            return (mc_active(s, t) && cats.at(s.attr.specialty) == gi) ? 1.0 : 0.0;
                          }});
        }
        break;
      case McMode::ByExperience:
        for (std::size_t k = 0; k <= bins.size(); ++k) {
          cols.push_back({experience_label(bins, k), true, [k, bins](const SpellRecord& s, double t) {
                            if (!mc_active(s, t)) return 0.0;
                            const double y = mc_experience_years(s, t);
                            std::size_t b = 0;
                            while (b < bins.size() && y >= bins[b]) ++b;
                            return b == k ? 1.0 : 0.0;
                          }});
        }
        break;
    }
  }
  for (const auto& name : spec.covariates) {
    cols.push_back({name, false, [name](const SpellRecord& s, double t) {
                      return control_value(s, name, t);
                    }});
  }
  if (specialty_block) {
    for (std::size_t g = 0; g < specialties.names.size(); ++g) {
      if (static_cast<int>(g) == specialties.reference) continue;
      const int gi = static_cast<int>(g);
      auto cats = specialties.of_value;
      cols.push_back({"spec:" + specialties.names[g], false, [gi, cats](const SpellRecord& s, double) {
                        return cats.at(s.attr.specialty) == gi ? 1.0 : 0.0;
                      }});
    }
  }
  if (spec.hospital_dummies > 0) {
    for (std::size_t g = 0; g < hospitals.names.size(); ++g) {
      if (static_cast<int>(g) == hospitals.reference) continue;
      const int gi = static_cast<int>(g);
      auto cats = hospitals.of_value;
      cols.push_back({"hosp:" + hospitals.names[g], false, [gi, cats](const SpellRecord& s, double) {
                        return cats.at(s.attr.hospital_id) == gi ? 1.0 : 0.0;
                      }});
    }
  }
  if (spec.diagnosis_dummies) {
    for (int k : diag_seen) {
      if (k == 1) continue;
      cols.push_back({"diag:" + std::to_string(k), false, [k](const SpellRecord& s, double) {
                        return s.attr.diagnosis_group == k ? 1.0 : 0.0;
                      }});
    }
  }
  if (spec.region_dummies) {
    for (int k : region_seen) {
      if (k == 1) continue;
      cols.push_back({"region:" + std::to_string(k), false, [k](const SpellRecord& s, double) {
                        return s.attr.region == k ? 1.0 : 0.0;
                      }});
    }
  }
  if (spec.year_dummies) {
    const int first = year_of(start);
    for (int y : years_seen) {
      if (y <= first) continue;
      cols.push_back({"year:" + std::to_string(y), false, [y](const SpellRecord&, double t) {
                        return year_of(static_cast<Day>(std::floor(t))) == y ? 1.0 : 0.0;
                      }});
    }
  }
  if (spec.trends) {
    cols.push_back({"trend_q", false, [start](const SpellRecord&, double t) {
                      return static_cast<double>(quarter_index(t, start));
                    }});
    cols.push_back({"trend_q2", false, [start](const SpellRecord&, double t) {
                      const double q = quarter_index(t, start);
                      return q * q;
                    }});
  }
  if (spec.specialty_trends && specialty_block) {
    for (std::size_t g = 0; g < specialties.names.size(); ++g) {
      if (static_cast<int>(g) == specialties.reference) continue;
      const int gi = static_cast<int>(g);
      auto cats = specialties.of_value;
      cols.push_back({"spec_trend:" + specialties.names[g], false,
                      [gi, cats, start](const SpellRecord& s, double t) {
                        return cats.at(s.attr.specialty) == gi
                                   ? static_cast<double>(quarter_index(t, start))
                                   : 0.0;
                      }});
    }
  }
  std::vector<Column> pretrend_cols;
  if (pretrend) {
    const int powers = spec.pretrend.cubic ? 3 : 2;
    for (int p = 1; p <= powers; ++p) {
      const std::string name = p == 1 ? "pretrend_q" : "pretrend_q" + std::to_string(p);
      pretrend_cols.push_back({name, false, [p, start](const SpellRecord& s, double t) {
                                 if (!s.attr.mc_adoption_date) return 0.0;
                                 return std::pow(static_cast<double>(quarter_index(t, start)), p);
                               }});
    }
  }

  // Rows per transition.
  std::vector<std::array<int, 2>> spell_rows(d.spells.size(), {-1, -1});
  for (auto r : kAllTransitions) {
    auto& td = d.tr[index_of(r)];
    td.transition = r;
    const auto& grid = spec.grids[index_of(r)];
    std::vector<std::size_t> members;
    for (std::size_t s = 0; s < d.spells.size(); ++s) {
      if (d.spells[s].origin == origin_of(r)) members.push_back(s);
    }
    std::vector<Column> these = cols;
    if (pretrend) {
      std::size_t treated_events = 0;
      for (auto s : members) {
        const auto& rec = d.spells[s];
        if (rec.attr.mc_adoption_date && rec.transition == number_of(r)) ++treated_events;
      }
      if (treated_events >= static_cast<std::size_t>(std::max(spec.pretrend.min_events, 1))) {
        these.insert(these.end(), pretrend_cols.begin(), pretrend_cols.end());
      } else {
        d.warnings.push_back("transition " + std::to_string(number_of(r)) + ": only " +
                             std::to_string(treated_events) +
                             " treated events before the cutoff; parallel-trend test not run");
      }
    }
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> full(
        static_cast<Eigen::Index>(members.size()), static_cast<Eigen::Index>(these.size()));
    for (std::size_t i = 0; i < members.size(); ++i) {
      const auto& rec = d.spells[members[i]];
      const double t = covariate_time(rec, clock);
      for (std::size_t c = 0; c < these.size(); ++c) {
        full(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = these[c].value(rec, t);
      }
    }
    // Drop columns that are identically zero on this transition's rows.
    std::vector<Eigen::Index> keep;
    for (std::size_t c = 0; c < these.size(); ++c) {
      const auto col = full.col(static_cast<Eigen::Index>(c));
      if (members.empty() || col.cwiseAbs().maxCoeff() > 0.0) {
        keep.push_back(static_cast<Eigen::Index>(c));
      } else {
        d.warnings.push_back("transition " + std::to_string(number_of(r)) + ": column " +
                             these[c].name + " is all zero and was dropped");
      }
    }
    td.x.resize(full.rows(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t c = 0; c < keep.size(); ++c) {
      td.x.col(static_cast<Eigen::Index>(c)) = full.col(keep[c]);
      td.columns.push_back(these[static_cast<std::size_t>(keep[c])].name);
      if (these[static_cast<std::size_t>(keep[c])].treatment) {
        td.treatment_columns.push_back(static_cast<int>(c));
      }
    }
    td.duration.reserve(members.size());
    for (std::size_t i = 0; i < members.size(); ++i) {
      const auto s = members[i];
      const auto& rec = d.spells[s];
      td.duration.push_back(rec.duration);
      const bool ev = rec.transition == number_of(r);
      td.event.push_back(ev ? 1 : 0);
      td.spell.push_back(static_cast<int>(s));
      td.group.push_back(specialties.of_value.at(rec.attr.specialty));
      spell_rows[s][static_cast<std::size_t>(slot_of(r))] = static_cast<int>(i);
      // Interval holding the duration for Λ; clipped to the last one past
      // the horizon.
      int k = -1;
      for (std::size_t j = 0; j < grid.size(); ++j) {
        if (rec.duration >= grid.lower(j)) k = static_cast<int>(j);
      }
      if (ev && grid.interval_of(rec.duration) < 0) {
        throw InputError(rec.patient_id + " spell " + std::to_string(rec.spell_index) +
                         ": transition " + std::to_string(number_of(r)) + " at duration " +
                         std::to_string(rec.duration) + " lies outside the hazard support");
      }
      td.interval.push_back(k);
    }
  }
  // Patient index per row.
  std::vector<int> patient_of_spell(d.spells.size());
  for (std::size_t p = 0; p < d.patient_spells.size(); ++p) {
    for (int s = d.patient_spells[p].first; s < d.patient_spells[p].second; ++s) {
      patient_of_spell[static_cast<std::size_t>(s)] = static_cast<int>(p);
    }
  }
  for (auto& td : d.tr) {
    for (int s : td.spell) td.patient.push_back(patient_of_spell[static_cast<std::size_t>(s)]);
  }
  d.spell_rows_ = std::move(spell_rows);

  std::array<std::vector<std::string>, kNumTransitions> names;
  for (auto r : kAllTransitions) names[index_of(r)] = d.tr[index_of(r)].columns;
  d.layout = ParamLayout(spec.grids, names, spec.frailty);
  return d;
}

Design build_design(std::vector<SpellRecord> spells, const ModelSpec& spec) {
  return assemble_design(std::move(spells), spec, false);
}

Design build_pretrend_design(std::vector<SpellRecord> spells, const ModelSpec& spec) {
  // Spells are cut at the cutoff like an administrative sample end.
  const double cutoff = spec.pretrend.cutoff;
  std::vector<SpellRecord> kept;
  bool any_treated = false;
  for (auto& s : spells) {
    if (s.entry_day < spec.sample_start || s.entry_day > cutoff) continue;
    if (s.exit_day() > cutoff) {
      s.duration = std::max(1.0, cutoff - s.entry_day);
      s.transition = 0;
    }
    any_treated = any_treated || s.attr.mc_adoption_date.has_value();
    kept.push_back(std::move(s));
  }
  if (!any_treated) {
    throw InputError("no later-adopting department among spells before the cutoff " +
                     format_date(spec.pretrend.cutoff));
  }
  ModelSpec pre = spec;
  pre.mc_mode = McMode::None;
  return assemble_design(std::move(kept), pre, true);
}

std::vector<std::string> pretrend_coefficients(const Design& design, TransitionId r) {
  std::vector<std::string> out;
  for (const auto& c : design.at(r).columns) {
    if (c.rfind("pretrend_q", 0) == 0) {
      out.push_back("r" + std::to_string(number_of(r)) + ".beta." + c);
    }
  }
  return out;
}

std::vector<RankIssue> check_rank(const Design& design) {
  std::vector<RankIssue> issues;
  for (const auto& td : design.tr) {
    const auto n = td.x.rows();
    const auto p = td.x.cols();
    if (p == 0) continue;
    // Gram matrix of [1 | X] with unit-normalized columns.
    Eigen::MatrixXd z(n, p + 1);
    z.col(0).setOnes();
    z.rightCols(p) = td.x;
    Eigen::VectorXd norms = z.colwise().norm();
    for (Eigen::Index c = 0; c <= p; ++c) {
      if (norms[c] > 0) z.col(c) /= norms[c];
    }
    const Eigen::MatrixXd gram = z.transpose() * z;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(gram);
    lu.setThreshold(1e-10);
    if (lu.rank() == gram.rows()) continue;
    const Eigen::MatrixXd kernel = lu.kernel();
    for (Eigen::Index k = 0; k < kernel.cols(); ++k) {
      RankIssue issue{td.transition, {}};
      const double scale = kernel.col(k).cwiseAbs().maxCoeff();
      for (Eigen::Index c = 0; c <= p; ++c) {
        if (std::abs(kernel(c, k)) > 1e-6 * scale) {
          issue.columns.push_back(c == 0 ? "(baseline level)" : td.columns[static_cast<std::size_t>(c - 1)]);
        }
      }
      issues.push_back(std::move(issue));
    }
  }
  return issues;
}

}  // namespace msms
