#include "msms/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "msms/model.hpp"
#include "msms/parallel.hpp"

namespace msms {

ScenarioSpec::ScenarioSpec() {
  // Daily rates calibrated so the transition shares match the reference
  // table (0.975/0.025 hospital, 0.020/0.031 home) under the effects below.
  truth.rates[0] = {0.0689, 0.103, 0.103, 0.0975, 0.0918, 0.0861, 0.0746, 0.0574, 0.0344};
  truth.rates[1] = {1.80e-4, 1.50e-4, 1.20e-4, 1.20e-4, 1.05e-4, 1.05e-4};
  truth.rates[2] = {3.87e-4, 3.39e-4, 2.91e-4, 2.66e-4, 2.42e-4, 2.18e-4, 2.18e-4, 1.94e-4, 1.94e-4};
  truth.rates[3] = {1.49e-5, 1.24e-5, 9.93e-6, 7.45e-6, 5.96e-6, 4.97e-6, 4.47e-6, 3.97e-6, 3.48e-6};
  //                mc     female  age     cci    dept_size
  truth.beta[0] = {-0.06, 0.05, -0.005, -0.08, 0.004};
  truth.beta[1] = {0.00, -0.10, 0.030, 0.15, -0.002};
  truth.beta[2] = {0.18, -0.05, 0.005, 0.10, 0.003};
  truth.beta[3] = {0.06, -0.15, 0.040, 0.20, -0.003};
}

namespace {

const std::set<std::string> kScenarioCovariates = {"mc", "female", "age", "age_sq", "cci",
                                                   "dept_size"};

std::string pad_id(const char* prefix, std::size_t i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, i);
  return buf;
}

template <typename F>
void for_keys(const nlohmann::json& j, const std::string& where, F&& f) {
  if (!j.is_object()) throw InputError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!f(key, value)) throw InputError("unknown key '" + key + "' in " + where);
  }
}

}  // namespace

ScenarioSpec ScenarioSpec::from_json(const nlohmann::json& j) {
  ScenarioSpec s;
  try {
    for_keys(j, "scenario", [&](const std::string& key, const nlohmann::json& v) {
      if (key == "patients") {
        s.patients = v.get<int>();
      } else if (key == "window_start") {
        s.window_start = parse_date(v.get<std::string>());
      } else if (key == "window_end") {
        s.window_end = parse_date(v.get<std::string>());
      } else if (key == "unrelated_admission_rate") {
        s.unrelated_admission_rate = v.get<double>();
      } else if (key == "daily") {
        s.daily = v.get<bool>();
      } else if (key == "seed") {
        s.seed = v.get<std::uint64_t>();
      } else if (key == "draws") {
        s.draws = v.get<int>();
      } else if (key == "frailty") {
        s.truth.frailty = v.get<bool>();
      } else if (key == "covariates") {
        s.truth.covariates = v.get<std::vector<std::string>>();
      } else if (key == "transitions") {
        for_keys(v, "transitions", [&](const std::string& tk, const nlohmann::json& tv) {
          int n = 0;
          try {
            n = std::stoi(tk);
          } catch (const std::exception&) {
            return false;
          }
          const int i = index_of(transition_from_number(n));
          auto& grid = s.truth.grids[i];
          for_keys(tv, "transition " + tk, [&](const std::string& k, const nlohmann::json& x) {
            if (k == "rates") {
              s.truth.rates[i] = x.get<std::vector<double>>();
            } else if (k == "beta") {
              s.truth.beta[i] = x.get<std::vector<double>>();
            } else if (k == "loading") {
              s.truth.loading[i] = x.get<double>();
            } else if (k == "pretrend_slope") {
              s.truth.pretrend_slope[i] = x.get<double>();
            } else if (k == "breaks") {
              grid.breaks = x.get<std::vector<double>>();
            } else if (k == "upper") {
              grid.upper = x.is_null() ? kInf : x.get<double>();
            } else {
              return false;
            }
            return true;
          });
          return true;
        });
      } else if (key == "departments") {
        auto& d = s.departments;
        for_keys(v, "departments", [&](const std::string& k, const nlohmann::json& x) {
          if (k == "count") d.count = x.get<int>();
          else if (k == "hospitals") d.hospitals = x.get<int>();
          else if (k == "specialties") d.specialties = x.get<std::vector<std::string>>();
          else if (k == "regions") d.regions = x.get<int>();
          else if (k == "treated_share") d.treated_share = x.get<double>();
          else if (k == "adoption_start") d.adoption_start = parse_date(x.get<std::string>());
          else if (k == "adoption_end") d.adoption_end = parse_date(x.get<std::string>());
          else if (k == "size_min") d.size_min = x.get<int>();
          else if (k == "size_max") d.size_max = x.get<int>();
          else return false;
          return true;
        });
      } else if (key == "population") {
        auto& p = s.population;
        for_keys(v, "population", [&](const std::string& k, const nlohmann::json& x) {
          if (k == "female_share") p.female_share = x.get<double>();
          else if (k == "age_mean") p.age_mean = x.get<double>();
          else if (k == "age_sd") p.age_sd = x.get<double>();
          else if (k == "age_min") p.age_min = x.get<double>();
          else if (k == "age_max") p.age_max = x.get<double>();
          else if (k == "cci_mean") p.cci_mean = x.get<double>();
          else if (k == "cci_max") p.cci_max = x.get<int>();
          else if (k == "drg_codes") p.drg_codes = x.get<int>();
          else return false;
          return true;
        });
      } else {
        return false;
      }
      return true;
    });
  } catch (const nlohmann::json::exception& ex) {
    throw InputError(std::string("scenario: ") + ex.what());
  }
  s.validate();
  return s;
}

nlohmann::json ScenarioSpec::to_json() const {
  nlohmann::json j;
  j["patients"] = patients;
  j["window_start"] = format_date(window_start);
  j["window_end"] = format_date(window_end);
  j["unrelated_admission_rate"] = unrelated_admission_rate;
  j["daily"] = daily;
  j["seed"] = seed;
  j["draws"] = draws;
  j["frailty"] = truth.frailty;
  j["covariates"] = truth.covariates;
  for (auto r : kAllTransitions) {
    const int i = index_of(r);
    const auto& g = truth.grids[i];
    j["transitions"][std::to_string(number_of(r))] = {
        {"breaks", g.breaks},
        {"upper", g.bounded() ? nlohmann::json(g.upper) : nlohmann::json(nullptr)},
        {"rates", truth.rates[i]},
        {"beta", truth.beta[i]},
        {"loading", truth.loading[i]},
        {"pretrend_slope", truth.pretrend_slope[i]}};
  }
  const auto& d = departments;
  j["departments"] = {{"count", d.count},
                      {"hospitals", d.hospitals},
                      {"specialties", d.specialties},
                      {"regions", d.regions},
                      {"treated_share", d.treated_share},
                      {"adoption_start", format_date(d.adoption_start)},
                      {"adoption_end", format_date(d.adoption_end)},
                      {"size_min", d.size_min},
                      {"size_max", d.size_max}};
  const auto& p = population;
  j["population"] = {{"female_share", p.female_share}, {"age_mean", p.age_mean},
                     {"age_sd", p.age_sd},             {"age_min", p.age_min},
                     {"age_max", p.age_max},           {"cci_mean", p.cci_mean},
                     {"cci_max", p.cci_max},           {"drg_codes", p.drg_codes}};
  return j;
}

void ScenarioSpec::validate() const {
  if (patients < 1) throw InputError("scenario needs at least one patient");
  if (window_end <= window_start) throw InputError("window_end must follow window_start");
  if (!(unrelated_admission_rate > 0.0)) throw InputError("unrelated_admission_rate must be positive");
  if (draws < 1) throw InputError("draws must be at least 1");
  for (const auto& c : truth.covariates) {
    if (!kScenarioCovariates.count(c)) throw InputError("unsupported scenario covariate '" + c + "'");
  }
  for (auto r : kAllTransitions) {
    const int i = index_of(r);
    truth.grids[i].validate();
    PiecewiseBaseline{truth.grids[i], truth.rates[i]}.validate();
    if (truth.beta[i].size() != truth.covariates.size()) {
      throw InputError("transition " + std::to_string(number_of(r)) + " has " +
                       std::to_string(truth.beta[i].size()) + " coefficients for " +
                       std::to_string(truth.covariates.size()) + " covariates");
    }
    if (!std::isfinite(truth.loading[i])) throw InputError("loadings must be finite");
  }
  if (!truth.grids[2].bounded() || !truth.grids[3].bounded()) {
    throw InputError("home transitions need bounded grids (readmission and death horizons)");
  }
  if (truth.grids[2].upper > truth.grids[3].upper) {
    throw InputError("readmission horizon exceeds the death horizon");
  }
  if (daily && (truth.grids[2].upper != std::floor(truth.grids[2].upper) ||
                truth.grids[3].upper != std::floor(truth.grids[3].upper))) {
    throw InputError("daily mode needs whole-day horizons");
  }
  const auto& d = departments;
  if (d.count < 1 || d.hospitals < 1 || d.regions < 1 || d.specialties.empty()) {
    throw InputError("department schedule needs departments, hospitals, regions and specialties");
  }
  if (d.adoption_end < d.adoption_start) throw InputError("adoption_end precedes adoption_start");
  if (d.size_max < d.size_min || d.size_min < 0) throw InputError("bad department size range");
  if (population.drg_codes < 2) throw InputError("need at least two DRG codes");
}

ModelParams ScenarioSpec::true_params() const {
  ModelParams p;
  p.grids = truth.grids;
  p.frailty = truth.frailty;
  for (auto r : kAllTransitions) {
    const int i = index_of(r);
    auto& t = p.tr[i];
    t.log_alpha.resize(static_cast<Eigen::Index>(truth.rates[i].size()));
    for (std::size_t k = 0; k < truth.rates[i].size(); ++k) {
      t.log_alpha[static_cast<Eigen::Index>(k)] = std::log(truth.rates[i][k]);
    }
    t.beta = Eigen::Map<const Eigen::VectorXd>(truth.beta[i].data(),
                                               static_cast<Eigen::Index>(truth.beta[i].size()));
    if (truth.frailty) {
      t.psi = psi_is_free(r) ? truth.loading[i] : 1.0;
      t.phi = psi_is_free(r) ? 1.0 : truth.loading[i];
    }
  }
  return p;
}

ModelSpec ScenarioSpec::model_spec() const {
  ModelSpec m;
  m.grids = truth.grids;
  const bool has_mc = std::find(truth.covariates.begin(), truth.covariates.end(), "mc") !=
                      truth.covariates.end();
  m.mc_mode = has_mc ? McMode::Overall : McMode::None;
  m.covariates.clear();
  for (const auto& c : truth.covariates) {
    if (c != "mc") m.covariates.push_back(c);
  }
  m.specialty_dummies = 0;
  m.hospital_dummies = 0;
  m.diagnosis_dummies = false;
  m.region_dummies = false;
  m.year_dummies = false;
  m.trends = false;
  m.specialty_trends = false;
  m.frailty = truth.frailty;
  m.draws = draws;
  m.seed = seed;
  m.sample_start = window_start;
  m.covariate_clock = CovariateClock::Entry;
  return m;
}

IngestRules ScenarioSpec::ingest_rules() const {
  IngestRules r;
  r.sample_start = window_start;
  r.sample_end = window_end;
  r.readmission_window = static_cast<int>(truth.grids[2].upper);
  r.death_horizon = static_cast<int>(truth.grids[3].upper);
  return r;
}

ScenarioSpec load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw InputError(path.string() + ": " + ex.what());
  }
  return ScenarioSpec::from_json(j);
}

Eigen::VectorXd truth_vector(const ScenarioSpec& scenario, const ParamLayout& layout) {
  const ModelParams p = scenario.true_params();
  Eigen::VectorXd out(static_cast<Eigen::Index>(layout.size()));
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& e = layout.entry(i);
    const int ti = index_of(e.transition);
    double v = 0.0;
    switch (e.block) {
      case Block::Baseline: {
        const auto k = static_cast<std::size_t>(std::stoul(e.name.substr(1))) - 1;
        if (k >= scenario.truth.rates[ti].size()) throw InputError("no true value for " + e.key());
        v = std::log(scenario.truth.rates[ti][k]);
        break;
      }
      case Block::Beta: {
        const auto& names = scenario.truth.covariates;
        auto it = std::find(names.begin(), names.end(), e.name);
        if (it == names.end()) throw InputError("no true value for " + e.key());
        v = scenario.truth.beta[ti][static_cast<std::size_t>(it - names.begin())];
        break;
      }
      case Block::Loading:
        if (!scenario.truth.frailty) {
          v = 0.0;
        } else {
          v = scenario.truth.loading[ti];
        }
        break;
    }
    out[static_cast<Eigen::Index>(i)] = v;
  }
  return out;
}

double scenario_covariate(const std::string& name, const SpellRecord& s, double t) {
  if (name == "mc") return mc_active(s, t) ? 1.0 : 0.0;
  return control_value(s, name, t);
}

double sample_latent(const PiecewiseBaseline& baseline, double k, Rng& rng) {
  const double target = -std::log(rng.uniform());
  const auto& g = baseline.grid;
  double cum = 0.0;
  for (std::size_t j = 0; j < g.size(); ++j) {
    const double h = k * baseline.rates[j];
    const double a = g.lower(j);
    const double w = g.upper_of(j) - a;
    if (h > 0.0 && cum + h * w >= target) return a + (target - cum) / h;
    cum += h * w;
  }
  return kInf;
}

SampledSpell sample_spell(StateId origin, const ModelParams& params,
                          const std::array<std::span<const double>, 2>& x, const Eps& eps,
                          Rng& rng) {
  const auto out = transitions_from(origin);
  if (out.empty()) throw InputError("cannot sample a spell out of the absorbing state");
  std::array<double, 2> k{};
  std::array<const PiecewiseGrid*, 2> grids{};
  std::array<const Eigen::VectorXd*, 2> log_rates{};
  std::vector<double> points;
  double horizon = 0.0;
  for (std::size_t s = 0; s < 2; ++s) {
    const auto r = out[s];
    k[s] = clamped_exp(linear_predictor(params, r, x[s]) + params.frailty_term(r, eps));
    grids[s] = &params.grids[index_of(r)];
    log_rates[s] = &params.at(r).log_alpha;
    for (double b : grids[s]->breaks) points.push_back(b);
    if (grids[s]->bounded()) points.push_back(grids[s]->upper);
    horizon = std::max(horizon, grids[s]->upper);
  }
  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());

  // Rate on the segment starting at t; nothing past a bounded horizon.
  auto rate_at = [&](std::size_t s, double t) {
    const int j = t < grids[s]->upper ? grids[s]->interval_of(t) : -1;
    return j < 0 ? 0.0 : k[s] * std::exp((*log_rates[s])[j]);
  };

  SampledSpell res;
  res.target = -std::log(rng.uniform());
  double cum = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double a = points[i];
    const double b = i + 1 < points.size() ? points[i + 1] : kInf;
    const double h0 = rate_at(0, a), h1 = rate_at(1, a);
    const double h = h0 + h1;
    if (h <= 0.0) continue;
    const double w = b - a;
    if (cum + h * w >= res.target) {
      res.duration = a + (res.target - cum) / h;
      res.realized = rng.uniform() * h < h0 ? out[0] : out[1];
      return res;
    }
    cum += h * w;
  }
  res.duration = horizon;
  return res;
}

std::vector<Department> make_departments(const ScenarioSpec& scenario) {
  const auto& d = scenario.departments;
  Rng rng(scenario.seed, "departments", "all");
  std::vector<Department> out;
  for (int i = 0; i < d.count; ++i) {
    Department dep;
    dep.id = pad_id("DEP", static_cast<std::size_t>(i), 3);
    dep.hospital = pad_id("H", static_cast<std::size_t>(i % d.hospitals), 2);
    dep.specialty = d.specialties[static_cast<std::size_t>(i) % d.specialties.size()];
    dep.region = 1 + i % d.regions;
    dep.size = d.size_min + static_cast<double>(rng.index(static_cast<std::size_t>(d.size_max - d.size_min + 1)));
    const bool treated = rng.uniform() < d.treated_share;
    const Day when = d.adoption_start +
                     static_cast<Day>(rng.index(static_cast<std::size_t>(d.adoption_end - d.adoption_start + 1)));
    if (treated) dep.adoption = when;
    out.push_back(std::move(dep));
  }
  return out;
}

namespace {

struct PatientOut {
  std::vector<SpellRecord> spells;
  std::vector<RawEvent> events;
  Eps eps;
};

// Chains spells for one patient. Continuous mode keeps real-valued clock
// times; daily mode floors event times to whole days so that the event
// stream reproduces the spells under the ingestion rules.
PatientOut simulate_patient(const ScenarioSpec& sc, const ModelParams& params,
                            const std::vector<Department>& deps, std::size_t index) {
  PatientOut out;
  const std::string id = pad_id("P", index, 7);
  Rng rng(sc.seed, "patient", id);
  const auto& pop = sc.population;
  const bool daily = sc.daily;
  const double start = sc.window_start;
  const double end = sc.window_end;
  const double death_h = sc.truth.grids[3].upper;

  SpellAttributes base;
  base.female = rng.uniform() < pop.female_share ? 1 : 0;
  const double age0 =
      std::clamp(pop.age_mean + pop.age_sd * rng.normal(), pop.age_min, pop.age_max);
  base.birth_date = static_cast<Day>(std::floor(start - age0 * kDaysPerYear));
  base.cci = std::min(rng.poisson(pop.cci_mean), pop.cci_max);
  out.eps = Eps{rng.normal(), rng.normal()};
  if (!sc.truth.frailty) out.eps = Eps{};

  auto stay_attributes = [&](const std::string& previous_drg) {
    SpellAttributes a = base;
    const auto& dep = deps[rng.index(deps.size())];
    a.department_id = dep.id;
    a.hospital_id = dep.hospital;
    a.specialty = dep.specialty;
    a.region = dep.region;
    a.dept_size = dep.size;
    a.mc_adoption_date = dep.adoption;
    std::size_t code = rng.index(static_cast<std::size_t>(pop.drg_codes));
    std::string drg = pad_id("DRG", code, 3);
    if (drg == previous_drg) {
      code = (code + 1) % static_cast<std::size_t>(pop.drg_codes);
      drg = pad_id("DRG", code, 3);
    }
    a.drg = drg;
    a.diagnosis_group = static_cast<int>(code % 18) + 1;
    return a;
  };

  auto to_clock = [&](double t) { return daily ? std::floor(t) : t; };

  auto rows_for = [&](const SpellRecord& s) {
    std::vector<double> row;
    for (const auto& name : sc.truth.covariates) row.push_back(scenario_covariate(name, s, s.entry_day));
    return row;
  };

  auto eta_shift = [&](const SpellRecord& s, TransitionId r) {
    const double slope = sc.truth.pretrend_slope[index_of(r)];
    if (slope == 0.0 || !s.attr.mc_adoption_date) return 0.0;
    return slope * quarter_index(s.entry_day, sc.window_start);
  };

  // Both transitions share the covariate row. The pre-trend drift enters
  // the log rates of a local parameter copy.
  auto draw = [&](const SpellRecord& s) {
    const auto row = rows_for(s);
    std::array<std::span<const double>, 2> x = {std::span<const double>(row),
                                                std::span<const double>(row)};
    const auto outs = transitions_from(s.origin);
    const double s0 = eta_shift(s, outs[0]), s1 = eta_shift(s, outs[1]);
    if (s0 == 0.0 && s1 == 0.0) return sample_spell(s.origin, params, x, out.eps, rng);
    ModelParams local = params;
    local.at(outs[0]).log_alpha.array() += s0;
    local.at(outs[1]).log_alpha.array() += s1;
    return sample_spell(s.origin, local, x, out.eps, rng);
  };

  auto push = [&](StateId origin, double entry, double duration, std::optional<TransitionId> r,
                  const SpellAttributes& attr) {
    SpellRecord s;
    s.patient_id = id;
    s.spell_index = static_cast<int>(out.spells.size());
    s.origin = origin;
    s.entry_day = entry;
    s.duration = duration;
    s.transition = r ? number_of(*r) : 0;
    s.attr = attr;
    out.spells.push_back(std::move(s));
  };

  auto event = [&](EventKind kind, double day, const SpellAttributes* attr) {
    if (!daily) return;
    RawEvent e;
    e.patient_id = id;
    e.kind = kind;
    e.date = static_cast<Day>(day);
    if (attr) {
      e.department_id = attr->department_id;
      e.hospital_id = attr->hospital_id;
      e.specialty = attr->specialty;
      e.drg = attr->drg;
      e.diagnosis_group = attr->diagnosis_group;
      e.cci = attr->cci;
      e.female = attr->female;
      e.birth_date = attr->birth_date;
      e.mc_adoption_date = attr->mc_adoption_date;
      e.region = attr->region;
      e.dept_size = attr->dept_size;
    }
    out.events.push_back(std::move(e));
  };

  // Censored spell cut by the window end; continuous spells shorter than one
  // day carry no likelihood information and are dropped.
  auto push_censored = [&](StateId origin, double entry, double duration,
                           const SpellAttributes& attr) {
    if (daily) {
      push(origin, entry, std::max(1.0, duration), std::nullopt, attr);
    } else if (duration >= 1.0) {
      push(origin, entry, duration, std::nullopt, attr);
    }
  };

  double t = to_clock(start + rng.uniform() * (end - start));
  SpellAttributes attr = stay_attributes("");
  event(EventKind::Admit, t, &attr);
  while (true) {
    // Hospital spell.
    SpellRecord probe;
    probe.origin = StateId::Hospital;
    probe.entry_day = t;
    probe.attr = attr;
    const auto hs = draw(probe);
    const double hd = daily ? std::floor(hs.duration) : hs.duration;
    if (!hs.realized || t + hd > end) {
      push_censored(StateId::Hospital, t, end - t, attr);
      break;
    }
    push(StateId::Hospital, t, hd, hs.realized, attr);
    const double d = t + hd;
    if (*hs.realized == TransitionId::HospitalToDeath) {
      event(EventKind::Death, d, nullptr);
      break;
    }
    event(EventKind::Discharge, d, nullptr);

    // Home spell with the unrelated-admission process competing.
    probe.origin = StateId::Home;
    probe.entry_day = d;
    const auto ms = draw(probe);
    const double u_gap = 1.0 + rng.exponential(sc.unrelated_admission_rate);
    const double event_at = ms.realized ? ms.duration : kInf;
    if (u_gap < event_at) {
      const double gap = daily ? std::floor(u_gap) : u_gap;
      if (d + gap > end) {
        push_censored(StateId::Home, d, std::min(end - d, death_h), attr);
        break;
      }
      push(StateId::Home, d, std::min(gap, death_h), std::nullopt, attr);
      t = d + gap;
      attr = stay_attributes(attr.drg);
      event(EventKind::Admit, t, &attr);
      continue;
    }
    const double md = daily ? std::floor(ms.duration) : ms.duration;
    if (d + md > end) {
      push_censored(StateId::Home, d, std::min(end - d, death_h), attr);
      break;
    }
    push(StateId::Home, d, md, ms.realized, attr);
    t = d + md;
    if (*ms.realized == TransitionId::HomeToDeath) {
      event(EventKind::Death, t, nullptr);
      break;
    }
    // Readmission to the same department with the same DRG.
    event(EventKind::Admit, t, &attr);
  }
  return out;
}

}  // namespace

Population simulate_population(const ScenarioSpec& scenario, int threads) {
  scenario.validate();
  Population pop;
  pop.departments = make_departments(scenario);
  const ModelParams params = scenario.true_params();
  const auto n = static_cast<std::size_t>(scenario.patients);
  constexpr std::size_t kBlock = 512;
  const std::size_t n_blocks = (n + kBlock - 1) / kBlock;
  std::vector<std::vector<PatientOut>> blocks(n_blocks);
  parallel_blocks(n_blocks, threads, [&](std::size_t b) {
    for (std::size_t i = b * kBlock; i < std::min(n, (b + 1) * kBlock); ++i) {
      blocks[b].push_back(simulate_patient(scenario, params, pop.departments, i));
    }
  });
  for (auto& block : blocks) {
    for (auto& p : block) {
      for (auto& s : p.spells) {
        pop.spells.push_back(std::move(s));
        pop.spell_eps.push_back(p.eps);
      }
      for (auto& e : p.events) pop.events.push_back(std::move(e));
    }
  }
  return pop;
}

nlohmann::json truth_json(const ScenarioSpec& scenario) {
  nlohmann::json j;
  j["scenario"] = scenario.to_json();
  j["rng"] = {{"name", std::string(kRngName)}, {"version", kRngVersion}};
  const auto spec = scenario.model_spec();
  j["model_spec"] = spec.to_json();
  // Flat truth keyed like the fitted coefficients of the matching spec.
  std::array<std::vector<std::string>, kNumTransitions> cols;
  for (auto r : kAllTransitions) {
    if (spec.mc_mode == McMode::Overall) cols[index_of(r)].push_back("mc");
    for (const auto& c : spec.covariates) cols[index_of(r)].push_back(c);
  }
  const ParamLayout layout(spec.grids, cols, spec.frailty);
  const auto v = truth_vector(scenario, layout);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    j["parameters"][layout.entry(i).key()] = v[static_cast<Eigen::Index>(i)];
  }
  return j;
}

void write_population(const Population& pop, const ScenarioSpec& scenario,
                      const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_spell_csv(pop.spells, dir / "spells.csv");
  if (scenario.daily) write_event_csv(pop.events, dir / "events.csv");
  {
    std::ofstream spec_out(dir / "model.json");
    if (!spec_out) throw InputError("cannot write " + (dir / "model.json").string());
    spec_out << scenario.model_spec().to_json().dump(2) << "\n";
  }
  {
    std::ofstream rules_out(dir / "rules.json");
    if (!rules_out) throw InputError("cannot write " + (dir / "rules.json").string());
    rules_out << scenario.ingest_rules().to_json().dump(2) << "\n";
  }
  std::ofstream out(dir / "truth.json");
  if (!out) throw InputError("cannot write " + (dir / "truth.json").string());
  auto j = truth_json(scenario);
  j["departments"] = nlohmann::json::array();
  for (const auto& d : pop.departments) {
    j["departments"].push_back(
        {{"id", d.id},
         {"hospital", d.hospital},
         {"specialty", d.specialty},
         {"region", d.region},
         {"size", d.size},
         {"adoption", d.adoption ? nlohmann::json(format_date(*d.adoption)) : nlohmann::json(nullptr)}});
  }
  out << j.dump(2) << "\n";
}

TransitionTable transition_table(const std::vector<SpellRecord>& spells) {
  std::array<double, 5> n{};
  double home = 0.0;
  for (const auto& s : spells) {
    if (s.transition >= 1) n[static_cast<std::size_t>(s.transition)] += 1.0;
    if (s.origin == StateId::Home) home += 1.0;
  }
  TransitionTable t;
  const double done = n[1] + n[2];
  if (done > 0) {
    t.hospital_home = n[1] / done;
    t.hospital_death = n[2] / done;
  }
  if (home > 0) {
    t.home_readmission = n[3] / home;
    t.home_death = n[4] / home;
    t.home_censored = 1.0 - t.home_readmission - t.home_death;
  }
  return t;
}

namespace {

// Cumulative incidences on [0, H] of the two transitions out of `origin`,
// with an extra competing constant hazard `extra` from day 1 on.
std::array<double, 2> incidence(const ModelParams& p, StateId origin, const std::array<double, 2>& k,
                                double extra, double horizon) {
  const auto outs = transitions_from(origin);
  std::vector<double> points = {1.0};
  for (auto r : outs) {
    const auto& g = p.grids[index_of(r)];
    for (double b : g.breaks) points.push_back(b);
    if (g.bounded()) points.push_back(g.upper);
  }
  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());
  std::array<double, 2> cif{};
  double cum = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double a = points[i];
    if (a >= horizon) break;
    const double b = std::min(i + 1 < points.size() ? points[i + 1] : kInf, horizon);
    std::array<double, 2> h{};
    for (std::size_t s = 0; s < 2; ++s) {
      const auto& g = p.grids[index_of(outs[s])];
      const int j = a < g.upper ? g.interval_of(a) : -1;
      h[s] = j < 0 ? 0.0 : k[s] * std::exp(p.at(outs[s]).log_alpha[j]);
    }
    const double tot = h[0] + h[1] + (a >= 1.0 ? extra : 0.0);
    if (tot <= 0.0) continue;
    const double mass = std::isinf(b) ? 1.0 : -std::expm1(-tot * (b - a));
    const double s_a = std::exp(-cum);
    for (std::size_t s = 0; s < 2; ++s) cif[s] += h[s] / tot * s_a * mass;
    cum += std::isinf(b) ? kInf : tot * (b - a);
  }
  return cif;
}

}  // namespace

TransitionTable expected_table(const ScenarioSpec& scenario, const Population& pop) {
  const ModelParams p = scenario.true_params();
  const double end = scenario.window_end;
  const double death_h = scenario.truth.grids[3].upper;
  double hosp_done = 0.0, h1 = 0.0, h2 = 0.0, home = 0.0, r3 = 0.0, r4 = 0.0;
  for (std::size_t i = 0; i < pop.spells.size(); ++i) {
    const auto& s = pop.spells[i];
    const auto outs = transitions_from(s.origin);
    std::array<double, 2> k{};
    for (std::size_t slot = 0; slot < 2; ++slot) {
      const auto r = outs[slot];
      std::vector<double> row;
      for (const auto& name : scenario.truth.covariates) row.push_back(scenario_covariate(name, s, s.entry_day));
      double shift = 0.0;
      if (scenario.truth.pretrend_slope[index_of(r)] != 0.0 && s.attr.mc_adoption_date) {
        shift = scenario.truth.pretrend_slope[index_of(r)] * quarter_index(s.entry_day, scenario.window_start);
      }
      k[slot] = std::exp(linear_predictor(p, r, row) + p.frailty_term(r, pop.spell_eps[i]) + shift);
    }
    if (s.origin == StateId::Hospital) {
      const auto c = incidence(p, s.origin, k, 0.0, end - s.entry_day);
      hosp_done += c[0] + c[1];
      h1 += c[0];
      h2 += c[1];
    } else {
      const auto c = incidence(p, s.origin, k, scenario.unrelated_admission_rate,
                               std::min(death_h, end - s.entry_day));
      home += 1.0;
      r3 += c[0];
      r4 += c[1];
    }
  }
  TransitionTable t;
  if (hosp_done > 0) {
    t.hospital_home = h1 / hosp_done;
    t.hospital_death = h2 / hosp_done;
  }
  if (home > 0) {
    t.home_readmission = r3 / home;
    t.home_death = r4 / home;
    t.home_censored = 1.0 - t.home_readmission - t.home_death;
  }
  return t;
}

ScenarioSpec calibrate_table1(ScenarioSpec scenario, const TransitionTable& target,
                              int pilot_patients, int iterations, int threads) {
  ScenarioSpec pilot = scenario;
  pilot.patients = pilot_patients;
  pilot.daily = false;
  pilot.seed = scenario.seed ^ 0x9e3779b97f4a7c15ULL;
  const std::array<double, kNumTransitions> goal = {target.hospital_home, target.hospital_death,
                                                    target.home_readmission, target.home_death};
  for (int it = 0; it < iterations; ++it) {
    const auto pop = simulate_population(pilot, threads);
    const auto e = expected_table(pilot, pop);
    const std::array<double, kNumTransitions> got = {e.hospital_home, e.hospital_death,
                                                     e.home_readmission, e.home_death};
    for (int i = 0; i < kNumTransitions; ++i) {
      if (!(got[i] > 0.0)) throw NumericalError("calibration reached a zero share");
      const double factor = goal[i] / got[i];
      for (auto& r : pilot.truth.rates[i]) r *= factor;
    }
  }
  scenario.truth.rates = pilot.truth.rates;
  return scenario;
}

}  // namespace msms
