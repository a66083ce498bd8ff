// Command-line front end: ingest, fit, att, trend-test, simulate, summarize.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "manifest.hpp"
#include "msms/att.hpp"
#include "msms/design.hpp"
#include "msms/estimation.hpp"
#include "msms/parallel.hpp"
#include "msms/simulator.hpp"
#include "msms/spells.hpp"
#include "msms/trend.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace msms::cli {
namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitNotConverged = 3;
constexpr int kExitNumerical = 4;

std::string g_command = "msms";

void diag(const std::string& level, const std::string& message, json extra = json::object()) {
  extra["level"] = level;
  extra["command"] = g_command;
  extra["message"] = message;
  std::cerr << extra.dump() << "\n";
}

struct Common {
  std::optional<int> draws;
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::string out;
};

RunManifest start_manifest(const std::string& command, int argc, char** argv) {
  RunManifest m;
  m.command = command;
  m.argv.assign(argv, argv + argc);
  m.started = utc_timestamp();
  return m;
}

void add_output(RunManifest& m, const fs::path& p) { m.outputs.push_back(p.string()); }

void print_fit_summary(const FitResult& f) {
  std::printf("loglik %.6f  iterations %d  converged %s\n", f.loglik, f.iterations,
              f.converged ? "yes" : "no");
  std::printf("%-28s %14s %12s\n", "parameter", "estimate", "se");
  for (std::size_t i = 0; i < f.layout.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    std::printf("%-28s %14.6f %12.6f\n", f.layout.entry(i).key().c_str(), f.estimate[k], f.se[k]);
  }
}

FitOptions fit_options(const Common& c, int max_iter, double tol) {
  FitOptions o;
  o.threads = c.threads;
  o.max_iter = max_iter;
  o.tol = tol;
  o.on_iteration = [](int it, double f, double g) {
    diag("info", "iteration", {{"iteration", it}, {"loglik", f}, {"gradient_supnorm", g}});
  };
  return o;
}

ModelSpec resolve_spec(const fs::path& path, const Common& c) {
  ModelSpec spec = load_model_spec(path);
  if (c.draws) spec.draws = *c.draws;
  if (c.seed) spec.seed = *c.seed;
  return spec;
}

int cmd_ingest(const fs::path& events_path, const std::optional<fs::path>& rules_path,
               const Common& c, RunManifest& m) {
  IngestRules rules;
  if (rules_path) {
    std::ifstream in(*rules_path);
    if (!in) throw InputError("cannot open " + rules_path->string());
    json j;
    try {
      in >> j;
    } catch (const json::exception& ex) {
      throw InputError(rules_path->string() + ": " + ex.what());
    }
    rules = IngestRules::from_json(j);
    m.add_input(*rules_path, "rules");
  }
  m.add_input(events_path, "events");
  m.options["rules"] = rules.to_json();
  const auto events = load_event_csv(events_path);
  const auto res = build_spells(events, rules);
  const fs::path out = c.out;
  fs::create_directories(out);
  write_spell_csv(res.spells, out / "spells.csv");
  write_exclusions_jsonl(res.exclusions, out / "exclusions.jsonl");
  add_output(m, out / "spells.csv");
  add_output(m, out / "exclusions.jsonl");
  for (const auto& v : check_horizon_rules(res.spells, rules)) diag("error", v);
  for (const auto& e : res.exclusions) {
    diag("error", "patient excluded",
         {{"patient_id", e.patient_id}, {"reason", e.reason}, {"detail", e.detail}});
  }
  std::printf("events %zu  spells %zu  excluded patients %zu\n", events.size(),
              res.spells.size(), res.exclusions.size());
  return res.exclusions.empty() ? kExitOk : kExitInput;
}

int cmd_fit(const fs::path& spells_path, const fs::path& model_path, const Common& c,
            int max_iter, double tol, RunManifest& m) {
  m.add_input(spells_path, "spells");
  m.add_input(model_path, "model");
  const ModelSpec spec = resolve_spec(model_path, c);
  m.seeds["frailty"] = spec.seed;
  m.options = {{"draws", spec.draws}, {"threads", c.threads}, {"max_iter", max_iter},
               {"tol", tol}, {"model", spec.to_json()}};
  const Design design = build_design(load_spell_csv(spells_path), spec);
  for (const auto& w : design.warnings) diag("warning", w);
  for (const auto& issue : check_rank(design)) {
    diag("warning", "rank deficient design",
         {{"transition", number_of(issue.transition)}, {"columns", issue.columns}});
  }
  const FitResult f = fit(design, fit_options(c, max_iter, tol));
  for (const auto& d : f.diagnostics) diag("warning", d);
  const fs::path out = c.out;
  f.write(out);
  for (const char* name : {"fit.json", "coefficients.csv", "covariance.bin"}) {
    if (fs::exists(out / name)) add_output(m, out / name);
  }
  print_fit_summary(f);
  if (!f.converged) {
    diag("error", "not converged", {{"iterations", f.iterations}, {"reason", f.message}});
    return kExitNotConverged;
  }
  return kExitOk;
}

int cmd_att(const fs::path& fit_dir, const fs::path& spells_path, const Common& c,
            const std::string& group, int eps_draws, std::optional<double> horizon,
            const std::vector<int>& transitions, RunManifest& m) {
  m.add_input(fit_dir / "fit.json", "fit");
  m.add_input(spells_path, "spells");
  const FitResult f = FitResult::read(fit_dir);
  const Design design = build_design(load_spell_csv(spells_path), f.spec);
  AttOptions o;
  o.group = group;
  o.eps_draws = eps_draws;
  o.kr_draws = c.draws.value_or(500);
  o.seed = c.seed.value_or(1);
  o.kr_seed = o.seed + 1;
  o.horizon = horizon;
  o.threads = c.threads;
  m.seeds = {{"att-frailty", o.seed}, {"krinsky-robb", o.kr_seed}};
  m.options = {{"group", group}, {"eps_draws", eps_draws}, {"kr_draws", o.kr_draws},
               {"threads", c.threads}, {"transitions", transitions}};
  if (horizon) m.options["horizon"] = *horizon;

  AttResult all;
  all.eps_draws = o.eps_draws;
  all.kr_draws = o.kr_draws;
  for (int n : transitions) {
    const auto r = transition_from_number(n);
    AttResult res = att_duration(f, design, r, o);
    for (auto& e : res.entries) {
      if (!e.sign_consistent) {
        diag("warning", "duration effect has the same sign as the hazard effect",
             {{"transition", n}, {"group", e.group}});
      }
      all.entries.push_back(e);
    }
    for (auto& d : res.diagnostics) all.diagnostics.push_back(d);
    all.horizon = res.horizon;
  }
  for (const auto& d : all.diagnostics) diag("warning", d);
  const fs::path out = c.out;
  fs::create_directories(out);
  all.write_csv(out / "att.csv");
  std::ofstream(out / "att.json") << all.to_json().dump(2) << "\n";
  add_output(m, out / "att.csv");
  add_output(m, out / "att.json");
  std::printf("%-10s %-10s %12s %10s %12s %10s\n", "transition", "group", "estimate", "se",
              "hazard_att", "hazard_se");
  for (const auto& e : all.entries) {
    std::printf("%-10d %-10s %12.4f %10.4f %12.4f %10.4f\n", number_of(e.transition),
                e.group.c_str(), e.estimate, e.se, e.hazard_att, e.hazard_se);
  }
  return kExitOk;
}

int cmd_trend(const fs::path& spells_path, const fs::path& model_path, const Common& c,
              const std::optional<std::string>& cutoff, bool cubic, int max_iter, double tol,
              RunManifest& m) {
  m.add_input(spells_path, "spells");
  m.add_input(model_path, "model");
  ModelSpec spec = resolve_spec(model_path, c);
  if (cutoff) spec.pretrend.cutoff = parse_date(*cutoff);
  if (cubic) spec.pretrend.cubic = true;
  m.seeds["frailty"] = spec.seed;
  m.options = {{"draws", spec.draws}, {"threads", c.threads}, {"max_iter", max_iter},
               {"tol", tol}, {"model", spec.to_json()}};
  const auto res = parallel_trend_test(load_spell_csv(spells_path), spec, fit_options(c, max_iter, tol));
  for (const auto& w : res.warnings) diag("warning", w);
  const fs::path out = c.out;
  fs::create_directories(out);
  res.write_csv(out / "trend_test.csv");
  std::ofstream(out / "trend_test.json") << res.to_json().dump(2) << "\n";
  res.fit.write(out / "fit");
  add_output(m, out / "trend_test.csv");
  add_output(m, out / "trend_test.json");
  add_output(m, out / "fit");
  std::printf("%-10s %12s %4s %10s\n", "transition", "statistic", "df", "p_value");
  for (const auto& e : res.entries) {
    if (e.wald) {
      std::printf("%-10d %12.4f %4d %10.4f\n", number_of(e.transition), e.wald->statistic,
                  e.wald->df, e.wald->p_value);
    } else {
      std::printf("%-10d %12s %4s %10s  (%s)\n", number_of(e.transition), "NA", "NA", "NA",
                  e.note.c_str());
    }
  }
  if (!res.fit.converged) {
    diag("error", "not converged", {{"iterations", res.fit.iterations}, {"reason", res.fit.message}});
    return kExitNotConverged;
  }
  return kExitOk;
}

int cmd_simulate(const fs::path& scenario_path, const Common& c, std::optional<int> patients,
                 bool daily, RunManifest& m) {
  m.add_input(scenario_path, "scenario");
  ScenarioSpec sc = load_scenario(scenario_path);
  if (c.seed) sc.seed = *c.seed;
  if (patients) sc.patients = *patients;
  if (daily) sc.daily = true;
  m.seeds["scenario"] = sc.seed;
  m.options = {{"threads", c.threads}, {"scenario", sc.to_json()}};
  const Population pop = simulate_population(sc, c.threads);
  const fs::path out = c.out;
  write_population(pop, sc, out);
  add_output(m, out / "spells.csv");
  add_output(m, out / "truth.json");
  add_output(m, out / "model.json");
  add_output(m, out / "rules.json");
  if (sc.daily) add_output(m, out / "events.csv");
  const auto t = transition_table(pop.spells);
  std::printf("patients %d  spells %zu\n", sc.patients, pop.spells.size());
  std::printf("hospital: home %.4f death %.4f | home: readmission %.4f death %.4f censored %.4f\n",
              t.hospital_home, t.hospital_death, t.home_readmission, t.home_death, t.home_censored);
  return kExitOk;
}

int cmd_summarize(const fs::path& spells_path, const Common& c, RunManifest& m) {
  m.add_input(spells_path, "spells");
  const auto s = summarize(load_spell_csv(spells_path));
  std::printf("%s", s.to_text().c_str());
  if (!c.out.empty()) {
    const fs::path out = c.out;
    fs::create_directories(out);
    std::ofstream(out / "summary.json") << s.to_json().dump(2) << "\n";
    add_output(m, out / "summary.json");
  }
  return kExitOk;
}

}  // namespace
}  // namespace msms::cli

int main(int argc, char** argv) {
  using namespace msms;
  using namespace msms::cli;

  CLI::App app{"Multi-state hazard models with two-factor frailty"};
  app.require_subcommand(1);
  app.set_version_flag("--version", MSMS_VERSION);

  Common c;
  int max_iter = 500;
  double tol = 1e-8;
  auto add_common = [&](CLI::App* sub, bool needs_out) {
    sub->add_option("--threads", c.threads, "Worker threads (0 = all cores)");
    auto* out = sub->add_option("--out", c.out, "Output directory");
    if (needs_out) out->required();
  };
  auto add_fit_flags = [&](CLI::App* sub) {
    sub->add_option("--draws", c.draws, "Frailty draws per patient (overrides the model file)");
    sub->add_option("--seed", c.seed, "Frailty draw seed (overrides the model file)");
    sub->add_option("--max-iter", max_iter, "Maximum BFGS iterations");
    sub->add_option("--tol", tol, "Gradient tolerance");
  };

  fs::path events, rules_path_raw, spells, model, fit_dir, scenario;
  auto* ingest = app.add_subcommand("ingest", "Build spells from an event stream");
  ingest->add_option("events", events, "events.csv")->required();
  auto* rules_opt = ingest->add_option("--rules", rules_path_raw, "Ingestion rules JSON");
  add_common(ingest, true);

  auto* fit_cmd = app.add_subcommand("fit", "Simulated maximum likelihood fit");
  fit_cmd->add_option("spells", spells, "spells.csv")->required();
  fit_cmd->add_option("model", model, "model.json")->required();
  add_fit_flags(fit_cmd);
  add_common(fit_cmd, true);

  std::string group = "overall";
  int eps_draws = 100;
  std::optional<double> horizon;
  std::vector<int> transitions = {1, 2, 3, 4};
  auto* att = app.add_subcommand("att", "Duration ATT with Krinsky-Robb standard errors");
  att->add_option("fitdir", fit_dir, "Directory written by fit")->required();
  att->add_option("spells", spells, "spells.csv")->required();
  att->add_option("--group", group, "overall or specialty")
      ->check(CLI::IsMember({"overall", "specialty"}));
  att->add_option("--draws", c.draws, "Krinsky-Robb parameter draws");
  att->add_option("--eps-draws", eps_draws, "Frailty draws in the duration integrals");
  att->add_option("--seed", c.seed, "Seed of the frailty draws (parameter draws use seed+1)");
  att->add_option("--horizon", horizon, "Integration horizon in days");
  att->add_option("--transition", transitions, "Transitions to report")->check(CLI::Range(1, 4));
  add_common(att, true);

  std::optional<std::string> cutoff;
  bool cubic = false;
  auto* trend = app.add_subcommand("trend-test", "Pre-reform parallel-trend Wald tests");
  trend->add_option("spells", spells, "spells.csv")->required();
  trend->add_option("model", model, "model.json")->required();
  trend->add_option("--cutoff", cutoff, "Last pre-reform day (YYYY-MM-DD)");
  trend->add_flag("--cubic", cubic, "Add the cubic interaction");
  add_fit_flags(trend);
  add_common(trend, true);

  std::optional<int> patients;
  bool daily = false;
  auto* sim = app.add_subcommand("simulate", "Simulate a synthetic population");
  sim->add_option("scenario", scenario, "scenario.json")->required();
  sim->add_option("--seed", c.seed, "Scenario seed override");
  sim->add_option("--patients", patients, "Population size override");
  sim->add_flag("--daily", daily, "Whole-day event streams plus events.csv");
  add_common(sim, true);

  auto* summ = app.add_subcommand("summarize", "Transition table and descriptive statistics");
  summ->add_option("spells", spells, "spells.csv")->required();
  add_common(summ, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }

  auto* chosen = app.get_subcommands().front();
  g_command = chosen->get_name();
  RunManifest m = start_manifest(g_command, argc, argv);
  int code = kExitOk;
  try {
    c.threads = resolve_threads(c.threads);
    if (chosen == ingest) {
      std::optional<fs::path> rp;
      if (rules_opt->count()) rp = rules_path_raw;
      code = cmd_ingest(events, rp, c, m);
    } else if (chosen == fit_cmd) {
      code = cmd_fit(spells, model, c, max_iter, tol, m);
    } else if (chosen == att) {
      code = cmd_att(fit_dir, spells, c, group, eps_draws, horizon, transitions, m);
    } else if (chosen == trend) {
      code = cmd_trend(spells, model, c, cutoff, cubic, max_iter, tol, m);
    } else if (chosen == sim) {
      code = cmd_simulate(scenario, c, patients, daily, m);
    } else {
      code = cmd_summarize(spells, c, m);
    }
  } catch (const CsvError& e) {
    for (const auto& d : e.diagnostics()) diag("error", d);
    diag("error", e.what());
    code = kExitInput;
  } catch (const InputError& e) {
    diag("error", e.what());
    code = kExitInput;
  } catch (const NumericalError& e) {
    diag("error", e.what());
    code = kExitNumerical;
  } catch (const std::exception& e) {
    diag("error", e.what());
    code = kExitNumerical;
  }
  if (!c.out.empty()) {
    m.exit_code = code;
    try {
      m.write(c.out);
    } catch (const std::exception& e) {
      diag("error", std::string("manifest: ") + e.what());
    }
  }
  return code;
}
