#include <memory>
#include <optional>
#include <string>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "msms/att.hpp"
#include "msms/estimation.hpp"
#include "msms/model.hpp"
#include "msms/simulator.hpp"
#include "msms/trend.hpp"

namespace py = pybind11;
using namespace msms;

namespace {

// JSON crosses the boundary as text; the Python package converts to dicts.
nlohmann::json parse(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("invalid JSON: ") + e.what());
  }
}

PiecewiseBaseline make_baseline(std::vector<double> breaks, std::vector<double> rates, double upper) {
  PiecewiseBaseline b{{std::move(breaks), upper}, std::move(rates)};
  b.validate();
  return b;
}

// Design plus likelihood; the likelihood keeps a reference into the design.
struct Likelihood {
  Design design;
  std::unique_ptr<SimulatedLikelihood> ll;

  Likelihood(const std::filesystem::path& spells, const std::string& model_json, int threads)
      : design(build_design(load_spell_csv(spells), ModelSpec::from_json(parse(model_json)))) {
    const auto& spec = design.spec;
    FrailtyDraws draws = spec.frailty ? FrailtyDraws(design.patients, spec.draws, spec.seed, spec.draw_type)
                                      : FrailtyDraws::zeros(design.patients.size(), 1);
    ll = std::make_unique<SimulatedLikelihood>(design, std::move(draws), threads);
  }

  std::vector<std::string> keys() const {
    std::vector<std::string> out;
    for (const auto& e : design.layout.entries()) out.push_back(e.key());
    return out;
  }
};

FitOptions fit_options(int threads, int max_iter, double tol, bool covariance) {
  FitOptions o;
  o.threads = threads;
  o.max_iter = max_iter;
  o.tol = tol;
  o.covariance = covariance;
  return o;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-state hazard models with two-factor frailty (compiled core)";

  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def("default_scenario_json", [] { return ScenarioSpec().to_json().dump(); });
  m.def("default_model_json", [] { return ModelSpec().to_json().dump(); });
  m.def("default_rules_json", [] { return IngestRules().to_json().dump(); });

  m.def(
      "frailty_correlation",
      [](std::array<double, 4> psi, std::array<double, 4> phi) {
        FrailtyLoadings l;
        l.psi = psi;
        l.phi = phi;
        return Eigen::Matrix4d(frailty_correlation(l));
      },
      py::arg("psi"), py::arg("phi"));

  m.def(
      "cumulative_baseline",
      [](std::vector<double> breaks, std::vector<double> rates, double t, double upper) {
        return cumulative_baseline(make_baseline(std::move(breaks), std::move(rates), upper), t);
      },
      py::arg("breaks"), py::arg("rates"), py::arg("t"), py::arg("upper") = kInf);

  m.def(
      "latent_mean",
      [](std::vector<double> breaks, std::vector<double> rates, double k, double horizon, double upper) {
        return latent_mean(make_baseline(std::move(breaks), std::move(rates), upper), k, horizon);
      },
      py::arg("breaks"), py::arg("rates"), py::arg("k") = 1.0, py::arg("horizon") = kInf,
      py::arg("upper") = kInf);

  m.def(
      "simulate",
      [](const std::string& scenario_json, const std::filesystem::path& out, int threads) {
        const auto sc = ScenarioSpec::from_json(parse(scenario_json));
        Population pop;
        {
          py::gil_scoped_release release;
          pop = simulate_population(sc, threads);
          write_population(pop, sc, out);
        }
        const auto t = transition_table(pop.spells);
        nlohmann::json j = {{"patients", sc.patients},
                            {"spells", pop.spells.size()},
                            {"events", pop.events.size()},
                            {"hospital_home", t.hospital_home},
                            {"hospital_death", t.hospital_death},
                            {"home_readmission", t.home_readmission},
                            {"home_death", t.home_death},
                            {"home_censored", t.home_censored}};
        return j.dump();
      },
      py::arg("scenario_json"), py::arg("out"), py::arg("threads") = 1);

  m.def(
      "ingest",
      [](const std::filesystem::path& events, const std::string& rules_json, const std::filesystem::path& out) {
        const auto rules = IngestRules::from_json(parse(rules_json));
        const auto res = build_spells(load_event_csv(events), rules);
        std::filesystem::create_directories(out);
        write_spell_csv(res.spells, out / "spells.csv");
        write_exclusions_jsonl(res.exclusions, out / "exclusions.jsonl");
        return py::make_tuple(res.spells.size(), res.exclusions.size());
      },
      py::arg("events"), py::arg("rules_json"), py::arg("out"));

  py::class_<FitResult>(m, "FitResult")
      .def_property_readonly("keys",
                             [](const FitResult& f) {
                               std::vector<std::string> out;
                               for (const auto& e : f.layout.entries()) out.push_back(e.key());
                               return out;
                             })
      .def_readonly("estimate", &FitResult::estimate)
      .def_readonly("se", &FitResult::se)
      .def_readonly("covariance", &FitResult::covariance)
      .def_readonly("loglik", &FitResult::loglik)
      .def_readonly("converged", &FitResult::converged)
      .def_readonly("message", &FitResult::message)
      .def_readonly("iterations", &FitResult::iterations)
      .def_readonly("gradient_supnorm", &FitResult::gradient_supnorm)
      .def("coefficient", &FitResult::coefficient)
      .def("to_json", [](const FitResult& f) { return f.to_json().dump(); })
      .def("write", &FitResult::write)
      .def_static("read", &FitResult::read);

  m.def(
      "fit",
      [](const std::filesystem::path& spells, const std::string& model_json, int threads, int max_iter,
         double tol, bool covariance) {
        const auto spec = ModelSpec::from_json(parse(model_json));
        auto rows = load_spell_csv(spells);
        py::gil_scoped_release release;
        const Design d = build_design(std::move(rows), spec);
        return fit(d, fit_options(threads, max_iter, tol, covariance));
      },
      py::arg("spells"), py::arg("model_json"), py::arg("threads") = 1, py::arg("max_iter") = 500,
      py::arg("tol") = 1e-8, py::arg("covariance") = true);

  py::class_<Likelihood>(m, "Likelihood")
      .def(py::init<const std::filesystem::path&, const std::string&, int>(), py::arg("spells"),
           py::arg("model_json"), py::arg("threads") = 1)
      .def_property_readonly("keys", &Likelihood::keys)
      .def("starting_values", [](const Likelihood& l) { return starting_values(l.design); })
      .def("value", [](const Likelihood& l, const Eigen::VectorXd& theta) { return l.ll->value(theta); })
      .def("value_and_gradient", [](const Likelihood& l, const Eigen::VectorXd& theta) {
        Eigen::VectorXd g;
        const double v = l.ll->value_and_gradient(theta, g);
        return py::make_tuple(v, g);
      });

  m.def(
      "att",
      [](const FitResult& f, const std::filesystem::path& spells, int transition, const std::string& group,
         int eps_draws, int kr_draws, std::uint64_t seed, std::optional<double> horizon, int threads) {
        auto rows = load_spell_csv(spells);
        py::gil_scoped_release release;
        const Design d = build_design(std::move(rows), f.spec);
        AttOptions o;
        o.group = group;
        o.eps_draws = eps_draws;
        o.kr_draws = kr_draws;
        o.seed = seed;
        o.kr_seed = seed + 1;
        o.horizon = horizon;
        o.threads = threads;
        return att_duration(f, d, transition_from_number(transition), o).to_json().dump();
      },
      py::arg("fit"), py::arg("spells"), py::arg("transition"), py::arg("group") = "overall",
      py::arg("eps_draws") = 100, py::arg("kr_draws") = 500, py::arg("seed") = 1,
      py::arg("horizon") = std::nullopt, py::arg("threads") = 1);

  m.def(
      "trend_test",
      [](const std::filesystem::path& spells, const std::string& model_json, int threads) {
        const auto spec = ModelSpec::from_json(parse(model_json));
        auto rows = load_spell_csv(spells);
        py::gil_scoped_release release;
        FitOptions o;
        o.threads = threads;
        return parallel_trend_test(std::move(rows), spec, o).to_json().dump();
      },
      py::arg("spells"), py::arg("model_json"), py::arg("threads") = 1);
}
