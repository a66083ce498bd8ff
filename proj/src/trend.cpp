#include "msms/trend.hpp"

#include <fstream>

#include "csv.hpp"

namespace msms {

TrendTestResult parallel_trend_test(std::vector<SpellRecord> spells, const ModelSpec& spec,
                                    const FitOptions& options) {
  const Design design = build_pretrend_design(std::move(spells), spec);
  TrendTestResult out;
  out.warnings = design.warnings;
  out.fit = fit(design, options);
  for (auto r : kAllTransitions) {
    TrendEntry e;
    e.transition = r;
    e.coefficients = pretrend_coefficients(design, r);
    if (e.coefficients.empty()) {
      e.note = "too few treated events";
    } else if (!out.fit.converged) {
      e.note = "fit not converged";
    } else if (!out.fit.covariance) {
      e.note = "covariance unavailable";
    } else {
      try {
        e.wald = wald_test(out.fit, e.coefficients);
      } catch (const NumericalError& ex) {
        e.note = ex.what();
      }
    }
    out.entries.push_back(std::move(e));
  }
  return out;
}

nlohmann::json TrendTestResult::to_json() const {
  nlohmann::json j;
  j["entries"] = nlohmann::json::array();
  for (const auto& e : entries) {
    nlohmann::json row = {{"transition", number_of(e.transition)},
                          {"coefficients", e.coefficients},
                          {"note", e.note}};
    if (e.wald) {
      row["statistic"] = e.wald->statistic;
      row["df"] = e.wald->df;
      row["p_value"] = e.wald->p_value;
    } else {
      row["statistic"] = nullptr;
      row["df"] = nullptr;
      row["p_value"] = "NA";
    }
    j["entries"].push_back(row);
  }
  j["loglik"] = fit.loglik;
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  j["warnings"] = warnings;
  return j;
}

void TrendTestResult::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "transition,statistic,df,p_value,note\n";
  for (const auto& e : entries) {
    out << number_of(e.transition) << ',';
    if (e.wald) {
      out << csv::format_double(e.wald->statistic) << ',' << e.wald->df << ','
          << csv::format_double(e.wald->p_value);
    } else {
      out << "NA,NA,NA";
    }
    std::string note = e.note;
    for (auto& c : note) {
      if (c == ',' || c == '"' || c == '\n') c = ';';
    }
    out << ',' << note << '\n';
  }
}

}  // namespace msms
