#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msms/estimation.hpp"

namespace msms {

struct TrendEntry {
  TransitionId transition = TransitionId::HospitalToHome;
  std::vector<std::string> coefficients;
  std::optional<WaldResult> wald;  // nullopt: the test could not be run
  std::string note;
};

struct TrendTestResult {
  std::vector<TrendEntry> entries;
  FitResult fit;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
  // transition,statistic,df,p_value,note with "NA" where the test is not run.
  void write_csv(const std::filesystem::path& path) const;
};

// Fits the pre-reform design and runs one joint Wald test per transition on
// its later-adopter x quarter interactions.
TrendTestResult parallel_trend_test(std::vector<SpellRecord> spells, const ModelSpec& spec,
                                    const FitOptions& options = {});

}  // namespace msms
