#include "msms/model.hpp"

#include <cmath>
#include <string>

namespace msms {

double linear_predictor(const ModelParams& params, TransitionId r, std::span<const double> x) {
  const auto& beta = params.at(r).beta;
  if (static_cast<Eigen::Index>(x.size()) != beta.size()) {
    throw InputError("covariate row length " + std::to_string(x.size()) +
                     " does not match " + std::to_string(beta.size()) +
                     " coefficients for transition " + std::to_string(number_of(r)));
  }
  double v = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) v += x[j] * beta[static_cast<Eigen::Index>(j)];
  return v;
}

double log_hazard(const ModelParams& params, TransitionId r, double t,
                  std::span<const double> x, const Eps& eps) {
  const int k = params.grids[index_of(r)].interval_of(t);
  if (k < 0) return -kInf;
  return params.at(r).log_alpha[k] + linear_predictor(params, r, x) +
         params.frailty_term(r, eps);
}

double hazard(const ModelParams& params, TransitionId r, double t, std::span<const double> x,
              const Eps& eps, ClampTally* tally) {
  const double lh = log_hazard(params, r, t, x, eps);
  if (lh == -kInf) return 0.0;
  return clamped_exp(lh, tally);
}

double log_survival(const ModelParams& params, StateId origin, double t,
                    const std::array<std::span<const double>, 2>& x, const Eps& eps,
                    ClampTally* tally) {
  if (origin == StateId::Death) throw InputError("no spell originates in the death state");
  double total = 0.0;
  const auto out = transitions_from(origin);
  for (std::size_t s = 0; s < out.size(); ++s) {
    const auto r = out[s];
    const double cum = cumulative_baseline(params.baseline(r), t);
    if (cum == 0.0) continue;
    const double scale =
        clamped_exp(linear_predictor(params, r, x[s]) + params.frailty_term(r, eps), tally);
    total -= scale * cum;
  }
  return total;
}

double log_spell_density(const ModelParams& params, const SpellView& spell, const Eps& eps,
                         ClampTally* tally) {
  double v = log_survival(params, spell.origin, spell.duration, spell.x, eps, tally);
  if (spell.realized) {
    const auto r = *spell.realized;
    if (origin_of(r) != spell.origin) {
      throw InputError("transition " + std::to_string(number_of(r)) +
                       " does not leave state " + std::string(state_name(spell.origin)));
    }
    const double lh = log_hazard(params, r, spell.duration, spell.x[slot_of(r)], eps);
    v += std::log(clamped_exp(lh, tally));
  }
  return v;
}

Eigen::Matrix4d frailty_correlation(const FrailtyLoadings& l) {
  Eigen::Matrix4d c;
  std::array<double, kNumTransitions> norm{};
  for (int r = 0; r < kNumTransitions; ++r) {
    norm[r] = std::sqrt(l.psi[r] * l.psi[r] + l.phi[r] * l.phi[r]);
    if (norm[r] == 0.0) {
      throw NumericalError("correlation undefined: transition " + std::to_string(r + 1) +
                           " has zero loadings");
    }
  }
  for (int r = 0; r < kNumTransitions; ++r) {
    for (int s = 0; s < kNumTransitions; ++s) {
      c(r, s) = r == s ? 1.0
                       : (l.psi[r] * l.psi[s] + l.phi[r] * l.phi[s]) / (norm[r] * norm[s]);
    }
  }
  return c;
}

}  // namespace msms
