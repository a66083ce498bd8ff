#pragma once

#include <array>
#include <optional>
#include <span>

#include <Eigen/Core>

#include "msms/params.hpp"

namespace msms {

// One spell as seen by the likelihood: covariate rows are ordered like
// transitions_from(origin).
struct SpellView {
  StateId origin = StateId::Hospital;
  double duration = 1.0;
  std::optional<TransitionId> realized;  // nullopt when censored
  std::array<std::span<const double>, 2> x;
};

// x'β for transition r.
double linear_predictor(const ModelParams& params, TransitionId r, std::span<const double> x);

// log λ_r(t | x, ε) = log λ_r0(t) + x'β + ψε₁ + φε₂; -inf where the baseline
// is zero (t < 1 or past the horizon).
double log_hazard(const ModelParams& params, TransitionId r, double t,
                  std::span<const double> x, const Eps& eps);

// λ_r(t | x, ε), computed in log space and exponentiated once.
double hazard(const ModelParams& params, TransitionId r, double t, std::span<const double> x,
              const Eps& eps, ClampTally* tally = nullptr);

// log S_j(t) = −Σ_{s∈T(j)} exp(x_s'β_s + ω_s) Λ_s(t).
double log_survival(const ModelParams& params, StateId origin, double t,
                    const std::array<std::span<const double>, 2>& x, const Eps& eps,
                    ClampTally* tally = nullptr);

// c·log λ_r(t) + log S_j(t).
double log_spell_density(const ModelParams& params, const SpellView& spell, const Eps& eps,
                         ClampTally* tally = nullptr);

// Corr(ω_r, ω_s) for all pairs. Throws NumericalError("correlation
// undefined") when a transition has ψ = φ = 0.
Eigen::Matrix4d frailty_correlation(const FrailtyLoadings& loadings);

}  // namespace msms
