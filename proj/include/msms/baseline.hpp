#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "msms/types.hpp"

namespace msms {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Counts exponent clamps. Callers that do not care pass nullptr.
struct ClampTally {
  long long count = 0;
};

inline constexpr double kExpClamp = 700.0;

// exp(clamp(v, -700, 700)); bumps the tally when the clamp engages.
double clamped_exp(double v, ClampTally* tally = nullptr);

// Interval grid of a piecewise-constant baseline. Interval k is
// [breaks[k], breaks[k+1]) and the last one is [breaks.back(), upper).
// A finite `upper` is a censoring horizon: the hazard is zero beyond it and
// the last interval is closed at the horizon so that an event recorded
// exactly on the horizon day keeps a positive hazard.
struct PiecewiseGrid {
  std::vector<double> breaks;
  double upper = kInf;

  std::size_t size() const { return breaks.size(); }
  bool bounded() const { return upper < kInf; }
  double lower(std::size_t k) const { return breaks[k]; }
  double upper_of(std::size_t k) const {
    return k + 1 < breaks.size() ? breaks[k + 1] : upper;
  }

  // Interval containing t, or -1 where the hazard is zero (before the first
  // break or past the horizon).
  int interval_of(double t) const;

  // Length of [lower(k), upper_of(k)) ∩ [0, t].
  double overlap(std::size_t k, double t) const;

  // Throws InputError unless breaks are strictly increasing, nonnegative and
  // below `upper`.
  void validate() const;
};

struct PiecewiseBaseline {
  PiecewiseGrid grid;
  std::vector<double> rates;

  double hazard(double t) const;
  void validate() const;
};

// ∫₀ᵗ λ₀(τ)dτ = Σ_k α_k (min(t, upper_k) − lower_k)⁺.
double cumulative_baseline(const PiecewiseBaseline& baseline, double t);

// Interval grids used by default for each transition (days).
PiecewiseGrid default_grid(TransitionId r);

}  // namespace msms
