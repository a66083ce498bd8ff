#include "msms/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace msms {

double clamped_exp(double v, ClampTally* tally) {
  if (v > kExpClamp) {
    if (tally) ++tally->count;
    v = kExpClamp;
  } else if (v < -kExpClamp) {
    if (tally) ++tally->count;
    v = -kExpClamp;
  }
  return std::exp(v);
}

int PiecewiseGrid::interval_of(double t) const {
  if (breaks.empty() || t < breaks.front() || t > upper) return -1;
  if (t == upper) return bounded() ? static_cast<int>(breaks.size()) - 1 : -1;
  auto it = std::upper_bound(breaks.begin(), breaks.end(), t);
  return static_cast<int>(it - breaks.begin()) - 1;
}

double PiecewiseGrid::overlap(std::size_t k, double t) const {
  const double lo = breaks[k];
  const double hi = std::min(t, upper_of(k));
  return hi > lo ? hi - lo : 0.0;
}

void PiecewiseGrid::validate() const {
  if (breaks.empty()) throw InputError("interval grid has no breakpoints");
  if (breaks.front() < 0.0) throw InputError("interval grid starts below 0");
  for (std::size_t k = 1; k < breaks.size(); ++k) {
    if (!(breaks[k] > breaks[k - 1])) {
      throw InputError("interval breakpoints must be strictly increasing");
    }
  }
  if (!(upper > breaks.back())) {
    throw InputError("grid upper bound must exceed the last breakpoint");
  }
}

double PiecewiseBaseline::hazard(double t) const {
  const int k = grid.interval_of(t);
  return k < 0 ? 0.0 : rates[static_cast<std::size_t>(k)];
}

void PiecewiseBaseline::validate() const {
  grid.validate();
  if (rates.size() != grid.size()) {
    throw InputError("baseline has " + std::to_string(rates.size()) +
                     " rates for " + std::to_string(grid.size()) + " intervals");
  }
  for (double a : rates) {
    if (!(a > 0.0) || !std::isfinite(a)) {
      throw InputError("baseline rates must be finite and positive");
    }
  }
}

double cumulative_baseline(const PiecewiseBaseline& baseline, double t) {
  const auto& g = baseline.grid;
  double total = 0.0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (t <= g.lower(k)) break;
    total += baseline.rates[k] * g.overlap(k, t);
  }
  return total;
}

PiecewiseGrid default_grid(TransitionId r) {
  switch (r) {
    case TransitionId::HospitalToHome:
      return {{1, 2, 3, 4, 5, 6, 8, 11, 18}, kInf};
    case TransitionId::HospitalToDeath:
      return {{1, 2, 5, 10, 16, 29}, kInf};
    case TransitionId::HomeToReadmission:
      return {{1, 3, 6, 8, 12, 16, 19, 22, 26}, 30.0};
    case TransitionId::HomeToDeath:
      return {{1, 4, 16, 31, 51, 81, 121, 181, 261}, 365.0};
  }
  return {};
}

}  // namespace msms
