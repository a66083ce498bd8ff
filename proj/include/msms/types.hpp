#pragma once

#include <array>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace msms {

// Thrown for malformed input: bad CSV rows, unknown config keys, contract
// violations on user-supplied data. The CLI maps it to exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite likelihood contributions, failed factorizations and the like.
// The CLI maps it to exit code 4.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class StateId { Hospital, Home, Death };

// The four modelled transitions. Admission and readmission share the
// Hospital state.
enum class TransitionId : int {
  HospitalToHome = 1,
  HospitalToDeath = 2,
  HomeToReadmission = 3,
  HomeToDeath = 4,
};

inline constexpr int kNumTransitions = 4;

inline constexpr std::array<TransitionId, kNumTransitions> kAllTransitions = {
    TransitionId::HospitalToHome, TransitionId::HospitalToDeath,
    TransitionId::HomeToReadmission, TransitionId::HomeToDeath};

constexpr int index_of(TransitionId r) { return static_cast<int>(r) - 1; }

constexpr int number_of(TransitionId r) { return static_cast<int>(r); }

inline TransitionId transition_from_number(int n) {
  if (n < 1 || n > kNumTransitions) {
    throw InputError("transition number out of range: " + std::to_string(n));
  }
  return static_cast<TransitionId>(n);
}

constexpr StateId origin_of(TransitionId r) {
  return (r == TransitionId::HospitalToHome || r == TransitionId::HospitalToDeath)
             ? StateId::Hospital
             : StateId::Home;
}

constexpr StateId destination_of(TransitionId r) {
  switch (r) {
    case TransitionId::HospitalToHome: return StateId::Home;
    case TransitionId::HomeToReadmission: return StateId::Hospital;
    default: return StateId::Death;
  }
}

namespace detail {
inline constexpr std::array<TransitionId, 2> kFromHospital = {
    TransitionId::HospitalToHome, TransitionId::HospitalToDeath};
inline constexpr std::array<TransitionId, 2> kFromHome = {
    TransitionId::HomeToReadmission, TransitionId::HomeToDeath};
}  // namespace detail

// Competing transitions out of `origin`; empty for the absorbing state.
constexpr std::span<const TransitionId> transitions_from(StateId origin) {
  switch (origin) {
    case StateId::Hospital: return detail::kFromHospital;
    case StateId::Home: return detail::kFromHome;
    case StateId::Death: return {};
  }
  return {};
}

// Position of `r` within transitions_from(origin_of(r)): 0 or 1.
constexpr int slot_of(TransitionId r) { return (index_of(r) % 2); }

inline std::string_view state_name(StateId s) {
  switch (s) {
    case StateId::Hospital: return "hospital";
    case StateId::Home: return "home";
    case StateId::Death: return "death";
  }
  return "?";
}

inline StateId parse_state(std::string_view s) {
  if (s == "hospital") return StateId::Hospital;
  if (s == "home") return StateId::Home;
  if (s == "death") return StateId::Death;
  throw InputError("unknown state '" + std::string(s) + "'");
}

inline std::string_view transition_label(TransitionId r) {
  switch (r) {
    case TransitionId::HospitalToHome: return "Ad(RAd) -> Home";
    case TransitionId::HospitalToDeath: return "Ad(RAd) -> Death";
    case TransitionId::HomeToReadmission: return "Home -> RAd";
    case TransitionId::HomeToDeath: return "Home -> Death";
  }
  return "?";
}

// Standard-normal pair driving the two-factor frailty.
struct Eps {
  double e1 = 0.0;
  double e2 = 0.0;
};

}  // namespace msms
