#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "msms/baseline.hpp"
#include "msms/types.hpp"

namespace msms {

enum class Block { Baseline, Beta, Loading };

std::string block_name(Block b);

struct ParamEntry {
  TransitionId transition;
  Block block;
  std::string name;

  // "r<n>.<block>.<name>", e.g. "r3.beta.mc" or "r1.loading.phi".
  std::string key() const;
};

// Factor loadings of the two-factor frailty ω_r = ψ_r ε₁ + φ_r ε₂.
struct FrailtyLoadings {
  std::array<double, kNumTransitions> psi{};
  std::array<double, kNumTransitions> phi{};
};

// Loading on ε₁ (ψ) is fixed at 1 for transitions out of Hospital; loading on
// ε₂ (φ) is fixed at 1 for transitions out of Home. The other one is free.
constexpr bool psi_is_free(TransitionId r) { return origin_of(r) == StateId::Home; }

struct TransitionParams {
  Eigen::VectorXd log_alpha;
  Eigen::VectorXd beta;
  double psi = 0.0;
  double phi = 0.0;
};

// Structured view of a parameter vector.
struct ModelParams {
  std::array<PiecewiseGrid, kNumTransitions> grids;
  std::array<TransitionParams, kNumTransitions> tr;
  bool frailty = true;

  const TransitionParams& at(TransitionId r) const { return tr[index_of(r)]; }
  TransitionParams& at(TransitionId r) { return tr[index_of(r)]; }

  PiecewiseBaseline baseline(TransitionId r) const;
  FrailtyLoadings loadings() const;

  // ψ_r ε₁ + φ_r ε₂, or 0 when frailty is disabled.
  double frailty_term(TransitionId r, const Eps& eps) const {
    if (!frailty) return 0.0;
    const auto& p = at(r);
    return p.psi * eps.e1 + p.phi * eps.e2;
  }
};

// Flat layout of all free parameters, deterministic given the grids, the
// covariate names of each transition and the frailty switch. Per transition
// the order is: baseline log-rates, regression coefficients, free loading.
class ParamLayout {
 public:
  ParamLayout() = default;
  ParamLayout(std::array<PiecewiseGrid, kNumTransitions> grids,
              std::array<std::vector<std::string>, kNumTransitions> covariates,
              bool frailty);

  std::size_t size() const { return entries_.size(); }
  const std::vector<ParamEntry>& entries() const { return entries_; }
  const ParamEntry& entry(std::size_t i) const { return entries_[i]; }

  std::optional<std::size_t> find(const std::string& key) const;
  std::size_t index(const std::string& key) const;  // throws InputError

  std::size_t baseline_offset(TransitionId r) const { return baseline_off_[index_of(r)]; }
  std::size_t beta_offset(TransitionId r) const { return beta_off_[index_of(r)]; }
  std::optional<std::size_t> loading_index(TransitionId r) const;

  const PiecewiseGrid& grid(TransitionId r) const { return grids_[index_of(r)]; }
  const std::vector<std::string>& covariates(TransitionId r) const {
    return covariates_[index_of(r)];
  }
  bool frailty() const { return frailty_; }

  ModelParams unpack(const Eigen::VectorXd& flat) const;
  Eigen::VectorXd pack(const ModelParams& params) const;

  // Zero coefficients, unit rates, zero free loadings.
  ModelParams zeros() const;

 private:
  std::array<PiecewiseGrid, kNumTransitions> grids_;
  std::array<std::vector<std::string>, kNumTransitions> covariates_;
  bool frailty_ = false;
  std::vector<ParamEntry> entries_;
  std::map<std::string, std::size_t> by_key_;
  std::array<std::size_t, kNumTransitions> baseline_off_{};
  std::array<std::size_t, kNumTransitions> beta_off_{};
  std::array<std::ptrdiff_t, kNumTransitions> loading_idx_{};
};

}  // namespace msms
