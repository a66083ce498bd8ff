#include "msms/params.hpp"

#include <cmath>

namespace msms {

std::string block_name(Block b) {
  switch (b) {
    case Block::Baseline: return "baseline";
    case Block::Beta: return "beta";
    case Block::Loading: return "loading";
  }
  return "?";
}

std::string ParamEntry::key() const {
  return "r" + std::to_string(number_of(transition)) + "." + block_name(block) + "." + name;
}

PiecewiseBaseline ModelParams::baseline(TransitionId r) const {
  const auto& p = at(r);
  PiecewiseBaseline b{grids[index_of(r)], {}};
  b.rates.resize(static_cast<std::size_t>(p.log_alpha.size()));
  for (Eigen::Index k = 0; k < p.log_alpha.size(); ++k) {
    b.rates[static_cast<std::size_t>(k)] = std::exp(p.log_alpha[k]);
  }
  return b;
}

FrailtyLoadings ModelParams::loadings() const {
  FrailtyLoadings l;
  for (auto r : kAllTransitions) {
    l.psi[index_of(r)] = at(r).psi;
    l.phi[index_of(r)] = at(r).phi;
  }
  return l;
}

ParamLayout::ParamLayout(std::array<PiecewiseGrid, kNumTransitions> grids,
                         std::array<std::vector<std::string>, kNumTransitions> covariates,
                         bool frailty)
    : grids_(std::move(grids)), covariates_(std::move(covariates)), frailty_(frailty) {
  for (auto r : kAllTransitions) {
    const int i = index_of(r);
    grids_[i].validate();
    baseline_off_[i] = entries_.size();
    for (std::size_t k = 0; k < grids_[i].size(); ++k) {
      entries_.push_back({r, Block::Baseline, "a" + std::to_string(k + 1)});
    }
    beta_off_[i] = entries_.size();
    for (const auto& name : covariates_[i]) {
      entries_.push_back({r, Block::Beta, name});
    }
    loading_idx_[i] = -1;
    if (frailty_) {
      loading_idx_[i] = static_cast<std::ptrdiff_t>(entries_.size());
      entries_.push_back({r, Block::Loading, psi_is_free(r) ? "psi" : "phi"});
    }
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto [it, inserted] = by_key_.emplace(entries_[i].key(), i);
    if (!inserted) throw InputError("duplicate parameter name " + it->first);
  }
}

std::optional<std::size_t> ParamLayout::find(const std::string& key) const {
  auto it = by_key_.find(key);
  if (it == by_key_.end()) return std::nullopt;
  return it->second;
}

std::size_t ParamLayout::index(const std::string& key) const {
  auto i = find(key);
  if (!i) throw InputError("unknown parameter " + key);
  return *i;
}

std::optional<std::size_t> ParamLayout::loading_index(TransitionId r) const {
  const auto i = loading_idx_[index_of(r)];
  if (i < 0) return std::nullopt;
  return static_cast<std::size_t>(i);
}

ModelParams ParamLayout::unpack(const Eigen::VectorXd& flat) const {
  if (static_cast<std::size_t>(flat.size()) != size()) {
    throw InputError("parameter vector has length " + std::to_string(flat.size()) +
                     ", layout expects " + std::to_string(size()));
  }
  ModelParams p;
  p.grids = grids_;
  p.frailty = frailty_;
  for (auto r : kAllTransitions) {
    const int i = index_of(r);
    auto& t = p.tr[i];
    const auto nk = static_cast<Eigen::Index>(grids_[i].size());
    const auto nb = static_cast<Eigen::Index>(covariates_[i].size());
    t.log_alpha = flat.segment(static_cast<Eigen::Index>(baseline_off_[i]), nk);
    t.beta = flat.segment(static_cast<Eigen::Index>(beta_off_[i]), nb);
    if (frailty_) {
      const double free = flat[loading_idx_[i]];
      t.psi = psi_is_free(r) ? free : 1.0;
      t.phi = psi_is_free(r) ? 1.0 : free;
    }
  }
  return p;
}

Eigen::VectorXd ParamLayout::pack(const ModelParams& params) const {
  Eigen::VectorXd flat(static_cast<Eigen::Index>(size()));
  for (auto r : kAllTransitions) {
    const int i = index_of(r);
    const auto& t = params.tr[i];
    if (static_cast<std::size_t>(t.log_alpha.size()) != grids_[i].size() ||
        static_cast<std::size_t>(t.beta.size()) != covariates_[i].size()) {
      throw InputError("structured parameters do not match the layout for transition " +
                       std::to_string(number_of(r)));
    }
    flat.segment(static_cast<Eigen::Index>(baseline_off_[i]), t.log_alpha.size()) = t.log_alpha;
    flat.segment(static_cast<Eigen::Index>(beta_off_[i]), t.beta.size()) = t.beta;
    if (frailty_) flat[loading_idx_[i]] = psi_is_free(r) ? t.psi : t.phi;
  }
  return flat;
}

ModelParams ParamLayout::zeros() const {
  return unpack(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(size())));
}

}  // namespace msms
