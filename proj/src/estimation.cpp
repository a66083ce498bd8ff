#include "msms/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <Eigen/Cholesky>
#include <boost/math/special_functions/gamma.hpp>

#include "csv.hpp"
#include "msms/parallel.hpp"
#include "msms/rng.hpp"

namespace msms {

FrailtyDraws::FrailtyDraws(const std::vector<std::string>& patients, int m, std::uint64_t seed,
                           DrawType type)
    : m_(m) {
  if (m < 1) throw InputError("number of draws must be at least 1");
  if (type == DrawType::Antithetic && m % 2 != 0) {
    throw InputError("antithetic draws need an even number of draws");
  }
  e1_.resize(patients.size() * static_cast<std::size_t>(m));
  e2_.resize(e1_.size());
  for (std::size_t i = 0; i < patients.size(); ++i) {
    Rng rng(seed, "frailty", patients[i]);
    double* a = e1_.data() + i * static_cast<std::size_t>(m);
    double* b = e2_.data() + i * static_cast<std::size_t>(m);
    const int fresh = type == DrawType::Antithetic ? m / 2 : m;
    for (int k = 0; k < fresh; ++k) {
      a[k] = rng.normal();
      b[k] = rng.normal();
    }
    for (int k = fresh; k < m; ++k) {
      a[k] = -a[k - fresh];
      b[k] = -b[k - fresh];
    }
  }
}

FrailtyDraws FrailtyDraws::zeros(std::size_t patients, int m) {
  FrailtyDraws d;
  d.m_ = m;
  d.e1_.assign(patients * static_cast<std::size_t>(m), 0.0);
  d.e2_.assign(d.e1_.size(), 0.0);
  return d;
}

FrailtyDraws FrailtyDraws::from_values(int m, std::vector<double> e1, std::vector<double> e2) {
  if (m <= 0 || e1.size() != e2.size() || e1.size() % static_cast<std::size_t>(m) != 0) {
    throw InputError("frailty draws: sizes do not match " + std::to_string(m) + " draws per patient");
  }
  FrailtyDraws d;
  d.m_ = m;
  d.e1_ = std::move(e1);
  d.e2_ = std::move(e2);
  return d;
}

SimulatedLikelihood::SimulatedLikelihood(const Design& design, FrailtyDraws draws, int threads)
    : design_(design), draws_(std::move(draws)), threads_(threads) {
  const auto np = design_.patients.size();
  if (design_.layout.frailty() && draws_.patients() != np) {
    throw InputError("frailty draws cover " + std::to_string(draws_.patients()) +
                     " patients, design has " + std::to_string(np));
  }
  for (auto r : kAllTransitions) {
    const auto& td = design_.at(r);
    auto& rb = row_begin_[index_of(r)];
    rb.assign(np + 1, 0);
    // Rows are patient-grouped; count then prefix-sum.
    std::vector<int> count(np, 0);
    for (std::size_t j = 0; j < td.rows(); ++j) {
      const auto p = static_cast<std::size_t>(td.patient[j]);
      if (j > 0 && td.patient[j] < td.patient[j - 1]) {
        throw InputError("design rows are not grouped by patient");
      }
      ++count[p];
    }
    for (std::size_t p = 0; p < np; ++p) rb[p + 1] = rb[p] + count[p];
  }
}

struct SimulatedLikelihood::BlockOut {
  double value = 0.0;
  long long clamps = 0;
  Eigen::VectorXd beta_grad;  // stacked over transitions at layout offsets
  std::array<std::vector<double>, kNumTransitions> events, full, partial;
};

namespace {

struct TransitionCache {
  std::vector<double> alpha, log_alpha, width, cum;
};

TransitionCache make_cache(const ModelParams& p, TransitionId r) {
  TransitionCache c;
  const auto& g = p.grids[index_of(r)];
  const auto& la = p.at(r).log_alpha;
  const auto k = g.size();
  c.alpha.resize(k);
  c.log_alpha.resize(k);
  c.width.resize(k);
  c.cum.resize(k);
  double acc = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    c.log_alpha[j] = la[static_cast<Eigen::Index>(j)];
    c.alpha[j] = std::exp(c.log_alpha[j]);
    c.width[j] = g.upper_of(j) - g.lower(j);
    c.cum[j] = acc;
    if (j + 1 < k) acc += c.alpha[j] * c.width[j];
  }
  return c;
}

}  // namespace

void SimulatedLikelihood::eval_block(std::size_t b, const ModelParams& p, bool want_grad,
                                     BlockOut& out, double* per_patient) const {
  const std::size_t np = design_.patients.size();
  const std::size_t p0 = b * kBlock;
  const std::size_t p1 = std::min(np, p0 + kBlock);
  const bool frailty = p.frailty;
  const int m = frailty ? draws_.m() : 1;
  const double log_m = std::log(static_cast<double>(m));
  ClampTally tally;

  std::array<TransitionCache, kNumTransitions> cache;
  // Per-row scratch: e^η, Λ(t), partial overlap of the last interval.
  std::array<std::vector<double>, kNumTransitions> ex, lam, part;
  std::array<std::vector<double>, kNumTransitions> event_term;
  for (auto r : kAllTransitions) {
    const int ri = index_of(r);
    cache[ri] = make_cache(p, r);
    const auto& td = design_.at(r);
    const auto& grid = p.grids[ri];
    const int r0 = row_begin_[ri][p0];
    const int r1 = row_begin_[ri][p1];
    const auto n = static_cast<std::size_t>(r1 - r0);
    ex[ri].resize(n);
    lam[ri].resize(n);
    part[ri].resize(n);
    event_term[ri].assign(n, 0.0);
    const auto& beta = p.at(r).beta;
    const auto cols = td.x.cols();
    for (std::size_t j = 0; j < n; ++j) {
      const auto row = static_cast<std::size_t>(r0) + j;
      double eta = 0.0;
      if (cols > 0) eta = td.x.row(static_cast<Eigen::Index>(row)).dot(beta);
      const double e = clamped_exp(eta, &tally);
      const int k = td.interval[row];
      double partial = 0.0, big_lambda = 0.0;
      if (k >= 0) {
        const auto ku = static_cast<std::size_t>(k);
        partial = std::min(td.duration[row], grid.upper_of(ku)) - grid.lower(ku);
        big_lambda = cache[ri].cum[ku] + cache[ri].alpha[ku] * partial;
      }
      ex[ri][j] = e;
      lam[ri][j] = big_lambda;
      part[ri][j] = partial;
      if (td.event[row]) event_term[ri][j] = cache[ri].log_alpha[static_cast<std::size_t>(k)] + eta;
    }
  }

  std::vector<double> v(static_cast<std::size_t>(m)), w(static_cast<std::size_t>(m));
  std::array<double, kNumTransitions> loading_of{}, big_a{}, count{}, expect{};
  std::array<std::vector<double>, kNumTransitions> eomega;
  for (auto r : kAllTransitions) eomega[index_of(r)].resize(static_cast<std::size_t>(m));
  for (auto r : kAllTransitions) {
    const int ri = index_of(r);
    out.events[ri].assign(cache[ri].alpha.size(), 0.0);
    out.full[ri].assign(cache[ri].alpha.size(), 0.0);
    out.partial[ri].assign(cache[ri].alpha.size(), 0.0);
  }
  Eigen::VectorXd loading_grad = Eigen::VectorXd::Zero(kNumTransitions);

  for (std::size_t pi = p0; pi < p1; ++pi) {
    double constant = 0.0;
    for (auto r : kAllTransitions) {
      const int ri = index_of(r);
      const int rb = row_begin_[ri][p0];
      big_a[ri] = 0.0;
      count[ri] = 0.0;
      for (int row = row_begin_[ri][pi]; row < row_begin_[ri][pi + 1]; ++row) {
        const auto j = static_cast<std::size_t>(row - rb);
        big_a[ri] += ex[ri][j] * lam[ri][j];
        if (design_.at(r).event[static_cast<std::size_t>(row)]) {
          count[ri] += 1.0;
          constant += event_term[ri][j];
        }
      }
    }
    double li;
    if (!frailty) {
      li = constant;
      for (int ri = 0; ri < kNumTransitions; ++ri) {
        li -= big_a[ri];
        expect[ri] = 1.0;
      }
    } else {
      const double* e1 = draws_.e1(pi);
      const double* e2 = draws_.e2(pi);
      double vmax = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < m; ++k) {
        double vk = 0.0;
        for (auto r : kAllTransitions) {
          const int ri = index_of(r);
          const auto& t = p.at(r);
          const double omega = t.psi * e1[k] + t.phi * e2[k];
          const double eo = clamped_exp(omega, &tally);
          eomega[ri][static_cast<std::size_t>(k)] = eo;
          vk += count[ri] * omega - big_a[ri] * eo;
        }
        v[static_cast<std::size_t>(k)] = vk;
        vmax = std::max(vmax, vk);
      }
      double sum = 0.0;
      for (int k = 0; k < m; ++k) {
        w[static_cast<std::size_t>(k)] = std::exp(v[static_cast<std::size_t>(k)] - vmax);
        sum += w[static_cast<std::size_t>(k)];
      }
      li = constant + vmax + std::log(sum) - log_m;
      if (want_grad) {
        for (auto& wk : w) wk /= sum;
        for (auto r : kAllTransitions) {
          const int ri = index_of(r);
          double e = 0.0, lg = 0.0;
          const double* eps = psi_is_free(r) ? e1 : e2;
          for (int k = 0; k < m; ++k) {
            const auto ku = static_cast<std::size_t>(k);
            e += w[ku] * eomega[ri][ku];
            lg += w[ku] * eps[k] * (count[ri] - big_a[ri] * eomega[ri][ku]);
          }
          expect[ri] = e;
          loading_of[ri] = lg;
        }
        for (int ri = 0; ri < kNumTransitions; ++ri) loading_grad[ri] += loading_of[ri];
      }
    }
    if (!std::isfinite(li)) {
      // Name the offending spell: the first one with a non-finite term.
      std::string where = "spell " + std::to_string(design_.spells[static_cast<std::size_t>(
                                                        design_.patient_spells[pi].first)]
                                                        .spell_index);
      for (auto r : kAllTransitions) {
        const int ri = index_of(r);
        const int rb = row_begin_[ri][p0];
        for (int row = row_begin_[ri][pi]; row < row_begin_[ri][pi + 1]; ++row) {
          const auto j = static_cast<std::size_t>(row - rb);
          if (!std::isfinite(ex[ri][j] * lam[ri][j]) || !std::isfinite(event_term[ri][j])) {
            const auto s = static_cast<std::size_t>(design_.at(r).spell[static_cast<std::size_t>(row)]);
            where = "spell " + std::to_string(design_.spells[s].spell_index);
          }
        }
      }
      throw NumericalError("non-finite likelihood contribution for patient " +
                           design_.patients[pi] + ", " + where);
    }
    out.value += li;
    if (per_patient) per_patient[pi] = li;

    if (want_grad) {
      for (auto r : kAllTransitions) {
        const int ri = index_of(r);
        const auto& td = design_.at(r);
        const int rb = row_begin_[ri][p0];
        const auto off = static_cast<Eigen::Index>(design_.layout.beta_offset(r));
        const auto cols = td.x.cols();
        for (int row = row_begin_[ri][pi]; row < row_begin_[ri][pi + 1]; ++row) {
          const auto j = static_cast<std::size_t>(row - rb);
          const auto urow = static_cast<std::size_t>(row);
          const double c = td.event[urow] ? 1.0 : 0.0;
          const double s = expect[ri] * ex[ri][j];
          const double g = c - s * lam[ri][j];
          if (cols > 0) {
            out.beta_grad.segment(off, cols) += g * td.x.row(row).transpose();
          }
          const int k = td.interval[urow];
          if (k >= 0) {
            const auto ku = static_cast<std::size_t>(k);
            out.events[ri][ku] += c;
            out.full[ri][ku] += s;
            out.partial[ri][ku] += s * part[ri][j];
          }
        }
      }
    }
  }
  if (want_grad && frailty) {
    for (auto r : kAllTransitions) {
      if (auto li = design_.layout.loading_index(r)) {
        out.beta_grad[static_cast<Eigen::Index>(*li)] += loading_grad[index_of(r)];
      }
    }
  }
  out.clamps = tally.count;
}

double SimulatedLikelihood::evaluate(const Eigen::VectorXd& theta, Eigen::VectorXd* grad,
                                     ClampTally* tally, double* per_patient) const {
  const ModelParams p = design_.layout.unpack(theta);
  const auto np = design_.patients.size();
  const std::size_t n_blocks = (np + kBlock - 1) / kBlock;
  const auto dim = static_cast<Eigen::Index>(design_.layout.size());
  std::vector<BlockOut> outs(n_blocks);
  parallel_blocks(n_blocks, threads_, [&](std::size_t b) {
    outs[b].beta_grad = Eigen::VectorXd::Zero(grad ? dim : 0);
    eval_block(b, p, grad != nullptr, outs[b], per_patient);
  });
  double total = 0.0;
  long long clamps = 0;
  for (const auto& o : outs) {
    total += o.value;
    clamps += o.clamps;
  }
  if (tally) tally->count += clamps;
  if (grad) {
    grad->setZero(dim);
    std::array<std::vector<double>, kNumTransitions> events, full, partial;
    for (auto r : kAllTransitions) {
      const int ri = index_of(r);
      const auto k = p.grids[ri].size();
      events[ri].assign(k, 0.0);
      full[ri].assign(k, 0.0);
      partial[ri].assign(k, 0.0);
    }
    for (const auto& o : outs) {
      *grad += o.beta_grad;
      for (int ri = 0; ri < kNumTransitions; ++ri) {
        for (std::size_t k = 0; k < events[ri].size(); ++k) {
          events[ri][k] += o.events[ri][k];
          full[ri][k] += o.full[ri][k];
          partial[ri][k] += o.partial[ri][k];
        }
      }
    }
    // ∂/∂log α_k: events in k minus α_k times exposure, where rows beyond
    // interval k contribute its full width.
    for (auto r : kAllTransitions) {
      const int ri = index_of(r);
      const auto cache = make_cache(p, r);
      const auto off = design_.layout.baseline_offset(r);
      const auto k = events[ri].size();
      double beyond = 0.0;
      for (std::size_t j = k; j-- > 0;) {
        const double exposure = (beyond > 0.0 ? cache.width[j] * beyond : 0.0) + partial[ri][j];
        (*grad)[static_cast<Eigen::Index>(off + j)] = events[ri][j] - cache.alpha[j] * exposure;
        beyond += full[ri][j];
      }
    }
  }
  return total;
}

double SimulatedLikelihood::value(const Eigen::VectorXd& theta, ClampTally* tally) const {
  return evaluate(theta, nullptr, tally, nullptr);
}

double SimulatedLikelihood::value_and_gradient(const Eigen::VectorXd& theta, Eigen::VectorXd& grad,
                                               ClampTally* tally) const {
  return evaluate(theta, &grad, tally, nullptr);
}

Eigen::VectorXd SimulatedLikelihood::contributions(const Eigen::VectorXd& theta) const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(design_.patients.size()));
  evaluate(theta, nullptr, nullptr, out.data());
  return out;
}

Eigen::VectorXd starting_values(const Design& design) {
  const auto& layout = design.layout;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layout.size()));
  for (auto r : kAllTransitions) {
    const auto& td = design.at(r);
    const auto& grid = layout.grid(r);
    std::vector<double> events(grid.size(), 0.0), exposure(grid.size(), 0.0);
    for (std::size_t j = 0; j < td.rows(); ++j) {
      for (std::size_t k = 0; k < grid.size(); ++k) exposure[k] += grid.overlap(k, td.duration[j]);
      if (td.event[j]) events[static_cast<std::size_t>(td.interval[j])] += 1.0;
    }
    const auto off = layout.baseline_offset(r);
    for (std::size_t k = 0; k < grid.size(); ++k) {
      double rate = 1e-3;
      if (exposure[k] > 0.0) rate = std::max(events[k], 0.5) / exposure[k];
      x[static_cast<Eigen::Index>(off + k)] = std::log(rate);
    }
    if (auto li = layout.loading_index(r)) x[static_cast<Eigen::Index>(*li)] = 0.1;
  }
  return x;
}

std::optional<Eigen::MatrixXd> information_covariance(const Eigen::MatrixXd& hessian,
                                                      std::string* reason) {
  if (!hessian.allFinite()) {
    if (reason) *reason = "Hessian has non-finite entries";
    return std::nullopt;
  }
  const Eigen::MatrixXd info = -hessian;
  Eigen::LLT<Eigen::MatrixXd> llt(info);
  if (llt.info() != Eigen::Success) {
    if (reason) *reason = "negative Hessian is not positive definite; covariance omitted";
    return std::nullopt;
  }
  Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(info.rows(), info.cols()));
  cov = 0.5 * (cov + cov.transpose());
  if (!cov.allFinite() || (cov.diagonal().array() <= 0.0).any()) {
    if (reason) *reason = "negative Hessian is numerically singular; covariance omitted";
    return std::nullopt;
  }
  return cov;
}

namespace {

Eigen::Matrix4d correlation_at(const ParamLayout& layout, const Eigen::VectorXd& x) {
  return frailty_correlation(layout.unpack(x).loadings());
}

}  // namespace

Eigen::Matrix4d correlation_se(const ParamLayout& layout, const Eigen::VectorXd& estimate,
                               const Eigen::MatrixXd& covariance) {
  std::vector<Eigen::Index> idx;
  for (auto r : kAllTransitions) {
    if (auto li = layout.loading_index(r)) idx.push_back(static_cast<Eigen::Index>(*li));
  }
  const auto q = static_cast<Eigen::Index>(idx.size());
  Eigen::Matrix<double, 16, Eigen::Dynamic> jac(16, q);
  for (Eigen::Index a = 0; a < q; ++a) {
    const double h = 1e-6 * std::max(1.0, std::abs(estimate[idx[a]]));
    Eigen::VectorXd xp = estimate, xm = estimate;
    xp[idx[a]] += h;
    xm[idx[a]] -= h;
    const Eigen::Matrix4d d = (correlation_at(layout, xp) - correlation_at(layout, xm)) / (2 * h);
    jac.col(a) = Eigen::Map<const Eigen::Matrix<double, 16, 1>>(d.data());
  }
  Eigen::MatrixXd sub(q, q);
  for (Eigen::Index a = 0; a < q; ++a) {
    for (Eigen::Index c = 0; c < q; ++c) sub(a, c) = covariance(idx[a], idx[c]);
  }
  const Eigen::VectorXd var = (jac * sub * jac.transpose()).diagonal();
  Eigen::Matrix4d se;
  for (int i = 0; i < 16; ++i) se.data()[i] = std::sqrt(std::max(var[i], 0.0));
  return se;
}

FitResult fit(const Design& design, const FitOptions& options) {
  const auto& spec = design.spec;
  FrailtyDraws draws = spec.frailty
                           ? FrailtyDraws(design.patients, spec.draws, spec.seed, spec.draw_type)
                           : FrailtyDraws::zeros(design.patients.size(), 1);
  SimulatedLikelihood lik(design, std::move(draws), options.threads);
  ValueGradient fg = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    return lik.value_and_gradient(x, g);
  };

  FitResult res;
  res.spec = spec;
  res.layout = design.layout;
  res.patients = design.patients.size();
  res.spells = design.spells.size();
  res.diagnostics = design.warnings;

  OptimizerOptions oo;
  oo.max_iter = options.max_iter;
  oo.tol = options.tol;
  oo.on_iteration = options.on_iteration;
  const Eigen::VectorXd x0 = options.start ? *options.start : starting_values(design);
  if (static_cast<std::size_t>(x0.size()) != design.layout.size()) {
    throw InputError("starting vector does not match the parameter layout");
  }
  auto opt = maximize_bfgs(fg, x0, oo);
  res.estimate = opt.x;
  res.loglik = opt.f;
  res.iterations = opt.iterations;
  res.evaluations = opt.evaluations;
  res.converged = opt.converged;
  res.message = opt.message;
  res.trace = opt.trace;
  res.gradient_supnorm = opt.gradient.size() ? opt.gradient.cwiseAbs().maxCoeff() : 0.0;
  if (!std::isfinite(res.loglik)) throw NumericalError("log-likelihood is not finite: " + opt.message);

  ClampTally tally;
  lik.value(res.estimate, &tally);
  res.clamps = tally.count;
  if (res.clamps > 0) {
    res.diagnostics.push_back("exponent clamped " + std::to_string(res.clamps) +
                              " times at the estimate");
  }

  const auto p = static_cast<Eigen::Index>(design.layout.size());
  res.se = Eigen::VectorXd::Constant(p, std::numeric_limits<double>::quiet_NaN());
  if (options.covariance) {
    const Eigen::MatrixXd h = numeric_hessian(fg, res.estimate, options.hessian_step);
    std::string reason;
    res.covariance = information_covariance(h, &reason);
    if (res.covariance) {
      res.se = res.covariance->diagonal().cwiseSqrt();
    } else {
      res.diagnostics.push_back(reason);
    }
  }
  if (spec.frailty) {
    try {
      res.correlation = frailty_correlation(res.params().loadings());
      if (res.covariance) {
        res.correlation_se = correlation_se(design.layout, res.estimate, *res.covariance);
      }
    } catch (const NumericalError& ex) {
      res.diagnostics.push_back(ex.what());
    }
  }
  return res;
}

double chi_square_sf(double x, int df) {
  if (df < 1) throw InputError("chi-square needs at least one degree of freedom");
  if (x <= 0.0) return 1.0;
  return boost::math::gamma_q(0.5 * df, 0.5 * x);
}

WaldResult wald_test(const FitResult& fit, const std::vector<std::string>& names) {
  if (names.empty()) throw InputError("Wald test needs at least one coefficient");
  if (!fit.covariance) throw InputError("Wald test needs a covariance matrix");
  const auto q = static_cast<Eigen::Index>(names.size());
  std::vector<Eigen::Index> idx;
  for (const auto& n : names) idx.push_back(static_cast<Eigen::Index>(fit.layout.index(n)));
  Eigen::VectorXd theta(q);
  Eigen::MatrixXd v(q, q);
  for (Eigen::Index a = 0; a < q; ++a) {
    theta[a] = fit.estimate[idx[static_cast<std::size_t>(a)]];
    for (Eigen::Index b = 0; b < q; ++b) {
      v(a, b) = (*fit.covariance)(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(b)]);
    }
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(v);
  const double top = v.diagonal().cwiseAbs().maxCoeff();
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().minCoeff() <= 1e-14 * std::max(top, 1e-300)) {
    throw NumericalError("singular sub-covariance for the Wald test");
  }
  WaldResult w;
  w.df = static_cast<int>(q);
  w.statistic = theta.dot(ldlt.solve(theta));
  w.p_value = chi_square_sf(w.statistic, w.df);
  return w;
}

namespace {

nlohmann::json matrix4_json(const Eigen::Matrix4d& m) {
  nlohmann::json j = nlohmann::json::array();
  for (int i = 0; i < 4; ++i) {
    j.push_back({m(i, 0), m(i, 1), m(i, 2), m(i, 3)});
  }
  return j;
}

Eigen::Matrix4d matrix4_from(const nlohmann::json& j) {
  Eigen::Matrix4d m;
  for (int i = 0; i < 4; ++i) {
    for (int k = 0; k < 4; ++k) m(i, k) = j.at(i).at(k).get<double>();
  }
  return m;
}

nlohmann::json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

}  // namespace

nlohmann::json FitResult::to_json() const {
  nlohmann::json j;
  j["spec"] = spec.to_json();
  for (auto r : kAllTransitions) {
    j["columns"][std::to_string(number_of(r))] = layout.covariates(r);
  }
  j["parameters"] = nlohmann::json::array();
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& e = layout.entry(i);
    j["parameters"].push_back({{"key", e.key()},
                               {"transition", number_of(e.transition)},
                               {"block", block_name(e.block)},
                               {"name", e.name},
                               {"estimate", estimate[static_cast<Eigen::Index>(i)]},
                               {"se", number_or_null(se[static_cast<Eigen::Index>(i)])}});
  }
  j["loglik"] = loglik;
  j["converged"] = converged;
  j["message"] = message;
  j["iterations"] = iterations;
  j["evaluations"] = evaluations;
  j["gradient_supnorm"] = gradient_supnorm;
  j["trace"] = trace;
  j["clamps"] = clamps;
  j["patients"] = patients;
  j["spells"] = spells;
  j["diagnostics"] = diagnostics;
  j["covariance"] = covariance ? nlohmann::json{{"path", "covariance.bin"},
                                                {"dim", covariance->rows()},
                                                {"format", "float64-le-row-major"}}
                               : nlohmann::json(nullptr);
  j["correlation"] = correlation ? matrix4_json(*correlation) : nlohmann::json(nullptr);
  j["correlation_se"] = correlation_se ? matrix4_json(*correlation_se) : nlohmann::json(nullptr);
  return j;
}

void FitResult::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "fit.json");
    if (!out) throw InputError("cannot write " + (dir / "fit.json").string());
    out << to_json().dump(2) << "\n";
  }
  {
    std::ofstream out(dir / "coefficients.csv");
    if (!out) throw InputError("cannot write " + (dir / "coefficients.csv").string());
    out << "transition,block,name,estimate,se\n";
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const auto& e = layout.entry(i);
      const double s = se[static_cast<Eigen::Index>(i)];
      out << number_of(e.transition) << ',' << block_name(e.block) << ',' << e.name << ','
          << csv::format_double(estimate[static_cast<Eigen::Index>(i)]) << ','
          << (std::isfinite(s) ? csv::format_double(s) : std::string("NA")) << '\n';
    }
  }
  if (covariance) {
    std::ofstream out(dir / "covariance.bin", std::ios::binary);
    if (!out) throw InputError("cannot write " + (dir / "covariance.bin").string());
    const auto n = covariance->rows();
    // Host byte order is little-endian on every supported platform.
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index k = 0; k < n; ++k) {
        const double v = (*covariance)(i, k);
        out.write(reinterpret_cast<const char*>(&v), sizeof v);
      }
    }
  }
}

FitResult FitResult::read(const std::filesystem::path& dir) {
  std::ifstream in(dir / "fit.json");
  if (!in) throw InputError("cannot open " + (dir / "fit.json").string());
  nlohmann::json j;
  try {
    in >> j;
    FitResult f;
    f.spec = ModelSpec::from_json(j.at("spec"));
    std::array<std::vector<std::string>, kNumTransitions> cols;
    for (auto r : kAllTransitions) {
      cols[index_of(r)] = j.at("columns").at(std::to_string(number_of(r))).get<std::vector<std::string>>();
    }
    f.layout = ParamLayout(f.spec.grids, cols, f.spec.frailty);
    const auto& params = j.at("parameters");
    if (params.size() != f.layout.size()) throw InputError("fit.json parameter count mismatch");
    const auto p = static_cast<Eigen::Index>(f.layout.size());
    f.estimate.resize(p);
    f.se.resize(p);
    for (Eigen::Index i = 0; i < p; ++i) {
      const auto& e = params.at(static_cast<std::size_t>(i));
      if (e.at("key").get<std::string>() != f.layout.entry(static_cast<std::size_t>(i)).key()) {
        throw InputError("fit.json parameter order does not match its layout");
      }
      f.estimate[i] = e.at("estimate").get<double>();
      f.se[i] = e.at("se").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                     : e.at("se").get<double>();
    }
    f.loglik = j.at("loglik").get<double>();
    f.converged = j.at("converged").get<bool>();
    f.message = j.at("message").get<std::string>();
    f.iterations = j.at("iterations").get<int>();
    f.evaluations = j.at("evaluations").get<int>();
    f.gradient_supnorm = j.at("gradient_supnorm").get<double>();
    f.trace = j.at("trace").get<std::vector<double>>();
    f.clamps = j.at("clamps").get<long long>();
    f.patients = j.at("patients").get<std::size_t>();
    f.spells = j.at("spells").get<std::size_t>();
    f.diagnostics = j.at("diagnostics").get<std::vector<std::string>>();
    if (!j.at("correlation").is_null()) f.correlation = matrix4_from(j.at("correlation"));
    if (!j.at("correlation_se").is_null()) f.correlation_se = matrix4_from(j.at("correlation_se"));
    if (!j.at("covariance").is_null()) {
      const auto path = dir / j.at("covariance").at("path").get<std::string>();
      std::ifstream bin(path, std::ios::binary);
      if (!bin) throw InputError("cannot open " + path.string());
      Eigen::MatrixXd cov(p, p);
      for (Eigen::Index i = 0; i < p; ++i) {
        for (Eigen::Index k = 0; k < p; ++k) {
          double v = 0.0;
          bin.read(reinterpret_cast<char*>(&v), sizeof v);
          cov(i, k) = v;
        }
      }
      if (!bin) throw InputError(path.string() + " is truncated");
      f.covariance = std::move(cov);
    }
    return f;
  } catch (const nlohmann::json::exception& ex) {
    throw InputError((dir / "fit.json").string() + ": " + ex.what());
  }
}

}  // namespace msms
