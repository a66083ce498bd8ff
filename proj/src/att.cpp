#include "msms/att.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <fstream>

#include <Eigen/Eigenvalues>

#include "csv.hpp"
#include "msms/parallel.hpp"
#include "msms/rng.hpp"

namespace msms {

double default_horizon(const PiecewiseGrid& grid) { return grid.bounded() ? grid.upper : kInf; }

double latent_mean(const PiecewiseBaseline& baseline, double k, double horizon) {
  const auto& g = baseline.grid;
  if (!(horizon > 0.0)) throw InputError("horizon must be positive");
  if (g.size() == 0) throw InputError("empty baseline grid");
  // Survival is 1 before the first break.
  double total = std::min(g.lower(0), horizon);
  double cum = 0.0;
  for (std::size_t j = 0; j < g.size(); ++j) {
    const double a = g.lower(j);
    if (a >= horizon) return total;
    const double e = std::min(g.upper_of(j), horizon);
    const double h = k * baseline.rates[j];
    const double s_a = std::exp(-cum);
    if (std::isinf(e)) {
      if (!(h > 0.0)) throw NumericalError("non-integrable tail");
      return total + s_a / h;
    }
    const double w = e - a;
    const double hw = h * w;
    total += s_a * (hw < 1e-8 ? w * (1.0 - 0.5 * hw) : -std::expm1(-hw) / h);
    cum += hw;
  }
  // Past a bounded grid the hazard is zero and survival stays flat.
  if (horizon > g.upper) {
    if (std::isinf(horizon)) throw NumericalError("non-integrable tail");
    total += std::exp(-cum) * (horizon - g.upper);
  }
  return total;
}

double expected_duration(const ModelParams& params, TransitionId r,
                         std::span<const TreatedRow> rows, std::span<const Eps> eps, int mc,
                         double horizon) {
  if (rows.empty() || eps.empty()) throw InputError("expected_duration needs rows and draws");
  const auto baseline = params.baseline(r);
  double outer = 0.0;
  for (const auto& row : rows) {
    double inner = 0.0;
    for (const auto& e : eps) {
      const double k = std::exp(row.tau * mc + row.z + params.frailty_term(r, e));
      inner += latent_mean(baseline, k, horizon);
    }
    outer += inner / static_cast<double>(eps.size());
  }
  return outer / static_cast<double>(rows.size());
}

std::vector<Eps> att_eps_draws(int n, std::uint64_t seed) {
  if (n < 1) throw InputError("need at least one frailty draw");
  Rng rng(seed, "att-frailty", "draws");
  std::vector<Eps> out(static_cast<std::size_t>(n));
  for (auto& e : out) {
    e.e1 = rng.normal();
    e.e2 = rng.normal();
  }
  return out;
}

Eigen::MatrixXd krinsky_robb_draws(const Eigen::VectorXd& estimate,
                                   const Eigen::MatrixXd& covariance, int n, std::uint64_t seed) {
  const auto p = estimate.size();
  if (covariance.rows() != p || covariance.cols() != p) {
    throw InputError("covariance does not match the parameter vector");
  }
  if (n < 2) throw InputError("Krinsky-Robb needs at least two draws");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (covariance + covariance.transpose()));
  if (es.info() != Eigen::Success) throw NumericalError("covariance factorization failed");
  Eigen::VectorXd ev = es.eigenvalues();
  const double top = std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
  if (ev.minCoeff() < -1e-8 * top) {
    throw NumericalError("covariance is not positive semidefinite");
  }
  ev = ev.cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd factor = es.eigenvectors() * ev.asDiagonal();
  Rng rng(seed, "krinsky-robb", "draws");
  Eigen::MatrixXd out(n, p);
  Eigen::VectorXd z(p);
  for (int b = 0; b < n; ++b) {
    for (Eigen::Index j = 0; j < p; ++j) z[j] = rng.normal();
    out.row(b) = (estimate + factor * z).transpose();
  }
  return out;
}

Eigen::VectorXd krinsky_robb_sd(const Eigen::VectorXd& estimate, const Eigen::MatrixXd& covariance,
                                const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& functional,
                                int n_draws, std::uint64_t seed, int threads) {
  const Eigen::MatrixXd draws = krinsky_robb_draws(estimate, covariance, n_draws, seed);
  std::vector<Eigen::VectorXd> values(static_cast<std::size_t>(n_draws));
  parallel_blocks(static_cast<std::size_t>(n_draws), threads, [&](std::size_t b) {
    values[b] = functional(draws.row(static_cast<Eigen::Index>(b)).transpose());
  });
  const auto q = values.front().size();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(q);
  for (const auto& v : values) mean += v;
  mean /= n_draws;
  Eigen::VectorXd ss = Eigen::VectorXd::Zero(q);
  for (const auto& v : values) ss += (v - mean).cwiseAbs2();
  return (ss / (n_draws - 1)).cwiseSqrt();
}

double krinsky_robb_sd(const Eigen::VectorXd& estimate, const Eigen::MatrixXd& covariance,
                       const std::function<double(const Eigen::VectorXd&)>& functional,
                       int n_draws, std::uint64_t seed, int threads) {
  return krinsky_robb_sd(
      estimate, covariance,
      [&](const Eigen::VectorXd& x) { return Eigen::VectorXd::Constant(1, functional(x)); },
      n_draws, seed, threads)[0];
}

namespace {

struct Group {
  std::string name;
  std::vector<std::size_t> rows;  // treated rows of the transition design
  std::vector<std::size_t> kr_rows;
};

std::vector<TreatedRow> split_rows(const TransitionDesign& td, const Eigen::VectorXd& beta,
                                   const std::vector<std::size_t>& rows) {
  std::vector<bool> is_treatment(static_cast<std::size_t>(td.x.cols()), false);
  for (int c : td.treatment_columns) is_treatment[static_cast<std::size_t>(c)] = true;
  std::vector<TreatedRow> out;
  out.reserve(rows.size());
  for (auto i : rows) {
    TreatedRow tr;
    for (Eigen::Index c = 0; c < td.x.cols(); ++c) {
      const double term = td.x(static_cast<Eigen::Index>(i), c) * beta[c];
      (is_treatment[static_cast<std::size_t>(c)] ? tr.tau : tr.z) += term;
    }
    out.push_back(tr);
  }
  return out;
}

struct Contrast {
  double d1 = 0.0, d0 = 0.0, hazard = 0.0;
  double eps_se = 0.0;
};

// Two-stage average of D(1) and D(0); per-draw differences give the Monte
// Carlo error of the contrast.
Contrast contrast(const PiecewiseBaseline& baseline, const ModelParams& p, TransitionId r,
                  const std::vector<TreatedRow>& rows, const std::vector<Eps>& eps,
                  double horizon, int threads) {
  constexpr std::size_t kRowsPerBlock = 256;
  const std::size_t n_blocks = (rows.size() + kRowsPerBlock - 1) / kRowsPerBlock;
  const std::size_t m = eps.size();
  std::vector<double> omega(m);
  for (std::size_t k = 0; k < m; ++k) omega[k] = p.frailty_term(r, eps[k]);
  struct Part {
    std::vector<double> d1, d0;  // per draw, summed over rows
    double tau = 0.0;
  };
  std::vector<Part> parts(n_blocks);
  parallel_blocks(n_blocks, threads, [&](std::size_t b) {
    auto& part = parts[b];
    part.d1.assign(m, 0.0);
    part.d0.assign(m, 0.0);
    const std::size_t lo = b * kRowsPerBlock, hi = std::min(rows.size(), lo + kRowsPerBlock);
    for (std::size_t i = lo; i < hi; ++i) {
      part.tau += rows[i].tau;
      for (std::size_t k = 0; k < m; ++k) {
        const double base = rows[i].z + omega[k];
        part.d0[k] += latent_mean(baseline, std::exp(base), horizon);
        part.d1[k] += latent_mean(baseline, std::exp(rows[i].tau + base), horizon);
      }
    }
  });
  std::vector<double> d1(m, 0.0), d0(m, 0.0);
  double tau = 0.0;
  for (const auto& part : parts) {
    tau += part.tau;
    for (std::size_t k = 0; k < m; ++k) {
      d1[k] += part.d1[k];
      d0[k] += part.d0[k];
    }
  }
  const double n = static_cast<double>(rows.size());
  Contrast c;
  c.hazard = tau / n;
  std::vector<double> diff(m);
  for (std::size_t k = 0; k < m; ++k) {
    c.d1 += d1[k] / n;
    c.d0 += d0[k] / n;
    diff[k] = (d1[k] - d0[k]) / n;
  }
  c.d1 /= static_cast<double>(m);
  c.d0 /= static_cast<double>(m);
  if (m > 1) {
    double mean = 0.0, ss = 0.0;
    for (double d : diff) mean += d;
    mean /= static_cast<double>(m);
    for (double d : diff) ss += (d - mean) * (d - mean);
    c.eps_se = std::sqrt(ss / static_cast<double>(m - 1) / static_cast<double>(m));
  }
  return c;
}

std::vector<std::size_t> evenly_spaced(const std::vector<std::size_t>& rows, std::size_t cap) {
  if (cap == 0 || rows.size() <= cap) return rows;
  std::vector<std::size_t> out;
  out.reserve(cap);
  for (std::size_t i = 0; i < cap; ++i) out.push_back(rows[i * rows.size() / cap]);
  return out;
}

}  // namespace

AttResult att_duration_at(const Eigen::VectorXd& theta, const Eigen::MatrixXd* covariance,
                          const Design& design, TransitionId r, const AttOptions& options) {
  const auto& td = design.at(r);
  if (td.treatment_columns.empty()) {
    throw InputError("no treated rows for group " + options.group + ": transition " +
                     std::to_string(number_of(r)) + " has no treatment columns");
  }
  if (static_cast<std::size_t>(theta.size()) != design.layout.size()) {
    throw InputError("parameter vector does not match the design layout");
  }
  std::vector<Group> groups;
  if (options.group == "overall") {
    Group g{"overall", {}, {}};
    for (std::size_t i = 0; i < td.rows(); ++i) {
      if (td.treated(i)) g.rows.push_back(i);
    }
    if (g.rows.empty()) throw InputError("no treated rows for group overall");
    groups.push_back(std::move(g));
  } else if (options.group == "specialty") {
    std::vector<Group> by(design.specialty_categories.size());
    for (std::size_t c = 0; c < by.size(); ++c) by[c].name = design.specialty_categories[c];
    for (std::size_t i = 0; i < td.rows(); ++i) {
      if (td.treated(i)) by[static_cast<std::size_t>(td.group[i])].rows.push_back(i);
    }
    for (auto& g : by) {
      if (!g.rows.empty()) groups.push_back(std::move(g));
    }
    if (groups.empty()) throw InputError("no treated rows in any specialty");
  } else {
    throw InputError("unknown ATT group '" + options.group + "' (overall|specialty)");
  }

  AttResult res;
  const auto& grid = design.layout.grid(r);
  res.horizon = options.horizon ? *options.horizon : default_horizon(grid);
  const ModelParams p = design.layout.unpack(theta);
  const std::vector<Eps> eps = p.frailty ? att_eps_draws(options.eps_draws, options.seed)
                                         : std::vector<Eps>{Eps{}};
  res.eps_draws = static_cast<int>(eps.size());
  const auto baseline = p.baseline(r);

  for (auto& g : groups) {
    const auto rows = split_rows(td, p.at(r).beta, g.rows);
    const auto c = contrast(baseline, p, r, rows, eps, res.horizon, options.threads);
    AttEntry e;
    e.transition = r;
    e.group = g.name;
    e.hazard_att = c.hazard;
    e.d1 = c.d1;
    e.d0 = c.d0;
    e.estimate = c.d1 - c.d0;
    e.eps_se = c.eps_se;
    e.rows = g.rows.size();
    g.kr_rows = evenly_spaced(g.rows, options.kr_max_rows);
    e.kr_rows = g.kr_rows.size();
    e.sign_consistent = e.hazard_att == 0.0 || e.estimate == 0.0 ||
                        (e.hazard_att > 0.0) != (e.estimate > 0.0);
    if (!e.sign_consistent) {
      res.diagnostics.push_back("transition " + std::to_string(number_of(r)) + " group " + g.name +
                                ": duration effect has the same sign as the hazard effect");
    }
    res.entries.push_back(e);
  }

  if (covariance) {
    res.kr_draws = options.kr_draws;
    auto functional = [&](const Eigen::VectorXd& x) {
      const ModelParams q = design.layout.unpack(x);
      const auto b = q.baseline(r);
      Eigen::VectorXd out(static_cast<Eigen::Index>(2 * groups.size()));
      for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto rows = split_rows(td, q.at(r).beta, groups[gi].kr_rows);
        const auto c = contrast(b, q, r, rows, eps, res.horizon, 1);
        out[static_cast<Eigen::Index>(2 * gi)] = c.hazard;
        out[static_cast<Eigen::Index>(2 * gi + 1)] = c.d1 - c.d0;
      }
      return out;
    };
    const Eigen::VectorXd sd = krinsky_robb_sd(theta, *covariance, functional, options.kr_draws,
                                               options.kr_seed, options.threads);
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      res.entries[gi].hazard_se = sd[static_cast<Eigen::Index>(2 * gi)];
      res.entries[gi].se = sd[static_cast<Eigen::Index>(2 * gi + 1)];
    }
  } else {
    for (auto& e : res.entries) {
      e.hazard_se = std::numeric_limits<double>::quiet_NaN();
      e.se = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return res;
}

AttResult att_duration(const FitResult& fit, const Design& design, TransitionId r,
                       const AttOptions& options) {
  if (fit.layout.size() != design.layout.size()) {
    throw InputError("fit and design have different parameter layouts");
  }
  for (std::size_t i = 0; i < fit.layout.size(); ++i) {
    if (fit.layout.entry(i).key() != design.layout.entry(i).key()) {
      throw InputError("fit and design disagree on parameter " + fit.layout.entry(i).key());
    }
  }
  if (!fit.converged) throw InputError("duration ATT requires a converged fit");
  auto res = att_duration_at(fit.estimate, fit.covariance ? &*fit.covariance : nullptr, design, r,
                             options);
  if (!fit.covariance) res.diagnostics.push_back("fit has no covariance; standard errors omitted");
  return res;
}

namespace {

nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

nlohmann::json AttResult::to_json() const {
  nlohmann::json j;
  j["horizon"] = num(horizon);
  j["eps_draws"] = eps_draws;
  j["kr_draws"] = kr_draws;
  j["diagnostics"] = diagnostics;
  j["entries"] = nlohmann::json::array();
  for (const auto& e : entries) {
    j["entries"].push_back({{"transition", number_of(e.transition)},
                            {"group", e.group},
                            {"estimate", num(e.estimate)},
                            {"se", num(e.se)},
                            {"hazard_att", num(e.hazard_att)},
                            {"hazard_se", num(e.hazard_se)},
                            {"d1", num(e.d1)},
                            {"d0", num(e.d0)},
                            {"eps_se", num(e.eps_se)},
                            {"rows", e.rows},
                            {"kr_rows", e.kr_rows},
                            {"sign_consistent", e.sign_consistent}});
  }
  return j;
}

void AttResult::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  auto f = [](double v) { return std::isfinite(v) ? csv::format_double(v) : std::string("NA"); };
  out << "transition,group,estimate,se,hazard_att,hazard_se,d1,d0,rows\n";
  for (const auto& e : entries) {
    csv::check_field(e.group, "group");
    out << number_of(e.transition) << ',' << e.group << ',' << f(e.estimate) << ',' << f(e.se)
        << ',' << f(e.hazard_att) << ',' << f(e.hazard_se) << ',' << f(e.d1) << ',' << f(e.d0)
        << ',' << e.rows << '\n';
  }
}

}  // namespace msms
