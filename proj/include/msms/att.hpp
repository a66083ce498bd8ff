#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "msms/estimation.hpp"

namespace msms {

// E[min(T, H)] for a single-risk latent duration T with hazard k·λ0(t),
// integrating the survival segment by segment in closed form. H = +inf
// gives the plain mean. Throws NumericalError("non-integrable tail") when the
// survival does not vanish on an unbounded range.
double latent_mean(const PiecewiseBaseline& baseline, double k, double horizon);

// Default integration horizon: the grid's censoring horizon, +inf when the
// last interval is unbounded.
double default_horizon(const PiecewiseGrid& grid);

// Linear predictor of a treated row split into the part carried by the
// treatment columns (tau) and everything else (z).
struct TreatedRow {
  double z = 0.0;
  double tau = 0.0;
};

// Mean over rows of the mean over ε of E[min(T, H) | k = exp(tau·mc + z + ω_r(ε))].
double expected_duration(const ModelParams& params, TransitionId r,
                         std::span<const TreatedRow> rows, std::span<const Eps> eps, int mc,
                         double horizon);

// Standard-normal pairs for the duration integrals, from their own stream.
std::vector<Eps> att_eps_draws(int n, std::uint64_t seed);

// Parameter vectors drawn from N(estimate, covariance) through a PSD
// eigen-factor; rows are draws. Throws NumericalError when the covariance is
// not positive semidefinite.
Eigen::MatrixXd krinsky_robb_draws(const Eigen::VectorXd& estimate,
                                   const Eigen::MatrixXd& covariance, int n, std::uint64_t seed);

// Sample SD of a vector functional over Krinsky–Robb parameter draws.
Eigen::VectorXd krinsky_robb_sd(const Eigen::VectorXd& estimate, const Eigen::MatrixXd& covariance,
                                const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& functional,
                                int n_draws, std::uint64_t seed, int threads = 1);

double krinsky_robb_sd(const Eigen::VectorXd& estimate, const Eigen::MatrixXd& covariance,
                       const std::function<double(const Eigen::VectorXd&)>& functional,
                       int n_draws, std::uint64_t seed, int threads = 1);

struct AttOptions {
  std::string group = "overall";  // overall | specialty
  int eps_draws = 100;
  std::uint64_t seed = 1;  // ε stream
  int kr_draws = 500;
  std::uint64_t kr_seed = 2;  // parameter-draw stream
  std::size_t kr_max_rows = 2000;  // treated rows per group used inside each replicate
  std::optional<double> horizon;
  int threads = 1;
};

struct AttEntry {
  TransitionId transition = TransitionId::HospitalToHome;
  std::string group;
  double hazard_att = 0.0;  // mean treatment log-hazard shift over treated rows
  double hazard_se = 0.0;   // Krinsky–Robb
  double estimate = 0.0;    // D(1) - D(0), days
  double se = 0.0;          // Krinsky–Robb
  double d1 = 0.0;
  double d0 = 0.0;
  double eps_se = 0.0;  // Monte Carlo error of `estimate` from the ε draws
  std::size_t rows = 0;
  std::size_t kr_rows = 0;
  bool sign_consistent = true;  // duration effect opposite to the hazard effect
};

struct AttResult {
  std::vector<AttEntry> entries;
  double horizon = 0.0;
  int eps_draws = 0;
  int kr_draws = 0;
  std::vector<std::string> diagnostics;

  nlohmann::json to_json() const;
  void write_csv(const std::filesystem::path& path) const;
};

// Duration ATT for transition r at the estimates of `fit`. `design` must be
// built from the fitted spec (same columns). Throws InputError when the
// treated subsample of a requested group is empty.
AttResult att_duration(const FitResult& fit, const Design& design, TransitionId r,
                       const AttOptions& options = {});

// Same, at an explicit parameter vector (no standard errors when
// `covariance` is null).
AttResult att_duration_at(const Eigen::VectorXd& theta, const Eigen::MatrixXd* covariance,
                          const Design& design, TransitionId r, const AttOptions& options = {});

}  // namespace msms
