#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "msms/design.hpp"
#include "msms/optimizer.hpp"

namespace msms {

// Per-patient standard-normal pairs, generated once from (seed, patient_id)
// and frozen for the whole fit.
class FrailtyDraws {
 public:
  FrailtyDraws() = default;
  FrailtyDraws(const std::vector<std::string>& patients, int m, std::uint64_t seed,
               DrawType type = DrawType::Pseudo);
  // All-zero draws (M pairs of (0,0) per patient).
  static FrailtyDraws zeros(std::size_t patients, int m);
  // Explicit draws, patient-major with m pairs per patient.
  static FrailtyDraws from_values(int m, std::vector<double> e1, std::vector<double> e2);

  int m() const { return m_; }
  std::size_t patients() const { return m_ ? e1_.size() / static_cast<std::size_t>(m_) : 0; }
  Eps at(std::size_t patient, int k) const {
    const auto i = patient * static_cast<std::size_t>(m_) + static_cast<std::size_t>(k);
    return {e1_[i], e2_[i]};
  }
  const double* e1(std::size_t patient) const { return e1_.data() + patient * static_cast<std::size_t>(m_); }
  const double* e2(std::size_t patient) const { return e2_.data() + patient * static_cast<std::size_t>(m_); }

 private:
  int m_ = 0;
  std::vector<double> e1_, e2_;
};

// Simulated log-likelihood Σ_i log((1/M) Σ_m Π_spells f(spell | ε_i^m)) over
// a design. Patients are processed in fixed blocks whose partial sums are
// reduced in block order, so the value does not depend on the thread count.
class SimulatedLikelihood {
 public:
  SimulatedLikelihood(const Design& design, FrailtyDraws draws, int threads = 1);

  double value(const Eigen::VectorXd& theta, ClampTally* tally = nullptr) const;
  double value_and_gradient(const Eigen::VectorXd& theta, Eigen::VectorXd& grad,
                            ClampTally* tally = nullptr) const;
  // log L_i per patient.
  Eigen::VectorXd contributions(const Eigen::VectorXd& theta) const;

  const Design& design() const { return design_; }
  const FrailtyDraws& draws() const { return draws_; }
  void set_threads(int threads) { threads_ = threads; }

  static constexpr std::size_t kBlock = 256;

 private:
  struct BlockOut;
  void eval_block(std::size_t b, const ModelParams& p, bool want_grad, BlockOut& out,
                  double* per_patient) const;
  double evaluate(const Eigen::VectorXd& theta, Eigen::VectorXd* grad, ClampTally* tally,
                  double* per_patient) const;

  const Design& design_;
  FrailtyDraws draws_;
  int threads_;
  // First row of each patient per transition, size patients + 1.
  std::array<std::vector<int>, kNumTransitions> row_begin_;
};

// Occurrence/exposure log-rates per interval, zero coefficients, loadings 0.1.
Eigen::VectorXd starting_values(const Design& design);

struct FitOptions {
  int max_iter = 500;
  double tol = 1e-8;
  int threads = 1;
  bool covariance = true;
  double hessian_step = 1e-5;
  std::optional<Eigen::VectorXd> start;  // overrides starting_values
  std::function<void(int, double, double)> on_iteration;
};

struct FitResult {
  ModelSpec spec;
  ParamLayout layout;
  Eigen::VectorXd estimate;
  std::optional<Eigen::MatrixXd> covariance;
  Eigen::VectorXd se;  // NaN where unavailable
  double loglik = 0.0;
  double gradient_supnorm = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string message;
  std::vector<double> trace;
  long long clamps = 0;
  std::optional<Eigen::Matrix4d> correlation;
  std::optional<Eigen::Matrix4d> correlation_se;  // delta method
  std::vector<std::string> diagnostics;
  std::size_t patients = 0;
  std::size_t spells = 0;

  ModelParams params() const { return layout.unpack(estimate); }
  double coefficient(const std::string& key) const { return estimate[static_cast<Eigen::Index>(layout.index(key))]; }

  // fit.json, coefficients.csv and covariance.bin (float64 little-endian,
  // row-major, size p x p) in `dir`.
  void write(const std::filesystem::path& dir) const;
  static FitResult read(const std::filesystem::path& dir);
  nlohmann::json to_json() const;
};

FitResult fit(const Design& design, const FitOptions& options = {});

// Covariance from the negative inverse Hessian; nullopt with a reason when
// -H is not positive definite.
std::optional<Eigen::MatrixXd> information_covariance(const Eigen::MatrixXd& hessian,
                                                      std::string* reason = nullptr);

// Delta-method standard errors of the loading correlations.
Eigen::Matrix4d correlation_se(const ParamLayout& layout, const Eigen::VectorXd& estimate,
                               const Eigen::MatrixXd& covariance);

struct WaldResult {
  double statistic = 0.0;
  int df = 0;
  double p_value = 1.0;
};

// θ'V⁻¹θ over the named coefficients; chi-square reference.
// Throws InputError for unknown names or a missing covariance and
// NumericalError for a singular sub-covariance.
WaldResult wald_test(const FitResult& fit, const std::vector<std::string>& names);

double chi_square_sf(double x, int df);

}  // namespace msms
