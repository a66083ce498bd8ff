#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace msms {

// Pinned in truth/manifest files. Bump the version if the derivation of
// substreams or the variate transforms below ever change.
inline constexpr std::string_view kRngName = "mt19937_64+seed_seq(fnv1a64 keys)";
inline constexpr int kRngVersion = 1;

std::uint64_t fnv1a64(std::string_view s);

// Keyed substream generator. Variates are produced with explicit transforms
// of the raw 64-bit output so streams are reproducible across standard
// libraries (std::*_distribution are implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  // Substream for (seed, stream name, key), e.g. (7, "frailty", patient_id).
  Rng(std::uint64_t seed, std::string_view stream, std::string_view key);

  std::uint64_t bits() { return engine_(); }
  double uniform();  // (0, 1), never 0 or 1
  double normal();   // Box–Muller, second variate cached
  double exponential(double rate) { return -std::log(uniform()) / rate; }
  int poisson(double mean);  // inversion by sequential search; fine for small means
  std::size_t index(std::size_t n);  // uniform in [0, n)

 private:
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace msms
