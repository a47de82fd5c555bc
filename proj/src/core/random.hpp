#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace memefusion {

// Hex-encoded SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

// Incremental SHA-256 for hashing large parameter sets without copying.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t bytes);
  std::string hex_digest();

 private:
  void* context_;
};

// Derives an independent sub-seed from the run seed and a fixed label, so
// every random stream in a run hangs off the single user-facing seed.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);

// Seeded generator with platform-independent sampling routines. The
// standard distributions are implementation-defined, so sampling is done
// by hand on top of mt19937_64.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
  std::uint64_t below(std::uint64_t n);

  // Standard normal via Box-Muller.
  double normal();

  bool bernoulli(double p) { return uniform() < p; }

  // Fisher-Yates over [0, n).
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 engine_;
};

}  // namespace memefusion
