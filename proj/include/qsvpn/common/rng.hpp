#pragma once

#include <cstdint>
#include <random>

#include "qsvpn/common/bytes.hpp"

namespace qsvpn {

/// Seeded, reproducible generator for simulation randomness (nonces, SPIs,
/// jitter draws, toy private keys). Not a CSPRNG.
class DeterministicRng {
 public:
  explicit DeterministicRng(std::uint64_t seed = 0) : engine_(seed) {}

  Bytes bytes(std::size_t n);
  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [lo, hi].
  double uniform(double lo, double hi);
  bool bernoulli(double p);

  // Independent child stream, keyed by a label so call order elsewhere does
  // not perturb it.
  DeterministicRng fork(std::string_view label) const;

 private:
  std::uint64_t seed_base() const;
  mutable std::mt19937_64 engine_;
};

}  // namespace qsvpn
