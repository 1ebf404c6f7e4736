#include "qsvpn/common/rng.hpp"

#include <cstdio>

#include "qsvpn/common/sim_time.hpp"

namespace qsvpn {

Bytes DeterministicRng::bytes(std::size_t n) {
  Bytes out(n);
  std::size_t i = 0;
  while (i < n) {
    std::uint64_t word = engine_();
    for (int k = 0; k < 8 && i < n; ++k, ++i) out[i] = static_cast<std::uint8_t>(word >> (8 * k));
  }
  return out;
}

double DeterministicRng::uniform(double lo, double hi) {
  // 53-bit mantissa draw; avoids libstdc++ distribution implementation drift.
  double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

bool DeterministicRng::bernoulli(double p) {
  if (p <= 0.0) return false;
  if (p >= 1.0) return true;
  return uniform(0.0, 1.0) < p;
}

std::uint64_t DeterministicRng::seed_base() const {
  std::mt19937_64 copy = engine_;
  return copy();
}

DeterministicRng DeterministicRng::fork(std::string_view label) const {
  return DeterministicRng(seed_base() ^ source_tag(label));
}

std::string format_ms(SimDuration d) {
  auto us = d.count();
  bool neg = us < 0;
  if (neg) us = -us;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%lld.%03lld", neg ? "-" : "", static_cast<long long>(us / 1000),
                static_cast<long long>(us % 1000));
  return buf;
}

}  // namespace qsvpn
