#pragma once
// Shared plumbing: contract checks, deterministic RNG helpers.

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace avey {

// Thrown when an operation's stated contract is violated (bad shapes,
// out-of-range arguments, malformed inputs). The message names the
// offending operation and the shapes involved.
struct ContractViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ContractViolation(what);
}

// All randomness flows through one engine type so that runs are
// reproducible from a single seed and the engine state can be
// checkpointed via stream (de)serialization.
using Rng = std::mt19937_64;

// Uniform in [0, 1). Uses the top 53 bits so float and double builds
// draw from the same stream.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Standard normal via Box-Muller. Stateless between calls (the spare
// value is dropped) so checkpointing the engine restores the stream.
inline double normal01(Rng& rng) {
  double u1 = uniform01(rng);
  double u2 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// Uniform integer in [0, n).
inline std::uint64_t uniform_int(Rng& rng, std::uint64_t n) {
  return n ? rng() % n : 0;
}

inline std::string rng_state_string(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline Rng rng_from_state_string(const std::string& s) {
  Rng rng;
  std::istringstream is(s);
  is >> rng;
  require(!is.fail(), "rng_from_state_string: malformed engine state");
  return rng;
}

}  // namespace avey
