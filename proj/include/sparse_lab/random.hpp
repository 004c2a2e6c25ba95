#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace sparse_lab {

/// SplitMix64 finalizer (Steele, Lea & Flood 2014).
constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Per-sample seed: a pure function of (master_seed, sample_index), so any
/// scheduling of samples over workers produces the same streams.
constexpr std::uint64_t derive_seed(std::uint64_t master_seed,
                                    std::uint64_t sample_index) noexcept {
  return splitmix64(splitmix64(master_seed) ^ (sample_index * 0xD1B54A32D192ED03ULL));
}

/// Thin wrapper over mt19937_64 with distribution code we own, so draws are
/// bit-identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on (0, 1].
  double uniform_open0() {
    return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
  }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  bool coin() { return (engine_() >> 63) != 0; }

  /// Number of failures before the first success of a Bernoulli(p) sequence.
  /// `log1m_p` must be log(1 - p) (precomputed by the caller).
  std::uint64_t geometric_skip(double log1m_p) {
    if (log1m_p == -INFINITY) return 0;
    const double g = std::floor(std::log(uniform_open0()) / log1m_p);
    if (!(g < 1.8e19)) return UINT64_MAX;
    return static_cast<std::uint64_t>(g);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace sparse_lab
