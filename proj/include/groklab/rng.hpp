#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace groklab {

// splitmix64 finalizer; used to derive independent substreams from one seed.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Per-run substreams. Keeping them separate means an optimizer ablation never
// perturbs the data split, the init, or the metric subsample.
enum class Stream : std::uint64_t {
  split = 1,    // train/test partition
  init = 2,     // parameter initialization
  batches = 3,  // batch sampling during training
  metrics = 4,  // stable ILDR subsample
};

inline std::uint64_t stream_seed(std::uint64_t experiment_seed, Stream s) {
  return mix64(experiment_seed ^ (static_cast<std::uint64_t>(s) * 0xd6e8feb86659fd93ull));
}

// mt19937_64 with hand-rolled draws, so values do not depend on the standard
// library's unspecified distribution algorithms.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Unbiased integer in [0, n). Rejection sampling on the top band.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;  // 2^64 mod n
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // [0, 1), 53-bit resolution
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Box-Muller; the spare value is cached, which keeps draws a pure function
  // of stream state.
  double normal(double mean, double stddev) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + stddev * spare_;
    }
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return mean + stddev * r * std::cos(theta);
  }

  // Normal(0, stddev^2) redrawn until |z| <= clip_sigmas * stddev.
  double truncated_normal(double stddev, double clip_sigmas) {
    for (;;) {
      const double z = normal(0.0, stddev);
      if (std::abs(z) <= clip_sigmas * stddev) return z;
    }
  }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace groklab
