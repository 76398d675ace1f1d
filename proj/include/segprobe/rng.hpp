#pragma once

#include <cstdint>
#include <random>

namespace segprobe {

/// Independent random streams derived from one run seed.
enum class Stream : std::uint64_t {
  Shuffle = 1,
  Augment = 2,
  Synth = 3,
  Cluster = 4,
  Data = 5,
};

/// Counter-based splitter: a pure function of (root, stream, index).
std::uint64_t derive_seed(std::uint64_t root, Stream stream, std::uint64_t index = 0);

/// Seeded generator with platform-stable helpers. std::*_distribution output
/// is implementation-defined, so the draws used for reproducible artifacts
/// are built directly on the 64-bit engine.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  /// Uniform double in [0, 1).
  double uniform();
  bool bernoulli(double p) { return uniform() < p; }
  /// Standard normal via Box-Muller.
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace segprobe
