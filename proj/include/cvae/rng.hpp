#ifndef CVAE_RNG_HPP
#define CVAE_RNG_HPP

#include <cstddef>
#include <cstdint>
#include <random>

namespace cvae {

/// Explicitly seeded generator owned by the caller.
///
/// Wraps std::mt19937_64 (whose output sequence is fixed by the standard) and
/// derives uniforms and normals with hand-written transforms, so sample
/// streams are identical across standard libraries and platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on the open interval (0, 1).
  double uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; the second variate is kept for the next call.
  double normal();

  /// Uniform index in [0, n). Requires n >= 1.
  std::size_t index(std::size_t n);

  /// Derives an independent child seed; used to give sub-tasks their own stream.
  std::uint64_t split() { return engine_() ^ 0x9E3779B97F4A7C15ull; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cvae

#endif  // CVAE_RNG_HPP
