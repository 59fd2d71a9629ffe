#ifndef BVX_RNG_HPP
#define BVX_RNG_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>
#include <vector>

namespace bvx {

// Every random stream in the project is keyed by (root seed, purpose, indices).
// Streams never share state, so results do not depend on evaluation order.

enum class Purpose : std::uint64_t {
  Data = 1,
  Bootstrap = 2,
  Init = 3,
  Shuffle = 4,
  Noise = 5,
  Theta0 = 6,
  Resample = 7,
  Split = 8,
  Tune = 9,
  Probe = 10,
  Design = 11,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t root, Purpose purpose,
                                    std::initializer_list<std::uint64_t> indices = {}) noexcept {
  std::uint64_t h = splitmix64(root ^ 0x6a09e667f3bcc909ULL);
  h = splitmix64(h ^ static_cast<std::uint64_t>(purpose));
  for (std::uint64_t i : indices) {
    h = splitmix64(h ^ splitmix64(i + 0x3c6ef372fe94f82bULL));
  }
  return h;
}

/// Portable random stream. The std distributions are implementation-defined,
/// so the variates are derived here from raw 64-bit engine output.
class Stream {
 public:
  explicit Stream(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double low, double high) { return low + (high - low) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // Box-Muller; 1 - u keeps the log argument in (0, 1].
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(angle);
    has_spare_ = true;
    return r * std::cos(angle);
  }

  /// Uniform index in [0, n), unbiased by rejection.
  std::size_t index(std::size_t n) {
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return static_cast<std::size_t>(v % bound);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[index(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace bvx

#endif  // BVX_RNG_HPP
