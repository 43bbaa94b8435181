#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

namespace dialvae {

// Counter-based generator.
//
// Draw i of a stream with key k is splitmix64_finalize(k + (i + 1) * G), where
// G is the 64-bit golden-ratio constant. The whole state is (key, counter), so
// it is trivially saved to and restored from a checkpoint, and independent
// sub-streams are obtained by hashing labels into a new key (derive). Normal
// deviates use the cosine branch of Box-Muller, consuming two uniforms each.
// This algorithm is part of the on-disk contract: changing it changes every
// seeded run.
class CounterRng {
 public:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

  struct State {
    std::uint64_t key = 0;
    std::uint64_t counter = 0;
    bool operator==(const State&) const = default;
  };

  explicit CounterRng(std::uint64_t seed = 0) : key_(finalize(seed ^ 0x5DEECE66Dull)) {}

  static CounterRng from_state(State s) {
    CounterRng r;
    r.key_ = s.key;
    r.counter_ = s.counter;
    return r;
  }

  State state() const { return {key_, counter_}; }

  static constexpr std::uint64_t finalize(std::uint64_t x) noexcept {
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
  }

  std::uint64_t next_u64() noexcept { return finalize(key_ + (++counter_) * kGolden); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  double normal() noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <class T>
  void fill_normal(std::span<T> out) noexcept {
    for (auto& v : out) v = static_cast<T>(normal());
  }

  /// Independent stream keyed by (this key, a, b). Does not advance this stream.
  CounterRng derive(std::uint64_t a, std::uint64_t b = 0) const noexcept {
    CounterRng r;
    r.key_ = finalize(key_ ^ finalize(a * kGolden + 0x632BE59BD9B4E019ull) ^
                      finalize(b * kGolden + 0x8CB92BA72F3D8DD7ull +
                               finalize(a + 1)));
    return r;
  }

  /// Fisher-Yates, drawing indices from the high side down.
  template <class T>
  void shuffle(std::vector<T>& v) noexcept {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

/// Stream labels used with CounterRng::derive across the library.
namespace streams {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kShuffle = 2;
inline constexpr std::uint64_t kNoise = 3;
inline constexpr std::uint64_t kValidNoise = 4;
inline constexpr std::uint64_t kEvalNoise = 5;
inline constexpr std::uint64_t kEmbeddings = 6;
inline constexpr std::uint64_t kGeneration = 7;
inline constexpr std::uint64_t kProbe = 8;
inline constexpr std::uint64_t kSynth = 9;
}  // namespace streams

}  // namespace dialvae
