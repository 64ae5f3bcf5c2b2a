#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace saflex {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Folds a seed and a list of tags (epoch, batch, sample, purpose...) into one
/// stream key. Order matters.
inline std::uint64_t derive_key(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t k = mix64(seed);
  for (std::uint64_t t : tags) k = mix64(k ^ mix64(t + 0x632be59bd9b4e019ULL));
  return k;
}

/// Counter-based stream: the n-th draw is a pure function of (key, n), so any
/// sample's randomness can be produced independently of evaluation order.
class CounterStream {
public:
  explicit CounterStream(std::uint64_t key) : key_(key) {}

  std::uint64_t next_u64() { return mix64(key_ ^ mix64(counter_++)); }

  /// Uniform in the open interval (0, 1).
  double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  /// Standard Gumbel(0, 1).
  double gumbel() { return -std::log(-std::log(uniform())); }

private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

using Engine = std::mt19937_64;

inline Engine make_engine(std::uint64_t seed, std::initializer_list<std::uint64_t> tags = {}) {
  return Engine(derive_key(seed, tags));
}

/// Purpose tags so different consumers of one seed never share a stream.
namespace stream_tag {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kShuffle = 2;
inline constexpr std::uint64_t kAugment = 3;
inline constexpr std::uint64_t kGumbel = 4;
inline constexpr std::uint64_t kValSample = 5;
inline constexpr std::uint64_t kData = 6;
inline constexpr std::uint64_t kSplit = 7;
inline constexpr std::uint64_t kOracle = 8;
} // namespace stream_tag

} // namespace saflex
