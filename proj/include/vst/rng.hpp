#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string_view>
#include <vector>

namespace vst {

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Order-sensitive hash of a key tuple; used to derive independent streams.
std::uint64_t hash_key(std::initializer_list<std::uint64_t> parts);

/// FNV-1a over the bytes of `s`.
std::uint64_t hash_string(std::string_view s);

/// Counter-based generator: draw i is mix64(key ^ f(i)). Output depends only on
/// (key, draw index), so results are identical across platforms and standard
/// libraries.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}
  CounterRng(std::initializer_list<std::uint64_t> key) : key_(hash_key(key)) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Normal(0, stddev) resampled until inside [-2 stddev, 2 stddev].
  double truncated_normal(double stddev);
  std::size_t below(std::size_t n);
  std::vector<std::size_t> permutation(std::size_t n);

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace vst
