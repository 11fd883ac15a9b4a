#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace eofnet {

/// Seeded random source with platform-independent output.
///
/// std::mt19937_64 has a fully specified output sequence, but the standard
/// distributions do not, so the transforms below are implemented here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform();

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  /// Standard normal deviate (Marsaglia polar method).
  double normal();

  /// Standard normal truncated to |z| < bound by rejection.
  double truncated_normal(double bound);

  /// In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Derives an independent child seed from a root seed and a stage tag.
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag);

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace eofnet
