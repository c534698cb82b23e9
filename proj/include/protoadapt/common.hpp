#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace protoadapt {

// Error taxonomy. The CLI maps these onto process exit codes:
// ConfigError/DimensionError -> 2, NumericError -> 3, IoError -> 4.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Deterministic PRNG (xoshiro256++) with hand-rolled distributions, so that
/// every stream is reproducible across standard libraries and platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  /// Standard normal via Box-Muller (one deviate per call).
  double normal();
  /// Uniform index in [0, n). n must be > 0.
  std::size_t index(std::size_t n);
  /// k distinct indices from [0, n) in draw order (partial Fisher-Yates).
  std::vector<std::size_t> choose(std::size_t n, std::size_t k);

 private:
  std::uint64_t s_[4];
};

/// Derives an independent child seed from (root, purpose, index). Streams with
/// different purposes or indices never collide in practice.
std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose,
                          std::uint64_t index);

std::uint64_t fnv1a64(const void* data, std::size_t len,
                      std::uint64_t h = 14695981039346656037ULL);
std::uint64_t fnv1a64(std::string_view s);

/// Order-sensitive checksum of a double array, used to assert that a training
/// phase left a parameter block untouched.
std::uint64_t checksum(std::span<const double> v);

/// Shortest exact-ish decimal for reports: %.17g round-trips every finite
/// 64-bit float.
std::string format_double(double v);

bool all_finite(std::span<const double> v);

}  // namespace protoadapt
