#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace mve {

/// Seeded random stream with platform-stable uniform and normal draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();

  /// Derive an independent child stream; the parent advances by one draw.
  Rng fork() { return Rng(next_u64() ^ 0x9E3779B97F4A7C15ULL); }

  std::string serialize() const;
  void deserialize(const std::string& state);

  bool operator==(const Rng& other) const {
    return engine_ == other.engine_ && has_spare_ == other.has_spare_ && spare_ == other.spare_;
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mve
