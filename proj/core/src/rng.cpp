#include "mve/rng.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

namespace mve {

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t n) {
  // Rejection sampling.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::string Rng::serialize() const {
  std::ostringstream os;
  std::uint64_t bits;
  std::memcpy(&bits, &spare_, sizeof bits);
  os << engine_ << ' ' << (has_spare_ ? 1 : 0) << ' ' << bits;
  return os.str();
}

void Rng::deserialize(const std::string& state) {
  std::istringstream is(state);
  int spare_flag = 0;
  std::uint64_t bits = 0;
  is >> engine_ >> spare_flag >> bits;
  has_spare_ = spare_flag != 0;
  std::memcpy(&spare_, &bits, sizeof bits);
}

}  // namespace mve
