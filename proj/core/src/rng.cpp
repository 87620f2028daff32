#include "coco/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "coco/errors.hpp"

namespace coco {

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  // Box-Muller; u1 is kept away from 0 so log stays finite.
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0x1.0p-60);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return r * std::cos(theta);
}

std::string Rng::state_string() const {
  std::ostringstream os;
  os << state_ << " " << (have_spare_ ? 1 : 0) << " ";
  os.precision(17);
  os << spare_;
  return os.str();
}

Rng Rng::from_state_string(const std::string& s) {
  std::istringstream is(s);
  Rng r;
  int spare_flag = 0;
  if (!(is >> r.state_ >> spare_flag >> r.spare_)) {
    throw format_error("Rng: malformed state string '" + s + "'");
  }
  r.have_spare_ = spare_flag != 0;
  return r;
}

uint64_t derive_seed(std::initializer_list<uint64_t> parts) {
  uint64_t state = 0x51c64f32a3bd1e8dULL;
  for (uint64_t p : parts) {
    state ^= p + 0x9e3779b97f4a7c15ULL + (state << 6) + (state >> 2);
    splitmix64(state);
  }
  return splitmix64(state);
}

}  // namespace coco
