#include "semcsi/rng.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "semcsi/error.hpp"

namespace semcsi {

Rng Rng::substream(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    0x5eed5u};
  Rng r;
  r.engine_.seed(seq);
  return r;
}

double Rng::gumbel() {
  // u in (0, 1): avoid log(0) at either end
  double u = uniform();
  while (u <= 0.0) u = uniform();
  return -std::log(-std::log(u));
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::set_state(const std::string& s) {
  std::istringstream is(s);
  is >> engine_;
  if (is.fail()) throw FormatError("rng_state", "cannot parse random engine state");
}

}  // namespace semcsi
