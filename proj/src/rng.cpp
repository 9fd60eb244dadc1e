// SPDX-License-Identifier: Apache-2.0
#include "lrdm/rng.hpp"

#include <sstream>
#include <stdexcept>

namespace lrdm {

int Rng::uniform_int(int lo, int hi) {
  if (hi < lo) throw std::invalid_argument("Rng::uniform_int: empty range");
  std::uniform_int_distribution<int> dist(lo, hi);
  return dist(engine_);
}

void Rng::fill_normal(std::span<double> out) {
  for (double& v : out) v = normal_(engine_);
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_ << ' ' << normal_ << ' ' << uniform_;
  return os.str();
}

void Rng::restore(const std::string& state) {
  std::istringstream is(state);
  is >> engine_ >> normal_ >> uniform_;
  if (!is) throw std::runtime_error("Rng::restore: malformed state string");
}

}  // namespace lrdm
