#include "voxattn/rng.hpp"

#include <cmath>

namespace voxattn {

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller. u is kept away from 0 so log() stays finite.
  double u = 0.0;
  do {
    u = uniform();
  } while (u <= 1e-300);
  double v = uniform();
  double r = std::sqrt(-2.0 * std::log(u));
  double theta = 2.0 * 3.14159265358979323846 * v;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

}  // namespace voxattn
