#include "voxattn/init.hpp"

#include <cmath>

namespace voxattn {

template <typename T>
void kaiming_init(Tensor<T>& weight, std::int64_t fan_in, Rng& rng) {
  if (fan_in < 1) throw ConfigError("kaiming_init fan_in must be >= 1");
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (std::int64_t i = 0; i < weight.numel(); ++i) {
    weight[i] = static_cast<T>(rng.normal(0.0, stddev));
  }
}

template void kaiming_init<float>(Tensor<float>&, std::int64_t, Rng&);
template void kaiming_init<double>(Tensor<double>&, std::int64_t, Rng&);

}  // namespace voxattn
