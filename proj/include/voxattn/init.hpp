#pragma once

#include "voxattn/rng.hpp"
#include "voxattn/tensor.hpp"

namespace voxattn {

// Fills `weight` with i.i.d. Normal(0, 2/fan_in) draws (variance 2/fan_in).
template <typename T>
void kaiming_init(Tensor<T>& weight, std::int64_t fan_in, Rng& rng);

extern template void kaiming_init<float>(Tensor<float>&, std::int64_t, Rng&);
extern template void kaiming_init<double>(Tensor<double>&, std::int64_t, Rng&);

}  // namespace voxattn
