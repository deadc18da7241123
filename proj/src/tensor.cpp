#include "voxattn/tensor.hpp"

#include <cmath>

namespace voxattn {

template <typename T>
bool Tensor<T>::all_finite() const {
  for (const auto& v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace voxattn
