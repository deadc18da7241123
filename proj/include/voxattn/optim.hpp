#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>

#include "voxattn/tensor.hpp"

namespace voxattn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Per-parameter first and second moments plus the shared step counter. The
// counter advances once per optimizer step, not once per tensor.
template <typename T>
struct AdamState {
  AdamConfig config;
  std::int64_t t = 0;
  std::unordered_map<std::string, Tensor<T>> m;
  std::unordered_map<std::string, Tensor<T>> v;
};

// Zero moments for every named parameter.
template <typename T>
AdamState<T> adam_init(const std::unordered_map<std::string, Tensor<T>>& params,
                       AdamConfig config = {});

// One update of a single tensor: m and v are the moment slots for `param`,
// `t` the already-incremented step counter. Exposed for direct unit testing.
template <typename T>
void adam_update_tensor(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& m, Tensor<T>& v,
                        std::int64_t t, const AdamConfig& config, double lr);

// In-place Adam step over every entry of `grads`. Parameters without a
// gradient entry are left untouched (dead branches under a partial graph).
// Shapes are checked against the state; mismatch raises DimensionError, an
// unknown name raises StateError.
template <typename T>
void adam_step(std::unordered_map<std::string, Tensor<T>>& params,
               const std::unordered_map<std::string, Tensor<T>>& grads, AdamState<T>& state,
               double lr);

// Cosine annealing from lr_max at t=0 to lr_min at t=total:
//   lr(t) = lr_min + 0.5 (lr_max - lr_min) (1 + cos(pi t / total)).
// t beyond `total` clamps to lr_min. total < 1, t < 0, or lr_min > lr_max
// raise ConfigError.
double cosine_lr(std::int64_t t, std::int64_t total, double lr_max, double lr_min);

extern template struct AdamState<float>;
extern template struct AdamState<double>;
extern template AdamState<float> adam_init<float>(
    const std::unordered_map<std::string, Tensor<float>>&, AdamConfig);
extern template AdamState<double> adam_init<double>(
    const std::unordered_map<std::string, Tensor<double>>&, AdamConfig);
extern template void adam_update_tensor<float>(Tensor<float>&, const Tensor<float>&,
                                               Tensor<float>&, Tensor<float>&, std::int64_t,
                                               const AdamConfig&, double);
extern template void adam_update_tensor<double>(Tensor<double>&, const Tensor<double>&,
                                                Tensor<double>&, Tensor<double>&, std::int64_t,
                                                const AdamConfig&, double);
extern template void adam_step<float>(std::unordered_map<std::string, Tensor<float>>&,
                                      const std::unordered_map<std::string, Tensor<float>>&,
                                      AdamState<float>&, double);
extern template void adam_step<double>(std::unordered_map<std::string, Tensor<double>>&,
                                       const std::unordered_map<std::string, Tensor<double>>&,
                                       AdamState<double>&, double);

}  // namespace voxattn
