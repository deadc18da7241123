#include "voxattn/optim.hpp"

#include <cmath>

#include "voxattn/errors.hpp"

namespace voxattn {

template <typename T>
AdamState<T> adam_init(const std::unordered_map<std::string, Tensor<T>>& params,
                       AdamConfig config) {
  AdamState<T> state;
  state.config = config;
  for (const auto& [name, tensor] : params) {
    state.m.emplace(name, Tensor<T>::zeros(tensor.shape()));
    state.v.emplace(name, Tensor<T>::zeros(tensor.shape()));
  }
  return state;
}

template <typename T>
void adam_update_tensor(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& m, Tensor<T>& v,
                        std::int64_t t, const AdamConfig& config, double lr) {
  if (!param.same_shape(grad)) {
    throw DimensionError("adam: gradient shape " + grad.shape_string() +
                         " does not match parameter shape " + param.shape_string());
  }
  if (!param.same_shape(m) || !param.same_shape(v)) {
    throw DimensionError("adam: moment shape does not match parameter shape " +
                         param.shape_string());
  }
  const T b1 = static_cast<T>(config.beta1);
  const T b2 = static_cast<T>(config.beta2);
  // Bias corrections in double; t has already been incremented for this step.
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  const T inv_c1 = static_cast<T>(1.0 / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T step = static_cast<T>(lr);
  const T eps = static_cast<T>(config.epsilon);
  const std::int64_t n = param.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    const T g = grad[i];
    m[i] = b1 * m[i] + (T(1) - b1) * g;
    v[i] = b2 * v[i] + (T(1) - b2) * g * g;
    const T m_hat = m[i] * inv_c1;
    const T v_hat = v[i] * inv_c2;
    param[i] -= step * m_hat / (std::sqrt(v_hat) + eps);
  }
}

template <typename T>
void adam_step(std::unordered_map<std::string, Tensor<T>>& params,
               const std::unordered_map<std::string, Tensor<T>>& grads, AdamState<T>& state,
               double lr) {
  state.t += 1;
  for (const auto& [name, grad] : grads) {
    auto p = params.find(name);
    if (p == params.end()) throw StateError("adam: gradient for unknown parameter '" + name + "'");
    auto m = state.m.find(name);
    auto v = state.v.find(name);
    if (m == state.m.end() || v == state.v.end()) {
      throw StateError("adam: no moment state for parameter '" + name + "'");
    }
    adam_update_tensor(p->second, grad, m->second, v->second, state.t, state.config, lr);
  }
}

double cosine_lr(std::int64_t t, std::int64_t total, double lr_max, double lr_min) {
  if (total < 1) throw ConfigError("cosine_lr: total steps must be >= 1");
  if (t < 0) throw ConfigError("cosine_lr: step index must be >= 0");
  if (lr_min > lr_max) throw ConfigError("cosine_lr: lr_min exceeds lr_max");
  // t == total lands on cos(pi) = -1; later steps hold the floor.
  if (t > total) return lr_min;
  const double phase = M_PI * static_cast<double>(t) / static_cast<double>(total);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(phase));
}

template struct AdamState<float>;
template struct AdamState<double>;
template AdamState<float> adam_init<float>(const std::unordered_map<std::string, Tensor<float>>&,
                                           AdamConfig);
template AdamState<double> adam_init<double>(
    const std::unordered_map<std::string, Tensor<double>>&, AdamConfig);
template void adam_update_tensor<float>(Tensor<float>&, const Tensor<float>&, Tensor<float>&,
                                        Tensor<float>&, std::int64_t, const AdamConfig&, double);
template void adam_update_tensor<double>(Tensor<double>&, const Tensor<double>&, Tensor<double>&,
                                         Tensor<double>&, std::int64_t, const AdamConfig&, double);
template void adam_step<float>(std::unordered_map<std::string, Tensor<float>>&,
                               const std::unordered_map<std::string, Tensor<float>>&,
                               AdamState<float>&, double);
template void adam_step<double>(std::unordered_map<std::string, Tensor<double>>&,
                                const std::unordered_map<std::string, Tensor<double>>&,
                                AdamState<double>&, double);

}  // namespace voxattn
