#include <cmath>
#include <memory>

#include "voxattn/ops.hpp"

namespace voxattn {

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.rank() != 2) {
    throw DimensionError("softmax expects (N,K) logits, got " + logits.shape_string());
  }
  const std::int64_t n = logits.extent(0), k = logits.extent(1);
  Tensor<T> probs(logits.shape());
  for (std::int64_t i = 0; i < n; ++i) {
    const T* row = logits.data() + i * k;
    T* out = probs.data() + i * k;
    T mx = row[0];
    for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    T denom = T(0);
    for (std::int64_t j = 0; j < k; ++j) {
      out[j] = std::exp(row[j] - mx);
      denom += out[j];
    }
    for (std::int64_t j = 0; j < k; ++j) out[j] /= denom;
  }
  return probs;
}

template <typename T>
int softmax_cross_entropy(Tape<T>& tape, int logits, const std::vector<std::int64_t>& labels) {
  const Tensor<T>& z = tape.value(logits);
  if (z.rank() != 2) {
    throw DimensionError("softmax_cross_entropy expects (N,K) logits, got " + z.shape_string());
  }
  const std::int64_t n = z.extent(0), k = z.extent(1);
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw DimensionError("label count " + std::to_string(labels.size()) +
                         " does not match batch size " + std::to_string(n));
  }
  for (std::int64_t i = 0; i < n; ++i) {
    if (labels[static_cast<std::size_t>(i)] < 0 || labels[static_cast<std::size_t>(i)] >= k) {
      throw DimensionError("label " + std::to_string(labels[static_cast<std::size_t>(i)]) +
                           " at row " + std::to_string(i) + " is outside [0," +
                           std::to_string(k) + ")");
    }
  }

  auto probs = std::make_shared<Tensor<T>>(softmax(z));
  T loss = T(0);
  for (std::int64_t i = 0; i < n; ++i) {
    const T* row = z.data() + i * k;
    T mx = row[0];
    for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    T denom = T(0);
    for (std::int64_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    loss += -(row[labels[static_cast<std::size_t>(i)]] - mx) + std::log(denom);
  }
  loss /= static_cast<T>(n);

  auto vjp = [logits, labels, probs, n, k](Tape<T>& t, int, const Tensor<T>& dy) {
    const T scale = dy[0] / static_cast<T>(n);
    Tensor<T> dz({n, k});
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t j = 0; j < k; ++j) {
        T p = (*probs)[i * k + j];
        if (j == labels[static_cast<std::size_t>(i)]) p -= T(1);
        dz[i * k + j] = scale * p;
      }
    }
    t.accumulate_adjoint(logits, dz);
  };
  return tape.push("softmax_cross_entropy", Tensor<T>::scalar(loss), {logits}, std::move(vjp));
}

template Tensor<float> softmax<float>(const Tensor<float>&);
template Tensor<double> softmax<double>(const Tensor<double>&);
template int softmax_cross_entropy<float>(Tape<float>&, int, const std::vector<std::int64_t>&);
template int softmax_cross_entropy<double>(Tape<double>&, int, const std::vector<std::int64_t>&);

}  // namespace voxattn
