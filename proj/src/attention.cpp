#include "voxattn/attention.hpp"

#include <algorithm>

namespace voxattn {

template <typename T>
std::int64_t DAWeights<T>::hidden_width(std::int64_t channels, std::int64_t depth,
                                        std::int64_t reduction) {
  return std::max<std::int64_t>((channels * depth) / reduction, 1);
}

template <typename T>
DAWeights<T> DAWeights<T>::zeros(std::int64_t channels, std::int64_t depth,
                                 std::int64_t reduction) {
  const std::int64_t cd = channels * depth;
  const std::int64_t hidden = hidden_width(channels, depth, reduction);
  DAWeights<T> w;
  w.w1 = Tensor<T>({hidden, cd});
  w.w2 = Tensor<T>({cd, hidden});
  w.reduction = reduction;
  return w;
}

template <typename T>
std::int64_t CAWeights<T>::hidden_width(std::int64_t channels, std::int64_t reduction) {
  return std::max<std::int64_t>(channels / reduction, 1);
}

template <typename T>
CAWeights<T> CAWeights<T>::zeros(std::int64_t channels, std::int64_t reduction) {
  const std::int64_t hidden = hidden_width(channels, reduction);
  CAWeights<T> w;
  w.w1 = Tensor<T>({hidden, channels});
  w.w2 = Tensor<T>({channels, hidden});
  w.reduction = reduction;
  return w;
}

template <typename T>
int da_forward(Tape<T>& tape, int input, int w1, int w2, std::int64_t configured_depth) {
  const Tensor<T>& x = tape.value(input);
  Dims5 in = dims5(x);
  if (in.d != configured_depth) {
    throw ConfigError("depth-wise attention gate was sized for depth " +
                      std::to_string(configured_depth) + " but the input has depth " +
                      std::to_string(in.d));
  }
  const std::int64_t cd = in.c * in.d;
  const Tensor<T>& w1t = tape.value(w1);
  const Tensor<T>& w2t = tape.value(w2);
  if (w1t.rank() != 2 || w1t.extent(1) != cd || w2t.rank() != 2 || w2t.extent(0) != cd ||
      w2t.extent(1) != w1t.extent(0)) {
    throw ConfigError("depth-wise attention weights " + w1t.shape_string() + " / " +
                      w2t.shape_string() + " do not fit C*D = " + std::to_string(cd));
  }
  int pooled = gap_spatial(tape, input);            // (N,C,D,1,1)
  int z = reshape(tape, pooled, {in.n, cd});        // (N, C*D)
  int h = relu(tape, linear(tape, z, w1, std::nullopt));
  int gate = sigmoid(tape, linear(tape, h, w2, std::nullopt));
  int gains = reshape(tape, gate, {in.n, in.c, in.d});
  return scale_channel_depth(tape, input, gains);
}

template <typename T>
int ca_forward(Tape<T>& tape, int input, int w1, int w2) {
  const Tensor<T>& x = tape.value(input);
  Dims5 in = dims5(x);
  const Tensor<T>& w1t = tape.value(w1);
  const Tensor<T>& w2t = tape.value(w2);
  if (w1t.rank() != 2 || w1t.extent(1) != in.c || w2t.rank() != 2 || w2t.extent(0) != in.c ||
      w2t.extent(1) != w1t.extent(0)) {
    throw ConfigError("channel-wise attention weights " + w1t.shape_string() + " / " +
                      w2t.shape_string() + " do not fit channel count " + std::to_string(in.c));
  }
  int z = gap_global(tape, input);                  // (N,C)
  int h = relu(tape, linear(tape, z, w1, std::nullopt));
  int gains = sigmoid(tape, linear(tape, h, w2, std::nullopt));
  return scale_channel(tape, input, gains);
}

template struct DAWeights<float>;
template struct DAWeights<double>;
template struct CAWeights<float>;
template struct CAWeights<double>;
template int da_forward<float>(Tape<float>&, int, int, int, std::int64_t);
template int da_forward<double>(Tape<double>&, int, int, int, std::int64_t);
template int ca_forward<float>(Tape<float>&, int, int, int);
template int ca_forward<double>(Tape<double>&, int, int, int);

}  // namespace voxattn
