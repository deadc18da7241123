#pragma once

#include <cstdint>

#include "voxattn/ops.hpp"

namespace voxattn {

// Bottleneck gate over the flattened (channel, depth) axis. The gate maps the
// spatially pooled per-slice statistics through two bias-free fully-connected
// layers and a sigmoid, producing one gain in (0,1) per (channel, depth) pair.
template <typename T>
struct DAWeights {
  Tensor<T> w1;  // (hidden, C*D)
  Tensor<T> w2;  // (C*D, hidden)
  std::int64_t reduction = 16;

  static std::int64_t hidden_width(std::int64_t channels, std::int64_t depth,
                                   std::int64_t reduction);
  static DAWeights zeros(std::int64_t channels, std::int64_t depth, std::int64_t reduction);
};

// Channel gate computed from globally pooled channel statistics.
template <typename T>
struct CAWeights {
  Tensor<T> w1;  // (hidden, C)
  Tensor<T> w2;  // (C, hidden)
  std::int64_t reduction = 16;

  static std::int64_t hidden_width(std::int64_t channels, std::int64_t reduction);
  static CAWeights zeros(std::int64_t channels, std::int64_t reduction);
};

// Depth-wise attention: pool each (H,W) plane, gate the (C,D) vector, rescale
// every plane by its gain. Output shape equals input shape.
// `configured_depth` is the stage depth the gate was sized for; a different
// input depth is a configuration error.
template <typename T>
int da_forward(Tape<T>& tape, int input, int w1, int w2, std::int64_t configured_depth);

// Channel-wise attention: pool the whole volume per channel, gate the channel
// vector, rescale every channel by its gain.
template <typename T>
int ca_forward(Tape<T>& tape, int input, int w1, int w2);

}  // namespace voxattn
