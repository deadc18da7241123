#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "voxattn/tape.hpp"
#include "voxattn/tensor.hpp"

namespace voxattn {

enum class Mode { kTrain, kEval };

using Triple = std::array<std::int64_t, 3>;

struct ConvSpec {
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  Triple kernel = {3, 3, 3};
  Triple stride = {1, 1, 1};
  Triple padding = {1, 1, 1};
  bool bias = false;
};

// Mutable per-layer normalization state. Running statistics are updated by
// train-mode forward passes and consumed by eval-mode ones.
template <typename T>
struct BnState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  bool initialized = false;
  double momentum = 0.1;
  double epsilon = 1e-5;
};

// Output extent of one conv/pool axis: floor((X + 2p - k) / s) + 1.
std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                             std::int64_t padding);

// 3-D convolution over (N,C,D,H,W) with zero padding. Weight layout is
// (C_out, C_in, kD, kH, kW); optional bias has length C_out.
template <typename T>
int conv3d(Tape<T>& tape, int input, int weight, std::optional<int> bias, const ConvSpec& spec);

// out[n,k] = sum_m weight[k,m] * input[n,m] (+ bias[k]).
template <typename T>
int linear(Tape<T>& tape, int input, int weight, std::optional<int> bias);

// Per-channel batch normalization over (N,D,H,W) with affine gamma/beta.
template <typename T>
int batchnorm3d(Tape<T>& tape, int input, int gamma, int beta, BnState<T>& state, Mode mode);

template <typename T>
int relu(Tape<T>& tape, int input);

template <typename T>
int sigmoid(Tape<T>& tape, int input);

// Window maximum with -inf padding semantics.
template <typename T>
int maxpool3d(Tape<T>& tape, int input, Triple kernel, Triple stride, Triple padding);

// Mean over each (H,W) plane: (N,C,D,H,W) -> (N,C,D,1,1).
template <typename T>
int gap_spatial(Tape<T>& tape, int input);

// Mean over (D,H,W): (N,C,D,H,W) -> (N,C).
template <typename T>
int gap_global(Tape<T>& tape, int input);

// Mean over the batch of -log softmax(logits)[label], max-subtracted.
template <typename T>
int softmax_cross_entropy(Tape<T>& tape, int logits, const std::vector<std::int64_t>& labels);

// Softmax probabilities of a (N,K) logits tensor (plain math, not taped).
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

// Elementwise sum of two same-shape tensors.
template <typename T>
int add(Tape<T>& tape, int a, int b);

// Same data, new shape (element count preserved).
template <typename T>
int reshape(Tape<T>& tape, int input, std::vector<std::int64_t> shape);

// out[n,c,d,h,w] = input[n,c,d,h,w] * gains[n,c,d]; gains shape (N,C,D).
template <typename T>
int scale_channel_depth(Tape<T>& tape, int input, int gains);

// out[n,c,d,h,w] = input[n,c,d,h,w] * gains[n,c]; gains shape (N,C).
template <typename T>
int scale_channel(Tape<T>& tape, int input, int gains);

// Scalar sum of all elements.
template <typename T>
int sum_all(Tape<T>& tape, int input);

}  // namespace voxattn
