#pragma once

#include <optional>
#include <string>

#include "voxattn/attention.hpp"
#include "voxattn/ops.hpp"

namespace voxattn {

enum class AttentionOrder { kCaThenDa, kDaThenCa };

// One residual block: two 3x3x3 conv+BN stages with optional channel-wise and
// depth-wise attention on the residual branch before the shortcut addition.
struct BlockConfig {
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  Triple stride = {1, 1, 1};
  bool use_ca = false;
  bool use_da = false;
  std::int64_t r_ca = 16;
  std::int64_t r_da = 16;
  // Depth of this block's output feature map; sizes the DA gate.
  std::int64_t feature_depth = 0;
  AttentionOrder order = AttentionOrder::kCaThenDa;

  bool needs_projection() const {
    return in_channels != out_channels || stride != Triple{1, 1, 1};
  }
};

// Tape leaf ids of one block's parameters.
struct BlockParamIds {
  int conv1_w = -1, bn1_gamma = -1, bn1_beta = -1;
  int conv2_w = -1, bn2_gamma = -1, bn2_beta = -1;
  std::optional<int> proj_w, proj_gamma, proj_beta;
  std::optional<int> ca_w1, ca_w2;
  std::optional<int> da_w1, da_w2;
};

// Mutable normalization state of one block.
template <typename T>
struct BlockState {
  BnState<T> bn1, bn2, proj_bn;
};

template <typename T>
int dual_attention_block_forward(Tape<T>& tape, int x, const BlockConfig& cfg,
                                 const BlockParamIds& ids, BlockState<T>& state, Mode mode);

}  // namespace voxattn
