#include "voxattn/blocks.hpp"

namespace voxattn {

template <typename T>
int dual_attention_block_forward(Tape<T>& tape, int x, const BlockConfig& cfg,
                                 const BlockParamIds& ids, BlockState<T>& state, Mode mode) {
  const Tensor<T>& xin = tape.value(x);
  Dims5 in = dims5(xin);
  if (in.c != cfg.in_channels) {
    throw DimensionError("block expects " + std::to_string(cfg.in_channels) +
                         " input channels, got " + std::to_string(in.c));
  }

  ConvSpec conv1;
  conv1.in_channels = cfg.in_channels;
  conv1.out_channels = cfg.out_channels;
  conv1.kernel = {3, 3, 3};
  conv1.stride = cfg.stride;
  conv1.padding = {1, 1, 1};
  ConvSpec conv2 = conv1;
  conv2.in_channels = cfg.out_channels;
  conv2.stride = {1, 1, 1};

  int y = conv3d(tape, x, ids.conv1_w, std::nullopt, conv1);
  y = batchnorm3d(tape, y, ids.bn1_gamma, ids.bn1_beta, state.bn1, mode);
  y = relu(tape, y);
  y = conv3d(tape, y, ids.conv2_w, std::nullopt, conv2);
  y = batchnorm3d(tape, y, ids.bn2_gamma, ids.bn2_beta, state.bn2, mode);

  auto apply_ca = [&](int node) {
    return cfg.use_ca ? ca_forward(tape, node, *ids.ca_w1, *ids.ca_w2) : node;
  };
  auto apply_da = [&](int node) {
    return cfg.use_da ? da_forward(tape, node, *ids.da_w1, *ids.da_w2, cfg.feature_depth)
                      : node;
  };
  if (cfg.order == AttentionOrder::kCaThenDa) {
    y = apply_da(apply_ca(y));
  } else {
    y = apply_ca(apply_da(y));
  }

  int shortcut = x;
  if (cfg.needs_projection()) {
    if (!ids.proj_w || !ids.proj_gamma || !ids.proj_beta) {
      throw ConfigError("block changes shape but no projection parameters were provided");
    }
    ConvSpec proj;
    proj.in_channels = cfg.in_channels;
    proj.out_channels = cfg.out_channels;
    proj.kernel = {1, 1, 1};
    proj.stride = cfg.stride;
    proj.padding = {0, 0, 0};
    shortcut = conv3d(tape, x, *ids.proj_w, std::nullopt, proj);
    shortcut = batchnorm3d(tape, shortcut, *ids.proj_gamma, *ids.proj_beta, state.proj_bn, mode);
  }

  return relu(tape, add(tape, y, shortcut));
}

template int dual_attention_block_forward<float>(Tape<float>&, int, const BlockConfig&,
                                                 const BlockParamIds&, BlockState<float>&, Mode);
template int dual_attention_block_forward<double>(Tape<double>&, int, const BlockConfig&,
                                                  const BlockParamIds&, BlockState<double>&,
                                                  Mode);

}  // namespace voxattn
