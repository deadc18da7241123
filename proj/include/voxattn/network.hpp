#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "voxattn/blocks.hpp"
#include "voxattn/rng.hpp"

namespace voxattn {

// Architecture of the volumetric residual classifier. The default plan keeps
// depth stride 1 in the stem convolution and runs the last stage unstrided,
// so a (64,224,224) input reduces by 8 in depth and 16 spatially.
struct NetworkConfig {
  std::int64_t input_channels = 1;
  std::int64_t input_depth = 64;
  std::int64_t input_height = 224;
  std::int64_t input_width = 224;

  Triple stem_kernel = {7, 7, 7};
  Triple stem_stride = {1, 2, 2};
  std::int64_t stem_width = 64;
  Triple pool_kernel = {3, 3, 3};
  Triple pool_stride = {2, 2, 2};
  Triple pool_padding = {1, 1, 1};

  std::vector<std::int64_t> stage_widths = {64, 128, 256, 512};
  std::vector<std::int64_t> blocks_per_stage = {2, 2, 2, 2};
  std::vector<Triple> stage_strides = {{1, 1, 1}, {2, 2, 2}, {2, 2, 2}, {1, 1, 1}};

  std::int64_t num_classes = 3;
  bool use_ca = false;
  bool use_da = false;
  std::int64_t r_ca = 16;
  std::int64_t r_da = 16;
  AttentionOrder attention_order = AttentionOrder::kCaThenDa;

  // Scales stem and stage widths; 0.25 is the desk-scale preset.
  double width_multiplier = 1.0;

  std::int64_t scaled_width(std::int64_t width) const;

  // Desk-scale preset used by the end-to-end suites: (16,64,64) input at a
  // quarter of the full width.
  static NetworkConfig desk_preset(bool use_ca, bool use_da);
};

struct StageGeometry {
  std::int64_t channels = 0, d = 0, h = 0, w = 0;
};

struct NetworkGeometry {
  StageGeometry after_stem;
  StageGeometry after_pool;
  std::vector<StageGeometry> after_stage;
  const StageGeometry& features() const { return after_stage.back(); }
};

// Static shape inference; throws ConfigError naming the first part of the
// network whose output collapses to zero.
NetworkGeometry infer_geometry(const NetworkConfig& cfg);

enum class ParamKind { kConvWeight, kBnGamma, kBnBeta, kLinearWeight, kLinearBias, kGateWeight };

struct ParamInfo {
  std::string name;
  std::vector<std::int64_t> shape;
  ParamKind kind = ParamKind::kConvWeight;
  std::int64_t fan_in = 0;  // meaningful for kaiming-initialized kinds
  std::string component;    // "stem", "stage1".., "attention", "head"
  std::int64_t numel() const {
    std::int64_t n = 1;
    for (auto e : shape) n *= e;
    return n;
  }
};

// Trainable parameters in their canonical order. This order is the single
// source of truth for initialization and checkpoint layout.
std::vector<ParamInfo> enumerate_parameters(const NetworkConfig& cfg);

// Normalization layers in canonical order: (name, channel count).
std::vector<std::pair<std::string, std::int64_t>> enumerate_bn_layers(const NetworkConfig& cfg);

template <typename T>
struct ModelParams {
  NetworkConfig config;
  std::vector<ParamInfo> infos;
  std::unordered_map<std::string, Tensor<T>> tensors;
  std::vector<std::string> bn_names;
  std::unordered_map<std::string, BnState<T>> bn;

  Tensor<T>& at(const std::string& name);
  const Tensor<T>& at(const std::string& name) const;

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    out.config = config;
    out.infos = infos;
    for (const auto& [k, v] : tensors) out.tensors.emplace(k, v.template cast<U>());
    out.bn_names = bn_names;
    for (const auto& [k, v] : bn) {
      BnState<U> s;
      s.initialized = v.initialized;
      s.momentum = v.momentum;
      s.epsilon = v.epsilon;
      if (v.initialized) {
        s.running_mean = v.running_mean.template cast<U>();
        s.running_var = v.running_var.template cast<U>();
      }
      out.bn.emplace(k, std::move(s));
    }
    return out;
  }
};

// Allocates and initializes all parameters: convolution, linear, and gate
// weights via kaiming_init, biases and BN beta zero, BN gamma one, running
// stats (mean 0, var 1). Deterministic for a given seed.
template <typename T>
ModelParams<T> build_network(const NetworkConfig& cfg, std::uint64_t seed);

template <typename T>
struct ForwardResult {
  int logits = -1;    // (N, num_classes)
  int features = -1;  // pre-pool activation of the last stage
  std::unordered_map<std::string, int> param_ids;
};

// Runs the whole network on tape node `x` (shape (N, C, D, H, W) matching the
// config geometry). Train mode updates BN running statistics in `params`.
template <typename T>
ForwardResult<T> network_forward(Tape<T>& tape, ModelParams<T>& params, int x, Mode mode);

struct ParamCount {
  std::int64_t total = 0;
  std::vector<std::pair<std::string, std::int64_t>> by_component;
};

// Static count from the config alone.
ParamCount count_parameters(const NetworkConfig& cfg, bool include_bn_stats = false);

// Count over an instantiated model; agrees with the static count.
template <typename T>
ParamCount count_parameters(const ModelParams<T>& params, bool include_bn_stats = false);

}  // namespace voxattn
