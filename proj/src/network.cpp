#include "voxattn/network.hpp"

#include <algorithm>
#include <cmath>

#include "voxattn/init.hpp"

namespace voxattn {

namespace {

struct BlockPlan {
  std::string name;  // "stage1.block0"
  BlockConfig cfg;
  std::string component;  // "stage1"
};

// Flattens the config into the per-block plans, tracking feature depth.
std::vector<BlockPlan> plan_blocks(const NetworkConfig& cfg, const NetworkGeometry& geom) {
  std::vector<BlockPlan> plans;
  std::int64_t channels = cfg.scaled_width(cfg.stem_width);
  for (std::size_t s = 0; s < cfg.stage_widths.size(); ++s) {
    const std::int64_t width = cfg.scaled_width(cfg.stage_widths[s]);
    for (std::int64_t b = 0; b < cfg.blocks_per_stage[s]; ++b) {
      BlockPlan plan;
      plan.component = "stage" + std::to_string(s + 1);
      plan.name = plan.component + ".block" + std::to_string(b);
      plan.cfg.in_channels = channels;
      plan.cfg.out_channels = width;
      plan.cfg.stride = b == 0 ? cfg.stage_strides[s] : Triple{1, 1, 1};
      plan.cfg.use_ca = cfg.use_ca;
      plan.cfg.use_da = cfg.use_da;
      plan.cfg.r_ca = cfg.r_ca;
      plan.cfg.r_da = cfg.r_da;
      plan.cfg.feature_depth = geom.after_stage[s].d;
      plan.cfg.order = cfg.attention_order;
      plans.push_back(std::move(plan));
      channels = width;
    }
  }
  return plans;
}

}  // namespace

std::int64_t NetworkConfig::scaled_width(std::int64_t width) const {
  const auto scaled = static_cast<std::int64_t>(std::llround(width * width_multiplier));
  return std::max<std::int64_t>(scaled, 1);
}

NetworkConfig NetworkConfig::desk_preset(bool use_ca_flag, bool use_da_flag) {
  NetworkConfig cfg;
  cfg.input_depth = 16;
  cfg.input_height = 64;
  cfg.input_width = 64;
  cfg.width_multiplier = 0.25;
  cfg.use_ca = use_ca_flag;
  cfg.use_da = use_da_flag;
  return cfg;
}

NetworkGeometry infer_geometry(const NetworkConfig& cfg) {
  if (cfg.stage_widths.size() != cfg.blocks_per_stage.size() ||
      cfg.stage_widths.size() != cfg.stage_strides.size() || cfg.stage_widths.empty()) {
    throw ConfigError("stage_widths, blocks_per_stage, and stage_strides must be nonempty and "
                      "of equal length");
  }
  NetworkGeometry geom;
  auto check = [](const StageGeometry& g, const std::string& where) {
    if (g.d < 1 || g.h < 1 || g.w < 1) {
      throw ConfigError("feature map collapses to zero extent at " + where);
    }
  };
  geom.after_stem.channels = cfg.scaled_width(cfg.stem_width);
  geom.after_stem.d = conv_out_extent(cfg.input_depth, cfg.stem_kernel[0], cfg.stem_stride[0],
                                    (cfg.stem_kernel[0] - 1) / 2);
  geom.after_stem.h = conv_out_extent(cfg.input_height, cfg.stem_kernel[1], cfg.stem_stride[1],
                                    (cfg.stem_kernel[1] - 1) / 2);
  geom.after_stem.w = conv_out_extent(cfg.input_width, cfg.stem_kernel[2], cfg.stem_stride[2],
                                    (cfg.stem_kernel[2] - 1) / 2);
  check(geom.after_stem, "the stem convolution");

  geom.after_pool.channels = geom.after_stem.channels;
  geom.after_pool.d =
      conv_out_extent(geom.after_stem.d, cfg.pool_kernel[0], cfg.pool_stride[0], cfg.pool_padding[0]);
  geom.after_pool.h =
      conv_out_extent(geom.after_stem.h, cfg.pool_kernel[1], cfg.pool_stride[1], cfg.pool_padding[1]);
  geom.after_pool.w =
      conv_out_extent(geom.after_stem.w, cfg.pool_kernel[2], cfg.pool_stride[2], cfg.pool_padding[2]);
  check(geom.after_pool, "the stem pooling");

  StageGeometry cur = geom.after_pool;
  for (std::size_t s = 0; s < cfg.stage_widths.size(); ++s) {
    const Triple stride = cfg.stage_strides[s];
    StageGeometry next;
    next.channels = cfg.scaled_width(cfg.stage_widths[s]);
    next.d = conv_out_extent(cur.d, 3, stride[0], 1);
    next.h = conv_out_extent(cur.h, 3, stride[1], 1);
    next.w = conv_out_extent(cur.w, 3, stride[2], 1);
    check(next, "stage " + std::to_string(s + 1));
    geom.after_stage.push_back(next);
    cur = next;
  }
  return geom;
}

std::vector<ParamInfo> enumerate_parameters(const NetworkConfig& cfg) {
  const NetworkGeometry geom = infer_geometry(cfg);
  std::vector<ParamInfo> infos;
  auto conv = [&](const std::string& name, std::int64_t cout, std::int64_t cin, Triple k,
                  const std::string& component) {
    infos.push_back({name, {cout, cin, k[0], k[1], k[2]}, ParamKind::kConvWeight,
                     cin * k[0] * k[1] * k[2], component});
  };
  auto bn_affine = [&](const std::string& prefix, std::int64_t c, const std::string& component) {
    infos.push_back({prefix + ".gamma", {c}, ParamKind::kBnGamma, 0, component});
    infos.push_back({prefix + ".beta", {c}, ParamKind::kBnBeta, 0, component});
  };

  const std::int64_t stem_width = cfg.scaled_width(cfg.stem_width);
  conv("stem.conv.weight", stem_width, cfg.input_channels, cfg.stem_kernel, "stem");
  bn_affine("stem.bn", stem_width, "stem");

  for (const BlockPlan& plan : plan_blocks(cfg, geom)) {
    const BlockConfig& b = plan.cfg;
    conv(plan.name + ".conv1.weight", b.out_channels, b.in_channels, {3, 3, 3}, plan.component);
    bn_affine(plan.name + ".bn1", b.out_channels, plan.component);
    conv(plan.name + ".conv2.weight", b.out_channels, b.out_channels, {3, 3, 3}, plan.component);
    bn_affine(plan.name + ".bn2", b.out_channels, plan.component);
    if (b.needs_projection()) {
      conv(plan.name + ".proj.weight", b.out_channels, b.in_channels, {1, 1, 1}, plan.component);
      bn_affine(plan.name + ".proj_bn", b.out_channels, plan.component);
    }
    if (b.use_ca) {
      const std::int64_t hidden = CAWeights<float>::hidden_width(b.out_channels, b.r_ca);
      infos.push_back({plan.name + ".ca.w1", {hidden, b.out_channels}, ParamKind::kGateWeight,
                       b.out_channels, "attention"});
      infos.push_back({plan.name + ".ca.w2", {b.out_channels, hidden}, ParamKind::kGateWeight,
                       hidden, "attention"});
    }
    if (b.use_da) {
      const std::int64_t cd = b.out_channels * b.feature_depth;
      const std::int64_t hidden =
          DAWeights<float>::hidden_width(b.out_channels, b.feature_depth, b.r_da);
      infos.push_back(
          {plan.name + ".da.w1", {hidden, cd}, ParamKind::kGateWeight, cd, "attention"});
      infos.push_back(
          {plan.name + ".da.w2", {cd, hidden}, ParamKind::kGateWeight, hidden, "attention"});
    }
  }

  const std::int64_t feat = geom.features().channels;
  infos.push_back(
      {"head.fc.weight", {cfg.num_classes, feat}, ParamKind::kLinearWeight, feat, "head"});
  infos.push_back({"head.fc.bias", {cfg.num_classes}, ParamKind::kLinearBias, 0, "head"});
  return infos;
}

std::vector<std::pair<std::string, std::int64_t>> enumerate_bn_layers(const NetworkConfig& cfg) {
  const NetworkGeometry geom = infer_geometry(cfg);
  std::vector<std::pair<std::string, std::int64_t>> layers;
  layers.emplace_back("stem.bn", cfg.scaled_width(cfg.stem_width));
  for (const BlockPlan& plan : plan_blocks(cfg, geom)) {
    layers.emplace_back(plan.name + ".bn1", plan.cfg.out_channels);
    layers.emplace_back(plan.name + ".bn2", plan.cfg.out_channels);
    if (plan.cfg.needs_projection()) {
      layers.emplace_back(plan.name + ".proj_bn", plan.cfg.out_channels);
    }
  }
  return layers;
}

template <typename T>
Tensor<T>& ModelParams<T>::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw StateError("no parameter named '" + name + "'");
  return it->second;
}

template <typename T>
const Tensor<T>& ModelParams<T>::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw StateError("no parameter named '" + name + "'");
  return it->second;
}

template <typename T>
ModelParams<T> build_network(const NetworkConfig& cfg, std::uint64_t seed) {
  ModelParams<T> params;
  params.config = cfg;
  params.infos = enumerate_parameters(cfg);
  Rng rng(seed);
  for (const ParamInfo& info : params.infos) {
    Tensor<T> t(info.shape);
    switch (info.kind) {
      case ParamKind::kConvWeight:
      case ParamKind::kLinearWeight:
      case ParamKind::kGateWeight:
        kaiming_init(t, info.fan_in, rng);
        break;
      case ParamKind::kBnGamma:
        t = Tensor<T>::full(info.shape, T(1));
        break;
      case ParamKind::kBnBeta:
      case ParamKind::kLinearBias:
        break;  // stays zero
    }
    t.set_requires_grad(true);
    params.tensors.emplace(info.name, std::move(t));
  }
  for (const auto& [name, channels] : enumerate_bn_layers(cfg)) {
    BnState<T> state;
    state.running_mean = Tensor<T>({channels});
    state.running_var = Tensor<T>::full({channels}, T(1));
    state.initialized = true;
    params.bn_names.push_back(name);
    params.bn.emplace(name, std::move(state));
  }
  return params;
}

template <typename T>
ForwardResult<T> network_forward(Tape<T>& tape, ModelParams<T>& params, int x, Mode mode) {
  const NetworkConfig& cfg = params.config;
  const Tensor<T>& input = tape.value(x);
  Dims5 in = dims5(input);
  if (in.c != cfg.input_channels || in.d != cfg.input_depth || in.h != cfg.input_height ||
      in.w != cfg.input_width) {
    throw DimensionError("input geometry " + input.shape_string() + " does not match the " +
                         "configured (" + std::to_string(cfg.input_channels) + "," +
                         std::to_string(cfg.input_depth) + "," + std::to_string(cfg.input_height) +
                         "," + std::to_string(cfg.input_width) + ")");
  }
  const NetworkGeometry geom = infer_geometry(cfg);

  ForwardResult<T> result;
  auto stage_leaf = [&](const std::string& name) {
    int id = tape.add_leaf(params.at(name));
    result.param_ids.emplace(name, id);
    return id;
  };

  // Stem: conv (no bias; BN folds it) -> BN -> relu -> maxpool.
  ConvSpec stem;
  stem.in_channels = cfg.input_channels;
  stem.out_channels = cfg.scaled_width(cfg.stem_width);
  stem.kernel = cfg.stem_kernel;
  stem.stride = cfg.stem_stride;
  stem.padding = {(cfg.stem_kernel[0] - 1) / 2, (cfg.stem_kernel[1] - 1) / 2,
                  (cfg.stem_kernel[2] - 1) / 2};
  int y = conv3d(tape, x, stage_leaf("stem.conv.weight"), std::nullopt, stem);
  y = batchnorm3d(tape, y, stage_leaf("stem.bn.gamma"), stage_leaf("stem.bn.beta"),
                  params.bn.at("stem.bn"), mode);
  y = relu(tape, y);
  y = maxpool3d(tape, y, cfg.pool_kernel, cfg.pool_stride, cfg.pool_padding);

  for (const BlockPlan& plan : plan_blocks(cfg, geom)) {
    BlockParamIds ids;
    ids.conv1_w = stage_leaf(plan.name + ".conv1.weight");
    ids.bn1_gamma = stage_leaf(plan.name + ".bn1.gamma");
    ids.bn1_beta = stage_leaf(plan.name + ".bn1.beta");
    ids.conv2_w = stage_leaf(plan.name + ".conv2.weight");
    ids.bn2_gamma = stage_leaf(plan.name + ".bn2.gamma");
    ids.bn2_beta = stage_leaf(plan.name + ".bn2.beta");
    if (plan.cfg.needs_projection()) {
      ids.proj_w = stage_leaf(plan.name + ".proj.weight");
      ids.proj_gamma = stage_leaf(plan.name + ".proj_bn.gamma");
      ids.proj_beta = stage_leaf(plan.name + ".proj_bn.beta");
    }
    if (plan.cfg.use_ca) {
      ids.ca_w1 = stage_leaf(plan.name + ".ca.w1");
      ids.ca_w2 = stage_leaf(plan.name + ".ca.w2");
    }
    if (plan.cfg.use_da) {
      ids.da_w1 = stage_leaf(plan.name + ".da.w1");
      ids.da_w2 = stage_leaf(plan.name + ".da.w2");
    }
    // Block BN states live in the params map; copy in, run, copy back so a
    // throwing forward leaves the map untouched.
    BlockState<T> state;
    state.bn1 = params.bn.at(plan.name + ".bn1");
    state.bn2 = params.bn.at(plan.name + ".bn2");
    if (plan.cfg.needs_projection()) {
      state.proj_bn = params.bn.at(plan.name + ".proj_bn");
    }
    y = dual_attention_block_forward(tape, y, plan.cfg, ids, state, mode);
    params.bn.at(plan.name + ".bn1") = std::move(state.bn1);
    params.bn.at(plan.name + ".bn2") = std::move(state.bn2);
    if (plan.cfg.needs_projection()) {
      params.bn.at(plan.name + ".proj_bn") = std::move(state.proj_bn);
    }
  }

  result.features = y;
  int pooled = gap_global(tape, y);
  result.logits = linear(tape, pooled, stage_leaf("head.fc.weight"),
                         stage_leaf("head.fc.bias"));
  return result;
}

ParamCount count_parameters(const NetworkConfig& cfg, bool include_bn_stats) {
  ParamCount count;
  std::vector<std::pair<std::string, std::int64_t>> order = {
      {"stem", 0}, {"head", 0}, {"attention", 0}};
  for (std::size_t s = 0; s < cfg.stage_widths.size(); ++s) {
    order.insert(order.begin() + 1 + static_cast<std::ptrdiff_t>(s),
                 {"stage" + std::to_string(s + 1), 0});
  }
  auto bump = [&](const std::string& component, std::int64_t n) {
    count.total += n;
    for (auto& [name, sum] : order) {
      if (name == component) {
        sum += n;
        return;
      }
    }
    order.emplace_back(component, n);
  };
  for (const ParamInfo& info : enumerate_parameters(cfg)) bump(info.component, info.numel());
  if (include_bn_stats) {
    for (const auto& [name, channels] : enumerate_bn_layers(cfg)) {
      (void)name;
      bump("bn_stats", 2 * channels);
    }
  }
  count.by_component = std::move(order);
  return count;
}

template <typename T>
ParamCount count_parameters(const ModelParams<T>& params, bool include_bn_stats) {
  ParamCount count = count_parameters(params.config, include_bn_stats);
  // Cross-check the instantiated tensors against the static enumeration.
  std::int64_t total = 0;
  for (const ParamInfo& info : params.infos) total += params.at(info.name).numel();
  if (include_bn_stats) {
    for (const auto& name : params.bn_names) {
      total += params.bn.at(name).running_mean.numel() + params.bn.at(name).running_var.numel();
    }
  }
  if (total != count.total) {
    throw StateError("instantiated parameter count " + std::to_string(total) +
                     " disagrees with the static count " + std::to_string(count.total));
  }
  return count;
}

template struct ModelParams<float>;
template struct ModelParams<double>;
template ModelParams<float> build_network<float>(const NetworkConfig&, std::uint64_t);
template ModelParams<double> build_network<double>(const NetworkConfig&, std::uint64_t);
template ForwardResult<float> network_forward<float>(Tape<float>&, ModelParams<float>&, int, Mode);
template ForwardResult<double> network_forward<double>(Tape<double>&, ModelParams<double>&, int,
                                                       Mode);
template ParamCount count_parameters<float>(const ModelParams<float>&, bool);
template ParamCount count_parameters<double>(const ModelParams<double>&, bool);

}  // namespace voxattn
