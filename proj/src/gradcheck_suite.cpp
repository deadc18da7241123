#include "voxattn/gradcheck_suite.hpp"

#include <utility>

#include "voxattn/attention.hpp"
#include "voxattn/blocks.hpp"
#include "voxattn/ops.hpp"
#include "voxattn/rng.hpp"

namespace voxattn {

namespace {

Tensor<double> sample(std::vector<std::int64_t> shape, Rng& rng, double lo, double hi,
                      bool grad = true) {
  Tensor<double> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  t.set_requires_grad(grad);
  return t;
}

// Values kept away from zero so the relu kink cannot sit inside the
// central-difference bracket.
Tensor<double> sample_off_zero(std::vector<std::int64_t> shape, Rng& rng) {
  Tensor<double> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    const double mag = rng.uniform(0.2, 1.5);
    t[i] = rng.bernoulli(0.5) ? mag : -mag;
  }
  t.set_requires_grad(true);
  return t;
}

}  // namespace

std::vector<GradCase> gradcheck_cases(std::uint64_t seed) {
  std::vector<GradCase> cases;
  auto rng_for = [seed](std::uint64_t idx) { return Rng(Rng::derive(seed, idx, 0)); };

  {
    Rng rng = rng_for(0);
    cases.push_back({"relu",
                     {sample_off_zero({3, 4, 5}, rng)},
                     [](Tape<double>& t, const std::vector<int>& ids) {
                       return sum_all(t, relu(t, ids[0]));
                     }});
  }
  {
    Rng rng = rng_for(1);
    cases.push_back({"sigmoid",
                     {sample({2, 3, 4}, rng, -2.0, 2.0)},
                     [](Tape<double>& t, const std::vector<int>& ids) {
                       return sum_all(t, sigmoid(t, ids[0]));
                     }});
  }
  {
    Rng rng = rng_for(2);
    cases.push_back({"add",
                     {sample({2, 3, 4}, rng, -1.0, 1.0), sample({2, 3, 4}, rng, -1.0, 1.0)},
                     [](Tape<double>& t, const std::vector<int>& ids) {
                       return sum_all(t, add(t, ids[0], ids[1]));
                     }});
  }
  {
    Rng rng = rng_for(3);
    cases.push_back({"reshape",
                     {sample({2, 3, 4}, rng, -1.0, 1.0)},
                     [](Tape<double>& t, const std::vector<int>& ids) {
                       int r = reshape(t, ids[0], {4, 6});
                       int s = sigmoid(t, r);  // nonlinearity so the adjoint is nontrivial
                       return sum_all(t, s);
                     }});
  }
  {
    Rng rng = rng_for(4);
    cases.push_back({"sum_all",
                     {sample({3, 5}, rng, -1.0, 1.0)},
                     [](Tape<double>& t, const std::vector<int>& ids) {
                       return sum_all(t, ids[0]);
                     }});
  }
  {
    Rng rng = rng_for(5);
    cases.push_back({"linear",
                     {sample({3, 4}, rng, -1.0, 1.0), sample({2, 4}, rng, -1.0, 1.0),
                      sample({2}, rng, -0.5, 0.5)},
                     [](Tape<double>& t, const std::vector<int>& ids) {
                       int y = linear(t, ids[0], ids[1], ids[2]);
                       return sum_all(t, sigmoid(t, y));
                     }});
  }
  {
    Rng rng = rng_for(6);
    ConvSpec spec;
    spec.in_channels = 2;
    spec.out_channels = 3;
    spec.kernel = {3, 3, 3};
    spec.stride = {1, 2, 2};
    spec.padding = {1, 1, 1};
    spec.bias = true;
    cases.push_back({"conv3d",
                     {sample({2, 2, 3, 4, 4}, rng, -1.0, 1.0),
                      sample({3, 2, 3, 3, 3}, rng, -0.5, 0.5), sample({3}, rng, -0.5, 0.5)},
                     [spec](Tape<double>& t, const std::vector<int>& ids) {
                       int y = conv3d(t, ids[0], ids[1], ids[2], spec);
                       return sum_all(t, sigmoid(t, y));
                     }});
  }
  {
    Rng rng = rng_for(7);
    cases.push_back({"maxpool3d",
                     {sample({1, 2, 4, 5, 5}, rng, -3.0, 3.0)},
                     [](Tape<double>& t, const std::vector<int>& ids) {
                       int y = maxpool3d(t, ids[0], {3, 3, 3}, {2, 2, 2}, {1, 1, 1});
                       return sum_all(t, sigmoid(t, y));
                     }});
  }
  {
    Rng rng = rng_for(8);
    cases.push_back({"gap_spatial",
                     {sample({2, 3, 3, 4, 4}, rng, -1.0, 1.0)},
                     [](Tape<double>& t, const std::vector<int>& ids) {
                       return sum_all(t, sigmoid(t, gap_spatial(t, ids[0])));
                     }});
  }
  {
    Rng rng = rng_for(9);
    cases.push_back({"gap_global",
                     {sample({2, 3, 3, 4, 4}, rng, -1.0, 1.0)},
                     [](Tape<double>& t, const std::vector<int>& ids) {
                       return sum_all(t, sigmoid(t, gap_global(t, ids[0])));
                     }});
  }
  {
    Rng rng = rng_for(10);
    // Plain sums are blind here: normalized activations sum to zero per
    // channel, so project through fixed random plane gains first.
    auto proj = sample({3, 2, 2}, rng, 0.5, 1.5, /*grad=*/false);
    cases.push_back({"batchnorm3d_train",
                     {sample({3, 2, 2, 3, 3}, rng, -2.0, 2.0), sample({2}, rng, 0.5, 1.5),
                      sample({2}, rng, -0.5, 0.5), proj},
                     [](Tape<double>& t, const std::vector<int>& ids) {
                       BnState<double> state;
                       int y = batchnorm3d(t, ids[0], ids[1], ids[2], state, Mode::kTrain);
                       return sum_all(t, scale_channel_depth(t, y, ids[3]));
                     }});
  }
  {
    Rng rng = rng_for(11);
    cases.push_back({"batchnorm3d_eval",
                     {sample({3, 2, 2, 3, 3}, rng, -2.0, 2.0), sample({2}, rng, 0.5, 1.5),
                      sample({2}, rng, -0.5, 0.5)},
                     [](Tape<double>& t, const std::vector<int>& ids) {
                       BnState<double> state;
                       state.running_mean = Tensor<double>({2}, {0.2, -0.4});
                       state.running_var = Tensor<double>({2}, {1.5, 0.7});
                       state.initialized = true;
                       int y = batchnorm3d(t, ids[0], ids[1], ids[2], state, Mode::kEval);
                       return sum_all(t, sigmoid(t, y));
                     }});
  }
  {
    Rng rng = rng_for(12);
    cases.push_back({"softmax_cross_entropy",
                     {sample({4, 3}, rng, -2.0, 2.0)},
                     [](Tape<double>& t, const std::vector<int>& ids) {
                       return softmax_cross_entropy(t, ids[0], {0, 2, 1, 2});
                     }});
  }
  {
    Rng rng = rng_for(13);
    cases.push_back({"scale_channel_depth",
                     {sample({2, 2, 3, 2, 2}, rng, -1.0, 1.0), sample({2, 2, 3}, rng, 0.1, 0.9)},
                     [](Tape<double>& t, const std::vector<int>& ids) {
                       return sum_all(t, scale_channel_depth(t, ids[0], ids[1]));
                     }});
  }
  {
    Rng rng = rng_for(14);
    cases.push_back({"scale_channel",
                     {sample({2, 3, 2, 2, 2}, rng, -1.0, 1.0), sample({2, 3}, rng, 0.1, 0.9)},
                     [](Tape<double>& t, const std::vector<int>& ids) {
                       return sum_all(t, scale_channel(t, ids[0], ids[1]));
                     }});
  }
  {
    Rng rng = rng_for(15);
    // C=2, D=3, r=2 -> hidden 3.
    cases.push_back({"depth_attention",
                     {sample({2, 2, 3, 4, 4}, rng, -1.0, 1.0), sample({3, 6}, rng, -0.7, 0.7),
                      sample({6, 3}, rng, -0.7, 0.7)},
                     [](Tape<double>& t, const std::vector<int>& ids) {
                       int y = da_forward(t, ids[0], ids[1], ids[2], 3);
                       return sum_all(t, y);
                     }});
  }
  {
    Rng rng = rng_for(16);
    // C=3, r=2 -> hidden 1.
    cases.push_back({"channel_attention",
                     {sample({2, 3, 3, 4, 4}, rng, -1.0, 1.0), sample({1, 3}, rng, -0.7, 0.7),
                      sample({3, 1}, rng, -0.7, 0.7)},
                     [](Tape<double>& t, const std::vector<int>& ids) {
                       int y = ca_forward(t, ids[0], ids[1], ids[2]);
                       return sum_all(t, y);
                     }});
  }

  // Full residual block, projection shortcut and both gates engaged.
  auto block_cfg = [] {
    BlockConfig cfg;
    cfg.in_channels = 3;
    cfg.out_channels = 4;
    cfg.stride = {1, 2, 2};
    cfg.use_ca = true;
    cfg.use_da = true;
    cfg.r_ca = 2;
    cfg.r_da = 4;
    cfg.feature_depth = 4;  // input depth 4, depth stride 1
    return cfg;
  }();
  auto block_inputs = [&](Rng& rng) {
    const std::int64_t cd = 4 * 4;          // out_channels * feature_depth
    const std::int64_t da_hidden = cd / 4;  // r_da
    const std::int64_t ca_hidden = 4 / 2;   // r_ca
    std::vector<Tensor<double>> ins;
    ins.push_back(sample({2, 3, 4, 6, 6}, rng, -1.0, 1.0));           // x
    ins.push_back(sample({4, 3, 3, 3, 3}, rng, -0.4, 0.4));           // conv1
    ins.push_back(sample({4}, rng, 0.5, 1.5));                        // bn1 gamma
    ins.push_back(sample({4}, rng, -0.3, 0.3));                       // bn1 beta
    ins.push_back(sample({4, 4, 3, 3, 3}, rng, -0.4, 0.4));           // conv2
    ins.push_back(sample({4}, rng, 0.5, 1.5));                        // bn2 gamma
    ins.push_back(sample({4}, rng, -0.3, 0.3));                       // bn2 beta
    ins.push_back(sample({4, 3, 1, 1, 1}, rng, -0.6, 0.6));           // proj
    ins.push_back(sample({4}, rng, 0.5, 1.5));                        // proj gamma
    ins.push_back(sample({4}, rng, -0.3, 0.3));                       // proj beta
    ins.push_back(sample({ca_hidden, 4}, rng, -0.7, 0.7));            // ca w1
    ins.push_back(sample({4, ca_hidden}, rng, -0.7, 0.7));            // ca w2
    ins.push_back(sample({da_hidden, cd}, rng, -0.7, 0.7));           // da w1
    ins.push_back(sample({cd, da_hidden}, rng, -0.7, 0.7));           // da w2
    ins.push_back(sample({2, 4, 4}, rng, 0.5, 1.5, /*grad=*/false));  // projection gains
    return ins;
  };
  auto block_graph = [block_cfg](Mode mode) {
    return [block_cfg, mode](Tape<double>& t, const std::vector<int>& ids) {
      BlockParamIds pids;
      pids.conv1_w = ids[1];
      pids.bn1_gamma = ids[2];
      pids.bn1_beta = ids[3];
      pids.conv2_w = ids[4];
      pids.bn2_gamma = ids[5];
      pids.bn2_beta = ids[6];
      pids.proj_w = ids[7];
      pids.proj_gamma = ids[8];
      pids.proj_beta = ids[9];
      pids.ca_w1 = ids[10];
      pids.ca_w2 = ids[11];
      pids.da_w1 = ids[12];
      pids.da_w2 = ids[13];
      BlockState<double> state;
      if (mode == Mode::kEval) {
        auto fill = [](BnState<double>& s) {
          s.running_mean = Tensor<double>({4}, {0.1, -0.2, 0.05, 0.3});
          s.running_var = Tensor<double>({4}, {1.2, 0.8, 1.5, 0.9});
          s.initialized = true;
        };
        fill(state.bn1);
        fill(state.bn2);
        fill(state.proj_bn);
      }
      int y = dual_attention_block_forward(t, ids[0], block_cfg, pids, state, mode);
      return sum_all(t, scale_channel_depth(t, y, ids[14]));
    };
  };
  {
    Rng rng = rng_for(17);
    cases.push_back(
        {"dual_attention_block_train", block_inputs(rng), block_graph(Mode::kTrain), 3e-5});
  }
  {
    Rng rng = rng_for(18);
    cases.push_back(
        {"dual_attention_block_eval", block_inputs(rng), block_graph(Mode::kEval), 3e-5});
  }
  return cases;
}

GradSuiteResult run_gradcheck_suite(std::uint64_t seeds) {
  GradSuiteResult result;
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    for (auto& c : gradcheck_cases(seed)) {
      GradSuiteEntry entry;
      entry.name = c.name;
      entry.seed = seed;
      entry.report = grad_check(c.graph, std::move(c.inputs), c.epsilon);
      if (entry.report.max_rel_error > result.worst_rel_error) {
        result.worst_rel_error = entry.report.max_rel_error;
      }
      result.entries.push_back(std::move(entry));
    }
  }
  return result;
}

}  // namespace voxattn
