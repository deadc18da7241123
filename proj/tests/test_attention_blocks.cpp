#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "voxattn/attention.hpp"
#include "voxattn/blocks.hpp"
#include "voxattn/rng.hpp"

using namespace voxattn;

namespace {

template <typename T>
Tensor<T> random_tensor(std::vector<std::int64_t> shape, Rng& rng, T lo = T(-1), T hi = T(1)) {
  Tensor<T> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// Unfused reference: pool planes, run the bottleneck by hand, rescale.
Tensor<double> da_reference(const Tensor<double>& x, const Tensor<double>& w1,
                            const Tensor<double>& w2) {
  Dims5 in = dims5(x);
  const std::int64_t cd = in.c * in.d;
  const std::int64_t hidden = w1.extent(0);
  std::vector<double> out_data(static_cast<std::size_t>(x.numel()));
  for (std::int64_t n = 0; n < in.n; ++n) {
    std::vector<double> z(static_cast<std::size_t>(cd), 0.0);
    for (std::int64_t c = 0; c < in.c; ++c)
      for (std::int64_t d = 0; d < in.d; ++d) {
        double acc = 0;
        for (std::int64_t h = 0; h < in.h; ++h)
          for (std::int64_t w = 0; w < in.w; ++w)
            acc += x[(((n * in.c + c) * in.d + d) * in.h + h) * in.w + w];
        z[static_cast<std::size_t>(c * in.d + d)] = acc / static_cast<double>(in.h * in.w);
      }
    std::vector<double> h1(static_cast<std::size_t>(hidden), 0.0);
    for (std::int64_t i = 0; i < hidden; ++i) {
      double acc = 0;
      for (std::int64_t j = 0; j < cd; ++j) acc += w1[i * cd + j] * z[static_cast<std::size_t>(j)];
      h1[static_cast<std::size_t>(i)] = acc > 0 ? acc : 0;
    }
    for (std::int64_t g = 0; g < cd; ++g) {
      double acc = 0;
      for (std::int64_t i = 0; i < hidden; ++i)
        acc += w2[g * hidden + i] * h1[static_cast<std::size_t>(i)];
      const double gain = 1.0 / (1.0 + std::exp(-acc));
      const std::int64_t c = g / in.d, d = g % in.d;
      for (std::int64_t h = 0; h < in.h; ++h)
        for (std::int64_t w = 0; w < in.w; ++w) {
          const std::int64_t at = (((n * in.c + c) * in.d + d) * in.h + h) * in.w + w;
          out_data[static_cast<std::size_t>(at)] = x[at] * gain;
        }
    }
  }
  return Tensor<double>(x.shape(), std::move(out_data));
}

Tensor<double> ca_reference(const Tensor<double>& x, const Tensor<double>& w1,
                            const Tensor<double>& w2) {
  Dims5 in = dims5(x);
  const std::int64_t hidden = w1.extent(0);
  const std::int64_t vol = in.d * in.h * in.w;
  std::vector<double> out_data(static_cast<std::size_t>(x.numel()));
  for (std::int64_t n = 0; n < in.n; ++n) {
    std::vector<double> z(static_cast<std::size_t>(in.c), 0.0);
    for (std::int64_t c = 0; c < in.c; ++c) {
      double acc = 0;
      for (std::int64_t i = 0; i < vol; ++i) acc += x[(n * in.c + c) * vol + i];
      z[static_cast<std::size_t>(c)] = acc / static_cast<double>(vol);
    }
    std::vector<double> h1(static_cast<std::size_t>(hidden), 0.0);
    for (std::int64_t i = 0; i < hidden; ++i) {
      double acc = 0;
      for (std::int64_t j = 0; j < in.c; ++j)
        acc += w1[i * in.c + j] * z[static_cast<std::size_t>(j)];
      h1[static_cast<std::size_t>(i)] = acc > 0 ? acc : 0;
    }
    for (std::int64_t c = 0; c < in.c; ++c) {
      double acc = 0;
      for (std::int64_t i = 0; i < hidden; ++i)
        acc += w2[c * hidden + i] * h1[static_cast<std::size_t>(i)];
      const double gain = 1.0 / (1.0 + std::exp(-acc));
      for (std::int64_t i = 0; i < vol; ++i) {
        const std::int64_t at = (n * in.c + c) * vol + i;
        out_data[static_cast<std::size_t>(at)] = x[at] * gain;
      }
    }
  }
  return Tensor<double>(x.shape(), std::move(out_data));
}

}  // namespace

TEST_CASE("gate hidden widths floor-divide and never vanish") {
  CHECK(DAWeights<float>::hidden_width(8, 4, 16) == 2);
  CHECK(DAWeights<float>::hidden_width(2, 1, 16) == 1);
  CHECK(DAWeights<float>::hidden_width(512, 8, 16) == 256);
  CHECK(CAWeights<float>::hidden_width(64, 16) == 4);
  CHECK(CAWeights<float>::hidden_width(4, 16) == 1);
}

TEST_CASE("depth gate matches the unfused reference on many random instances") {
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    Rng rng(Rng::derive(100, trial, 0));
    const std::int64_t c = 1 + static_cast<std::int64_t>(rng.uniform_index(4));
    const std::int64_t d = 1 + static_cast<std::int64_t>(rng.uniform_index(5));
    const std::int64_t cd = c * d;
    const std::int64_t hidden = std::max<std::int64_t>(cd / 2, 1);
    auto x = random_tensor<double>({2, c, d, 3, 4}, rng);
    auto w1 = random_tensor<double>({hidden, cd}, rng);
    auto w2 = random_tensor<double>({cd, hidden}, rng);

    Tape<double> tape;
    int out = da_forward(tape, tape.add_leaf(x), tape.add_leaf(w1), tape.add_leaf(w2), d);
    auto ref = da_reference(x, w1, w2);
    REQUIRE(tape.value(out).same_shape(ref));
    for (std::int64_t i = 0; i < ref.numel(); ++i)
      REQUIRE(tape.value(out)[i] == doctest::Approx(ref[i]).epsilon(1e-10));
  }
}

TEST_CASE("channel gate matches the unfused reference on many random instances") {
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    Rng rng(Rng::derive(200, trial, 0));
    const std::int64_t c = 2 + static_cast<std::int64_t>(rng.uniform_index(6));
    const std::int64_t hidden = std::max<std::int64_t>(c / 2, 1);
    auto x = random_tensor<double>({2, c, 2, 3, 3}, rng);
    auto w1 = random_tensor<double>({hidden, c}, rng);
    auto w2 = random_tensor<double>({c, hidden}, rng);

    Tape<double> tape;
    int out = ca_forward(tape, tape.add_leaf(x), tape.add_leaf(w1), tape.add_leaf(w2));
    auto ref = ca_reference(x, w1, w2);
    REQUIRE(tape.value(out).same_shape(ref));
    for (std::int64_t i = 0; i < ref.numel(); ++i)
      REQUIRE(tape.value(out)[i] == doctest::Approx(ref[i]).epsilon(1e-10));
  }
}

TEST_CASE("zero gate weights scale the input by exactly one half") {
  Rng rng(42);
  auto x = random_tensor<double>({2, 3, 4, 5, 5}, rng);
  Tape<double> tape;
  int xid = tape.add_leaf(x);

  auto da = DAWeights<double>::zeros(3, 4, 2);
  int da_out = da_forward(tape, xid, tape.add_leaf(da.w1), tape.add_leaf(da.w2), 4);
  for (std::int64_t i = 0; i < x.numel(); ++i)
    REQUIRE(tape.value(da_out)[i] == doctest::Approx(0.5 * x[i]).epsilon(1e-6));

  auto ca = CAWeights<double>::zeros(3, 2);
  int ca_out = ca_forward(tape, xid, tape.add_leaf(ca.w1), tape.add_leaf(ca.w2));
  for (std::int64_t i = 0; i < x.numel(); ++i)
    REQUIRE(tape.value(ca_out)[i] == doctest::Approx(0.5 * x[i]).epsilon(1e-6));

  // Both gates zeroed compound to a quarter of the branch activation.
  int both = da_forward(tape, ca_out, tape.add_leaf(da.w1), tape.add_leaf(da.w2), 4);
  for (std::int64_t i = 0; i < x.numel(); ++i)
    REQUIRE(tape.value(both)[i] == doctest::Approx(0.25 * x[i]).epsilon(1e-6));
}

TEST_CASE("depth gate rejects inputs whose depth disagrees with its sizing") {
  Rng rng(7);
  auto x = random_tensor<double>({1, 2, 5, 3, 3}, rng);
  auto w = DAWeights<double>::zeros(2, 4, 2);  // sized for depth 4
  Tape<double> tape;
  int xid = tape.add_leaf(x);
  int w1 = tape.add_leaf(w.w1);
  int w2 = tape.add_leaf(w.w2);
  try {
    da_forward(tape, xid, w1, w2, 4);
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    // Both the configured and the observed depth belong in the message.
    std::string msg = e.what();
    CHECK(msg.find('4') != std::string::npos);
    CHECK(msg.find('5') != std::string::npos);
  }
}

TEST_CASE("residual block output matches manual composition of the same ops") {
  Rng rng(31);
  BlockConfig cfg;
  cfg.in_channels = 2;
  cfg.out_channels = 3;
  cfg.stride = {1, 2, 2};
  cfg.use_ca = true;
  cfg.use_da = true;
  cfg.r_ca = 2;
  cfg.r_da = 2;
  cfg.feature_depth = 3;

  auto x = random_tensor<float>({2, 2, 3, 6, 6}, rng);
  auto c1 = random_tensor<float>({3, 2, 3, 3, 3}, rng, -0.4f, 0.4f);
  auto g1 = random_tensor<float>({3}, rng, 0.5f, 1.5f);
  auto b1 = random_tensor<float>({3}, rng, -0.3f, 0.3f);
  auto c2 = random_tensor<float>({3, 3, 3, 3, 3}, rng, -0.4f, 0.4f);
  auto g2 = random_tensor<float>({3}, rng, 0.5f, 1.5f);
  auto b2 = random_tensor<float>({3}, rng, -0.3f, 0.3f);
  auto pw = random_tensor<float>({3, 2, 1, 1, 1}, rng, -0.6f, 0.6f);
  auto pg = random_tensor<float>({3}, rng, 0.5f, 1.5f);
  auto pb = random_tensor<float>({3}, rng, -0.3f, 0.3f);
  const std::int64_t cd = 3 * 3;
  auto caw1 = random_tensor<float>({1, 3}, rng, -0.7f, 0.7f);
  auto caw2 = random_tensor<float>({3, 1}, rng, -0.7f, 0.7f);
  auto daw1 = random_tensor<float>({cd / 2, cd}, rng, -0.7f, 0.7f);
  auto daw2 = random_tensor<float>({cd, cd / 2}, rng, -0.7f, 0.7f);

  auto run_block = [&]() {
    Tape<float> tape;
    BlockParamIds ids;
    int xid = tape.add_leaf(x);
    ids.conv1_w = tape.add_leaf(c1);
    ids.bn1_gamma = tape.add_leaf(g1);
    ids.bn1_beta = tape.add_leaf(b1);
    ids.conv2_w = tape.add_leaf(c2);
    ids.bn2_gamma = tape.add_leaf(g2);
    ids.bn2_beta = tape.add_leaf(b2);
    ids.proj_w = tape.add_leaf(pw);
    ids.proj_gamma = tape.add_leaf(pg);
    ids.proj_beta = tape.add_leaf(pb);
    ids.ca_w1 = tape.add_leaf(caw1);
    ids.ca_w2 = tape.add_leaf(caw2);
    ids.da_w1 = tape.add_leaf(daw1);
    ids.da_w2 = tape.add_leaf(daw2);
    BlockState<float> state;
    int out = dual_attention_block_forward(tape, xid, cfg, ids, state, Mode::kTrain);
    return tape.value(out);
  };

  auto run_manual = [&]() {
    Tape<float> tape;
    int xid = tape.add_leaf(x);
    ConvSpec s1;
    s1.in_channels = 2;
    s1.out_channels = 3;
    s1.stride = cfg.stride;
    ConvSpec s2 = s1;
    s2.in_channels = 3;
    s2.stride = {1, 1, 1};
    BnState<float> bn1, bn2, bnp;
    int y = conv3d(tape, xid, tape.add_leaf(c1), std::nullopt, s1);
    y = batchnorm3d(tape, y, tape.add_leaf(g1), tape.add_leaf(b1), bn1, Mode::kTrain);
    y = relu(tape, y);
    y = conv3d(tape, y, tape.add_leaf(c2), std::nullopt, s2);
    y = batchnorm3d(tape, y, tape.add_leaf(g2), tape.add_leaf(b2), bn2, Mode::kTrain);
    y = ca_forward(tape, y, tape.add_leaf(caw1), tape.add_leaf(caw2));
    y = da_forward(tape, y, tape.add_leaf(daw1), tape.add_leaf(daw2), 3);
    ConvSpec sp;
    sp.in_channels = 2;
    sp.out_channels = 3;
    sp.kernel = {1, 1, 1};
    sp.stride = cfg.stride;
    sp.padding = {0, 0, 0};
    int sc = conv3d(tape, xid, tape.add_leaf(pw), std::nullopt, sp);
    sc = batchnorm3d(tape, sc, tape.add_leaf(pg), tape.add_leaf(pb), bnp, Mode::kTrain);
    return tape.value(relu(tape, add(tape, y, sc)));
  };

  auto a = run_block();
  auto b = run_manual();
  REQUIRE(a.same_shape(b));
  for (std::int64_t i = 0; i < a.numel(); ++i) REQUIRE(a[i] == b[i]);
}

TEST_CASE("identity shortcut is used when geometry is preserved") {
  Rng rng(17);
  BlockConfig cfg;
  cfg.in_channels = 2;
  cfg.out_channels = 2;
  cfg.stride = {1, 1, 1};
  cfg.feature_depth = 3;
  CHECK_FALSE(cfg.needs_projection());

  auto x = random_tensor<float>({1, 2, 3, 4, 4}, rng);
  Tape<float> tape;
  BlockParamIds ids;
  int xid = tape.add_leaf(x);
  ids.conv1_w = tape.add_leaf(random_tensor<float>({2, 2, 3, 3, 3}, rng, -0.4f, 0.4f));
  ids.bn1_gamma = tape.add_leaf(Tensor<float>::full({2}, 1.0f));
  ids.bn1_beta = tape.add_leaf(Tensor<float>({2}));
  ids.conv2_w = tape.add_leaf(random_tensor<float>({2, 2, 3, 3, 3}, rng, -0.4f, 0.4f));
  ids.bn2_gamma = tape.add_leaf(Tensor<float>::full({2}, 1.0f));
  ids.bn2_beta = tape.add_leaf(Tensor<float>({2}));
  BlockState<float> state;
  int out = dual_attention_block_forward(tape, xid, cfg, ids, state, Mode::kTrain);
  CHECK(tape.value(out).same_shape(x));

  // Strided block without projection parameters is a configuration error.
  cfg.stride = {2, 2, 2};
  CHECK_THROWS_AS(dual_attention_block_forward(tape, xid, cfg, ids, state, Mode::kTrain),
                  ConfigError);
}

TEST_CASE("block rejects mismatched input channels") {
  Rng rng(19);
  BlockConfig cfg;
  cfg.in_channels = 4;
  cfg.out_channels = 4;
  cfg.feature_depth = 3;
  auto x = random_tensor<float>({1, 2, 3, 4, 4}, rng);
  Tape<float> tape;
  BlockParamIds ids;
  BlockState<float> state;
  int xid = tape.add_leaf(x);
  CHECK_THROWS_AS(dual_attention_block_forward(tape, xid, cfg, ids, state, Mode::kTrain),
                  DimensionError);
}
