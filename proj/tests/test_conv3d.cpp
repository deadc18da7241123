#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <optional>

#include "voxattn/grad_check.hpp"
#include "voxattn/ops.hpp"
#include "voxattn/rng.hpp"

using namespace voxattn;

namespace {

// Direct six-deep loop over the convolution definition. Deliberately naive;
// the production kernel must agree with it.
template <typename T>
Tensor<T> conv_reference(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                         const ConvSpec& spec) {
  Dims5 in = dims5(x);
  const std::int64_t od = conv_out_extent(in.d, spec.kernel[0], spec.stride[0], spec.padding[0]);
  const std::int64_t oh = conv_out_extent(in.h, spec.kernel[1], spec.stride[1], spec.padding[1]);
  const std::int64_t ow = conv_out_extent(in.w, spec.kernel[2], spec.stride[2], spec.padding[2]);
  Tensor<T> out({in.n, spec.out_channels, od, oh, ow});
  auto xat = [&](std::int64_t n, std::int64_t c, std::int64_t d, std::int64_t h, std::int64_t v) {
    return x[(((n * in.c + c) * in.d + d) * in.h + h) * in.w + v];
  };
  std::int64_t idx = 0;
  for (std::int64_t n = 0; n < in.n; ++n)
    for (std::int64_t co = 0; co < spec.out_channels; ++co)
      for (std::int64_t d = 0; d < od; ++d)
        for (std::int64_t h = 0; h < oh; ++h)
          for (std::int64_t v = 0; v < ow; ++v) {
            T acc = bias ? (*bias)[co] : T(0);
            for (std::int64_t ci = 0; ci < in.c; ++ci)
              for (std::int64_t kd = 0; kd < spec.kernel[0]; ++kd)
                for (std::int64_t kh = 0; kh < spec.kernel[1]; ++kh)
                  for (std::int64_t kw = 0; kw < spec.kernel[2]; ++kw) {
                    const std::int64_t zd = d * spec.stride[0] + kd - spec.padding[0];
                    const std::int64_t zh = h * spec.stride[1] + kh - spec.padding[1];
                    const std::int64_t zw = v * spec.stride[2] + kw - spec.padding[2];
                    if (zd < 0 || zd >= in.d || zh < 0 || zh >= in.h || zw < 0 || zw >= in.w)
                      continue;
                    const T wv =
                        w[(((co * in.c + ci) * spec.kernel[0] + kd) * spec.kernel[1] + kh) *
                              spec.kernel[2] +
                          kw];
                    acc += wv * xat(n, ci, zd, zh, zw);
                  }
            out[idx++] = acc;
          }
  return out;
}

template <typename T>
Tensor<T> random_tensor(std::vector<std::int64_t> shape, Rng& rng, T lo = T(-1), T hi = T(1)) {
  Tensor<T> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

}  // namespace

TEST_CASE("identity 1x1x1 kernel reproduces the input") {
  Rng rng(2);
  auto x = random_tensor<float>({2, 1, 3, 4, 5}, rng);
  Tensor<float> w({1, 1, 1, 1, 1}, {1.0f});
  ConvSpec spec;
  spec.in_channels = 1;
  spec.out_channels = 1;
  spec.kernel = {1, 1, 1};
  spec.padding = {0, 0, 0};
  Tape<float> tape;
  int out = conv3d(tape, tape.add_leaf(x), tape.add_leaf(w), std::nullopt, spec);
  REQUIRE(tape.value(out).same_shape(x));
  for (std::int64_t i = 0; i < x.numel(); ++i) REQUIRE(tape.value(out)[i] == x[i]);
}

TEST_CASE("all-ones 3x3x3 kernel over an all-ones cube sums to 27") {
  ConvSpec spec;
  spec.in_channels = 1;
  spec.out_channels = 1;
  spec.kernel = {3, 3, 3};
  spec.padding = {0, 0, 0};
  Tape<float> tape;
  int x = tape.add_leaf(Tensor<float>::full({1, 1, 3, 3, 3}, 1.0f));
  int w = tape.add_leaf(Tensor<float>::full({1, 1, 3, 3, 3}, 1.0f));
  int out = conv3d(tape, x, w, std::nullopt, spec);
  REQUIRE(tape.value(out).numel() == 1);
  CHECK(tape.value(out)[0] == 27.0f);
}

TEST_CASE("conv3d matches the direct loop on twenty random geometries") {
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    Rng rng(Rng::derive(400, trial, 0));
    ConvSpec spec;
    spec.in_channels = 1 + static_cast<std::int64_t>(rng.uniform_index(3));
    spec.out_channels = 1 + static_cast<std::int64_t>(rng.uniform_index(4));
    for (int a = 0; a < 3; ++a) {
      spec.kernel[a] = 1 + 2 * static_cast<std::int64_t>(rng.uniform_index(2));  // 1 or 3
      spec.stride[a] = 1 + static_cast<std::int64_t>(rng.uniform_index(2));
      spec.padding[a] = static_cast<std::int64_t>(rng.uniform_index(2));
      if (spec.padding[a] >= spec.kernel[a]) spec.padding[a] = 0;
    }
    spec.bias = rng.bernoulli(0.5);
    const std::int64_t n = 1 + static_cast<std::int64_t>(rng.uniform_index(2));
    auto dim = [&](std::int64_t k, std::int64_t p) {
      // Keep the padded extent at or above the kernel.
      std::int64_t lo = std::max<std::int64_t>(k - 2 * p, 1);
      return lo + 2 + static_cast<std::int64_t>(rng.uniform_index(4));
    };
    auto x = random_tensor<float>({n, spec.in_channels, dim(spec.kernel[0], spec.padding[0]),
                                   dim(spec.kernel[1], spec.padding[1]),
                                   dim(spec.kernel[2], spec.padding[2])},
                                  rng);
    auto w = random_tensor<float>({spec.out_channels, spec.in_channels, spec.kernel[0],
                                   spec.kernel[1], spec.kernel[2]},
                                  rng);
    std::optional<Tensor<float>> b;
    if (spec.bias) b = random_tensor<float>({spec.out_channels}, rng);

    Tape<float> tape;
    int xid = tape.add_leaf(x);
    int wid = tape.add_leaf(w);
    std::optional<int> bid;
    if (b) bid = tape.add_leaf(*b);
    int out = conv3d(tape, xid, wid, bid, spec);

    auto ref = conv_reference<float>(x, w, b ? &*b : nullptr, spec);
    REQUIRE(tape.value(out).same_shape(ref));
    for (std::int64_t i = 0; i < ref.numel(); ++i) {
      REQUIRE(tape.value(out)[i] == doctest::Approx(ref[i]).epsilon(1e-4));
    }
  }
}

TEST_CASE("conv3d geometry and spec validation") {
  Tape<float> tape;
  Rng rng(3);
  int x = tape.add_leaf(random_tensor<float>({1, 2, 4, 4, 4}, rng));

  ConvSpec spec;
  spec.in_channels = 2;
  spec.out_channels = 3;

  SUBCASE("weight rank must be five") {
    int w = tape.add_leaf(random_tensor<float>({3, 2, 3, 3}, rng));
    CHECK_THROWS_AS(conv3d(tape, x, w, std::nullopt, spec), DimensionError);
  }
  SUBCASE("weight channels must match the spec") {
    int w = tape.add_leaf(random_tensor<float>({3, 4, 3, 3, 3}, rng));
    CHECK_THROWS_AS(conv3d(tape, x, w, std::nullopt, spec), DimensionError);
  }
  SUBCASE("input channels must match the spec") {
    spec.in_channels = 5;
    int w = tape.add_leaf(random_tensor<float>({3, 5, 3, 3, 3}, rng));
    CHECK_THROWS_AS(conv3d(tape, x, w, std::nullopt, spec), DimensionError);
  }
  SUBCASE("kernel may not exceed the padded extent") {
    spec.kernel = {7, 3, 3};
    spec.padding = {1, 1, 1};
    int w = tape.add_leaf(random_tensor<float>({3, 2, 7, 3, 3}, rng));
    CHECK_THROWS_AS(conv3d(tape, x, w, std::nullopt, spec), ConfigError);
  }
  SUBCASE("strides must be positive") {
    spec.stride = {0, 1, 1};
    int w = tape.add_leaf(random_tensor<float>({3, 2, 3, 3, 3}, rng));
    CHECK_THROWS_AS(conv3d(tape, x, w, std::nullopt, spec), ConfigError);
  }
  SUBCASE("bias presence must agree with the spec") {
    int w = tape.add_leaf(random_tensor<float>({3, 2, 3, 3, 3}, rng));
    int b = tape.add_leaf(random_tensor<float>({3}, rng));
    CHECK_THROWS_AS(conv3d(tape, x, w, b, spec), ConfigError);  // spec.bias is false
    spec.bias = true;
    CHECK_THROWS_AS(conv3d(tape, x, w, std::nullopt, spec), ConfigError);
  }
  SUBCASE("bias length must equal the output channels") {
    spec.bias = true;
    int w = tape.add_leaf(random_tensor<float>({3, 2, 3, 3, 3}, rng));
    int b = tape.add_leaf(random_tensor<float>({4}, rng));
    CHECK_THROWS_AS(conv3d(tape, x, w, b, spec), DimensionError);
  }
}

TEST_CASE("conv3d gradients agree with central differences") {
  Rng rng(7);
  ConvSpec spec;
  spec.in_channels = 2;
  spec.out_channels = 2;
  spec.kernel = {3, 3, 3};
  spec.stride = {1, 2, 2};
  spec.padding = {1, 1, 1};
  spec.bias = true;

  auto x = random_tensor<double>({1, 2, 3, 5, 5}, rng);
  auto w = random_tensor<double>({2, 2, 3, 3, 3}, rng);
  auto b = random_tensor<double>({2}, rng);
  x.set_requires_grad(true);
  w.set_requires_grad(true);
  b.set_requires_grad(true);

  auto graph = [&spec](Tape<double>& tape, const std::vector<int>& ids) {
    int y = conv3d(tape, ids[0], ids[1], ids[2], spec);
    return sum_all(tape, y);
  };
  auto report = grad_check(graph, {x, w, b});
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("conv3d is deterministic across thread budgets") {
  Rng rng(5);
  ConvSpec spec;
  spec.in_channels = 3;
  spec.out_channels = 4;
  spec.kernel = {3, 3, 3};
  spec.stride = {1, 1, 1};
  spec.padding = {1, 1, 1};
  auto x = random_tensor<float>({4, 3, 6, 8, 8}, rng);
  auto w = random_tensor<float>({4, 3, 3, 3, 3}, rng);

  auto run = [&]() {
    Tape<float> tape;
    int out = conv3d(tape, tape.add_leaf(x), tape.add_leaf(w), std::nullopt, spec);
    return tape.value(out);
  };
  setenv("VOXATTN_THREADS", "1", 1);
  auto a = run();
  setenv("VOXATTN_THREADS", "4", 1);
  auto b = run();
  unsetenv("VOXATTN_THREADS");
  REQUIRE(a.same_shape(b));
  for (std::int64_t i = 0; i < a.numel(); ++i) REQUIRE(a[i] == b[i]);
}
