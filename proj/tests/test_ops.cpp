#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "voxattn/ops.hpp"
#include "voxattn/rng.hpp"

using namespace voxattn;

namespace {

template <typename T>
Tensor<T> random_tensor(std::vector<std::int64_t> shape, Rng& rng, T lo = T(-1), T hi = T(1)) {
  Tensor<T> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// Window-max reference with out-of-range positions treated as -inf.
template <typename T>
Tensor<T> maxpool_reference(const Tensor<T>& x, Triple k, Triple s, Triple p) {
  Dims5 in = dims5(x);
  const std::int64_t od = conv_out_extent(in.d, k[0], s[0], p[0]);
  const std::int64_t oh = conv_out_extent(in.h, k[1], s[1], p[1]);
  const std::int64_t ow = conv_out_extent(in.w, k[2], s[2], p[2]);
  Tensor<T> out({in.n, in.c, od, oh, ow});
  std::int64_t idx = 0;
  for (std::int64_t n = 0; n < in.n; ++n)
    for (std::int64_t c = 0; c < in.c; ++c)
      for (std::int64_t d = 0; d < od; ++d)
        for (std::int64_t h = 0; h < oh; ++h)
          for (std::int64_t w = 0; w < ow; ++w) {
            T best = -std::numeric_limits<T>::infinity();
            for (std::int64_t kd = 0; kd < k[0]; ++kd)
              for (std::int64_t kh = 0; kh < k[1]; ++kh)
                for (std::int64_t kw = 0; kw < k[2]; ++kw) {
                  const std::int64_t zd = d * s[0] + kd - p[0];
                  const std::int64_t zh = h * s[1] + kh - p[1];
                  const std::int64_t zw = w * s[2] + kw - p[2];
                  if (zd < 0 || zd >= in.d || zh < 0 || zh >= in.h || zw < 0 || zw >= in.w)
                    continue;
                  best = std::max(best,
                                  x[(((n * in.c + c) * in.d + zd) * in.h + zh) * in.w + zw]);
                }
            out[idx++] = best;
          }
  return out;
}

}  // namespace

TEST_CASE("relu and sigmoid pointwise values") {
  Tape<float> tape;
  int x = tape.add_leaf(Tensor<float>({4}, {-2.0f, -0.5f, 0.0f, 3.0f}));
  int r = relu(tape, x);
  CHECK(tape.value(r)[0] == 0.0f);
  CHECK(tape.value(r)[1] == 0.0f);
  CHECK(tape.value(r)[2] == 0.0f);
  CHECK(tape.value(r)[3] == 3.0f);

  int s = sigmoid(tape, x);
  CHECK(tape.value(s)[2] == doctest::Approx(0.5));
  CHECK(tape.value(s)[3] == doctest::Approx(1.0 / (1.0 + std::exp(-3.0))));
}

TEST_CASE("add requires matching shapes") {
  Tape<float> tape;
  int a = tape.add_leaf(Tensor<float>({2, 2}, {1, 2, 3, 4}));
  int b = tape.add_leaf(Tensor<float>({2, 2}, {10, 20, 30, 40}));
  int c = add(tape, a, b);
  CHECK(tape.value(c)[3] == 44.0f);
  int d = tape.add_leaf(Tensor<float>({4}));
  CHECK_THROWS_AS(add(tape, a, d), DimensionError);
}

TEST_CASE("reshape preserves data and checks element count") {
  Tape<float> tape;
  int a = tape.add_leaf(Tensor<float>({2, 3}, {1, 2, 3, 4, 5, 6}));
  int r = reshape(tape, a, {3, 2});
  CHECK(tape.value(r).extent(0) == 3);
  CHECK(tape.value(r)[5] == 6.0f);
  CHECK_THROWS_AS(reshape(tape, a, {7}), DimensionError);
}

TEST_CASE("maxpool3d matches the window-scan reference") {
  Rng rng(21);
  struct Case {
    std::vector<std::int64_t> shape;
    Triple k, s, p;
  };
  for (const auto& c : {Case{{2, 2, 6, 7, 5}, {3, 3, 3}, {2, 2, 2}, {1, 1, 1}},
                        Case{{1, 3, 4, 4, 4}, {2, 2, 2}, {2, 2, 2}, {0, 0, 0}},
                        Case{{2, 1, 5, 5, 5}, {3, 1, 3}, {1, 1, 2}, {1, 0, 1}}}) {
    auto x = random_tensor<float>(c.shape, rng, -5.0f, 5.0f);
    Tape<float> tape;
    int out = maxpool3d(tape, tape.add_leaf(x), c.k, c.s, c.p);
    auto ref = maxpool_reference(x, c.k, c.s, c.p);
    REQUIRE(tape.value(out).same_shape(ref));
    for (std::int64_t i = 0; i < ref.numel(); ++i) REQUIRE(tape.value(out)[i] == ref[i]);
  }
}

TEST_CASE("maxpool3d rejects padding as large as the kernel") {
  Tape<float> tape;
  Rng rng(1);
  int x = tape.add_leaf(random_tensor<float>({1, 1, 4, 4, 4}, rng));
  CHECK_THROWS_AS(maxpool3d(tape, x, {3, 3, 3}, {2, 2, 2}, {3, 1, 1}), ConfigError);
}

TEST_CASE("maxpool3d window over a constant volume returns the constant") {
  Tape<float> tape;
  int x = tape.add_leaf(Tensor<float>::full({1, 1, 4, 4, 4}, 2.5f));
  int out = maxpool3d(tape, x, {3, 3, 3}, {2, 2, 2}, {1, 1, 1});
  for (std::int64_t i = 0; i < tape.value(out).numel(); ++i)
    CHECK(tape.value(out)[i] == 2.5f);
}

TEST_CASE("maxpool3d single 2x2 plane picks the largest entry") {
  Tape<float> tape;
  int x = tape.add_leaf(Tensor<float>({1, 1, 1, 2, 2}, {1, 2, 3, 4}));
  int out = maxpool3d(tape, x, {1, 2, 2}, {1, 2, 2}, {0, 0, 0});
  REQUIRE(tape.value(out).numel() == 1);
  CHECK(tape.value(out)[0] == 4.0f);
}

TEST_CASE("gap_spatial averages each plane") {
  Rng rng(5);
  auto x = random_tensor<double>({2, 3, 4, 5, 6}, rng);
  Tape<double> tape;
  int out = gap_spatial(tape, tape.add_leaf(x));
  const auto& v = tape.value(out);
  REQUIRE(v.shape() == std::vector<std::int64_t>{2, 3, 4, 1, 1});
  Dims5 in = dims5(x);
  for (std::int64_t n = 0; n < in.n; ++n)
    for (std::int64_t c = 0; c < in.c; ++c)
      for (std::int64_t d = 0; d < in.d; ++d) {
        double acc = 0;
        for (std::int64_t h = 0; h < in.h; ++h)
          for (std::int64_t w = 0; w < in.w; ++w)
            acc += x[(((n * in.c + c) * in.d + d) * in.h + h) * in.w + w];
        const double want = acc / static_cast<double>(in.h * in.w);
        CHECK(v[(n * in.c + c) * in.d + d] == doctest::Approx(want).epsilon(1e-12));
      }
}

TEST_CASE("gap_spatial commutes with scalar multiplication") {
  Rng rng(55);
  auto x = random_tensor<double>({1, 2, 3, 4, 4}, rng);
  auto scaled = x;
  for (std::int64_t i = 0; i < scaled.numel(); ++i) scaled[i] *= 3.0;
  Tape<double> tape;
  int a = gap_spatial(tape, tape.add_leaf(x));
  int b = gap_spatial(tape, tape.add_leaf(scaled));
  for (std::int64_t i = 0; i < tape.value(a).numel(); ++i)
    CHECK(tape.value(b)[i] == doctest::Approx(3.0 * tape.value(a)[i]).epsilon(1e-12));
}

TEST_CASE("gap_global averages the whole volume per channel") {
  Rng rng(6);
  auto x = random_tensor<double>({2, 3, 2, 3, 4}, rng);
  Tape<double> tape;
  int out = gap_global(tape, tape.add_leaf(x));
  const auto& v = tape.value(out);
  REQUIRE(v.shape() == std::vector<std::int64_t>{2, 3});
  const std::int64_t vol = 2 * 3 * 4;
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t c = 0; c < 3; ++c) {
      double acc = 0;
      for (std::int64_t i = 0; i < vol; ++i) acc += x[(n * 3 + c) * vol + i];
      CHECK(v[n * 3 + c] == doctest::Approx(acc / vol).epsilon(1e-12));
    }
}

TEST_CASE("batchnorm3d train mode normalizes and tracks running statistics") {
  Rng rng(9);
  auto x = random_tensor<double>({4, 2, 3, 4, 4}, rng, -2.0, 5.0);
  Tape<double> tape;
  int xid = tape.add_leaf(x);
  int g = tape.add_leaf(Tensor<double>::full({2}, 1.0));
  int b = tape.add_leaf(Tensor<double>({2}));
  BnState<double> state;
  int out = batchnorm3d(tape, xid, g, b, state, Mode::kTrain);

  const auto& y = tape.value(out);
  const std::int64_t vol = 3 * 4 * 4;
  const std::int64_t m = 4 * vol;
  for (std::int64_t c = 0; c < 2; ++c) {
    double mean = 0, var = 0, batch_mean = 0;
    for (std::int64_t n = 0; n < 4; ++n)
      for (std::int64_t i = 0; i < vol; ++i) {
        mean += y[(n * 2 + c) * vol + i];
        batch_mean += x[(n * 2 + c) * vol + i];
      }
    mean /= static_cast<double>(m);
    batch_mean /= static_cast<double>(m);
    for (std::int64_t n = 0; n < 4; ++n)
      for (std::int64_t i = 0; i < vol; ++i) {
        const double d = y[(n * 2 + c) * vol + i] - mean;
        var += d * d;
      }
    var /= static_cast<double>(m);
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // biased variance, eps shrinks it a hair

    // Fresh state starts at (0, 1) and moves 10% toward the batch statistics.
    REQUIRE(state.initialized);
    CHECK(state.running_mean[c] == doctest::Approx(0.1 * batch_mean).epsilon(1e-9));
    double batch_var = 0;
    for (std::int64_t n = 0; n < 4; ++n)
      for (std::int64_t i = 0; i < vol; ++i) {
        const double d = x[(n * 2 + c) * vol + i] - batch_mean;
        batch_var += d * d;
      }
    batch_var /= static_cast<double>(m);
    CHECK(state.running_var[c] == doctest::Approx(0.9 * 1.0 + 0.1 * batch_var).epsilon(1e-9));
  }
}

TEST_CASE("batchnorm3d eval mode applies the stored affine map") {
  Tensor<double> x({1, 1, 1, 1, 3}, {1.0, 2.0, 3.0});
  Tape<double> tape;
  int xid = tape.add_leaf(x);
  int g = tape.add_leaf(Tensor<double>({1}, {2.0}));
  int b = tape.add_leaf(Tensor<double>({1}, {0.5}));
  BnState<double> state;
  state.running_mean = Tensor<double>({1}, {2.0});
  state.running_var = Tensor<double>({1}, {4.0});
  state.initialized = true;
  int out = batchnorm3d(tape, xid, g, b, state, Mode::kEval);
  const double is = 1.0 / std::sqrt(4.0 + 1e-5);
  CHECK(tape.value(out)[0] == doctest::Approx(2.0 * (1.0 - 2.0) * is + 0.5));
  CHECK(tape.value(out)[2] == doctest::Approx(2.0 * (3.0 - 2.0) * is + 0.5));

  // Same input twice in eval mode is exactly reproducible.
  int out2 = batchnorm3d(tape, xid, g, b, state, Mode::kEval);
  for (std::int64_t i = 0; i < 3; ++i) REQUIRE(tape.value(out2)[i] == tape.value(out)[i]);
}

TEST_CASE("batchnorm3d eval mode demands populated statistics") {
  Tape<float> tape;
  Rng rng(2);
  int x = tape.add_leaf(random_tensor<float>({1, 2, 2, 2, 2}, rng));
  int g = tape.add_leaf(Tensor<float>::full({2}, 1.0f));
  int b = tape.add_leaf(Tensor<float>({2}));
  BnState<float> state;
  CHECK_THROWS_AS(batchnorm3d(tape, x, g, b, state, Mode::kEval), StateError);
}

TEST_CASE("linear matches the direct product") {
  Tensor<double> x({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<double> w({2, 3}, {1, 0, -1, 0.5, 0.5, 0.5});
  Tensor<double> b({2}, {10, 20});
  Tape<double> tape;
  int out = linear(tape, tape.add_leaf(x), tape.add_leaf(w), tape.add_leaf(b));
  const auto& v = tape.value(out);
  REQUIRE(v.shape() == std::vector<std::int64_t>{2, 2});
  CHECK(v[0] == doctest::Approx(1 - 3 + 10));
  CHECK(v[1] == doctest::Approx(0.5 * (1 + 2 + 3) + 20));
  CHECK(v[2] == doctest::Approx(4 - 6 + 10));
  CHECK(v[3] == doctest::Approx(0.5 * (4 + 5 + 6) + 20));
}

TEST_CASE("softmax rows sum to one and cross entropy matches the formula") {
  Tensor<double> logits({2, 3}, {1.0, 2.0, 3.0, 0.0, 0.0, 0.0});
  auto p = softmax(logits);
  CHECK(p[0] + p[1] + p[2] == doctest::Approx(1.0));
  CHECK(p[3] == doctest::Approx(1.0 / 3.0));

  Tape<double> tape;
  int z = tape.add_leaf(logits);
  int loss = softmax_cross_entropy(tape, z, {2, 0});
  const double l0 = -std::log(std::exp(3.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  const double l1 = std::log(3.0);
  CHECK(tape.value(loss)[0] == doctest::Approx(0.5 * (l0 + l1)));

  CHECK_THROWS_AS(softmax_cross_entropy(tape, z, {2}), DimensionError);
  CHECK_THROWS_AS(softmax_cross_entropy(tape, z, {2, 3}), DimensionError);
}

TEST_CASE("scale_channel_depth multiplies each plane by its gain") {
  Rng rng(13);
  auto x = random_tensor<double>({2, 2, 3, 2, 2}, rng);
  auto gains = random_tensor<double>({2, 2, 3}, rng, 0.0, 1.0);
  Tape<double> tape;
  int out = scale_channel_depth(tape, tape.add_leaf(x), tape.add_leaf(gains));
  const auto& v = tape.value(out);
  REQUIRE(v.same_shape(x));
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t c = 0; c < 2; ++c)
      for (std::int64_t d = 0; d < 3; ++d)
        for (std::int64_t i = 0; i < 4; ++i) {
          const std::int64_t at = (((n * 2 + c) * 3 + d) * 4) + i;
          REQUIRE(v[at] == doctest::Approx(x[at] * gains[(n * 2 + c) * 3 + d]).epsilon(1e-12));
        }

  int bad = tape.add_leaf(Tensor<double>({2, 2, 4}));
  CHECK_THROWS_AS(scale_channel_depth(tape, tape.add_leaf(x), bad), DimensionError);
}

TEST_CASE("scale_channel multiplies each channel volume by its gain") {
  Rng rng(14);
  auto x = random_tensor<double>({2, 3, 2, 2, 2}, rng);
  auto gains = random_tensor<double>({2, 3}, rng, 0.0, 1.0);
  Tape<double> tape;
  int out = scale_channel(tape, tape.add_leaf(x), tape.add_leaf(gains));
  const auto& v = tape.value(out);
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t c = 0; c < 3; ++c)
      for (std::int64_t i = 0; i < 8; ++i) {
        const std::int64_t at = (n * 3 + c) * 8 + i;
        REQUIRE(v[at] == doctest::Approx(x[at] * gains[n * 3 + c]).epsilon(1e-12));
      }
}

TEST_CASE("sum_all reduces to one element") {
  Tape<double> tape;
  int x = tape.add_leaf(Tensor<double>({2, 2}, {1, 2, 3, 4}));
  int s = sum_all(tape, x);
  CHECK(tape.value(s).numel() == 1);
  CHECK(tape.value(s)[0] == doctest::Approx(10.0));
}
