#include <cmath>

#include "voxattn/ops.hpp"
#include "voxattn/parallel.hpp"

namespace voxattn {

template <typename T>
int relu(Tape<T>& tape, int input) {
  const Tensor<T>& x = tape.value(input);
  Tensor<T> out(x.shape());
  const std::int64_t n = x.numel();
  parallel_for(n, [&](std::int64_t i0, std::int64_t i1) {
    for (std::int64_t i = i0; i < i1; ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  });
  auto vjp = [input](Tape<T>& t, int, const Tensor<T>& dy) {
    const Tensor<T>& x = t.value(input);
    Tensor<T> dx(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) dx[i] = x[i] > T(0) ? dy[i] : T(0);
    t.accumulate_adjoint(input, dx);
  };
  return tape.push("relu", std::move(out), {input}, std::move(vjp));
}

template <typename T>
int sigmoid(Tape<T>& tape, int input) {
  const Tensor<T>& x = tape.value(input);
  Tensor<T> out(x.shape());
  const std::int64_t n = x.numel();
  parallel_for(n, [&](std::int64_t i0, std::int64_t i1) {
    for (std::int64_t i = i0; i < i1; ++i) out[i] = T(1) / (T(1) + std::exp(-x[i]));
  });
  auto vjp = [input](Tape<T>& t, int self, const Tensor<T>& dy) {
    const Tensor<T>& y = t.value(self);
    Tensor<T> dx(y.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) dx[i] = dy[i] * y[i] * (T(1) - y[i]);
    t.accumulate_adjoint(input, dx);
  };
  return tape.push("sigmoid", std::move(out), {input}, std::move(vjp));
}

template <typename T>
int add(Tape<T>& tape, int a, int b) {
  const Tensor<T>& xa = tape.value(a);
  const Tensor<T>& xb = tape.value(b);
  if (!xa.same_shape(xb)) {
    throw DimensionError("add shapes disagree: " + xa.shape_string() + " vs " +
                         xb.shape_string());
  }
  Tensor<T> out(xa.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = xa[i] + xb[i];
  auto vjp = [a, b](Tape<T>& t, int, const Tensor<T>& dy) {
    t.accumulate_adjoint(a, dy);
    t.accumulate_adjoint(b, dy);
  };
  return tape.push("add", std::move(out), {a, b}, std::move(vjp));
}

template <typename T>
int reshape(Tape<T>& tape, int input, std::vector<std::int64_t> shape) {
  const Tensor<T>& x = tape.value(input);
  Tensor<T> out = x.reshaped(std::move(shape));
  auto vjp = [input](Tape<T>& t, int, const Tensor<T>& dy) {
    t.accumulate_adjoint(input, dy.reshaped(t.value(input).shape()));
  };
  return tape.push("reshape", std::move(out), {input}, std::move(vjp));
}

template <typename T>
int scale_channel_depth(Tape<T>& tape, int input, int gains) {
  const Tensor<T>& x = tape.value(input);
  const Tensor<T>& g = tape.value(gains);
  Dims5 d = dims5(x);
  if (g.rank() != 3 || g.extent(0) != d.n || g.extent(1) != d.c || g.extent(2) != d.d) {
    throw DimensionError("scale_channel_depth gains " + g.shape_string() +
                         " do not match input " + x.shape_string());
  }
  const std::int64_t plane = d.h * d.w;
  Tensor<T> out(x.shape());
  parallel_for(d.n * d.c * d.d, [&](std::int64_t s0, std::int64_t s1) {
    for (std::int64_t s = s0; s < s1; ++s) {
      const T gain = g[s];
      const T* xp = x.data() + s * plane;
      T* op = out.data() + s * plane;
      for (std::int64_t i = 0; i < plane; ++i) op[i] = gain * xp[i];
    }
  });
  auto vjp = [input, gains, d, plane](Tape<T>& t, int, const Tensor<T>& dy) {
    const Tensor<T>& x = t.value(input);
    const Tensor<T>& g = t.value(gains);
    if (t.requires_grad(input)) {
      Tensor<T> dx(x.shape());
      for (std::int64_t s = 0; s < d.n * d.c * d.d; ++s) {
        const T gain = g[s];
        const T* dyp = dy.data() + s * plane;
        T* dxp = dx.data() + s * plane;
        for (std::int64_t i = 0; i < plane; ++i) dxp[i] = gain * dyp[i];
      }
      t.accumulate_adjoint(input, dx);
    }
    if (t.requires_grad(gains)) {
      Tensor<T> dg(g.shape());
      for (std::int64_t s = 0; s < d.n * d.c * d.d; ++s) {
        const T* dyp = dy.data() + s * plane;
        const T* xp = x.data() + s * plane;
        T acc = T(0);
        for (std::int64_t i = 0; i < plane; ++i) acc += dyp[i] * xp[i];
        dg[s] = acc;
      }
      t.accumulate_adjoint(gains, dg);
    }
  };
  return tape.push("scale_channel_depth", std::move(out), {input, gains}, std::move(vjp));
}

template <typename T>
int scale_channel(Tape<T>& tape, int input, int gains) {
  const Tensor<T>& x = tape.value(input);
  const Tensor<T>& g = tape.value(gains);
  Dims5 d = dims5(x);
  if (g.rank() != 2 || g.extent(0) != d.n || g.extent(1) != d.c) {
    throw DimensionError("scale_channel gains " + g.shape_string() + " do not match input " +
                         x.shape_string());
  }
  const std::int64_t vol = d.d * d.h * d.w;
  Tensor<T> out(x.shape());
  parallel_for(d.n * d.c, [&](std::int64_t s0, std::int64_t s1) {
    for (std::int64_t s = s0; s < s1; ++s) {
      const T gain = g[s];
      const T* xp = x.data() + s * vol;
      T* op = out.data() + s * vol;
      for (std::int64_t i = 0; i < vol; ++i) op[i] = gain * xp[i];
    }
  });
  auto vjp = [input, gains, d, vol](Tape<T>& t, int, const Tensor<T>& dy) {
    const Tensor<T>& x = t.value(input);
    const Tensor<T>& g = t.value(gains);
    if (t.requires_grad(input)) {
      Tensor<T> dx(x.shape());
      for (std::int64_t s = 0; s < d.n * d.c; ++s) {
        const T gain = g[s];
        const T* dyp = dy.data() + s * vol;
        T* dxp = dx.data() + s * vol;
        for (std::int64_t i = 0; i < vol; ++i) dxp[i] = gain * dyp[i];
      }
      t.accumulate_adjoint(input, dx);
    }
    if (t.requires_grad(gains)) {
      Tensor<T> dg(g.shape());
      for (std::int64_t s = 0; s < d.n * d.c; ++s) {
        const T* dyp = dy.data() + s * vol;
        const T* xp = x.data() + s * vol;
        T acc = T(0);
        for (std::int64_t i = 0; i < vol; ++i) acc += dyp[i] * xp[i];
        dg[s] = acc;
      }
      t.accumulate_adjoint(gains, dg);
    }
  };
  return tape.push("scale_channel", std::move(out), {input, gains}, std::move(vjp));
}

template <typename T>
int sum_all(Tape<T>& tape, int input) {
  const Tensor<T>& x = tape.value(input);
  T s = T(0);
  for (std::int64_t i = 0; i < x.numel(); ++i) s += x[i];
  auto vjp = [input](Tape<T>& t, int, const Tensor<T>& dy) {
    const Tensor<T>& x = t.value(input);
    t.accumulate_adjoint(input, Tensor<T>::full(x.shape(), dy[0]));
  };
  return tape.push("sum_all", Tensor<T>::scalar(s), {input}, std::move(vjp));
}

#define VOXATTN_INSTANTIATE(T)                                      \
  template int relu<T>(Tape<T>&, int);                              \
  template int sigmoid<T>(Tape<T>&, int);                           \
  template int add<T>(Tape<T>&, int, int);                          \
  template int reshape<T>(Tape<T>&, int, std::vector<std::int64_t>);\
  template int scale_channel_depth<T>(Tape<T>&, int, int);          \
  template int scale_channel<T>(Tape<T>&, int, int);                \
  template int sum_all<T>(Tape<T>&, int);

VOXATTN_INSTANTIATE(float)
VOXATTN_INSTANTIATE(double)
#undef VOXATTN_INSTANTIATE

}  // namespace voxattn
