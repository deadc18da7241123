#include <cmath>
#include <memory>

#include "voxattn/ops.hpp"
#include "voxattn/parallel.hpp"

namespace voxattn {

namespace {

// Traversal helper: channel c of sample n starts at (n*C + c) * vol.
template <typename T, typename Fn>
void for_each_channel_slab(std::int64_t n, std::int64_t c_count, std::int64_t vol, Fn&& fn) {
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t c = 0; c < c_count; ++c) fn(b, c, (b * c_count + c) * vol);
  }
}

}  // namespace

template <typename T>
int batchnorm3d(Tape<T>& tape, int input, int gamma, int beta, BnState<T>& state, Mode mode) {
  const Tensor<T>& x = tape.value(input);
  Dims5 in = dims5(x);
  const Tensor<T>& g = tape.value(gamma);
  const Tensor<T>& b = tape.value(beta);
  if (g.numel() != in.c || b.numel() != in.c) {
    throw DimensionError("batchnorm3d gamma/beta length must equal channel count " +
                         std::to_string(in.c));
  }
  const std::int64_t vol = in.d * in.h * in.w;
  const std::int64_t m = in.n * vol;  // reduction count per channel

  // Per-channel mean and inverse stddev actually used for normalization.
  auto mean = std::make_shared<std::vector<T>>(static_cast<std::size_t>(in.c), T(0));
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(in.c), T(0));

  if (mode == Mode::kTrain) {
    parallel_for(in.c, [&](std::int64_t c0, std::int64_t c1) {
      for (std::int64_t c = c0; c < c1; ++c) {
        T acc = T(0);
        for (std::int64_t n = 0; n < in.n; ++n) {
          const T* xp = x.data() + (n * in.c + c) * vol;
          for (std::int64_t i = 0; i < vol; ++i) acc += xp[i];
        }
        const T mu = acc / static_cast<T>(m);
        T var_acc = T(0);
        for (std::int64_t n = 0; n < in.n; ++n) {
          const T* xp = x.data() + (n * in.c + c) * vol;
          for (std::int64_t i = 0; i < vol; ++i) {
            const T dlt = xp[i] - mu;
            var_acc += dlt * dlt;
          }
        }
        const T var = var_acc / static_cast<T>(m);  // biased
        (*mean)[static_cast<std::size_t>(c)] = mu;
        (*inv_std)[static_cast<std::size_t>(c)] =
            T(1) / std::sqrt(var + static_cast<T>(state.epsilon));
      }
    });
    // Momentum update of running statistics.
    if (!state.initialized) {
      state.running_mean = Tensor<T>({in.c});
      state.running_var = Tensor<T>::full({in.c}, T(1));
      state.initialized = true;
    }
    const T mom = static_cast<T>(state.momentum);
    for (std::int64_t c = 0; c < in.c; ++c) {
      const T mu = (*mean)[static_cast<std::size_t>(c)];
      const T is = (*inv_std)[static_cast<std::size_t>(c)];
      const T var = T(1) / (is * is) - static_cast<T>(state.epsilon);
      state.running_mean[c] = (T(1) - mom) * state.running_mean[c] + mom * mu;
      state.running_var[c] = (T(1) - mom) * state.running_var[c] + mom * var;
    }
  } else {
    if (!state.initialized) {
      throw StateError("batchnorm3d eval mode requires populated running statistics");
    }
    for (std::int64_t c = 0; c < in.c; ++c) {
      (*mean)[static_cast<std::size_t>(c)] = state.running_mean[c];
      (*inv_std)[static_cast<std::size_t>(c)] =
          T(1) / std::sqrt(state.running_var[c] + static_cast<T>(state.epsilon));
    }
  }

  Tensor<T> out(x.shape());
  parallel_for(in.n * in.c, [&](std::int64_t s0, std::int64_t s1) {
    for (std::int64_t s = s0; s < s1; ++s) {
      const std::int64_t c = s % in.c;
      const T mu = (*mean)[static_cast<std::size_t>(c)];
      const T is = (*inv_std)[static_cast<std::size_t>(c)];
      const T gc = g[c], bc = b[c];
      const T* xp = x.data() + s * vol;
      T* op = out.data() + s * vol;
      for (std::int64_t i = 0; i < vol; ++i) op[i] = gc * ((xp[i] - mu) * is) + bc;
    }
  });

  const bool train = mode == Mode::kTrain;
  auto vjp = [input, gamma, beta, in, vol, m, mean, inv_std, train](Tape<T>& t, int,
                                                                    const Tensor<T>& dy) {
    const Tensor<T>& x = t.value(input);
    const Tensor<T>& g = t.value(gamma);

    // Per-channel sums of dy and dy * x_hat drive all three gradients.
    std::vector<T> sum_dy(static_cast<std::size_t>(in.c), T(0));
    std::vector<T> sum_dy_xhat(static_cast<std::size_t>(in.c), T(0));
    for_each_channel_slab<T>(in.n, in.c, vol, [&](std::int64_t, std::int64_t c, std::int64_t at) {
      const T mu = (*mean)[static_cast<std::size_t>(c)];
      const T is = (*inv_std)[static_cast<std::size_t>(c)];
      const T* xp = x.data() + at;
      const T* dyp = dy.data() + at;
      T a = T(0), bsum = T(0);
      for (std::int64_t i = 0; i < vol; ++i) {
        a += dyp[i];
        bsum += dyp[i] * ((xp[i] - mu) * is);
      }
      sum_dy[static_cast<std::size_t>(c)] += a;
      sum_dy_xhat[static_cast<std::size_t>(c)] += bsum;
    });

    if (t.requires_grad(gamma)) {
      Tensor<T> dg({in.c});
      for (std::int64_t c = 0; c < in.c; ++c) dg[c] = sum_dy_xhat[static_cast<std::size_t>(c)];
      t.accumulate_adjoint(gamma, dg);
    }
    if (t.requires_grad(beta)) {
      Tensor<T> db({in.c});
      for (std::int64_t c = 0; c < in.c; ++c) db[c] = sum_dy[static_cast<std::size_t>(c)];
      t.accumulate_adjoint(beta, db);
    }
    if (t.requires_grad(input)) {
      Tensor<T> dx(x.shape());
      for_each_channel_slab<T>(in.n, in.c, vol,
                               [&](std::int64_t, std::int64_t c, std::int64_t at) {
        const T mu = (*mean)[static_cast<std::size_t>(c)];
        const T is = (*inv_std)[static_cast<std::size_t>(c)];
        const T gc = g[c];
        const T* xp = x.data() + at;
        const T* dyp = dy.data() + at;
        T* dxp = dx.data() + at;
        if (train) {
          const T mean_dy = sum_dy[static_cast<std::size_t>(c)] / static_cast<T>(m);
          const T mean_dy_xhat = sum_dy_xhat[static_cast<std::size_t>(c)] / static_cast<T>(m);
          for (std::int64_t i = 0; i < vol; ++i) {
            const T xhat = (xp[i] - mu) * is;
            dxp[i] = gc * is * (dyp[i] - mean_dy - xhat * mean_dy_xhat);
          }
        } else {
          for (std::int64_t i = 0; i < vol; ++i) dxp[i] = gc * is * dyp[i];
        }
      });
      t.accumulate_adjoint(input, dx);
    }
  };
  return tape.push("batchnorm3d", std::move(out), {input, gamma, beta}, std::move(vjp));
}

template int batchnorm3d<float>(Tape<float>&, int, int, int, BnState<float>&, Mode);
template int batchnorm3d<double>(Tape<double>&, int, int, int, BnState<double>&, Mode);

}  // namespace voxattn
