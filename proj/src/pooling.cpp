#include <limits>
#include <memory>

#include "voxattn/ops.hpp"
#include "voxattn/parallel.hpp"

namespace voxattn {

template <typename T>
int maxpool3d(Tape<T>& tape, int input, Triple kernel, Triple stride, Triple padding) {
  const Tensor<T>& x = tape.value(input);
  Dims5 in = dims5(x);
  for (int a = 0; a < 3; ++a) {
    if (stride[a] < 1) throw ConfigError("maxpool3d strides must be >= 1");
    const std::int64_t ext = a == 0 ? in.d : (a == 1 ? in.h : in.w);
    if (ext + 2 * padding[a] < kernel[a]) {
      throw ConfigError("maxpool3d padded extent on axis " + std::to_string(a) +
                        " is smaller than the window");
    }
    if (padding[a] >= kernel[a]) {
      throw ConfigError("maxpool3d padding must be smaller than the window");
    }
  }
  const std::int64_t od = conv_out_extent(in.d, kernel[0], stride[0], padding[0]);
  const std::int64_t oh = conv_out_extent(in.h, kernel[1], stride[1], padding[1]);
  const std::int64_t ow = conv_out_extent(in.w, kernel[2], stride[2], padding[2]);
  if (od < 1 || oh < 1 || ow < 1) {
    throw ConfigError("maxpool3d output extent collapsed to zero for input " + x.shape_string());
  }

  Tensor<T> out({in.n, in.c, od, oh, ow});
  // argmax (flat input offset) per output element, for the backward scatter
  auto argmax = std::make_shared<std::vector<std::int64_t>>(
      static_cast<std::size_t>(out.numel()), std::int64_t(-1));
  const std::int64_t in_vol = in.d * in.h * in.w;
  const std::int64_t out_vol = od * oh * ow;
  parallel_for(in.n * in.c, [&](std::int64_t s0, std::int64_t s1) {
    for (std::int64_t s = s0; s < s1; ++s) {
      const T* xp = x.data() + s * in_vol;
      T* op = out.data() + s * out_vol;
      std::int64_t* ap = argmax->data() + s * out_vol;
      for (std::int64_t zd = 0; zd < od; ++zd) {
        for (std::int64_t zh = 0; zh < oh; ++zh) {
          for (std::int64_t zw = 0; zw < ow; ++zw) {
            T best = -std::numeric_limits<T>::infinity();
            std::int64_t best_at = -1;
            for (std::int64_t kd = 0; kd < kernel[0]; ++kd) {
              const std::int64_t id = zd * stride[0] - padding[0] + kd;
              if (id < 0 || id >= in.d) continue;
              for (std::int64_t kh = 0; kh < kernel[1]; ++kh) {
                const std::int64_t ih = zh * stride[1] - padding[1] + kh;
                if (ih < 0 || ih >= in.h) continue;
                for (std::int64_t kw = 0; kw < kernel[2]; ++kw) {
                  const std::int64_t iw = zw * stride[2] - padding[2] + kw;
                  if (iw < 0 || iw >= in.w) continue;
                  const std::int64_t at = (id * in.h + ih) * in.w + iw;
                  if (xp[at] > best) {
                    best = xp[at];
                    best_at = at;
                  }
                }
              }
            }
            const std::int64_t z = (zd * oh + zh) * ow + zw;
            op[z] = best;
            ap[z] = best_at;
          }
        }
      }
    }
  });

  auto vjp = [input, argmax, in_vol, out_vol, nc = in.n * in.c](Tape<T>& t, int,
                                                                const Tensor<T>& dy) {
    Tensor<T> dx(t.value(input).shape());
    for (std::int64_t s = 0; s < nc; ++s) {
      const T* dyp = dy.data() + s * out_vol;
      const std::int64_t* ap = argmax->data() + s * out_vol;
      T* dxp = dx.data() + s * in_vol;
      for (std::int64_t z = 0; z < out_vol; ++z) {
        if (ap[z] >= 0) dxp[ap[z]] += dyp[z];
      }
    }
    t.accumulate_adjoint(input, dx);
  };
  return tape.push("maxpool3d", std::move(out), {input}, std::move(vjp));
}

template <typename T>
int gap_spatial(Tape<T>& tape, int input) {
  const Tensor<T>& x = tape.value(input);
  Dims5 in = dims5(x);
  const std::int64_t plane = in.h * in.w;
  Tensor<T> out({in.n, in.c, in.d, 1, 1});
  parallel_for(in.n * in.c * in.d, [&](std::int64_t s0, std::int64_t s1) {
    for (std::int64_t s = s0; s < s1; ++s) {
      const T* xp = x.data() + s * plane;
      T acc = T(0);
      for (std::int64_t i = 0; i < plane; ++i) acc += xp[i];
      out[s] = acc / static_cast<T>(plane);
    }
  });
  auto vjp = [input, plane, slices = in.n * in.c * in.d](Tape<T>& t, int, const Tensor<T>& dy) {
    Tensor<T> dx(t.value(input).shape());
    for (std::int64_t s = 0; s < slices; ++s) {
      const T g = dy[s] / static_cast<T>(plane);
      T* dxp = dx.data() + s * plane;
      for (std::int64_t i = 0; i < plane; ++i) dxp[i] = g;
    }
    t.accumulate_adjoint(input, dx);
  };
  return tape.push("gap_spatial", std::move(out), {input}, std::move(vjp));
}

template <typename T>
int gap_global(Tape<T>& tape, int input) {
  const Tensor<T>& x = tape.value(input);
  Dims5 in = dims5(x);
  const std::int64_t vol = in.d * in.h * in.w;
  Tensor<T> out({in.n, in.c});
  parallel_for(in.n * in.c, [&](std::int64_t s0, std::int64_t s1) {
    for (std::int64_t s = s0; s < s1; ++s) {
      const T* xp = x.data() + s * vol;
      T acc = T(0);
      for (std::int64_t i = 0; i < vol; ++i) acc += xp[i];
      out[s] = acc / static_cast<T>(vol);
    }
  });
  auto vjp = [input, vol, slices = in.n * in.c](Tape<T>& t, int, const Tensor<T>& dy) {
    Tensor<T> dx(t.value(input).shape());
    for (std::int64_t s = 0; s < slices; ++s) {
      const T g = dy[s] / static_cast<T>(vol);
      T* dxp = dx.data() + s * vol;
      for (std::int64_t i = 0; i < vol; ++i) dxp[i] = g;
    }
    t.accumulate_adjoint(input, dx);
  };
  return tape.push("gap_global", std::move(out), {input}, std::move(vjp));
}

#define VOXATTN_INSTANTIATE(T)                                    \
  template int maxpool3d<T>(Tape<T>&, int, Triple, Triple, Triple); \
  template int gap_spatial<T>(Tape<T>&, int);                     \
  template int gap_global<T>(Tape<T>&, int);

VOXATTN_INSTANTIATE(float)
VOXATTN_INSTANTIATE(double)
#undef VOXATTN_INSTANTIATE

}  // namespace voxattn
