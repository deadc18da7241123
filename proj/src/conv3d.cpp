#include <Eigen/Core>
#include <algorithm>
#include <string>

#include "voxattn/ops.hpp"
#include "voxattn/parallel.hpp"

namespace voxattn {

namespace {

template <typename T>
using MatrixRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatrixRM<T>>;
template <typename T>
using ConstMapRM = Eigen::Map<const MatrixRM<T>>;

struct ConvGeometry {
  std::int64_t n, cin, d, h, w;
  std::int64_t cout, kd, kh, kw;
  std::int64_t sd, sh, sw;
  std::int64_t pd, ph, pw;
  std::int64_t od, oh, ow;
  std::int64_t patch() const { return cin * kd * kh * kw; }
  std::int64_t out_voxels() const { return od * oh * ow; }
};

template <typename T>
ConvGeometry resolve_geometry(const Tensor<T>& input, const Tensor<T>& weight,
                              const ConvSpec& spec) {
  Dims5 in = dims5(input);
  if (weight.rank() != 5) {
    throw DimensionError("conv3d weight must be rank 5 (C_out,C_in,kD,kH,kW), got " +
                         weight.shape_string());
  }
  ConvGeometry g{};
  g.n = in.n;
  g.cin = in.c;
  g.d = in.d;
  g.h = in.h;
  g.w = in.w;
  g.cout = weight.extent(0);
  g.kd = weight.extent(2);
  g.kh = weight.extent(3);
  g.kw = weight.extent(4);
  if (weight.extent(1) != g.cin || spec.in_channels != g.cin || spec.out_channels != g.cout ||
      spec.kernel[0] != g.kd || spec.kernel[1] != g.kh || spec.kernel[2] != g.kw) {
    throw DimensionError("conv3d weight shape " + weight.shape_string() +
                         " disagrees with input shape " + input.shape_string() +
                         " / spec (in=" + std::to_string(spec.in_channels) +
                         ", out=" + std::to_string(spec.out_channels) + ")");
  }
  g.sd = spec.stride[0];
  g.sh = spec.stride[1];
  g.sw = spec.stride[2];
  g.pd = spec.padding[0];
  g.ph = spec.padding[1];
  g.pw = spec.padding[2];
  if (g.sd < 1 || g.sh < 1 || g.sw < 1) throw ConfigError("conv3d strides must be >= 1");
  const std::int64_t ext[3] = {g.d, g.h, g.w};
  const std::int64_t ker[3] = {g.kd, g.kh, g.kw};
  const std::int64_t pad[3] = {g.pd, g.ph, g.pw};
  for (int a = 0; a < 3; ++a) {
    if (ext[a] + 2 * pad[a] < ker[a]) {
      throw ConfigError("conv3d padded extent " + std::to_string(ext[a] + 2 * pad[a]) +
                        " on axis " + std::to_string(a) + " is smaller than kernel " +
                        std::to_string(ker[a]));
    }
  }
  g.od = conv_out_extent(g.d, g.kd, g.sd, g.pd);
  g.oh = conv_out_extent(g.h, g.kh, g.sh, g.ph);
  g.ow = conv_out_extent(g.w, g.kw, g.sw, g.pw);
  if (g.od < 1 || g.oh < 1 || g.ow < 1) {
    throw ConfigError("conv3d output extent collapsed to zero for input " +
                      input.shape_string());
  }
  return g;
}

// Valid output range [lo, hi) on one axis: the positions whose source index
// o * stride - pad + k falls inside [0, extent).
inline void valid_span(std::int64_t out, std::int64_t extent, std::int64_t stride,
                       std::int64_t pad, std::int64_t k, std::int64_t& lo, std::int64_t& hi) {
  const std::int64_t off = k - pad;
  lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  hi = off >= extent ? 0 : (extent - 1 - off) / stride + 1;
  if (lo > out) lo = out;
  if (hi > out) hi = out;
  if (hi < lo) hi = lo;
}

// im2col for output depth slices [od0, od1) of sample `sample`. Row layout:
// c * kD*kH*kW + kd * kH*kW + kh * kW + kw; columns are output voxels in
// (od, oh, ow) order. Iterates output coordinates directly so the inner loop
// is a contiguous (or strided) copy with the padded border zero-filled.
template <typename T>
void im2col_planes(const T* x, const ConvGeometry& g, std::int64_t sample, std::int64_t od0,
                   std::int64_t od1, T* col) {
  const std::int64_t oplane = g.oh * g.ow;
  const std::int64_t tile = (od1 - od0) * oplane;
  const std::int64_t plane = g.h * g.w;
  const T* xs = x + sample * g.cin * g.d * plane;
  for (std::int64_t c = 0; c < g.cin; ++c) {
    const T* xc = xs + c * g.d * plane;
    for (std::int64_t kd = 0; kd < g.kd; ++kd) {
      for (std::int64_t kh = 0; kh < g.kh; ++kh) {
        std::int64_t oh_lo, oh_hi;
        valid_span(g.oh, g.h, g.sh, g.ph, kh, oh_lo, oh_hi);
        for (std::int64_t kw = 0; kw < g.kw; ++kw) {
          std::int64_t ow_lo, ow_hi;
          valid_span(g.ow, g.w, g.sw, g.pw, kw, ow_lo, ow_hi);
          const std::int64_t row = ((c * g.kd + kd) * g.kh + kh) * g.kw + kw;
          T* dst = col + row * tile;
          for (std::int64_t od = od0; od < od1; ++od, dst += oplane) {
            const std::int64_t id = od * g.sd - g.pd + kd;
            if (id < 0 || id >= g.d) {
              std::fill(dst, dst + oplane, T(0));
              continue;
            }
            const T* xp = xc + id * plane;
            if (oh_lo > 0) std::fill(dst, dst + oh_lo * g.ow, T(0));
            for (std::int64_t oh = oh_lo; oh < oh_hi; ++oh) {
              const T* src = xp + (oh * g.sh - g.ph + kh) * g.w + (ow_lo * g.sw - g.pw + kw);
              T* drow = dst + oh * g.ow;
              if (ow_lo > 0) std::fill(drow, drow + ow_lo, T(0));
              if (g.sw == 1) {
                std::copy(src, src + (ow_hi - ow_lo), drow + ow_lo);
              } else {
                for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow) {
                  drow[ow] = src[(ow - ow_lo) * g.sw];
                }
              }
              if (ow_hi < g.ow) std::fill(drow + ow_hi, drow + g.ow, T(0));
            }
            if (oh_hi < g.oh) std::fill(dst + oh_hi * g.ow, dst + oplane, T(0));
          }
        }
      }
    }
  }
}

// Scatter-add of an im2col-layout gradient tile back into the input gradient.
// Mirrors im2col_planes; padded-border columns carry no contribution.
template <typename T>
void col2im_planes(const T* col, const ConvGeometry& g, std::int64_t sample, std::int64_t od0,
                   std::int64_t od1, T* dx) {
  const std::int64_t oplane = g.oh * g.ow;
  const std::int64_t tile = (od1 - od0) * oplane;
  const std::int64_t plane = g.h * g.w;
  T* dxs = dx + sample * g.cin * g.d * plane;
  for (std::int64_t c = 0; c < g.cin; ++c) {
    T* dxc = dxs + c * g.d * plane;
    for (std::int64_t kd = 0; kd < g.kd; ++kd) {
      for (std::int64_t kh = 0; kh < g.kh; ++kh) {
        std::int64_t oh_lo, oh_hi;
        valid_span(g.oh, g.h, g.sh, g.ph, kh, oh_lo, oh_hi);
        for (std::int64_t kw = 0; kw < g.kw; ++kw) {
          std::int64_t ow_lo, ow_hi;
          valid_span(g.ow, g.w, g.sw, g.pw, kw, ow_lo, ow_hi);
          const std::int64_t row = ((c * g.kd + kd) * g.kh + kh) * g.kw + kw;
          const T* src_base = col + row * tile;
          for (std::int64_t od = od0; od < od1; ++od) {
            const std::int64_t id = od * g.sd - g.pd + kd;
            if (id < 0 || id >= g.d) continue;
            T* dxp = dxc + id * plane;
            const T* srow0 = src_base + (od - od0) * oplane;
            for (std::int64_t oh = oh_lo; oh < oh_hi; ++oh) {
              T* drow = dxp + (oh * g.sh - g.ph + kh) * g.w + (ow_lo * g.sw - g.pw + kw);
              const T* srow = srow0 + oh * g.ow;
              if (g.sw == 1) {
                for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow) drow[ow - ow_lo] += srow[ow];
              } else {
                for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow) {
                  drow[(ow - ow_lo) * g.sw] += srow[ow];
                }
              }
            }
          }
        }
      }
    }
  }
}

// Whole output depth slices per column-buffer fill, keeping the buffer near
// 16 MB. A single slice may overshoot the budget; correctness only needs >= 1.
std::int64_t tile_planes(const ConvGeometry& g) {
  const std::int64_t budget = (16LL << 20) / static_cast<std::int64_t>(sizeof(float));
  const std::int64_t per_plane = std::max<std::int64_t>(g.patch() * g.oh * g.ow, 1);
  const std::int64_t planes = std::max<std::int64_t>(std::int64_t(1), budget / per_plane);
  return std::min(planes, g.od);
}

template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias,
                         const ConvGeometry& g) {
  Tensor<T> out({g.n, g.cout, g.od, g.oh, g.ow});
  const std::int64_t patch = g.patch();
  const std::int64_t ovox = g.out_voxels();
  const std::int64_t oplane = g.oh * g.ow;
  const std::int64_t planes = tile_planes(g);
  ConstMapRM<T> wmat(weight.data(), g.cout, patch);
  parallel_for(g.n, [&](std::int64_t n0, std::int64_t n1) {
    std::vector<T> col(static_cast<std::size_t>(patch * planes * oplane));
    for (std::int64_t n = n0; n < n1; ++n) {
      T* out_n = out.data() + n * g.cout * ovox;
      for (std::int64_t od0 = 0; od0 < g.od; od0 += planes) {
        const std::int64_t od1 = std::min(od0 + planes, g.od);
        const std::int64_t cols = (od1 - od0) * oplane;
        im2col_planes(input.data(), g, n, od0, od1, col.data());
        ConstMapRM<T> cmat(col.data(), patch, cols);
        // Strided output view: rows are output channels, columns this tile.
        Eigen::Map<MatrixRM<T>, 0, Eigen::OuterStride<>> omat(
            out_n + od0 * oplane, g.cout, cols,
            Eigen::OuterStride<>(static_cast<Eigen::Index>(ovox)));
        omat.noalias() = wmat * cmat;
      }
      if (bias) {
        for (std::int64_t k = 0; k < g.cout; ++k) {
          const T b = (*bias)[k];
          T* row = out_n + k * ovox;
          for (std::int64_t j = 0; j < ovox; ++j) row[j] += b;
        }
      }
    }
  });
  return out;
}

}  // namespace

std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                             std::int64_t padding) {
  // Floor division; the span can be negative when the window overhangs the
  // padded input, and that must surface as a non-positive extent.
  const std::int64_t span = in + 2 * padding - kernel;
  const std::int64_t q = span >= 0 ? span / stride : -((-span + stride - 1) / stride);
  return q + 1;
}

template <typename T>
int conv3d(Tape<T>& tape, int input, int weight, std::optional<int> bias, const ConvSpec& spec) {
  const Tensor<T>& x = tape.value(input);
  const Tensor<T>& w = tape.value(weight);
  const ConvGeometry g = resolve_geometry(x, w, spec);
  if (spec.bias != bias.has_value()) {
    throw ConfigError(spec.bias ? "conv3d spec declares a bias but none was supplied"
                                : "conv3d was given a bias the spec does not declare");
  }
  const Tensor<T>* b = nullptr;
  if (spec.bias) {
    b = &tape.value(*bias);
    if (b->numel() != g.cout) {
      throw DimensionError("conv3d bias length " + std::to_string(b->numel()) +
                           " does not match out_channels " + std::to_string(g.cout));
    }
  }
  Tensor<T> out = conv3d_forward(x, w, b, g);

  std::vector<int> inputs = {input, weight};
  if (spec.bias) inputs.push_back(*bias);
  auto vjp = [input, weight, bias, g](Tape<T>& t, int /*self*/, const Tensor<T>& dy) {
    const Tensor<T>& x = t.value(input);
    const Tensor<T>& w = t.value(weight);
    const std::int64_t patch = g.patch();
    const std::int64_t ovox = g.out_voxels();
    const std::int64_t oplane = g.oh * g.ow;
    const std::int64_t planes = tile_planes(g);
    ConstMapRM<T> wmat(w.data(), g.cout, patch);

    if (t.requires_grad(input)) {
      Tensor<T> dx(x.shape());
      parallel_for(g.n, [&](std::int64_t n0, std::int64_t n1) {
        std::vector<T> dcol(static_cast<std::size_t>(patch * planes * oplane));
        for (std::int64_t n = n0; n < n1; ++n) {
          const T* dy_n = dy.data() + n * g.cout * ovox;
          for (std::int64_t od0 = 0; od0 < g.od; od0 += planes) {
            const std::int64_t od1 = std::min(od0 + planes, g.od);
            const std::int64_t cols = (od1 - od0) * oplane;
            Eigen::Map<const MatrixRM<T>, 0, Eigen::OuterStride<>> dymat(
                dy_n + od0 * oplane, g.cout, cols,
                Eigen::OuterStride<>(static_cast<Eigen::Index>(ovox)));
            MapRM<T> dcmat(dcol.data(), patch, cols);
            dcmat.noalias() = wmat.transpose() * dymat;
            col2im_planes(dcol.data(), g, n, od0, od1, dx.data());
          }
        }
      });
      t.accumulate_adjoint(input, dx);
    }

    if (t.requires_grad(weight)) {
      Tensor<T> dw(w.shape());
      MapRM<T> dwmat(dw.data(), g.cout, patch);
      const std::int64_t planes_w = tile_planes(g);
      std::vector<T> col(static_cast<std::size_t>(patch * planes_w * oplane));
      // Sequential over samples/tiles: accumulation order is fixed, so the
      // weight gradient is identical for every thread budget.
      for (std::int64_t n = 0; n < g.n; ++n) {
        const T* dy_n = dy.data() + n * g.cout * ovox;
        for (std::int64_t od0 = 0; od0 < g.od; od0 += planes_w) {
          const std::int64_t od1 = std::min(od0 + planes_w, g.od);
          const std::int64_t cols = (od1 - od0) * oplane;
          im2col_planes(x.data(), g, n, od0, od1, col.data());
          ConstMapRM<T> cmat(col.data(), patch, cols);
          Eigen::Map<const MatrixRM<T>, 0, Eigen::OuterStride<>> dymat(
              dy_n + od0 * oplane, g.cout, cols,
              Eigen::OuterStride<>(static_cast<Eigen::Index>(ovox)));
          dwmat.noalias() += dymat * cmat.transpose();
        }
      }
      t.accumulate_adjoint(weight, dw);
    }

    if (bias && t.requires_grad(*bias)) {
      Tensor<T> db({g.cout});
      for (std::int64_t n = 0; n < g.n; ++n) {
        for (std::int64_t k = 0; k < g.cout; ++k) {
          const T* row = dy.data() + (n * g.cout + k) * ovox;
          T s = T(0);
          for (std::int64_t j = 0; j < ovox; ++j) s += row[j];
          db[k] += s;
        }
      }
      t.accumulate_adjoint(*bias, db);
    }
  };
  return tape.push("conv3d", std::move(out), std::move(inputs), std::move(vjp));
}

template int conv3d<float>(Tape<float>&, int, int, std::optional<int>, const ConvSpec&);
template int conv3d<double>(Tape<double>&, int, int, std::optional<int>, const ConvSpec&);

}  // namespace voxattn
