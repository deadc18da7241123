#include "voxattn/resample.hpp"

#include <cmath>

#include "voxattn/errors.hpp"

namespace voxattn {

namespace {

struct Geometry {
  std::int64_t d, h, w;
};

Geometry geometry_of(const Tensor<float>& voxels) {
  const auto& shape = voxels.shape();
  if (shape.size() != 4 || shape[0] != 1) {
    throw DimensionError("resample: expected a (1,D,H,W) volume, got " + voxels.shape_string());
  }
  return {shape[1], shape[2], shape[3]};
}

// Corner-aligned source coordinate for target index i.
double source_coord(std::int64_t i, std::int64_t src, std::int64_t dst) {
  if (dst == 1) return 0.0;
  return static_cast<double>(i) * static_cast<double>(src - 1) / static_cast<double>(dst - 1);
}

float sample_trilinear_zero(const float* v, const Geometry& g, double sd, double sh, double sw) {
  const double fd = std::floor(sd), fh = std::floor(sh), fw = std::floor(sw);
  const std::int64_t d0 = static_cast<std::int64_t>(fd);
  const std::int64_t h0 = static_cast<std::int64_t>(fh);
  const std::int64_t w0 = static_cast<std::int64_t>(fw);
  const double td = sd - fd, th = sh - fh, tw = sw - fw;
  double acc = 0.0;
  for (int dd = 0; dd < 2; ++dd) {
    const std::int64_t d = d0 + dd;
    if (d < 0 || d >= g.d) continue;
    const double wd = dd ? td : 1.0 - td;
    if (wd == 0.0) continue;
    for (int dh = 0; dh < 2; ++dh) {
      const std::int64_t h = h0 + dh;
      if (h < 0 || h >= g.h) continue;
      const double wh = dh ? th : 1.0 - th;
      if (wh == 0.0) continue;
      for (int dw = 0; dw < 2; ++dw) {
        const std::int64_t w = w0 + dw;
        if (w < 0 || w >= g.w) continue;
        const double ww = dw ? tw : 1.0 - tw;
        if (ww == 0.0) continue;
        acc += wd * wh * ww * static_cast<double>(v[(d * g.h + h) * g.w + w]);
      }
    }
  }
  return static_cast<float>(acc);
}

float sample_nearest_zero(const float* v, const Geometry& g, double sd, double sh, double sw) {
  const std::int64_t d = static_cast<std::int64_t>(std::llround(sd));
  const std::int64_t h = static_cast<std::int64_t>(std::llround(sh));
  const std::int64_t w = static_cast<std::int64_t>(std::llround(sw));
  if (d < 0 || d >= g.d || h < 0 || h >= g.h || w < 0 || w >= g.w) return 0.0f;
  return v[(d * g.h + h) * g.w + w];
}

template <typename Sampler>
Tensor<float> resize_with(const Tensor<float>& voxels, Triple target, Sampler sampler) {
  const Geometry src = geometry_of(voxels);
  if (target[0] < 1 || target[1] < 1 || target[2] < 1) {
    throw ConfigError("resample: target extents must be >= 1");
  }
  Tensor<float> out({1, target[0], target[1], target[2]});
  const float* in = voxels.data();
  float* dst = out.data();
  std::int64_t idx = 0;
  for (std::int64_t d = 0; d < target[0]; ++d) {
    const double sd = source_coord(d, src.d, target[0]);
    for (std::int64_t h = 0; h < target[1]; ++h) {
      const double sh = source_coord(h, src.h, target[1]);
      for (std::int64_t w = 0; w < target[2]; ++w) {
        dst[idx++] = sampler(in, src, sd, sh, source_coord(w, src.w, target[2]));
      }
    }
  }
  return out;
}

}  // namespace

Tensor<float> resize_trilinear(const Tensor<float>& voxels, Triple target) {
  return resize_with(voxels, target, sample_trilinear_zero);
}

Tensor<float> resize_nearest(const Tensor<float>& voxels, Triple target) {
  return resize_with(voxels, target, sample_nearest_zero);
}

VolumeSample resize_volume(const VolumeSample& sample, Triple target) {
  VolumeSample out;
  out.voxels = resize_trilinear(sample.voxels, target);
  out.label = sample.label;
  out.patient_id = sample.patient_id;
  if (sample.lesion_mask) out.lesion_mask = resize_nearest(*sample.lesion_mask, target);
  return out;
}

AugmentDraw draw_augment(Rng& rng, const AugmentConfig& cfg, std::int64_t height,
                         std::int64_t width) {
  AugmentDraw draw;
  if (cfg.flip) draw.flip = rng.bernoulli(0.5);
  if (cfg.rotate) {
    const double limit = cfg.max_rotate_degrees * M_PI / 180.0;
    draw.angle_radians = rng.uniform(-limit, limit);
  }
  if (cfg.translate) {
    const double fh = cfg.max_translate_fraction * static_cast<double>(height);
    const double fw = cfg.max_translate_fraction * static_cast<double>(width);
    draw.shift_h = rng.uniform(-fh, fh);
    draw.shift_w = rng.uniform(-fw, fw);
  }
  if (cfg.scale) draw.scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  return draw;
}

VolumeSample apply_augment(const VolumeSample& sample, const AugmentDraw& draw) {
  const Geometry g = geometry_of(sample.voxels);
  if (draw.scale <= 0.0) throw ConfigError("augment: scale factor must be positive");

  VolumeSample out;
  out.label = sample.label;
  out.patient_id = sample.patient_id;

  Tensor<float> voxels = sample.voxels;
  std::optional<Tensor<float>> mask = sample.lesion_mask;
  if (draw.flip) {
    Tensor<float> flipped({1, g.d, g.h, g.w});
    Tensor<float> flipped_mask = mask ? Tensor<float>({1, g.d, g.h, g.w}) : Tensor<float>();
    for (std::int64_t d = 0; d < g.d; ++d) {
      for (std::int64_t h = 0; h < g.h; ++h) {
        const std::int64_t row = (d * g.h + h) * g.w;
        for (std::int64_t w = 0; w < g.w; ++w) {
          flipped[row + w] = voxels[row + (g.w - 1 - w)];
          if (mask) flipped_mask[row + w] = (*mask)[row + (g.w - 1 - w)];
        }
      }
    }
    voxels = std::move(flipped);
    if (mask) mask = std::move(flipped_mask);
  }

  // Inverse map: rotate by -angle and divide by scale about the center, after
  // removing the translation. The identity draw yields exactly integral
  // source coordinates, so it reproduces the input bit for bit.
  const double cd = static_cast<double>(g.d - 1) / 2.0;
  const double ch = static_cast<double>(g.h - 1) / 2.0;
  const double cw = static_cast<double>(g.w - 1) / 2.0;
  const double cos_a = std::cos(draw.angle_radians);
  const double sin_a = std::sin(draw.angle_radians);
  const double inv_scale = 1.0 / draw.scale;

  Tensor<float> warped({1, g.d, g.h, g.w});
  Tensor<float> warped_mask = mask ? Tensor<float>({1, g.d, g.h, g.w}) : Tensor<float>();
  std::int64_t idx = 0;
  for (std::int64_t d = 0; d < g.d; ++d) {
    const double sd = cd + (static_cast<double>(d) - cd) * inv_scale;
    for (std::int64_t h = 0; h < g.h; ++h) {
      const double ph = static_cast<double>(h) - ch - draw.shift_h;
      for (std::int64_t w = 0; w < g.w; ++w, ++idx) {
        const double pw = static_cast<double>(w) - cw - draw.shift_w;
        const double sh = ch + (cos_a * ph + sin_a * pw) * inv_scale;
        const double sw = cw + (-sin_a * ph + cos_a * pw) * inv_scale;
        warped[idx] = sample_trilinear_zero(voxels.data(), g, sd, sh, sw);
        if (mask) warped_mask[idx] = sample_nearest_zero(mask->data(), g, sd, sh, sw);
      }
    }
  }
  out.voxels = std::move(warped);
  if (mask) out.lesion_mask = std::move(warped_mask);
  return out;
}

VolumeSample augment(const VolumeSample& sample, Rng& rng, const AugmentConfig& cfg) {
  const Geometry g = geometry_of(sample.voxels);
  return apply_augment(sample, draw_augment(rng, cfg, g.h, g.w));
}

}  // namespace voxattn
