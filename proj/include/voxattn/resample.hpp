#pragma once

#include "voxattn/ops.hpp"
#include "voxattn/rng.hpp"
#include "voxattn/tensor.hpp"
#include "voxattn/volume_io.hpp"

namespace voxattn {

// Corner-aligned trilinear resampling of a (1,D,H,W) volume: target index i
// maps to source coordinate i*(S-1)/(T-1), so first and last slices always
// coincide and resizing to the source extents is the identity. Values stay
// inside the source range (convex combinations).
Tensor<float> resize_trilinear(const Tensor<float>& voxels, Triple target);

// Nearest-neighbor variant with the same coordinate mapping; keeps binary
// masks binary.
Tensor<float> resize_nearest(const Tensor<float>& voxels, Triple target);

// Resizes voxels trilinearly and the mask (when present) by nearest neighbor;
// label and patient id pass through.
VolumeSample resize_volume(const VolumeSample& sample, Triple target);

struct AugmentConfig {
  bool flip = true;        // left-right, p = 0.5
  bool rotate = true;      // axial plane, uniform within +-max_rotate_degrees
  bool translate = true;   // H and W, uniform within +-max_translate_fraction
  bool scale = true;       // isotropic, uniform in [scale_min, scale_max]
  double max_rotate_degrees = 10.0;
  double max_translate_fraction = 0.1;
  double scale_min = 0.9;
  double scale_max = 1.1;
};

// One realized set of augmentation parameters. Shifts are in voxels.
struct AugmentDraw {
  bool flip = false;
  double angle_radians = 0.0;
  double shift_h = 0.0;
  double shift_w = 0.0;
  double scale = 1.0;
};

// Consumes rng draws only for enabled toggles, in a fixed order (flip,
// rotation, translation, scale).
AugmentDraw draw_augment(Rng& rng, const AugmentConfig& cfg, std::int64_t height,
                         std::int64_t width);

// Applies flip exactly (index reversal), then one affine resampling pass:
// rotation and isotropic scaling about the volume center plus in-plane
// translation. Voxels are interpolated trilinearly, masks nearest-neighbor,
// out-of-bounds reads fill with 0. The identity draw reproduces the input to
// within float roundoff.
VolumeSample apply_augment(const VolumeSample& sample, const AugmentDraw& draw);

VolumeSample augment(const VolumeSample& sample, Rng& rng, const AugmentConfig& cfg);

}  // namespace voxattn
