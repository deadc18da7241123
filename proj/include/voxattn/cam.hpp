#pragma once

#include <cstdint>
#include <string>

#include "voxattn/ops.hpp"
#include "voxattn/tensor.hpp"

namespace voxattn {

// Per-volume activation heatmap at feature resolution or, after export, at
// input resolution. Values are min-max normalized to [0,1]; a constant raw
// map degenerates to all zeros.
struct CamVolume {
  Tensor<float> values;  // (D,H,W)
  std::int64_t predicted_class = 0;
  std::string sample_id;
};

// Weighted channel sum of the final feature maps using the head row for
// `cls`: raw(d,h,w) = sum_k weights[cls,k] * features[k,d,h,w], then min-max
// normalization. `features` is (C,D,H,W), `head_weights` (num_classes, C).
CamVolume cam_compute(const Tensor<float>& features, const Tensor<float>& head_weights,
                      std::int64_t cls);

// Trilinear upsample of the normalized map to the target geometry.
Tensor<float> cam_upsample(const CamVolume& cam, Triple target);

// Writes <path_prefix>.davl (heatmap at target geometry) and one 8-bit
// grayscale image per depth slice as <path_prefix>_z<index>.pgm with
// value = round(255 * v).
void cam_export(const CamVolume& cam, Triple target, const std::string& path_prefix);

}  // namespace voxattn
