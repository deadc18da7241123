#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "voxattn/tensor.hpp"

namespace voxattn {

// One scan: voxels shaped (1,D,H,W) with intensities in [0,1], a class label,
// and an optional binary lesion mask of the same shape (synthetic data only).
struct VolumeSample {
  Tensor<float> voxels;
  std::int64_t label = 0;  // 0 normal, 1 diffuse, 2 depth-sparse
  std::string patient_id;
  std::optional<Tensor<float>> lesion_mask;
};

// Binary volume container. Layout, all little-endian:
//   bytes 0..3   magic "DAVL"
//   bytes 4..5   format version (u16, currently 1)
//   bytes 6..17  D, H, W (u32 each)
//   byte  18     mask-present flag (u8, 0 or 1)
//   then D*H*W float32 voxels, D-major with W fastest
//   then, if flagged, the mask packed 8 voxels per byte, LSB first
// Labels and patient ids live in the manifest, not in the file.
inline constexpr std::uint16_t kVolumeFormatVersion = 1;
inline constexpr std::int64_t kVolumeHeaderBytes = 19;

// Serializes voxels (and mask, when present). Throws IoError when the path
// cannot be written, DimensionError when shapes are not (1,D,H,W) or the mask
// disagrees with the voxels.
void write_volume(const VolumeSample& sample, const std::string& path);

// Parses a volume file. Bad magic, unsupported version, and truncation each
// raise a ParseError with a distinct message naming the path.
VolumeSample read_volume(const std::string& path);

}  // namespace voxattn
