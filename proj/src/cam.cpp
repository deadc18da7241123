#include "voxattn/cam.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "voxattn/errors.hpp"
#include "voxattn/resample.hpp"
#include "voxattn/volume_io.hpp"

namespace voxattn {

CamVolume cam_compute(const Tensor<float>& features, const Tensor<float>& head_weights,
                      std::int64_t cls) {
  if (features.rank() != 4) {
    throw DimensionError("cam: features must be (C,D,H,W), got " + features.shape_string());
  }
  if (head_weights.rank() != 2) {
    throw DimensionError("cam: head weights must be (classes, C), got " +
                         head_weights.shape_string());
  }
  const std::int64_t c = features.extent(0);
  if (head_weights.extent(1) != c) {
    throw DimensionError("cam: head expects " + std::to_string(head_weights.extent(1)) +
                         " channels but features carry " + std::to_string(c));
  }
  if (cls < 0 || cls >= head_weights.extent(0)) {
    throw ConfigError("cam: class index " + std::to_string(cls) + " outside [0," +
                      std::to_string(head_weights.extent(0)) + ")");
  }

  const std::int64_t d = features.extent(1), h = features.extent(2), w = features.extent(3);
  const std::int64_t plane = d * h * w;
  Tensor<float> raw({d, h, w});
  for (std::int64_t k = 0; k < c; ++k) {
    const float weight = head_weights[cls * c + k];
    const float* src = features.data() + k * plane;
    for (std::int64_t i = 0; i < plane; ++i) raw[i] += weight * src[i];
  }

  float lo = raw[0], hi = raw[0];
  for (std::int64_t i = 1; i < plane; ++i) {
    lo = std::min(lo, raw[i]);
    hi = std::max(hi, raw[i]);
  }
  CamVolume cam;
  cam.predicted_class = cls;
  if (hi > lo) {
    const float span = hi - lo;
    for (std::int64_t i = 0; i < plane; ++i) raw[i] = (raw[i] - lo) / span;
  } else {
    for (std::int64_t i = 0; i < plane; ++i) raw[i] = 0.0f;
  }
  cam.values = std::move(raw);
  return cam;
}

Tensor<float> cam_upsample(const CamVolume& cam, Triple target) {
  const auto& s = cam.values.shape();
  const Tensor<float> as_volume = cam.values.reshaped({1, s[0], s[1], s[2]});
  Tensor<float> up = resize_trilinear(as_volume, target);
  return up.reshaped({target[0], target[1], target[2]});
}

void cam_export(const CamVolume& cam, Triple target, const std::string& path_prefix) {
  Tensor<float> up = cam_upsample(cam, target);

  VolumeSample sample;
  sample.voxels = up.reshaped({1, target[0], target[1], target[2]});
  write_volume(sample, path_prefix + ".davl");

  const std::int64_t d = target[0], h = target[1], w = target[2];
  const std::int64_t plane = h * w;
  std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (std::int64_t z = 0; z < d; ++z) {
    char suffix[32];
    std::snprintf(suffix, sizeof(suffix), "_z%03lld.pgm", static_cast<long long>(z));
    const std::string path = path_prefix + suffix;
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw IoError("cam_export: cannot open '" + path + "'");
    file << header;
    std::string row(static_cast<std::size_t>(plane), '\0');
    for (std::int64_t i = 0; i < plane; ++i) {
      const double v = std::clamp(static_cast<double>(up[z * plane + i]), 0.0, 1.0);
      row[static_cast<std::size_t>(i)] = static_cast<char>(
          static_cast<unsigned char>(std::llround(255.0 * v)));
    }
    file.write(row.data(), static_cast<std::streamsize>(row.size()));
    if (!file) throw IoError("cam_export: short write to '" + path + "'");
  }
}

}  // namespace voxattn
