#include "voxattn/volume_io.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include "voxattn/errors.hpp"

namespace voxattn {

namespace {

constexpr char kMagic[4] = {'D', 'A', 'V', 'L'};

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

// Readers operate on the fully loaded byte buffer; every fetch checks the
// remaining length so truncated files fail as parse errors, never reads past
// the end.
struct Cursor {
  const unsigned char* data;
  std::size_t size;
  std::size_t pos = 0;
  std::string path;

  void need(std::size_t n, const char* what) {
    if (pos + n > size) {
      throw ParseError("volume file '" + path + "' truncated while reading " + std::string(what));
    }
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(data[pos]) |
                      static_cast<std::uint16_t>(data[pos + 1]) << 8;
    pos += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return data[pos++];
  }
};

}  // namespace

void write_volume(const VolumeSample& sample, const std::string& path) {
  const auto& shape = sample.voxels.shape();
  if (shape.size() != 4 || shape[0] != 1) {
    throw DimensionError("write_volume: voxels must be shaped (1,D,H,W), got " +
                         sample.voxels.shape_string());
  }
  if (sample.lesion_mask && !sample.lesion_mask->same_shape(sample.voxels)) {
    throw DimensionError("write_volume: mask shape " + sample.lesion_mask->shape_string() +
                         " does not match voxels " + sample.voxels.shape_string());
  }

  std::string out;
  const std::int64_t n = sample.voxels.numel();
  out.reserve(static_cast<std::size_t>(kVolumeHeaderBytes + n * 4 + (n + 7) / 8));
  out.append(kMagic, 4);
  put_u16(out, kVolumeFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(shape[1]));
  put_u32(out, static_cast<std::uint32_t>(shape[2]));
  put_u32(out, static_cast<std::uint32_t>(shape[3]));
  out.push_back(sample.lesion_mask ? 1 : 0);

  static_assert(sizeof(float) == 4);
  for (std::int64_t i = 0; i < n; ++i) {
    const float v = sample.voxels[i];
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
  }
  if (sample.lesion_mask) {
    const auto& mask = *sample.lesion_mask;
    for (std::int64_t base = 0; base < n; base += 8) {
      unsigned char byte = 0;
      for (std::int64_t bit = 0; bit < 8 && base + bit < n; ++bit) {
        if (mask[base + bit] != 0.0f) byte |= static_cast<unsigned char>(1u << bit);
      }
      out.push_back(static_cast<char>(byte));
    }
  }

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("write_volume: cannot open '" + path + "' for writing");
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("write_volume: short write to '" + path + "'");
}

VolumeSample read_volume(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("read_volume: cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(file)),
                                   std::istreambuf_iterator<char>());
  if (!file.eof() && file.fail()) throw IoError("read_volume: read failure on '" + path + "'");

  Cursor cur{bytes.data(), bytes.size(), 0, path};
  cur.need(4, "magic");
  if (std::memcmp(cur.data, kMagic, 4) != 0) {
    throw ParseError("volume file '" + path + "' has bad magic bytes");
  }
  cur.pos = 4;
  const std::uint16_t version = cur.u16("version");
  if (version != kVolumeFormatVersion) {
    throw ParseError("volume file '" + path + "' has unsupported format version " +
                     std::to_string(version));
  }
  const std::int64_t d = cur.u32("depth");
  const std::int64_t h = cur.u32("height");
  const std::int64_t w = cur.u32("width");
  if (d < 1 || h < 1 || w < 1) {
    throw ParseError("volume file '" + path + "' declares an empty extent");
  }
  const std::uint8_t has_mask = cur.u8("mask flag");
  if (has_mask > 1) {
    throw ParseError("volume file '" + path + "' has invalid mask flag " +
                     std::to_string(has_mask));
  }

  VolumeSample sample;
  const std::int64_t n = d * h * w;
  std::vector<float> voxels(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const std::uint32_t bits = cur.u32("voxel data");
    std::memcpy(&voxels[static_cast<std::size_t>(i)], &bits, 4);
  }
  sample.voxels = Tensor<float>({1, d, h, w}, std::move(voxels));

  if (has_mask) {
    std::vector<float> mask(static_cast<std::size_t>(n));
    for (std::int64_t base = 0; base < n; base += 8) {
      const std::uint8_t byte = cur.u8("mask data");
      for (std::int64_t bit = 0; bit < 8 && base + bit < n; ++bit) {
        mask[static_cast<std::size_t>(base + bit)] = (byte >> bit) & 1 ? 1.0f : 0.0f;
      }
    }
    sample.lesion_mask = Tensor<float>({1, d, h, w}, std::move(mask));
  }
  if (cur.pos != cur.size) {
    throw ParseError("volume file '" + path + "' has " + std::to_string(cur.size - cur.pos) +
                     " trailing bytes");
  }
  return sample;
}

}  // namespace voxattn
