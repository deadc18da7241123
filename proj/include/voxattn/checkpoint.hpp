#pragma once

#include <string>

#include "voxattn/network.hpp"

namespace voxattn {

// Model snapshot container. Layout, all little-endian:
//   magic "VXCK", u16 format version, the network configuration as a fixed
//   field sequence, then every trainable tensor in canonical enumeration
//   order (u16 name length, name bytes, u8 rank, u32 extents, f32 payload),
//   then every normalization layer's running statistics in canonical order.
// The byte stream is a pure function of (config, parameter values, BN state),
// so identical models serialize identically and save/load round-trips are
// bit-exact.
inline constexpr std::uint16_t kCheckpointFormatVersion = 1;

void save_checkpoint(const ModelParams<float>& params, const std::string& path);

// Rebuilds the model from the stored configuration and validates that the
// stored tensors match the canonical enumeration exactly. Bad magic, version,
// truncation, and layout disagreements raise ParseError.
ModelParams<float> load_checkpoint(const std::string& path);

}  // namespace voxattn
