#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "voxattn/dataset.hpp"
#include "voxattn/network.hpp"
#include "voxattn/trainer.hpp"

namespace voxattn {

// Dataset paths consumed by train/eval/cam. Paths are the only fields without
// defaults; each subcommand validates the ones it needs.
struct DataSection {
  std::string train_manifest;
  std::string test_manifest;
};

// Synthesis settings. `cfg.counts` sizes the training split; the test split
// reuses the same generator with `test_counts` and an independent stream.
struct SynthSection {
  SynthConfig cfg;
  std::array<std::int64_t, 3> test_counts = {30, 30, 30};
};

struct EvalSection {
  std::string checkpoint;        // overridable by --checkpoint
  std::int64_t batch_size = 4;   // forward batching only, no gradient memory
  std::int64_t cam_limit = 0;    // max heatmaps exported, 0 = all
};

// Whole-run configuration: a UTF-8 JSON document with exactly the top-level
// sections below, every key optional, unknown keys rejected by name.
struct RunConfig {
  NetworkConfig network;
  TrainConfig train;
  DataSection data;
  SynthSection synth;
  EvalSection eval;
};

// Parses and validates a config document. Malformed JSON raises ParseError;
// unknown keys, type mismatches, and out-of-range values raise ConfigError,
// each naming the JSON path of the offense (e.g. "train.epochs").
RunConfig parse_run_config_text(const std::string& text);

// File variant; IoError when the file cannot be read.
RunConfig parse_run_config(const std::string& path);

// Canonical serialization: every field explicit, keys sorted, shortest
// round-trip number formatting. Equal configs produce equal strings.
std::string canonical_run_config(const RunConfig& cfg);

// FNV-1a 64 over the canonical serialization; platform-stable.
std::uint64_t run_config_hash(const RunConfig& cfg);

}  // namespace voxattn
