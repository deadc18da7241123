#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "voxattn/volume_io.hpp"

namespace voxattn {

struct ManifestRow {
  std::string path;  // relative to the manifest's directory
  std::int64_t label = 0;
  std::string patient_id;
  std::int64_t fold = 0;
};

struct Manifest {
  std::vector<ManifestRow> rows;
};

// Highest legal fold index is 4: the manifest format carries five-fold
// protocol assignments, smaller k simply leaves upper folds unused.
inline constexpr std::int64_t kMaxFolds = 5;

// Comma-separated text with header `path,label,patient_id,fold`. Fields must
// not contain commas. Validation (both directions): unique paths, labels in
// {0,1,2}, folds in [0,5).
void write_manifest(const Manifest& manifest, const std::string& path);

// Parses and validates; every referenced volume file must exist, resolved
// relative to the manifest's directory (IoError names the first missing one).
Manifest read_manifest(const std::string& path);

// Joins a manifest row path onto the manifest's directory.
std::string resolve_manifest_path(const std::string& manifest_path, const std::string& row_path);

// Assigns a fold in [0,k) to every row such that all rows of one patient
// share a fold and per-fold patient counts differ by at most one. The patient
// order is shuffled deterministically from the seed. k must be in [1,5] and
// at most the number of distinct patients.
Manifest split_folds(const Manifest& manifest, std::int64_t k, std::uint64_t seed);

// Synthetic depth-sparse dataset. Class 0 is a smooth background plus noise;
// class 1 adds diffuse blobs across at least `diffuse_coverage` of the depth
// slices; class 2 adds high-intensity peripheral blobs confined to one
// contiguous band of at most `depth_band_fraction` of the slices. Classes 1
// and 2 carry lesion masks.
struct SynthConfig {
  std::array<std::int64_t, 3> counts = {80, 80, 80};
  std::int64_t depth = 16;
  std::int64_t height = 64;
  std::int64_t width = 64;
  double noise_level = 0.02;
  double depth_band_fraction = 0.25;
  double diffuse_coverage = 0.75;
  double blob_sigma_min = 3.0;  // in-plane, voxels
  double blob_sigma_max = 6.0;
  std::int64_t min_blobs = 3;  // per class-2 sample
  std::int64_t max_blobs = 5;
  std::int64_t folds = 5;
  std::uint64_t seed = 0;
  std::string prefix = "s";  // file and patient id prefix
};

// Writes one volume file per sample into out_dir/<volume_subdir>/ and the
// manifest (paths relative to out_dir) to out_dir/<manifest_name>. Byte
// deterministic for a given config. Every sample is its own patient.
Manifest synth_generate(const SynthConfig& cfg, const std::string& out_dir,
                        const std::string& volume_subdir = "volumes",
                        const std::string& manifest_name = "manifest.csv");

// In-memory dataset: manifest rows materialized as samples resized to the
// given geometry.
struct Dataset {
  std::vector<VolumeSample> samples;
  std::vector<std::int64_t> folds;  // parallel to samples
};

Dataset load_dataset(const std::string& manifest_path, std::array<std::int64_t, 3> geometry);

}  // namespace voxattn
