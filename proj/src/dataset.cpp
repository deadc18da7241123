#include "voxattn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "voxattn/errors.hpp"
#include "voxattn/resample.hpp"
#include "voxattn/rng.hpp"

namespace voxattn {

namespace {

void validate_manifest(const Manifest& manifest, const std::string& context) {
  std::set<std::string> seen;
  for (std::size_t i = 0; i < manifest.rows.size(); ++i) {
    const auto& row = manifest.rows[i];
    const std::string where = context + " row " + std::to_string(i + 1);
    if (row.path.empty()) throw ParseError(where + ": empty path");
    if (row.path.find(',') != std::string::npos || row.patient_id.find(',') != std::string::npos) {
      throw ParseError(where + ": fields must not contain commas");
    }
    if (!seen.insert(row.path).second) throw ParseError(where + ": duplicate path '" + row.path + "'");
    if (row.label < 0 || row.label > 2) {
      throw ParseError(where + ": label " + std::to_string(row.label) + " outside {0,1,2}");
    }
    if (row.patient_id.empty()) throw ParseError(where + ": empty patient id");
    if (row.fold < 0 || row.fold >= kMaxFolds) {
      throw ParseError(where + ": fold " + std::to_string(row.fold) + " outside [0," +
                       std::to_string(kMaxFolds) + ")");
    }
  }
}

}  // namespace

void write_manifest(const Manifest& manifest, const std::string& path) {
  validate_manifest(manifest, "manifest");
  std::ofstream file(path, std::ios::trunc);
  if (!file) throw IoError("write_manifest: cannot open '" + path + "'");
  file << "path,label,patient_id,fold\n";
  for (const auto& row : manifest.rows) {
    file << row.path << ',' << row.label << ',' << row.patient_id << ',' << row.fold << '\n';
  }
  if (!file) throw IoError("write_manifest: short write to '" + path + "'");
}

std::string resolve_manifest_path(const std::string& manifest_path, const std::string& row_path) {
  const std::filesystem::path p(row_path);
  if (p.is_absolute()) return row_path;
  return (std::filesystem::path(manifest_path).parent_path() / p).string();
}

Manifest read_manifest(const std::string& path) {
  std::ifstream file(path);
  if (!file) throw IoError("read_manifest: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(file, line)) throw ParseError("manifest '" + path + "' is empty");
  if (line == "path,label,patient_id,fold\r") line.pop_back();
  if (line != "path,label,patient_id,fold") {
    throw ParseError("manifest '" + path + "' has unexpected header '" + line + "'");
  }

  Manifest manifest;
  std::size_t line_no = 1;
  while (std::getline(file, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 4) {
      throw ParseError("manifest '" + path + "' line " + std::to_string(line_no) + " has " +
                       std::to_string(fields.size()) + " fields, expected 4");
    }
    ManifestRow row;
    row.path = fields[0];
    row.patient_id = fields[2];
    try {
      row.label = std::stoll(fields[1]);
      row.fold = std::stoll(fields[3]);
    } catch (const std::exception&) {
      throw ParseError("manifest '" + path + "' line " + std::to_string(line_no) +
                       " has a non-integer label or fold");
    }
    manifest.rows.push_back(std::move(row));
  }
  validate_manifest(manifest, "manifest '" + path + "'");
  for (const auto& row : manifest.rows) {
    const std::string resolved = resolve_manifest_path(path, row.path);
    if (!std::filesystem::exists(resolved)) {
      throw IoError("manifest '" + path + "' references missing file '" + resolved + "'");
    }
  }
  return manifest;
}

Manifest split_folds(const Manifest& manifest, std::int64_t k, std::uint64_t seed) {
  if (k < 1 || k > kMaxFolds) {
    throw ConfigError("split_folds: k must be in [1," + std::to_string(kMaxFolds) + "], got " +
                      std::to_string(k));
  }
  std::vector<std::string> patients;
  for (const auto& row : manifest.rows) {
    if (row.patient_id.empty()) throw ParseError("split_folds: row with empty patient id");
    if (std::find(patients.begin(), patients.end(), row.patient_id) == patients.end()) {
      patients.push_back(row.patient_id);
    }
  }
  if (k > static_cast<std::int64_t>(patients.size())) {
    throw ConfigError("split_folds: k=" + std::to_string(k) + " exceeds the " +
                      std::to_string(patients.size()) + " distinct patients");
  }
  // Sort before shuffling so the assignment depends only on the patient set
  // and seed, not on row order.
  std::sort(patients.begin(), patients.end());
  Rng rng = Rng::derive(seed, 0x666f6c64);  // stream tag for fold splitting
  for (std::size_t i = patients.size(); i > 1; --i) {
    const std::size_t j = rng.uniform_index(i);
    std::swap(patients[i - 1], patients[j]);
  }
  std::unordered_map<std::string, std::int64_t> fold_of;
  for (std::size_t i = 0; i < patients.size(); ++i) {
    fold_of[patients[i]] = static_cast<std::int64_t>(i % static_cast<std::size_t>(k));
  }
  Manifest out = manifest;
  for (auto& row : out.rows) row.fold = fold_of.at(row.patient_id);
  return out;
}

namespace {

struct Blob {
  double d, h, w;        // center
  double sd, sh, sw;     // axis spreads
  double peak;
};

// Adds Gaussian bumps into a lesion field restricted to [d_lo, d_hi).
void render_blobs(Tensor<float>& field, const std::vector<Blob>& blobs, std::int64_t d_lo,
                  std::int64_t d_hi) {
  const auto& shape = field.shape();
  const std::int64_t D = shape[1], H = shape[2], W = shape[3];
  for (const auto& b : blobs) {
    const std::int64_t d0 = std::max<std::int64_t>(d_lo, static_cast<std::int64_t>(b.d - 3 * b.sd));
    const std::int64_t d1 = std::min<std::int64_t>(d_hi, static_cast<std::int64_t>(b.d + 3 * b.sd) + 1);
    const std::int64_t h0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(b.h - 3 * b.sh));
    const std::int64_t h1 = std::min<std::int64_t>(H, static_cast<std::int64_t>(b.h + 3 * b.sh) + 1);
    const std::int64_t w0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(b.w - 3 * b.sw));
    const std::int64_t w1 = std::min<std::int64_t>(W, static_cast<std::int64_t>(b.w + 3 * b.sw) + 1);
    for (std::int64_t d = d0; d < d1; ++d) {
      const double ed = (static_cast<double>(d) - b.d) / b.sd;
      for (std::int64_t h = h0; h < h1; ++h) {
        const double eh = (static_cast<double>(h) - b.h) / b.sh;
        const std::int64_t row = (d * H + h) * W;
        for (std::int64_t w = w0; w < w1; ++w) {
          const double ew = (static_cast<double>(w) - b.w) / b.sw;
          const double value = b.peak * std::exp(-0.5 * (ed * ed + eh * eh + ew * ew));
          const std::int64_t i = row + w;
          if (value > field[i]) field[i] = static_cast<float>(value);
        }
      }
    }
  }
}

// Lesion voxels are where the field clears this threshold.
constexpr float kMaskThreshold = 0.15f;

VolumeSample make_sample(const SynthConfig& cfg, std::int64_t label, Rng& rng) {
  const std::int64_t D = cfg.depth, H = cfg.height, W = cfg.width;

  // Smooth background: a coarse random grid upsampled trilinearly.
  Tensor<float> coarse({1, 4, 6, 6});
  for (std::int64_t i = 0; i < coarse.numel(); ++i) {
    coarse[i] = static_cast<float>(rng.uniform(0.08, 0.35));
  }
  Tensor<float> voxels = resize_trilinear(coarse, {D, H, W});

  Tensor<float> lesion({1, D, H, W});
  if (label == 1) {
    // Diffuse: one moderate blob per covered slice, centers anywhere in the
    // interior, coverage at least the configured fraction of depth.
    const std::int64_t want =
        std::min<std::int64_t>(D, static_cast<std::int64_t>(std::ceil(cfg.diffuse_coverage * D)));
    std::vector<std::int64_t> slices(static_cast<std::size_t>(D));
    for (std::int64_t i = 0; i < D; ++i) slices[static_cast<std::size_t>(i)] = i;
    for (std::size_t i = slices.size(); i > 1; --i) {
      std::swap(slices[i - 1], slices[rng.uniform_index(i)]);
    }
    slices.resize(static_cast<std::size_t>(want));
    std::vector<Blob> blobs;
    for (std::int64_t s : slices) {
      Blob b;
      b.d = static_cast<double>(s);
      b.sd = rng.uniform(0.5, 0.8);
      b.h = rng.uniform(0.25 * H, 0.75 * H);
      b.w = rng.uniform(0.25 * W, 0.75 * W);
      b.sh = rng.uniform(cfg.blob_sigma_min, cfg.blob_sigma_max);
      b.sw = rng.uniform(cfg.blob_sigma_min, cfg.blob_sigma_max);
      b.peak = rng.uniform(0.35, 0.5);
      blobs.push_back(b);
    }
    render_blobs(lesion, blobs, 0, D);
  } else if (label == 2) {
    // Depth-sparse: bright peripheral blobs, hard-confined to one contiguous
    // band of at most depth_band_fraction of the slices.
    const std::int64_t band =
        std::max<std::int64_t>(1, static_cast<std::int64_t>(cfg.depth_band_fraction * D));
    const std::int64_t start = static_cast<std::int64_t>(rng.uniform_index(
        static_cast<std::uint64_t>(D - band + 1)));
    const std::int64_t count =
        cfg.min_blobs + static_cast<std::int64_t>(rng.uniform_index(
                            static_cast<std::uint64_t>(cfg.max_blobs - cfg.min_blobs + 1)));
    std::vector<Blob> blobs;
    for (std::int64_t i = 0; i < count; ++i) {
      Blob b;
      b.d = rng.uniform(static_cast<double>(start), static_cast<double>(start + band) - 1.0);
      b.sd = rng.uniform(0.6, 1.2);
      const double angle = rng.uniform(0.0, 2.0 * M_PI);
      const double radius = rng.uniform(0.28, 0.42) * std::min(H, W);
      b.h = H / 2.0 + radius * std::sin(angle);
      b.w = W / 2.0 + radius * std::cos(angle);
      b.sh = rng.uniform(cfg.blob_sigma_min, cfg.blob_sigma_max);
      b.sw = rng.uniform(cfg.blob_sigma_min, cfg.blob_sigma_max);
      b.peak = rng.uniform(0.5, 0.65);
      blobs.push_back(b);
    }
    render_blobs(lesion, blobs, start, start + band);
  }

  VolumeSample sample;
  sample.label = label;
  if (label != 0) {
    Tensor<float> mask({1, D, H, W});
    for (std::int64_t i = 0; i < mask.numel(); ++i) {
      mask[i] = lesion[i] > kMaskThreshold ? 1.0f : 0.0f;
    }
    sample.lesion_mask = std::move(mask);
  }
  for (std::int64_t i = 0; i < voxels.numel(); ++i) {
    const double v = static_cast<double>(voxels[i]) + static_cast<double>(lesion[i]) +
                     rng.normal(0.0, cfg.noise_level);
    voxels[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  sample.voxels = std::move(voxels);
  return sample;
}

void validate_synth_config(const SynthConfig& cfg) {
  for (auto c : cfg.counts) {
    if (c < 1) throw ConfigError("synth: per-class counts must be >= 1");
  }
  if (cfg.depth_band_fraction <= 0.0 || cfg.depth_band_fraction > 1.0) {
    throw ConfigError("synth: depth_band_fraction must lie in (0,1]");
  }
  if (cfg.diffuse_coverage <= 0.0 || cfg.diffuse_coverage > 1.0) {
    throw ConfigError("synth: diffuse_coverage must lie in (0,1]");
  }
  if (cfg.blob_sigma_min <= 0.0 || cfg.blob_sigma_max < cfg.blob_sigma_min) {
    throw ConfigError("synth: blob sigma range is invalid");
  }
  if (cfg.min_blobs < 1 || cfg.max_blobs < cfg.min_blobs) {
    throw ConfigError("synth: blob count range is invalid");
  }
  if (cfg.noise_level < 0.0) throw ConfigError("synth: noise_level must be >= 0");
  if (cfg.depth < 4 || static_cast<double>(cfg.height) < 6.0 * cfg.blob_sigma_max ||
      static_cast<double>(cfg.width) < 6.0 * cfg.blob_sigma_max) {
    throw ConfigError("synth: geometry " + std::to_string(cfg.depth) + "x" +
                      std::to_string(cfg.height) + "x" + std::to_string(cfg.width) +
                      " is too small for the configured lesion sizes");
  }
}

}  // namespace

Manifest synth_generate(const SynthConfig& cfg, const std::string& out_dir,
                        const std::string& volume_subdir, const std::string& manifest_name) {
  validate_synth_config(cfg);
  const std::filesystem::path root(out_dir);
  std::error_code ec;
  std::filesystem::create_directories(root / volume_subdir, ec);
  if (ec) throw IoError("synth: cannot create '" + (root / volume_subdir).string() + "'");

  Manifest manifest;
  std::int64_t serial = 0;
  for (std::int64_t label = 0; label < 3; ++label) {
    for (std::int64_t i = 0; i < cfg.counts[static_cast<std::size_t>(label)]; ++i, ++serial) {
      Rng rng = Rng::derive(cfg.seed, static_cast<std::uint64_t>(label),
                            static_cast<std::uint64_t>(i));
      VolumeSample sample = make_sample(cfg, label, rng);
      char name[64];
      std::snprintf(name, sizeof(name), "%s%lld_%04lld.davl", cfg.prefix.c_str(),
                    static_cast<long long>(label), static_cast<long long>(i));
      const std::string rel = volume_subdir + "/" + name;
      sample.patient_id = cfg.prefix + "p" + std::to_string(serial);
      write_volume(sample, (root / rel).string());
      manifest.rows.push_back({rel, label, sample.patient_id, 0});
    }
  }
  manifest = split_folds(manifest, cfg.folds, cfg.seed);
  write_manifest(manifest, (root / manifest_name).string());
  return manifest;
}

Dataset load_dataset(const std::string& manifest_path, std::array<std::int64_t, 3> geometry) {
  const Manifest manifest = read_manifest(manifest_path);
  Dataset dataset;
  dataset.samples.reserve(manifest.rows.size());
  for (const auto& row : manifest.rows) {
    VolumeSample sample = read_volume(resolve_manifest_path(manifest_path, row.path));
    sample.label = row.label;
    sample.patient_id = row.patient_id;
    const auto& s = sample.voxels.shape();
    if (s[1] != geometry[0] || s[2] != geometry[1] || s[3] != geometry[2]) {
      sample = resize_volume(sample, {geometry[0], geometry[1], geometry[2]});
    }
    dataset.samples.push_back(std::move(sample));
    dataset.folds.push_back(row.fold);
  }
  return dataset;
}

}  // namespace voxattn
