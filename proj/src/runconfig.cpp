#include "voxattn/runconfig.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <utility>

#include "voxattn/errors.hpp"

namespace voxattn {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ConfigError("config: " + path + " " + what);
}

// One JSON object section. Getters mark keys as consumed; finish() rejects
// whatever is left over, so typos surface by name instead of being ignored.
class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) fail(path_, "must be a JSON object");
  }

  std::string key_path(const std::string& key) const { return path_ + "." + key; }

  const json* find(const std::string& key) {
    auto it = node_.find(key);
    if (it == node_.end()) return nullptr;
    seen_.insert(key);
    return &*it;
  }

  void get(const std::string& key, bool& field) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) fail(key_path(key), "must be a boolean");
      field = v->get<bool>();
    }
  }

  void get(const std::string& key, std::int64_t& field, std::int64_t lo,
           std::int64_t hi = std::numeric_limits<std::int64_t>::max()) {
    if (const json* v = find(key)) field = as_i64(*v, key_path(key), lo, hi);
  }

  void get(const std::string& key, std::uint64_t& field) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer() && !v->is_number_unsigned()) {
        fail(key_path(key), "must be a non-negative integer");
      }
      if (v->is_number_integer() && v->get<std::int64_t>() < 0) {
        fail(key_path(key), "must be a non-negative integer");
      }
      field = v->get<std::uint64_t>();
    }
  }

  void get(const std::string& key, double& field, double lo, double hi) {
    if (const json* v = find(key)) {
      if (!v->is_number()) fail(key_path(key), "must be a number");
      const double d = v->get<double>();
      if (!(d >= lo && d <= hi)) {
        fail(key_path(key), "must be in [" + number_str(lo) + ", " + number_str(hi) + "]");
      }
      field = d;
    }
  }

  void get(const std::string& key, std::string& field) {
    if (const json* v = find(key)) {
      if (!v->is_string()) fail(key_path(key), "must be a string");
      field = v->get<std::string>();
    }
  }

  void get(const std::string& key, Triple& field, std::int64_t lo) {
    if (const json* v = find(key)) field = as_triple(*v, key_path(key), lo);
  }

  void get(const std::string& key, std::vector<std::int64_t>& field, std::int64_t lo) {
    if (const json* v = find(key)) {
      if (!v->is_array() || v->empty()) fail(key_path(key), "must be a non-empty array");
      std::vector<std::int64_t> out;
      for (std::size_t i = 0; i < v->size(); ++i) {
        out.push_back(as_i64((*v)[i], key_path(key) + "[" + std::to_string(i) + "]", lo));
      }
      field = std::move(out);
    }
  }

  void get(const std::string& key, std::vector<Triple>& field, std::int64_t lo) {
    if (const json* v = find(key)) {
      if (!v->is_array() || v->empty()) fail(key_path(key), "must be a non-empty array");
      std::vector<Triple> out;
      for (std::size_t i = 0; i < v->size(); ++i) {
        out.push_back(as_triple((*v)[i], key_path(key) + "[" + std::to_string(i) + "]", lo));
      }
      field = std::move(out);
    }
  }

  void finish() {
    for (auto it = node_.begin(); it != node_.end(); ++it) {
      if (!seen_.count(it.key())) {
        fail(key_path(it.key()), "is not a recognized key");
      }
    }
  }

 private:
  static std::string number_str(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
  }

  static std::int64_t as_i64(const json& v, const std::string& path, std::int64_t lo,
                             std::int64_t hi = std::numeric_limits<std::int64_t>::max()) {
    if (!v.is_number_integer() && !v.is_number_unsigned()) fail(path, "must be an integer");
    const std::int64_t d = v.get<std::int64_t>();
    if (d < lo || d > hi) {
      std::string msg = "must be at least " + std::to_string(lo);
      if (hi != std::numeric_limits<std::int64_t>::max()) {
        msg = "must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]";
      }
      fail(path, msg);
    }
    return d;
  }

  static Triple as_triple(const json& v, const std::string& path, std::int64_t lo) {
    if (!v.is_array() || v.size() != 3) fail(path, "must be an array of 3 integers");
    Triple t;
    for (std::size_t i = 0; i < 3; ++i) {
      t[i] = as_i64(v[i], path + "[" + std::to_string(i) + "]", lo);
    }
    return t;
  }

  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

void parse_network(const json& node, NetworkConfig& cfg) {
  Section s(node, "network");
  s.get("input_channels", cfg.input_channels, 1);
  s.get("input_depth", cfg.input_depth, 1);
  s.get("input_height", cfg.input_height, 1);
  s.get("input_width", cfg.input_width, 1);
  s.get("stem_kernel", cfg.stem_kernel, 1);
  s.get("stem_stride", cfg.stem_stride, 1);
  s.get("stem_width", cfg.stem_width, 1);
  s.get("pool_kernel", cfg.pool_kernel, 1);
  s.get("pool_stride", cfg.pool_stride, 1);
  s.get("pool_padding", cfg.pool_padding, 0);
  s.get("stage_widths", cfg.stage_widths, 1);
  s.get("blocks_per_stage", cfg.blocks_per_stage, 1);
  s.get("stage_strides", cfg.stage_strides, 1);
  s.get("num_classes", cfg.num_classes, 2);
  s.get("use_ca", cfg.use_ca);
  s.get("use_da", cfg.use_da);
  s.get("r_ca", cfg.r_ca, 1);
  s.get("r_da", cfg.r_da, 1);
  if (const json* v = s.find("attention_order")) {
    if (!v->is_string()) fail(s.key_path("attention_order"), "must be a string");
    const std::string order = v->get<std::string>();
    if (order == "ca_then_da") {
      cfg.attention_order = AttentionOrder::kCaThenDa;
    } else if (order == "da_then_ca") {
      cfg.attention_order = AttentionOrder::kDaThenCa;
    } else {
      fail(s.key_path("attention_order"), "must be \"ca_then_da\" or \"da_then_ca\"");
    }
  }
  if (const json* v = s.find("width_multiplier")) {
    if (!v->is_number()) fail(s.key_path("width_multiplier"), "must be a number");
    const double d = v->get<double>();
    if (!(d > 0.0)) fail(s.key_path("width_multiplier"), "must be positive");
    cfg.width_multiplier = d;
  }
  s.finish();
  if (cfg.stage_widths.size() != cfg.blocks_per_stage.size() ||
      cfg.stage_widths.size() != cfg.stage_strides.size()) {
    fail("network.stage_widths",
         "must match blocks_per_stage and stage_strides in length");
  }
}

void parse_train(const json& node, TrainConfig& cfg) {
  Section s(node, "train");
  s.get("epochs", cfg.epochs, 1);
  s.get("batch_size", cfg.batch_size, 1);
  s.get("lr_max", cfg.lr_max, 0.0, 1.0);
  s.get("lr_min", cfg.lr_min, 0.0, 1.0);
  s.get("seed", cfg.seed);
  s.get("augment", cfg.augment);
  s.get("checkpoint_every", cfg.checkpoint_every, 0);
  s.get("flip", cfg.augment_cfg.flip);
  s.get("rotate", cfg.augment_cfg.rotate);
  s.get("translate", cfg.augment_cfg.translate);
  s.get("scale", cfg.augment_cfg.scale);
  s.get("max_rotate_degrees", cfg.augment_cfg.max_rotate_degrees, 0.0, 180.0);
  s.get("max_translate_fraction", cfg.augment_cfg.max_translate_fraction, 0.0, 0.9);
  s.get("scale_min", cfg.augment_cfg.scale_min, 0.1, 10.0);
  s.get("scale_max", cfg.augment_cfg.scale_max, 0.1, 10.0);
  s.get("adam_beta1", cfg.adam.beta1, 0.0, 0.9999);
  s.get("adam_beta2", cfg.adam.beta2, 0.0, 0.9999999);
  s.get("adam_epsilon", cfg.adam.epsilon, 1e-16, 1.0);
  s.finish();
  if (cfg.lr_min > cfg.lr_max) fail("train.lr_min", "must not exceed lr_max");
  if (cfg.augment_cfg.scale_min > cfg.augment_cfg.scale_max) {
    fail("train.scale_min", "must not exceed scale_max");
  }
}

void parse_data(const json& node, DataSection& cfg) {
  Section s(node, "data");
  s.get("train_manifest", cfg.train_manifest);
  s.get("test_manifest", cfg.test_manifest);
  s.finish();
}

void parse_synth(const json& node, SynthSection& sec) {
  Section s(node, "synth");
  s.get("counts", sec.cfg.counts, 1);
  s.get("test_counts", sec.test_counts, 1);
  s.get("depth", sec.cfg.depth, 1);
  s.get("height", sec.cfg.height, 1);
  s.get("width", sec.cfg.width, 1);
  s.get("noise_level", sec.cfg.noise_level, 0.0, 0.5);
  s.get("depth_band_fraction", sec.cfg.depth_band_fraction, 1e-9, 1.0);
  s.get("diffuse_coverage", sec.cfg.diffuse_coverage, 1e-9, 1.0);
  s.get("blob_sigma_min", sec.cfg.blob_sigma_min, 0.5, 64.0);
  s.get("blob_sigma_max", sec.cfg.blob_sigma_max, 0.5, 64.0);
  s.get("min_blobs", sec.cfg.min_blobs, 1);
  s.get("max_blobs", sec.cfg.max_blobs, 1);
  s.get("folds", sec.cfg.folds, 1, kMaxFolds);
  s.get("seed", sec.cfg.seed);
  s.get("prefix", sec.cfg.prefix);
  s.finish();
  if (sec.cfg.blob_sigma_min > sec.cfg.blob_sigma_max) {
    fail("synth.blob_sigma_min", "must not exceed blob_sigma_max");
  }
  if (sec.cfg.min_blobs > sec.cfg.max_blobs) {
    fail("synth.min_blobs", "must not exceed max_blobs");
  }
}

void parse_eval(const json& node, EvalSection& cfg) {
  Section s(node, "eval");
  s.get("checkpoint", cfg.checkpoint);
  s.get("batch_size", cfg.batch_size, 1);
  s.get("cam_limit", cfg.cam_limit, 0);
  s.finish();
}

json triple_json(const Triple& t) { return json::array({t[0], t[1], t[2]}); }

}  // namespace

RunConfig parse_run_config_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config: malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config: top level must be a JSON object");

  RunConfig cfg;
  static const std::set<std::string> sections = {"network", "train", "data", "synth", "eval"};
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (!sections.count(it.key())) {
      throw ConfigError("config: " + it.key() + " is not a recognized section");
    }
  }
  if (doc.contains("network")) parse_network(doc["network"], cfg.network);
  if (doc.contains("train")) parse_train(doc["train"], cfg.train);
  if (doc.contains("data")) parse_data(doc["data"], cfg.data);
  if (doc.contains("synth")) parse_synth(doc["synth"], cfg.synth);
  if (doc.contains("eval")) parse_eval(doc["eval"], cfg.eval);
  return cfg;
}

RunConfig parse_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("config: cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config_text(buf.str());
}

std::string canonical_run_config(const RunConfig& cfg) {
  json network{
      {"input_channels", cfg.network.input_channels},
      {"input_depth", cfg.network.input_depth},
      {"input_height", cfg.network.input_height},
      {"input_width", cfg.network.input_width},
      {"stem_kernel", triple_json(cfg.network.stem_kernel)},
      {"stem_stride", triple_json(cfg.network.stem_stride)},
      {"stem_width", cfg.network.stem_width},
      {"pool_kernel", triple_json(cfg.network.pool_kernel)},
      {"pool_stride", triple_json(cfg.network.pool_stride)},
      {"pool_padding", triple_json(cfg.network.pool_padding)},
      {"stage_widths", cfg.network.stage_widths},
      {"blocks_per_stage", cfg.network.blocks_per_stage},
      {"num_classes", cfg.network.num_classes},
      {"use_ca", cfg.network.use_ca},
      {"use_da", cfg.network.use_da},
      {"r_ca", cfg.network.r_ca},
      {"r_da", cfg.network.r_da},
      {"attention_order", cfg.network.attention_order == AttentionOrder::kCaThenDa
                              ? "ca_then_da"
                              : "da_then_ca"},
      {"width_multiplier", cfg.network.width_multiplier},
  };
  json strides = json::array();
  for (const auto& t : cfg.network.stage_strides) strides.push_back(triple_json(t));
  network["stage_strides"] = strides;

  json train{
      {"epochs", cfg.train.epochs},
      {"batch_size", cfg.train.batch_size},
      {"lr_max", cfg.train.lr_max},
      {"lr_min", cfg.train.lr_min},
      {"seed", cfg.train.seed},
      {"augment", cfg.train.augment},
      {"checkpoint_every", cfg.train.checkpoint_every},
      {"flip", cfg.train.augment_cfg.flip},
      {"rotate", cfg.train.augment_cfg.rotate},
      {"translate", cfg.train.augment_cfg.translate},
      {"scale", cfg.train.augment_cfg.scale},
      {"max_rotate_degrees", cfg.train.augment_cfg.max_rotate_degrees},
      {"max_translate_fraction", cfg.train.augment_cfg.max_translate_fraction},
      {"scale_min", cfg.train.augment_cfg.scale_min},
      {"scale_max", cfg.train.augment_cfg.scale_max},
      {"adam_beta1", cfg.train.adam.beta1},
      {"adam_beta2", cfg.train.adam.beta2},
      {"adam_epsilon", cfg.train.adam.epsilon},
  };

  json data{
      {"train_manifest", cfg.data.train_manifest},
      {"test_manifest", cfg.data.test_manifest},
  };

  json synth{
      {"counts", json::array({cfg.synth.cfg.counts[0], cfg.synth.cfg.counts[1],
                              cfg.synth.cfg.counts[2]})},
      {"test_counts", json::array({cfg.synth.test_counts[0], cfg.synth.test_counts[1],
                                   cfg.synth.test_counts[2]})},
      {"depth", cfg.synth.cfg.depth},
      {"height", cfg.synth.cfg.height},
      {"width", cfg.synth.cfg.width},
      {"noise_level", cfg.synth.cfg.noise_level},
      {"depth_band_fraction", cfg.synth.cfg.depth_band_fraction},
      {"diffuse_coverage", cfg.synth.cfg.diffuse_coverage},
      {"blob_sigma_min", cfg.synth.cfg.blob_sigma_min},
      {"blob_sigma_max", cfg.synth.cfg.blob_sigma_max},
      {"min_blobs", cfg.synth.cfg.min_blobs},
      {"max_blobs", cfg.synth.cfg.max_blobs},
      {"folds", cfg.synth.cfg.folds},
      {"seed", cfg.synth.cfg.seed},
      {"prefix", cfg.synth.cfg.prefix},
  };

  json eval{
      {"checkpoint", cfg.eval.checkpoint},
      {"batch_size", cfg.eval.batch_size},
      {"cam_limit", cfg.eval.cam_limit},
  };

  json doc{{"network", network}, {"train", train}, {"data", data}, {"synth", synth},
           {"eval", eval}};
  return doc.dump();  // object keys iterate sorted, so the form is canonical
}

std::uint64_t run_config_hash(const RunConfig& cfg) {
  const std::string text = canonical_run_config(cfg);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace voxattn
