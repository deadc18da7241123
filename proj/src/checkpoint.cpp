#include "voxattn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include "voxattn/errors.hpp"

namespace voxattn {

namespace {

constexpr char kMagic[4] = {'V', 'X', 'C', 'K'};

class Writer {
public:
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void i64(std::int64_t v) {
    const auto u = static_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
  }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    i64(static_cast<std::int64_t>(bits));
  }
  void str(const std::string& s) {
    u16(static_cast<std::uint16_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void triple(const Triple& t) {
    for (auto v : t) i64(v);
  }
  const std::string& bytes() const { return bytes_; }

private:
  std::string bytes_;
};

class Reader {
public:
  Reader(std::vector<unsigned char> bytes, std::string path)
      : bytes_(std::move(bytes)), path_(std::move(path)) {}

  void need(std::size_t n, const char* what) {
    if (pos_ + n > bytes_.size()) {
      throw ParseError("checkpoint '" + path_ + "' truncated while reading " + std::string(what));
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::int64_t i64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return static_cast<std::int64_t>(v);
  }
  float f32(const char* what) {
    const std::uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64(const char* what) {
    const std::uint64_t bits = static_cast<std::uint64_t>(i64(what));
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str(const char* what) {
    const std::uint16_t n = u16(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  Triple triple(const char* what) {
    Triple t;
    for (auto& v : t) v = i64(what);
    return t;
  }
  const unsigned char* head() const { return bytes_.data() + pos_; }
  void skip(std::size_t n) { pos_ += n; }
  bool exhausted() const { return pos_ == bytes_.size(); }
  const std::string& path() const { return path_; }

private:
  std::vector<unsigned char> bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

void write_config(Writer& w, const NetworkConfig& cfg) {
  w.i64(cfg.input_channels);
  w.i64(cfg.input_depth);
  w.i64(cfg.input_height);
  w.i64(cfg.input_width);
  w.triple(cfg.stem_kernel);
  w.triple(cfg.stem_stride);
  w.i64(cfg.stem_width);
  w.triple(cfg.pool_kernel);
  w.triple(cfg.pool_stride);
  w.triple(cfg.pool_padding);
  w.u32(static_cast<std::uint32_t>(cfg.stage_widths.size()));
  for (std::size_t i = 0; i < cfg.stage_widths.size(); ++i) {
    w.i64(cfg.stage_widths[i]);
    w.i64(cfg.blocks_per_stage[i]);
    w.triple(cfg.stage_strides[i]);
  }
  w.i64(cfg.num_classes);
  w.u8(cfg.use_ca ? 1 : 0);
  w.u8(cfg.use_da ? 1 : 0);
  w.i64(cfg.r_ca);
  w.i64(cfg.r_da);
  w.u8(cfg.attention_order == AttentionOrder::kCaThenDa ? 0 : 1);
  w.f64(cfg.width_multiplier);
}

NetworkConfig read_config(Reader& r) {
  NetworkConfig cfg;
  cfg.input_channels = r.i64("config");
  cfg.input_depth = r.i64("config");
  cfg.input_height = r.i64("config");
  cfg.input_width = r.i64("config");
  cfg.stem_kernel = r.triple("config");
  cfg.stem_stride = r.triple("config");
  cfg.stem_width = r.i64("config");
  cfg.pool_kernel = r.triple("config");
  cfg.pool_stride = r.triple("config");
  cfg.pool_padding = r.triple("config");
  const std::uint32_t stages = r.u32("config");
  cfg.stage_widths.clear();
  cfg.blocks_per_stage.clear();
  cfg.stage_strides.clear();
  for (std::uint32_t i = 0; i < stages; ++i) {
    cfg.stage_widths.push_back(r.i64("config"));
    cfg.blocks_per_stage.push_back(r.i64("config"));
    cfg.stage_strides.push_back(r.triple("config"));
  }
  cfg.num_classes = r.i64("config");
  cfg.use_ca = r.u8("config") != 0;
  cfg.use_da = r.u8("config") != 0;
  cfg.r_ca = r.i64("config");
  cfg.r_da = r.i64("config");
  cfg.attention_order = r.u8("config") == 0 ? AttentionOrder::kCaThenDa : AttentionOrder::kDaThenCa;
  cfg.width_multiplier = r.f64("config");
  return cfg;
}

}  // namespace

void save_checkpoint(const ModelParams<float>& params, const std::string& path) {
  Writer out;
  out.u8(kMagic[0]);
  out.u8(kMagic[1]);
  out.u8(kMagic[2]);
  out.u8(kMagic[3]);
  out.u16(kCheckpointFormatVersion);
  write_config(out, params.config);

  out.u32(static_cast<std::uint32_t>(params.infos.size()));
  for (const auto& info : params.infos) {
    const Tensor<float>& tensor = params.at(info.name);
    out.str(info.name);
    out.u8(static_cast<std::uint8_t>(tensor.rank()));
    for (auto e : tensor.shape()) out.u32(static_cast<std::uint32_t>(e));
    for (std::int64_t i = 0; i < tensor.numel(); ++i) out.f32(tensor[i]);
  }

  out.u32(static_cast<std::uint32_t>(params.bn_names.size()));
  for (const auto& name : params.bn_names) {
    const auto it = params.bn.find(name);
    if (it == params.bn.end()) throw StateError("checkpoint: missing BN state for '" + name + "'");
    const BnState<float>& bn = it->second;
    out.str(name);
    out.u8(bn.initialized ? 1 : 0);
    out.f64(bn.momentum);
    out.f64(bn.epsilon);
    const std::uint32_t c = bn.initialized ? static_cast<std::uint32_t>(bn.running_mean.numel()) : 0;
    out.u32(c);
    for (std::uint32_t i = 0; i < c; ++i) out.f32(bn.running_mean[i]);
    for (std::uint32_t i = 0; i < c; ++i) out.f32(bn.running_var[i]);
  }

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("save_checkpoint: cannot open '" + path + "'");
  file.write(out.bytes().data(), static_cast<std::streamsize>(out.bytes().size()));
  if (!file) throw IoError("save_checkpoint: short write to '" + path + "'");
}

ModelParams<float> load_checkpoint(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("load_checkpoint: cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(file)),
                                   std::istreambuf_iterator<char>());
  Reader r(std::move(bytes), path);
  r.need(4, "magic");
  if (std::memcmp(r.head(), kMagic, 4) != 0) {
    throw ParseError("checkpoint '" + path + "' has bad magic bytes");
  }
  r.skip(4);
  const std::uint16_t version = r.u16("version");
  if (version != kCheckpointFormatVersion) {
    throw ParseError("checkpoint '" + path + "' has unsupported format version " +
                     std::to_string(version));
  }

  ModelParams<float> params;
  params.config = read_config(r);
  params.infos = enumerate_parameters(params.config);

  const std::uint32_t count = r.u32("parameter count");
  if (count != params.infos.size()) {
    throw ParseError("checkpoint '" + path + "' stores " + std::to_string(count) +
                     " tensors but the configuration implies " +
                     std::to_string(params.infos.size()));
  }
  for (const auto& info : params.infos) {
    const std::string name = r.str("tensor name");
    if (name != info.name) {
      throw ParseError("checkpoint '" + path + "' tensor '" + name + "' out of order, expected '" +
                       info.name + "'");
    }
    const std::uint8_t rank = r.u8("tensor rank");
    std::vector<std::int64_t> shape(rank);
    for (auto& e : shape) e = r.u32("tensor extent");
    if (shape != info.shape) {
      throw ParseError("checkpoint '" + path + "' tensor '" + name + "' has unexpected shape");
    }
    Tensor<float> tensor(shape);
    for (std::int64_t i = 0; i < tensor.numel(); ++i) tensor[i] = r.f32("tensor data");
    tensor.set_requires_grad(true);
    params.tensors.emplace(name, std::move(tensor));
  }

  const std::uint32_t bn_count = r.u32("bn count");
  const auto bn_layers = enumerate_bn_layers(params.config);
  if (bn_count != bn_layers.size()) {
    throw ParseError("checkpoint '" + path + "' stores " + std::to_string(bn_count) +
                     " normalization states but the configuration implies " +
                     std::to_string(bn_layers.size()));
  }
  for (const auto& [expected_name, channels] : bn_layers) {
    const std::string name = r.str("bn name");
    if (name != expected_name) {
      throw ParseError("checkpoint '" + path + "' BN state '" + name +
                       "' out of order, expected '" + expected_name + "'");
    }
    BnState<float> bn;
    bn.initialized = r.u8("bn flag") != 0;
    bn.momentum = r.f64("bn momentum");
    bn.epsilon = r.f64("bn epsilon");
    const std::uint32_t c = r.u32("bn channels");
    if (bn.initialized && c != static_cast<std::uint32_t>(channels)) {
      throw ParseError("checkpoint '" + path + "' BN state '" + name +
                       "' has unexpected channel count");
    }
    if (bn.initialized) {
      Tensor<float> mean({channels}), var({channels});
      for (std::int64_t i = 0; i < channels; ++i) mean[i] = r.f32("bn mean");
      for (std::int64_t i = 0; i < channels; ++i) var[i] = r.f32("bn var");
      bn.running_mean = std::move(mean);
      bn.running_var = std::move(var);
    }
    params.bn_names.push_back(name);
    params.bn.emplace(name, std::move(bn));
  }
  if (!r.exhausted()) throw ParseError("checkpoint '" + path + "' has trailing bytes");
  return params;
}

}  // namespace voxattn
