#include "laug/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace laug {

namespace {

constexpr char kMagic[4] = {'L', 'A', 'U', 'G'};
constexpr char kRawMagic[4] = {'R', 'A', 'W', 'T'};

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot create file: " + path.string());
    path_ = path.string();
  }

  void bytes(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) throw IoError("write failed: " + path_);
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u16(std::uint16_t v) {
    std::uint8_t b[2] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8)};
    bytes(b, 2);
  }
  void u32(std::uint32_t v) {
    std::uint8_t b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
    bytes(b, 4);
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u32(static_cast<std::uint32_t>(bits));
    u32(static_cast<std::uint32_t>(bits >> 32));
  }
  void str16(const std::string& s) {
    if (s.size() > 0xffff) throw ValueError("string too long for checkpoint");
    u16(static_cast<std::uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void str32(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

 private:
  std::ofstream out_;
  std::string path_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path.string());
    buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    path_ = path.string();
  }

  void bytes(void* p, std::size_t n) {
    if (pos_ + n > buf_.size())
      throw CheckpointTruncatedError("truncated checkpoint payload in " + path_ + " (wanted " +
                                     std::to_string(n) + " bytes at offset " +
                                     std::to_string(pos_) + ")");
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint16_t u16() {
    std::uint8_t b[2];
    bytes(b, 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  std::uint32_t u32() {
    std::uint8_t b[4];
    bytes(b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    std::uint64_t lo = u32();
    std::uint64_t hi = u32();
    std::uint64_t bits = lo | (hi << 32);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str16() {
    const std::size_t n = u16();
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::string str32() {
    const std::size_t n = u32();
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  bool at_end() const { return pos_ == buf_.size(); }
  const std::string& path() const { return path_; }

 private:
  std::vector<char> buf_;
  std::size_t pos_ = 0;
  std::string path_;
};

void write_spec(Writer& w, const NetworkSpec& s) {
  w.i32(s.height);
  w.i32(s.width);
  w.i32(s.channels);
  w.i32(s.latent_dim);
  w.i32(s.coder_layers);
  w.i32(s.disc_layers);
  w.i32(s.base_width);
  w.i32(s.max_width);
  w.f64(s.leaky_alpha);
  w.u32(static_cast<std::uint32_t>(s.skip_layers.size()));
  for (int v : s.skip_layers) w.i32(v);
}

NetworkSpec read_spec(Reader& r) {
  NetworkSpec s;
  s.height = r.i32();
  s.width = r.i32();
  s.channels = r.i32();
  s.latent_dim = r.i32();
  s.coder_layers = r.i32();
  s.disc_layers = r.i32();
  s.base_width = r.i32();
  s.max_width = r.i32();
  s.leaky_alpha = r.f64();
  const std::uint32_t n = r.u32();
  s.skip_layers.clear();
  for (std::uint32_t i = 0; i < n; ++i) s.skip_layers.push_back(r.i32());
  return s;
}

}  // namespace

const char* model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::aae: return "aae";
    case ModelKind::dynamics: return "dynamics";
    case ModelKind::cgan: return "cgan";
    case ModelKind::unified: return "unified";
  }
  return "unknown";
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  Writer w(path);
  w.bytes(kMagic, 4);
  w.u16(data.version_major);
  w.u16(data.version_minor);
  w.u32(static_cast<std::uint32_t>(data.kind));
  write_spec(w, data.spec);
  w.u32(static_cast<std::uint32_t>(data.meta.size()));
  for (const auto& [k, v] : data.meta) {
    w.str16(k);
    w.str32(v);
  }
  w.u32(static_cast<std::uint32_t>(data.tensors.size()));
  for (const auto& [name, t] : data.tensors) {
    w.str16(name);
    w.u8(static_cast<std::uint8_t>(t.ndim()));
    for (int i = 0; i < t.ndim(); ++i) w.u32(static_cast<std::uint32_t>(t.dim(i)));
    for (std::int64_t i = 0; i < t.size(); ++i) w.f32(t.data()[i]);
  }
}

CheckpointData load_checkpoint(const std::filesystem::path& path, ModelKind expected_kind) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw CheckpointMagicError("bad magic in " + r.path() + ": not a checkpoint file");

  CheckpointData data;
  data.version_major = r.u16();
  data.version_minor = r.u16();
  if (data.version_major != kCheckpointVersionMajor ||
      data.version_minor > kCheckpointVersionMinor)
    throw CheckpointVersionError("unsupported checkpoint version " +
                                 std::to_string(data.version_major) + "." +
                                 std::to_string(data.version_minor) + " in " + r.path() +
                                 " (reader supports up to " +
                                 std::to_string(kCheckpointVersionMajor) + "." +
                                 std::to_string(kCheckpointVersionMinor) + ")");

  data.kind = static_cast<ModelKind>(r.u32());
  if (data.kind != expected_kind)
    throw CheckpointKindError(std::string("checkpoint kind mismatch in ") + r.path() +
                              ": found '" + model_kind_name(data.kind) + "', expected '" +
                              model_kind_name(expected_kind) + "'");

  data.spec = read_spec(r);
  const std::uint32_t meta_n = r.u32();
  for (std::uint32_t i = 0; i < meta_n; ++i) {
    std::string k = r.str16();
    std::string v = r.str32();
    data.meta.emplace_back(std::move(k), std::move(v));
  }
  const std::uint32_t tensor_n = r.u32();
  for (std::uint32_t i = 0; i < tensor_n; ++i) {
    std::string name = r.str16();
    const int ndim = r.u8();
    Shape shape;
    for (int d = 0; d < ndim; ++d) shape.push_back(r.u32());
    std::vector<float> values(static_cast<std::size_t>(numel(shape)));
    for (auto& v : values) v = r.f32();
    data.tensors.emplace_back(std::move(name), Tensor<float>(std::move(shape), std::move(values)));
  }
  return data;
}

void save_raw_tensor(const std::filesystem::path& path, const Tensor<float>& t) {
  Writer w(path);
  w.bytes(kRawMagic, 4);
  w.u8(static_cast<std::uint8_t>(t.ndim()));
  for (int i = 0; i < t.ndim(); ++i) w.u32(static_cast<std::uint32_t>(t.dim(i)));
  for (std::int64_t i = 0; i < t.size(); ++i) w.f32(t.data()[i]);
}

Tensor<float> load_raw_tensor(const std::filesystem::path& path) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kRawMagic, 4) != 0)
    throw FormatError("bad magic in raw tensor file " + r.path());
  const int ndim = r.u8();
  Shape shape;
  for (int d = 0; d < ndim; ++d) shape.push_back(r.u32());
  std::vector<float> values(static_cast<std::size_t>(numel(shape)));
  for (auto& v : values) v = r.f32();
  return Tensor<float>(std::move(shape), std::move(values));
}

}  // namespace laug
