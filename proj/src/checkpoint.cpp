#include "edcnn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace edcnn {

const char* to_string(CheckpointErrorKind kind) {
  switch (kind) {
    case CheckpointErrorKind::io: return "i/o error";
    case CheckpointErrorKind::bad_magic: return "bad magic";
    case CheckpointErrorKind::version_mismatch: return "version mismatch";
    case CheckpointErrorKind::shape_mismatch: return "shape mismatch";
    case CheckpointErrorKind::truncated: return "truncated file";
    case CheckpointErrorKind::malformed: return "malformed file";
  }
  return "unknown";
}

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const char* p, std::size_t n) { out_.insert(out_.end(), p, p + n); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& data) : data_(data) {}

  void need(std::size_t n, const char* what) const {
    if (data_.size() - pos_ < n) {
      throw CheckpointError(CheckpointErrorKind::truncated,
                            std::string("ran out of bytes reading ") + what + " at offset " + std::to_string(pos_));
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return data_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& data_;
  std::size_t pos_ = 0;
};

std::string magic_string(const std::array<char, 4>& m) { return std::string(m.begin(), m.end()); }

}  // namespace

std::vector<std::uint8_t> encode_container(const Container& c) {
  Writer w;
  w.bytes(c.magic.data(), c.magic.size());
  w.u32(c.version);
  for (std::uint32_t f : c.header.fields) w.u32(f);
  w.u8(c.header.flags);
  w.u32(static_cast<std::uint32_t>(c.arrays.size()));
  for (const NamedArray& a : c.arrays) {
    if (a.name.size() > 0xffff) throw CheckpointError(CheckpointErrorKind::malformed, "parameter name too long: " + a.name);
    if (a.dims.size() > 0xff) throw CheckpointError(CheckpointErrorKind::malformed, "rank too large for " + a.name);
    std::size_t count = 1;
    for (std::uint32_t d : a.dims) count *= d;
    if (count != a.values.size()) {
      throw CheckpointError(CheckpointErrorKind::shape_mismatch, a.name + ": dims do not match value count");
    }
    w.u16(static_cast<std::uint16_t>(a.name.size()));
    w.bytes(a.name.data(), a.name.size());
    w.u8(static_cast<std::uint8_t>(a.dims.size()));
    for (std::uint32_t d : a.dims) w.u32(d);
    for (float v : a.values) w.f32(v);
  }
  return w.take();
}

Container decode_container(const std::vector<std::uint8_t>& bytes, const std::array<char, 4>& expected_magic) {
  Reader r(bytes);
  Container c;
  if (bytes.size() < 4) {
    throw CheckpointError(CheckpointErrorKind::bad_magic, "file shorter than the magic number");
  }
  const std::string magic = r.str(4, "magic");
  std::copy(magic.begin(), magic.end(), c.magic.begin());
  if (c.magic != expected_magic) {
    throw CheckpointError(CheckpointErrorKind::bad_magic,
                          "expected \"" + magic_string(expected_magic) + "\", found \"" + magic_string(c.magic) + "\"");
  }
  c.version = r.u32("version");
  if (c.version != kContainerVersion) {
    throw CheckpointError(CheckpointErrorKind::version_mismatch,
                          "file version " + std::to_string(c.version) + ", supported " + std::to_string(kContainerVersion));
  }
  for (std::uint32_t& f : c.header.fields) f = r.u32("header");
  c.header.flags = r.u8("header flags");
  const std::uint32_t count = r.u32("record count");
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    const std::uint16_t len = r.u16("name length");
    a.name = r.str(len, "name");
    const std::uint8_t rank = r.u8("rank");
    std::size_t total = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      a.dims.push_back(r.u32("dims"));
      total *= a.dims.back();
    }
    if (total > r.remaining() / 4) {
      throw CheckpointError(CheckpointErrorKind::truncated, a.name + ": declares " + std::to_string(total) +
                                                                " values but only " + std::to_string(r.remaining()) + " bytes remain");
    }
    a.values.resize(total);
    for (float& v : a.values) v = r.f32("values");
    c.arrays.push_back(std::move(a));
  }
  if (!r.at_end()) {
    throw CheckpointError(CheckpointErrorKind::malformed, std::to_string(r.remaining()) + " trailing bytes after last record");
  }
  return c;
}

void write_container(const std::filesystem::path& path, const Container& c) {
  const std::vector<std::uint8_t> bytes = encode_container(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointErrorKind::io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointErrorKind::io, "write failed for " + path.string());
}

Container read_container(const std::filesystem::path& path, const std::array<char, 4>& expected_magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrorKind::io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_container(bytes, expected_magic);
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  Container c;
  c.magic = kModelMagic;
  const ModelConfig& cfg = model.config;
  c.header.fields = {static_cast<std::uint32_t>(cfg.n_blocks), static_cast<std::uint32_t>(cfg.block_filters),
                     static_cast<std::uint32_t>(cfg.sobel_filters)};
  c.header.flags = static_cast<std::uint8_t>((cfg.use_edge_module ? 1u : 0u) | (cfg.use_dense_connections ? 2u : 0u));
  for (const ParamView<const float>& p : model.parameters()) {
    NamedArray a{p.name, {}, std::vector<float>(p.values.begin(), p.values.end())};
    for (int d : p.dims) a.dims.push_back(static_cast<std::uint32_t>(d));
    c.arrays.push_back(std::move(a));
  }
  write_container(path, c);
}

Model load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
  const Container c = read_container(path, kModelMagic);
  if (c.header.flags & ~0x3u) {
    throw CheckpointError(CheckpointErrorKind::malformed, "unknown config flags " + std::to_string(c.header.flags));
  }
  ModelConfig cfg;
  cfg.n_blocks = static_cast<int>(c.header.fields[0]);
  cfg.block_filters = static_cast<int>(c.header.fields[1]);
  cfg.sobel_filters = static_cast<int>(c.header.fields[2]);
  cfg.use_edge_module = (c.header.flags & 1u) != 0;
  cfg.use_dense_connections = (c.header.flags & 2u) != 0;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(CheckpointErrorKind::malformed, e.what());
  }
  if (expected) {
    cfg.seed = expected->seed;
    if (!cfg.same_topology(*expected)) {
      throw CheckpointError(CheckpointErrorKind::shape_mismatch, "checkpoint holds a " + cfg.variant_name() + " (" +
                                                                     std::to_string(cfg.n_blocks) + " blocks, " +
                                                                     std::to_string(cfg.block_filters) + " filters) but " +
                                                                     expected->variant_name() + " was requested");
    }
  }

  Model m = Model::zeros(cfg);
  std::vector<ParamView<float>> params = m.parameters();
  if (params.size() != c.arrays.size()) {
    throw CheckpointError(CheckpointErrorKind::shape_mismatch, "config implies " + std::to_string(params.size()) +
                                                                   " parameters, file holds " + std::to_string(c.arrays.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const NamedArray& a = c.arrays[i];
    ParamView<float>& p = params[i];
    bool same = a.name == p.name && a.dims.size() == p.dims.size();
    for (std::size_t d = 0; same && d < a.dims.size(); ++d) same = a.dims[d] == static_cast<std::uint32_t>(p.dims[d]);
    if (!same) {
      throw CheckpointError(CheckpointErrorKind::shape_mismatch,
                            "record " + std::to_string(i) + " is \"" + a.name + "\", expected \"" + p.name + "\" with the config's shape");
    }
    std::copy(a.values.begin(), a.values.end(), p.values.begin());
  }
  return m;
}

}  // namespace edcnn
