// SPDX-License-Identifier: Apache-2.0
#include "raterbayes/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "raterbayes/error.hpp"
#include "raterbayes/io.hpp"

namespace raterbayes {

namespace {

constexpr char kMagic[4] = {'R', 'B', 'A', 'Y'};

class Writer {
public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::string take() { return std::move(out_); }

private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class Reader {
public:
  explicit Reader(const std::string& in) : in_(in) {}
  void bytes(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(le(8)); }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw DataError("checkpoint: truncated file");
  }
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  const std::string& in_;
  std::size_t pos_ = 0;
};

} // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t.value;
  }
  return nullptr;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  const auto& c = ckpt.config;
  w.u64(c.depth);
  w.u64(c.base_channels);
  w.u64(c.head_features);
  w.u64(c.num_classes);
  w.u64(c.input_channels);
  w.f64(c.dropout_rate);
  const auto sites = c.resolved_dropout_sites();
  w.u32(static_cast<std::uint32_t>(sites.size()));
  for (const auto& s : sites) w.str(s);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    w.str(t.name);
    const auto& shape = t.value.shape();
    w.u32(static_cast<std::uint32_t>(shape.size()));
    for (auto e : shape) w.u64(e);
    for (double v : t.value.data()) w.f64(v);
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw DataError("checkpoint: bad magic");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint: unsupported format version " + std::to_string(version));
  }
  Checkpoint ckpt;
  auto& c = ckpt.config;
  c.depth = r.u64();
  c.base_channels = r.u64();
  c.head_features = r.u64();
  c.num_classes = r.u64();
  c.input_channels = r.u64();
  c.dropout_rate = r.f64();
  std::set<std::string> sites;
  const auto nsites = r.u32();
  for (std::uint32_t i = 0; i < nsites; ++i) sites.insert(r.str());
  c.dropout_sites = std::move(sites);
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint: invalid config: ") + e.what());
  }
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor nt;
    nt.name = r.str();
    Shape shape(r.u32());
    for (auto& e : shape) e = r.u64();
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = r.f64();
    nt.value = Tensor(std::move(shape), std::move(data));
    ckpt.tensors.push_back(std::move(nt));
  }
  if (!r.done()) throw DataError("checkpoint: trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

} // namespace raterbayes
