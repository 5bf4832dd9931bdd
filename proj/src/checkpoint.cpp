#include "pcdepth/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace pcdepth::checkpoint {

namespace {

constexpr char kMagic[8] = {'P', 'C', 'D', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint8_t kFloat64Tag = 8;

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), c, c + n);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void expect(const char* magic, std::size_t n) {
    need(n);
    if (std::memcmp(in_.data() + pos_, magic, n) != 0) throw CheckpointError("checkpoint: bad magic");
    pos_ += n;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n)
      throw CheckpointError("checkpoint: truncated at byte " + std::to_string(pos_));
  }
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

Checkpoint capture(const model::PCDepthNet& net, const RunConfig& cfg, std::uint64_t step,
                   const optim::AdamW* optimizer) {
  Checkpoint c;
  c.step = step;
  c.config = cfg;
  for (const auto& e : net.params().entries()) {
    Tensor t{e.name, e.var.shape(), {}};
    t.values.reserve(e.var.numel());
    for (double v : e.var.value()) t.values.push_back(static_cast<float>(v));
    c.params.push_back(std::move(t));
  }
  if (optimizer) c.optimizer = optimizer->state();
  return c;
}

void restore(const Checkpoint& ckpt, model::PCDepthNet& net, optim::AdamW* optimizer) {
  const auto& entries = net.params().entries();
  if (entries.size() != ckpt.params.size())
    throw CheckpointError("checkpoint has " + std::to_string(ckpt.params.size()) + " parameters, model has " +
                          std::to_string(entries.size()));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Tensor& t = ckpt.params[i];
    if (t.name != entries[i].name || t.shape != entries[i].var.shape())
      throw CheckpointError("checkpoint parameter " + t.name + ag::shape_str(t.shape) + " does not match model " +
                            entries[i].name + ag::shape_str(entries[i].var.shape()));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    ag::Var v = entries[i].var;
    auto& dst = v.mutable_value();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<double>(ckpt.params[i].values[k]);
  }
  if (optimizer && ckpt.optimizer) optimizer->set_state(*ckpt.optimizer);
}

std::vector<std::uint8_t> encode(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u64(ckpt.step);
  w.str(serialize(ckpt.config));
  w.u32(static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& t : ckpt.params) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.values) w.f32(v);
  }
  w.u8(ckpt.optimizer ? 1 : 0);
  if (ckpt.optimizer) {
    const auto& s = *ckpt.optimizer;
    if (s.m.size() != ckpt.params.size() || s.v.size() != ckpt.params.size())
      throw CheckpointError("optimizer state does not match parameter count");
    w.u8(kFloat64Tag);
    w.u64(s.t);
    for (std::size_t i = 0; i < s.m.size(); ++i) {
      for (double v : s.m[i]) w.f64(v);
      for (double v : s.v[i]) w.f64(v);
    }
  }
  return w.take();
}

Checkpoint decode(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  r.expect(kMagic, sizeof kMagic);
  Checkpoint c;
  c.step = r.u64();
  c.config = parse_config(r.str());
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    Tensor t;
    t.name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw CheckpointError("checkpoint: implausible rank for " + t.name);
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(static_cast<int>(r.u32()));
    const std::size_t count = ag::numel(t.shape);
    if (count > bytes.size()) throw CheckpointError("checkpoint: tensor " + t.name + " exceeds file size");
    t.values.resize(count);
    for (auto& v : t.values) v = r.f32();
    c.params.push_back(std::move(t));
  }
  if (r.u8() == 1) {
    if (r.u8() != kFloat64Tag) throw CheckpointError("checkpoint: unsupported optimizer dtype");
    optim::AdamState s;
    s.t = r.u64();
    for (const auto& t : c.params) {
      std::vector<double> m(t.values.size()), v(t.values.size());
      for (auto& x : m) x = r.f64();
      for (auto& x : v) x = r.f64();
      s.m.push_back(std::move(m));
      s.v.push_back(std::move(v));
    }
    c.optimizer = std::move(s);
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes");
  return c;
}

void write(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

}  // namespace pcdepth::checkpoint
