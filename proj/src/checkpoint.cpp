#include "geomatch/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "geomatch/errors.hpp"

namespace geomatch {

namespace {

constexpr char kMagic[8] = {'G', 'E', 'O', 'M', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<unsigned char>& buffer() { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  Reader(const unsigned char* data, std::size_t size) : data_(data), size_(size) {}
  const unsigned char* take(std::size_t n) {
    if (n > size_ - pos_) throw IoError("checkpoint: truncated file");
    const unsigned char* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32() {
    const auto* p = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(p[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const auto* p = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[i]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = u32();
    const auto* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  bool done() const { return pos_ == size_; }

 private:
  const unsigned char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::uint64_t fnv1a(const unsigned char* p, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string encode_state(const std::map<std::string, std::string>& state) {
  std::string out;
  for (const auto& [k, v] : state) out += k + "=" + v + "\n";
  return out;
}

std::map<std::string, std::string> decode_state(const std::string& text) {
  std::map<std::string, std::string> out;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(start, end - start);
    const auto eq = line.find('=');
    if (!line.empty()) {
      if (eq == std::string::npos) throw IoError("checkpoint: malformed state line");
      out[line.substr(0, eq)] = line.substr(eq + 1);
    }
    start = end + 1;
  }
  return out;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t.tensor;
  }
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.u32(Checkpoint::kVersion);
  w.str(ckpt.config.serialize());
  w.str(encode_state(ckpt.state));
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& nt : ckpt.tensors) {
    w.str(nt.name);
    w.u32(static_cast<std::uint32_t>(nt.tensor.rank()));
    for (auto d : nt.tensor.shape()) w.u64(d);
    for (auto v : nt.tensor.values()) w.f64(static_cast<double>(v));
  }
  auto& buf = w.buffer();
  const auto hash = fnv1a(buf.data(), buf.size());
  w.u64(hash);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write-then-rename so a crash never leaves a half-written checkpoint.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kMagic) + 4 + 8) throw IoError("checkpoint: truncated file");
  if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    throw IoError("checkpoint: bad magic in " + path.string());
  }
  Reader header(buf.data() + sizeof(kMagic), 4);
  const auto version = header.u32();
  if (version != Checkpoint::kVersion) {
    throw IoError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::size_t body = buf.size() - 8;
  Reader tail(buf.data() + body, 8);
  if (tail.u64() != fnv1a(buf.data(), body)) throw IoError("checkpoint: checksum mismatch");

  Reader r(buf.data() + sizeof(kMagic) + 4, body - sizeof(kMagic) - 4);
  Checkpoint ckpt;
  try {
    ckpt.config = ModelConfig::parse(r.str());
  } catch (const InvalidArgument& e) {
    throw IoError(std::string("checkpoint: ") + e.what());
  }
  ckpt.state = decode_state(r.str());
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const auto rank = r.u32();
    if (rank > 8) throw IoError("checkpoint: implausible tensor rank");
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(r.u64());
      if (d != 0 && numel > (std::size_t(1) << 40) / d) throw IoError("checkpoint: tensor too large");
      numel *= d;
    }
    std::vector<Scalar> values(numel);
    for (auto& v : values) v = static_cast<Scalar>(r.f64());
    ckpt.tensors.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  if (!r.done()) throw IoError("checkpoint: trailing bytes");
  return ckpt;
}

Checkpoint snapshot_model(const GeometryEstimator& model) {
  Checkpoint c;
  c.config = model.config();
  for (const auto& p : model.parameters()) c.tensors.push_back({p.name, p.tensor.detach()});
  for (const auto& [name, s] : model.running_stats()) {
    c.tensors.push_back({name + ".running_mean", Tensor({s.mean.size()}, s.mean)});
    c.tensors.push_back({name + ".running_var", Tensor({s.var.size()}, s.var)});
  }
  return c;
}

void restore_model(GeometryEstimator& model, const Checkpoint& ckpt) {
  auto fetch = [&ckpt](const std::string& name, const Shape& shape) -> const Tensor& {
    const Tensor* t = ckpt.find(name);
    if (t == nullptr) throw InvalidArgument("checkpoint: missing tensor " + name);
    if (t->shape() != shape) {
      throw InvalidArgument("checkpoint: tensor " + name + " has shape " +
                            shape_to_string(t->shape()) + ", model expects " +
                            shape_to_string(shape));
    }
    return *t;
  };
  for (const auto& p : model.parameters()) {
    const Tensor& src = fetch(p.name, p.tensor.shape());
    Tensor dst = p.tensor;
    std::copy(src.values().begin(), src.values().end(), dst.mutable_values().begin());
  }
  for (auto& [name, s] : model.running_stats()) {
    const Tensor& m = fetch(name + ".running_mean", {s.mean.size()});
    const Tensor& v = fetch(name + ".running_var", {s.var.size()});
    s.mean.assign(m.values().begin(), m.values().end());
    s.var.assign(v.values().begin(), v.values().end());
  }
}

GeometryEstimator load_model(const std::filesystem::path& path) {
  const auto ckpt = load_checkpoint(path);
  GeometryEstimator model(ckpt.config, 0);
  restore_model(model, ckpt);
  return model;
}

}  // namespace geomatch
