#include "mcinet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mcinet/model.hpp"

namespace mcinet {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'M', 'C', 'I', 'N', 'E', 'T', 'C', 'K'};

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    out_.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(const void* data, std::size_t n) { out_.append(static_cast<const char*>(data), n); }
  void string(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out_.append(s);
  }
  void tensor(const std::string& name, const Tensor<float>& t) {
    string(name);
    pod<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) pod<std::int64_t>(d);
    bytes(t.ptr(), static_cast<std::size_t>(t.size()) * sizeof(float));
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  template <typename T>
  T pod() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  std::string string() {
    const auto n = pod<std::uint64_t>();
    return std::string(take(n), n);
  }
  std::pair<std::string, Tensor<float>> tensor() {
    std::string name = string();
    const auto rank = pod<std::uint32_t>();
    if (rank > 8) throw FormatError("checkpoint: implausible tensor rank for " + name);
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = pod<std::int64_t>();
      if (d < 0) throw FormatError("checkpoint: negative dimension for " + name);
      shape.push_back(d);
    }
    Tensor<float> t(shape);
    std::memcpy(t.ptr(), take(static_cast<std::size_t>(t.size()) * sizeof(float)),
                static_cast<std::size_t>(t.size()) * sizeof(float));
    return {std::move(name), std::move(t)};
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const char* take(std::size_t n) {
    if (n > in_.size() - pos_) throw FormatError("checkpoint is truncated");
    const char* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }

  const std::string& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.momentum.size() != ckpt.params.size()) throw FormatError("checkpoint: momentum/parameter count mismatch");
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.string(to_json(ckpt.config).dump());
  w.pod<std::int64_t>(ckpt.step);
  w.pod<std::uint64_t>(ckpt.params.size());
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    const auto& e = ckpt.params.entries()[i];
    w.tensor(e.name, e.value);
    w.pod<std::uint8_t>(e.trainable ? 1 : 0);
    w.tensor(e.name, ckpt.momentum[i]);
  }
  w.pod<std::uint64_t>(ckpt.history.size());
  for (const auto& r : ckpt.history) {
    w.pod<std::int64_t>(r.step);
    w.pod(r.total);
    w.pod(r.large_bce);
    w.pod(r.small_bce);
    w.pod(r.eval_miou);
  }
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  char magic[sizeof(kMagic)];
  for (char& c : magic) c = r.pod<char>();
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw FormatError("not an mcinet checkpoint");
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ckpt;
  const std::string config_text = r.string();
  try {
    ckpt.config = run_config_from_json(nlohmann::json::parse(config_text));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  ckpt.step = r.pod<std::int64_t>();
  const auto n = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) {
    auto [name, value] = r.tensor();
    const bool trainable = r.pod<std::uint8_t>() != 0;
    auto [mname, buffer] = r.tensor();
    if (mname != name || buffer.shape() != value.shape()) throw FormatError("checkpoint: momentum buffer mismatch for " + name);
    ckpt.params.add(name, std::move(value), trainable);
    ckpt.momentum.push_back(std::move(buffer));
  }
  const auto h = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < h; ++i) {
    MetricRecord m;
    m.step = r.pod<std::int64_t>();
    m.total = r.pod<double>();
    m.large_bce = r.pod<double>();
    m.small_bce = r.pod<double>();
    m.eval_miou = r.pod<double>();
    ckpt.history.push_back(m);
  }
  if (!r.done()) throw FormatError("checkpoint has trailing bytes");
  // Rejects parameter sets that do not match the stored architecture.
  MciNet<float> check(ckpt.config.model, ckpt.params);
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = serialize_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw FormatError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace mcinet
