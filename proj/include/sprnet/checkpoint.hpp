// Binary checkpoints.
//
//   "SPRD"  u32 version  u64 config digest  u32 dtype size  u32 param count
//   per parameter: u32 name length, name, i32 n c h w, values,
//                  u64 adam step, first moment, second moment
//   u64 config text length, config text (informational)
//
// Little-endian throughout. The whole file is read and parsed before the
// store is touched, so a bad file never leaves a partial load behind.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sprnet/param_store.hpp"

namespace sprnet {

inline constexpr char kCheckpointMagic[4] = {'S', 'P', 'R', 'D'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace detail {

class ByteWriter {
 public:
  template <class V>
  void put(const V& v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    bytes_.append(p, sizeof(V));
  }
  void put_bytes(const void* p, std::size_t n) { bytes_.append(static_cast<const char*>(p), n); }
  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}

  template <class V>
  V get() {
    V v;
    get_bytes(&v, sizeof(V));
    return v;
  }
  void skip(std::size_t n) {
    if (n > bytes_.size() - pos_) throw Error("checkpoint truncated at byte " + std::to_string(pos_));
    pos_ += n;
  }
  void get_bytes(void* out, std::size_t n) {
    if (n > bytes_.size() - pos_) throw Error("checkpoint truncated at byte " + std::to_string(pos_));
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

struct CheckpointInfo {
  std::uint32_t version = 0;
  std::uint64_t digest = 0;
  std::uint32_t scalar_bytes = 0;  // 4 or 8
  std::string config_text;
};

template <class T>
std::string serialize_checkpoint(const ParamStore<T>& store, std::uint64_t digest, const std::string& config_text) {
  detail::ByteWriter w;
  w.put_bytes(kCheckpointMagic, 4);
  w.put(kCheckpointVersion);
  w.put(digest);
  w.put(static_cast<std::uint32_t>(sizeof(T)));
  w.put(static_cast<std::uint32_t>(store.size()));
  for (const auto& e : store.entries()) {
    w.put(static_cast<std::uint32_t>(e.name.size()));
    w.put_bytes(e.name.data(), e.name.size());
    const Shape s = e.value.shape();
    for (int d : {s.n, s.c, s.h, s.w}) w.put(static_cast<std::int32_t>(d));
    w.put_bytes(e.value.data().data(), e.value.numel() * sizeof(T));
    w.put(static_cast<std::uint64_t>(e.adam.step));
    const std::vector<T> zeros(e.value.numel(), T(0));
    const auto& m = e.adam.m.empty() ? zeros : e.adam.m;
    const auto& v = e.adam.v.empty() ? zeros : e.adam.v;
    w.put_bytes(m.data(), m.size() * sizeof(T));
    w.put_bytes(v.data(), v.size() * sizeof(T));
  }
  w.put(static_cast<std::uint64_t>(config_text.size()));
  w.put_bytes(config_text.data(), config_text.size());
  return w.bytes();
}

template <class T>
void save_checkpoint(const ParamStore<T>& store, const std::string& path, std::uint64_t digest,
                     const std::string& config_text = {}) {
  const std::string bytes = serialize_checkpoint(store, digest, config_text);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write checkpoint " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("write failed: " + path);
}

/// Reads the header and config text without touching any store.
inline CheckpointInfo read_checkpoint_info(const std::string& bytes) {
  detail::ByteReader r(bytes);
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw Error("not a checkpoint (bad magic)");
  CheckpointInfo info;
  info.version = r.get<std::uint32_t>();
  if (info.version != kCheckpointVersion) {
    throw Error("checkpoint format version " + std::to_string(info.version) + " is not supported");
  }
  info.digest = r.get<std::uint64_t>();
  info.scalar_bytes = r.get<std::uint32_t>();
  if (info.scalar_bytes != 4 && info.scalar_bytes != 8) throw Error("checkpoint has a bad scalar size");
  const std::uint32_t count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    r.skip(r.get<std::uint32_t>());
    std::size_t numel = 1;
    for (int d = 0; d < 4; ++d) numel *= static_cast<std::size_t>(r.get<std::int32_t>());
    r.skip(numel * info.scalar_bytes);
    r.skip(sizeof(std::uint64_t));
    r.skip(2 * numel * info.scalar_bytes);
  }
  info.config_text.resize(r.get<std::uint64_t>());
  r.get_bytes(info.config_text.data(), info.config_text.size());
  return info;
}

/// Fills `store` from `bytes`. The store must already hold the same
/// parameters (same names, order and shapes). A digest different from
/// `expected_digest` is refused unless `force`.
template <class T>
CheckpointInfo deserialize_checkpoint(ParamStore<T>& store, const std::string& bytes, std::uint64_t expected_digest,
                                      bool force = false) {
  detail::ByteReader r(bytes);
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw Error("not a checkpoint (bad magic)");
  CheckpointInfo info;
  info.version = r.get<std::uint32_t>();
  if (info.version != kCheckpointVersion) {
    throw Error("checkpoint format version " + std::to_string(info.version) + " is not supported (expected " +
                std::to_string(kCheckpointVersion) + ")");
  }
  info.digest = r.get<std::uint64_t>();
  if (info.digest != expected_digest && !force) {
    throw Error("checkpoint was written for a different model configuration (digest mismatch); use --force to load anyway");
  }
  info.scalar_bytes = r.get<std::uint32_t>();
  if (info.scalar_bytes != sizeof(T)) throw Error("checkpoint precision does not match the requested one");
  const std::uint32_t count = r.get<std::uint32_t>();
  if (count != store.size()) {
    throw Error("checkpoint holds " + std::to_string(count) + " parameters, model has " + std::to_string(store.size()));
  }
  struct Loaded {
    std::vector<T> value, m, v;
    std::uint64_t step;
  };
  std::vector<Loaded> loaded(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto& e = store.entries()[i];
    std::string name(r.get<std::uint32_t>(), '\0');
    r.get_bytes(name.data(), name.size());
    if (name != e.name) throw Error("checkpoint parameter " + std::to_string(i) + " is '" + name + "', expected '" + e.name + "'");
    Shape s;
    s.n = r.get<std::int32_t>();
    s.c = r.get<std::int32_t>();
    s.h = r.get<std::int32_t>();
    s.w = r.get<std::int32_t>();
    if (s != e.value.shape()) throw Error("checkpoint shape of '" + name + "' is " + s.str() + ", expected " + e.value.shape().str());
    auto& l = loaded[i];
    for (auto* buf : {&l.value}) {
      buf->resize(s.numel());
      r.get_bytes(buf->data(), buf->size() * sizeof(T));
    }
    l.step = r.get<std::uint64_t>();
    for (auto* buf : {&l.m, &l.v}) {
      buf->resize(s.numel());
      r.get_bytes(buf->data(), buf->size() * sizeof(T));
    }
  }
  info.config_text.resize(r.get<std::uint64_t>());
  r.get_bytes(info.config_text.data(), info.config_text.size());
  if (!r.done()) throw Error("checkpoint has trailing bytes");
  for (std::uint32_t i = 0; i < count; ++i) {
    auto& e = store.entries()[i];
    std::copy(loaded[i].value.begin(), loaded[i].value.end(), e.value.data().begin());
    e.adam.m = std::move(loaded[i].m);
    e.adam.v = std::move(loaded[i].v);
    e.adam.step = static_cast<decltype(e.adam.step)>(loaded[i].step);
  }
  return info;
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open checkpoint " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

template <class T>
CheckpointInfo load_checkpoint(ParamStore<T>& store, const std::string& path, std::uint64_t expected_digest,
                               bool force = false) {
  return deserialize_checkpoint(store, read_file_bytes(path), expected_digest, force);
}

}  // namespace sprnet
