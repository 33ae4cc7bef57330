#include "dan/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "dan/error.hpp"

namespace dan {
namespace {

constexpr char kMagic[8] = {'D', 'A', 'N', 'C', 'K', 'P', 'T', '\0'};

// All integers are stored little-endian; doubles as their IEEE-754 bytes.
template <typename T>
void put(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& path, const std::vector<char>& bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) throw IoError(path + ": truncated checkpoint");
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string out;
  out.append(kMagic, 8);
  put<std::uint32_t>(out, ckpt.version);
  put<std::uint64_t>(out, fnv1a64(ckpt.config_text));
  put<std::uint64_t>(out, ckpt.config_text.size());
  out.append(ckpt.config_text);
  put<std::int64_t>(out, ckpt.epoch);
  put<std::uint64_t>(out, ckpt.tensors.size());
  for (const auto& [name, t] : ckpt.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    put<std::int64_t>(out, static_cast<std::int64_t>(t.rank()));
    for (std::size_t d = 0; d < t.rank(); ++d) put<std::int64_t>(out, t.dim(d));
    auto v = t.values();
    for (double x : v) put<double>(out, x);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(path + ": cannot open for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f.good()) throw IoError(path + ": write failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(path + ": cannot open checkpoint");
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw IoError(path + ": not a checkpoint file (bad magic)");
  pos = 8;

  Checkpoint ckpt;
  ckpt.version = get<std::uint32_t>(path, bytes, pos);
  if (ckpt.version != 1)
    throw IoError(path + ": unsupported checkpoint version " + std::to_string(ckpt.version));
  const std::uint64_t digest = get<std::uint64_t>(path, bytes, pos);
  const std::uint64_t text_len = get<std::uint64_t>(path, bytes, pos);
  if (pos + text_len > bytes.size()) throw IoError(path + ": truncated checkpoint");
  ckpt.config_text.assign(bytes.data() + pos, text_len);
  pos += text_len;
  if (fnv1a64(ckpt.config_text) != digest)
    throw IoError(path + ": config digest mismatch (corrupt checkpoint)");
  ckpt.epoch = get<std::int64_t>(path, bytes, pos);
  const std::uint64_t count = get<std::uint64_t>(path, bytes, pos);
  ckpt.tensors.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = get<std::uint32_t>(path, bytes, pos);
    if (pos + name_len > bytes.size()) throw IoError(path + ": truncated checkpoint");
    std::string name(bytes.data() + pos, name_len);
    pos += name_len;
    const std::int64_t rank = get<std::int64_t>(path, bytes, pos);
    if (rank < 0 || rank > 8) throw IoError(path + ": implausible tensor rank");
    Shape shape;
    std::int64_t numel = 1;
    for (std::int64_t d = 0; d < rank; ++d) {
      const std::int64_t e = get<std::int64_t>(path, bytes, pos);
      if (e < 0) throw IoError(path + ": negative tensor extent");
      shape.push_back(e);
      numel *= e;
    }
    std::vector<double> vals(static_cast<std::size_t>(numel));
    for (std::int64_t j = 0; j < numel; ++j)
      vals[static_cast<std::size_t>(j)] = get<double>(path, bytes, pos);
    ckpt.tensors.emplace_back(std::move(name), from_values(std::move(shape), std::move(vals)));
  }
  if (pos != bytes.size()) throw IoError(path + ": trailing bytes after checkpoint payload");
  return ckpt;
}

void restore_tensors(const Checkpoint& ckpt,
                     std::vector<std::pair<std::string, Tensor>> dst) {
  for (auto& [name, t] : dst) {
    const Tensor* src = ckpt.find(name);
    if (!src) throw IoError("checkpoint: missing tensor '" + name + "'");
    if (src->shape() != t.shape())
      throw IoError("checkpoint: tensor '" + name + "' has shape " + shape_str(src->shape()) +
                    ", model expects " + shape_str(t.shape()));
    auto d = t.mutable_values();
    auto s = src->values();
    std::copy(s.begin(), s.end(), d.begin());
  }
}

}  // namespace dan
