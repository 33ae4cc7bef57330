#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dan/tensor.hpp"

// Versioned binary checkpoint container: a header (magic, version, config
// digest, config text, epoch) followed by named tensor records (name, rank,
// extents, raw little-endian doubles). Writing is canonical, so
// load-then-save reproduces the file byte for byte.

namespace dan {

struct Checkpoint {
  std::uint32_t version = 1;
  std::string config_text;  // canonical RunConfig serialization
  std::int64_t epoch = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;  // params, buffers, optimizer state

  // nullptr when `name` is absent.
  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// FNV-1a 64-bit digest (used for the config fingerprint in the header).
std::uint64_t fnv1a64(const std::string& text);

// Copies values from `ckpt` into every tensor of `dst` by name; missing or
// shape-mismatched names are errors naming the tensor.
void restore_tensors(const Checkpoint& ckpt,
                     std::vector<std::pair<std::string, Tensor>> dst);

}  // namespace dan
