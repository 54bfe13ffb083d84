#pragma once

#include <map>
#include <string>

#include <json.hpp>

#include "vlur/core/tensor.hpp"

namespace vlur::io {

// Single-file tensor container: an 8-byte magic, a length-prefixed JSON
// manifest, then raw little-endian float32 blobs in manifest order. The
// manifest records names, shapes, offsets and an FNV-1a hash of the blob
// region. Writes go to a temp file first and are renamed into place.
// See docs/checkpoint.md for the byte-level layout.

struct Archive {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Tensorf> tensors;  // ordered by name
  uint64_t content_hash = 0;
};

inline constexpr int kArchiveFormatVersion = 1;

void save_archive(const std::string& path, const Archive& archive);
Archive load_archive(const std::string& path);

// Hash of the blob region only (what content_hash stores).
uint64_t tensors_hash(const std::map<std::string, Tensorf>& tensors);

}  // namespace vlur::io
