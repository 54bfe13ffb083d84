#include "vlur/io/tensor_archive.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

namespace vlur::io {

static_assert(std::endian::native == std::endian::little,
              "tensor archives assume a little-endian host");

namespace {
constexpr char kMagic[8] = {'V', 'L', 'U', 'R', 'T', 'N', 'S', '1'};
}

uint64_t tensors_hash(const std::map<std::string, Tensorf>& tensors) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [name, t] : tensors)
    h = fnv1a64(t.data.data(), t.data.size() * sizeof(float), h);
  return h;
}

void save_archive(const std::string& path, const Archive& archive) {
  nlohmann::json manifest;
  manifest["format_version"] = kArchiveFormatVersion;
  manifest["meta"] = archive.meta;
  manifest["tensors"] = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : archive.tensors) {
    manifest["tensors"].push_back({{"name", name},
                                   {"shape", t.shape},
                                   {"offset", offset},
                                   {"count", t.numel()}});
    offset += static_cast<uint64_t>(t.numel()) * sizeof(float);
  }
  manifest["blob_bytes"] = offset;
  char hex[32];
  std::snprintf(hex, sizeof(hex), "0x%016llx",
                static_cast<unsigned long long>(tensors_hash(archive.tensors)));
  manifest["content_hash"] = std::string(hex);

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(kMagic, sizeof(kMagic));
    const std::string mstr = manifest.dump();
    const uint64_t mlen = mstr.size();
    out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
    out.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
    for (const auto& [name, t] : archive.tensors)
      out.write(reinterpret_cast<const char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Archive load_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open archive " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw MigrationError("not a tensor archive (bad magic): " + path);
  uint64_t mlen = 0;
  in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
  if (!in || mlen > (1ull << 30)) throw MigrationError("corrupt archive manifest: " + path);
  std::string mstr(mlen, '\0');
  in.read(mstr.data(), static_cast<std::streamsize>(mlen));
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mstr);
  } catch (const nlohmann::json::exception& e) {
    throw MigrationError("corrupt archive manifest JSON: " + std::string(e.what()));
  }
  const int version = manifest.value("format_version", -1);
  if (version != kArchiveFormatVersion)
    throw MigrationError("archive format version " + std::to_string(version) +
                         " is not supported (expected " +
                         std::to_string(kArchiveFormatVersion) + "); no silent migration");
  Archive a;
  a.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& tj : manifest.at("tensors")) {
    const std::string name = tj.at("name").get<std::string>();
    Shape shape = tj.at("shape").get<Shape>();
    Tensorf t(shape);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!in) throw DataError("archive truncated while reading tensor " + name);
    a.tensors.emplace(name, std::move(t));
  }
  a.content_hash = tensors_hash(a.tensors);
  const std::string expected = manifest.value("content_hash", "");
  char hex[32];
  std::snprintf(hex, sizeof(hex), "0x%016llx", static_cast<unsigned long long>(a.content_hash));
  if (!expected.empty() && expected != hex)
    throw DataError("archive content hash mismatch for " + path + " (expected " + expected +
                    ", got " + hex + ")");
  return a;
}

}  // namespace vlur::io
