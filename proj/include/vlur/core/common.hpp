#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace vlur {

// Error taxonomy. Every error carries a short machine-parsable class string;
// the CLI maps these to exit codes and one-line JSON diagnostics.
class Error : public std::runtime_error {
 public:
  Error(std::string cls, const std::string& msg)
      : std::runtime_error(msg), class_(std::move(cls)) {}
  const std::string& error_class() const { return class_; }

 private:
  std::string class_;
};

#define VLUR_DEFINE_ERROR(Name, cls)                                  \
  struct Name : Error {                                               \
    explicit Name(const std::string& m) : Error(cls, m) {}            \
  }

VLUR_DEFINE_ERROR(ParameterError, "parameter_error");
VLUR_DEFINE_ERROR(ShapeError, "shape_error");
VLUR_DEFINE_ERROR(DataError, "data_error");
VLUR_DEFINE_ERROR(IngestionError, "ingestion_error");
VLUR_DEFINE_ERROR(ConfigError, "config_error");
VLUR_DEFINE_ERROR(ClassificationError, "classification_error");
VLUR_DEFINE_ERROR(ProtocolError, "protocol_error");
VLUR_DEFINE_ERROR(ScaleError, "scale_error");
VLUR_DEFINE_ERROR(MigrationError, "migration_error");
VLUR_DEFINE_ERROR(IoError, "io_error");
VLUR_DEFINE_ERROR(TrainingError, "training_error");

#undef VLUR_DEFINE_ERROR

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// FNV-1a, used for content hashes and seed derivation from string tags.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

}  // namespace vlur
