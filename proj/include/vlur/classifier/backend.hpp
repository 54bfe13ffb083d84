#pragma once

#include <memory>
#include <string>
#include <vector>

#include "vlur/core/tensor.hpp"

namespace vlur::clf {

inline constexpr int kEmbeddingDim = 512;

// Encoder pair used by the scene classifier. Backends return raw (not yet
// normalized) embeddings; the classifier L2-normalizes. Both encoders must
// be deterministic in eval mode.
class EncoderBackend {
 public:
  virtual ~EncoderBackend() = default;
  virtual std::string identifier() const = 0;
  int embedding_dim() const { return kEmbeddingDim; }
  // [n_prompts, 512]
  virtual Tensorf encode_text(const std::vector<std::string>& prompts) = 0;
  // [512] from an [H,W,3] image in [0,1]
  virtual Tensorf encode_image(const Tensorf& image) = 0;
  // hash over all internal weights, for the frozen-backend contract
  virtual uint64_t weights_hash() const = 0;
};

// CI backend: a fixed-seed conv/statistics image encoder and a hashed
// bag-of-words text encoder. No downloaded weights, fully deterministic.
std::unique_ptr<EncoderBackend> make_stub_backend(uint64_t seed = 2024);

// Backend driven by an external weights archive (text embedding table for
// the 11 prompts plus a small conv image tower). Weight files are produced
// offline; the expected tensor names are documented in docs/checkpoint.md.
std::unique_ptr<EncoderBackend> make_pretrained_backend(const std::string& weights_path);

// Dispatch by config name ("stub" | "pretrained").
std::unique_ptr<EncoderBackend> make_backend(const std::string& name,
                                             const std::string& pretrained_path);

// Writes a structurally valid pretrained-backend weights archive with seeded
// random weights; used by tests to exercise the pretrained code path.
void write_random_pretrained_weights(const std::string& path, uint64_t seed);

}  // namespace vlur::clf
