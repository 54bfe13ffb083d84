#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "vlur/classifier/classifier.hpp"
#include "vlur/core/nn.hpp"
#include "vlur/io/tensor_archive.hpp"
#include "vlur/restorer/restorer.hpp"

namespace vlur::harness {

// Checkpoints are tensor archives (docs/checkpoint.md) with named sections:
//   restorer.*                 model parameters
//   scene_classifier.adapter.* adapter weight/bias
//   opt.m.* / opt.v.*          ADAM state
// plus meta: epoch/step counters, RNG position (base seed + counters),
// the config snapshot, and whether the scene classifier was frozen.

inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
  int64_t epoch = 0;
  int64_t step = 0;
  uint64_t seed = 0;
  int64_t adam_step = 0;
  bool sc_frozen = false;
  bool has_optimizer = false;
  nlohmann::json config = nlohmann::json::object();
};

void save_checkpoint(const std::string& path, const restorer::Restorer<float>& model,
                     const clf::SceneClassifier* classifier, nn::Adam<float>* optimizer,
                     const CheckpointMeta& meta);

struct LoadedCheckpoint {
  io::Archive archive;
  CheckpointMeta meta;
  uint64_t content_hash = 0;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

void apply_restorer(const LoadedCheckpoint& ck, restorer::Restorer<float>& model);
void apply_adapter(const LoadedCheckpoint& ck, clf::SceneClassifier& classifier);
void apply_optimizer(const LoadedCheckpoint& ck, const restorer::Restorer<float>& model,
                     nn::Adam<float>& optimizer);

uint64_t checkpoint_file_hash(const std::string& path);

}  // namespace vlur::harness
