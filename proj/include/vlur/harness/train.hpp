#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "vlur/classifier/classifier.hpp"
#include "vlur/config.hpp"
#include "vlur/restorer/restorer.hpp"
#include "vlur/synth/dataset.hpp"

namespace vlur::harness {

// ---------------------------------------------------------------- phase 1

struct TrainScResult {
  std::shared_ptr<clf::SceneClassifier> classifier;
  clf::AccuracyReport report;
};

// Pretrains (adapter fine-tune) and freezes the scene classifier on the
// manifest's degraded images, holding out a stratified fraction per type.
TrainScResult train_sc(const Config& cfg, const synth::DatasetManifest& manifest,
                       double holdout_fraction = 0.2);

// Builds the classifier without any fine-tuning (identity adapter,
// zero-shot); used by the --allow-stub-sc path and by tests.
std::shared_ptr<clf::SceneClassifier> make_classifier(const Config& cfg);

// ---------------------------------------------------------------- phase 2

struct LossRecord {
  int64_t step = 0;
  double l1 = 0, msssim = 0, cdrl = 0, total = 0, lr = 0;
};

struct TrainSrOptions {
  bool allow_stub_sc = false;       // accept an unfrozen zero-shot classifier
  std::string checkpoint_dir;       // periodic + final checkpoints when set
  std::string log_path;             // JSON-lines training log when set
  std::string resume_from;          // checkpoint to resume (epoch granularity)
  // called every probe_every steps; returning true stops training early
  std::function<bool(restorer::Restorer<float>&, int64_t)> probe;
  int64_t probe_every = 0;
};

struct TrainSrResult {
  std::unique_ptr<restorer::Restorer<float>> model;
  std::vector<LossRecord> log;
  std::string final_checkpoint;  // empty when no checkpoint_dir given
  int64_t steps_run = 0;
  int64_t epochs_run = 0;
  uint64_t param_hash = 0;
};

// Ground-truth-text training of the restorer with the composite objective.
// Refuses an unfrozen classifier unless allow_stub_sc is set; verifies the
// classifier checksum is unchanged afterwards.
TrainSrResult train_sr(const Config& cfg, const synth::DatasetManifest& train_manifest,
                       clf::SceneClassifier& classifier, const TrainSrOptions& opts = {});

}  // namespace vlur::harness
