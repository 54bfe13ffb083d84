#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "vlur/harness/train.hpp"

namespace vlur::harness {

struct AblationVariant {
  std::string name;
  bool text_guidance = true;
  bool use_msssim = true;
  bool use_cdrl = true;
};

// "loss" -> {L1, L1+MSSSIM, full} with text on; "text" -> full loss with
// text on/off; "loss,text" -> the union.
std::vector<AblationVariant> ablation_grid(bool loss_axis, bool text_axis);

struct AblationRow {
  std::string name;
  bool text_guidance = true;
  bool use_msssim = true;
  bool use_cdrl = true;
  double test_psnr = 0;
  double test_ssim = 0;
  int64_t steps = 0;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  nlohmann::json to_json() const;
  std::string to_table() const;
};

// Trains each variant with identical seeds and data order, then evaluates
// test PSNR/SSIM with oracle guidance so only the restorer varies.
AblationReport run_ablation(const Config& base_cfg, const synth::DatasetManifest& train,
                            const synth::DatasetManifest& test, clf::SceneClassifier& classifier,
                            const std::vector<AblationVariant>& variants,
                            bool allow_stub_sc = false);

}  // namespace vlur::harness
