#pragma once

#include "vlur/classifier/classifier.hpp"
#include "vlur/metrics/metrics.hpp"
#include "vlur/restorer/restorer.hpp"
#include "vlur/synth/dataset.hpp"

namespace vlur::metrics {

enum class Guidance { kPredicted, kOracle };

inline const char* guidance_name(Guidance g) {
  return g == Guidance::kPredicted ? "predicted" : "oracle";
}

// Restores every pair of the split and reports per-type and averaged
// PSNR/SSIM. Oracle guidance feeds the manifest type to the restorer;
// predicted guidance uses the classifier.
MetricReport evaluate_report(const restorer::Restorer<float>& model,
                             clf::SceneClassifier& classifier,
                             const synth::DatasetManifest& manifest, Guidance guidance,
                             bool quantize = false, bool per_type_mean = false);

}  // namespace vlur::metrics
