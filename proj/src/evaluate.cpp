#include "vlur/metrics/evaluate.hpp"

#include "vlur/image/image.hpp"
#include "vlur/restorer/pipeline.hpp"

namespace vlur::metrics {

MetricReport evaluate_report(const restorer::Restorer<float>& model,
                             clf::SceneClassifier& classifier,
                             const synth::DatasetManifest& manifest, Guidance guidance,
                             bool quantize, bool per_type_mean) {
  if (manifest.entries.empty()) throw DataError("evaluate_report: empty split");
  std::vector<PerImageResult> results;
  results.reserve(manifest.entries.size());
  for (size_t i = 0; i < manifest.entries.size(); ++i) {
    auto pair = synth::load_pair(manifest, i);
    std::optional<synth::Degradation> override_type;
    if (guidance == Guidance::kOracle) override_type = pair.type;
    auto guided = restorer::restore_with_classifier(model, classifier, pair.degraded, override_type);
    Tensorf restored = std::move(guided.restored);
    Tensorf truth = std::move(pair.clean);
    if (quantize) {
      restored = img::quantize8(restored);
      truth = img::quantize8(truth);
    }
    PerImageResult r;
    r.type = pair.type;
    r.psnr = psnr(restored, truth);
    r.ssim = ssim(restored, truth);
    results.push_back(r);
  }
  return make_report(results, per_type_mean, quantize, guidance_name(guidance));
}

}  // namespace vlur::metrics
