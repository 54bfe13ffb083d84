#include "vlur/harness/ablation.hpp"

#include <cstdio>

#include "vlur/metrics/evaluate.hpp"

namespace vlur::harness {

using nlohmann::json;

std::vector<AblationVariant> ablation_grid(bool loss_axis, bool text_axis) {
  std::vector<AblationVariant> v;
  v.push_back({"full", true, true, true});
  if (loss_axis) {
    v.push_back({"l1_only", true, false, false});
    v.push_back({"l1_msssim", true, true, false});
  }
  if (text_axis) v.push_back({"full_no_text", false, true, true});
  return v;
}

AblationReport run_ablation(const Config& base_cfg, const synth::DatasetManifest& train,
                            const synth::DatasetManifest& test, clf::SceneClassifier& classifier,
                            const std::vector<AblationVariant>& variants, bool allow_stub_sc) {
  if (variants.empty()) throw ParameterError("run_ablation: no variants given");
  AblationReport report;
  for (const auto& variant : variants) {
    Config cfg = base_cfg;
    cfg.set("restorer.text_guidance", variant.text_guidance ? "on" : "off");
    if (!variant.use_msssim) cfg.set("loss.gamma2", 0.0);
    if (!variant.use_cdrl) cfg.set("loss.gamma3", 0.0);

    TrainSrOptions opts;
    opts.allow_stub_sc = allow_stub_sc;
    auto result = train_sr(cfg, train, classifier, opts);

    auto eval = metrics::evaluate_report(*result.model, classifier, test,
                                         metrics::Guidance::kOracle);
    AblationRow row;
    row.name = variant.name;
    row.text_guidance = variant.text_guidance;
    row.use_msssim = variant.use_msssim;
    row.use_cdrl = variant.use_cdrl;
    row.test_psnr = eval.avg_psnr;
    row.test_ssim = eval.avg_ssim;
    row.steps = result.steps_run;
    report.rows.push_back(row);
  }
  return report;
}

json AblationReport::to_json() const {
  json j = json::array();
  for (const auto& r : rows)
    j.push_back({{"name", r.name},
                 {"text_guidance", r.text_guidance},
                 {"msssim", r.use_msssim},
                 {"cdrl", r.use_cdrl},
                 {"test_psnr", r.test_psnr},
                 {"test_ssim", r.test_ssim},
                 {"steps", r.steps}});
  return j;
}

std::string AblationReport::to_table() const {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-14s %5s %7s %5s %10s %8s %7s\n", "variant", "text",
                "msssim", "cdrl", "test_psnr", "ssim", "steps");
  out += line;
  out += std::string(62, '-') + "\n";
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%-14s %5s %7s %5s %10.2f %8.4f %7lld\n", r.name.c_str(),
                  r.text_guidance ? "on" : "off", r.use_msssim ? "yes" : "no",
                  r.use_cdrl ? "yes" : "no", r.test_psnr, r.test_ssim,
                  static_cast<long long>(r.steps));
    out += line;
  }
  return out;
}

}  // namespace vlur::harness
