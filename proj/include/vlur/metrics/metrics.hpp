#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "vlur/core/tensor.hpp"
#include "vlur/synth/degrade.hpp"

namespace vlur::metrics {

// PSNR in dB over all RGB pixel-channels of clamped copies; identical
// images report the 100 dB cap instead of infinity.
double psnr(const Tensorf& a, const Tensorf& b);
inline constexpr double kPsnrCap = 100.0;

// Mean windowed SSIM (11x11 Gaussian, sigma 1.5, C1=0.01^2, C2=0.03^2),
// computed per channel and averaged. Requires min side >= 11.
double ssim(const Tensorf& a, const Tensorf& b);

struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double c1 = 1e-4;
  double c2 = 9e-4;
};
double ssim(const Tensorf& a, const Tensorf& b, const SsimConfig& cfg);

// MS-SSIM value (not loss): contrast-structure at every scale, luminance at
// the coarsest, canonical weights renormalized when scales < 5.
double msssim(const Tensorf& a, const Tensorf& b, int scales = 5, const SsimConfig& cfg = {});

struct PerImageResult {
  synth::Degradation type;
  double psnr = 0;
  double ssim = 0;
};

struct MetricRow {
  synth::Degradation type;
  double psnr = 0;
  double ssim = 0;
  int count = 0;
};

struct MetricReport {
  std::vector<MetricRow> rows;        // one per type present, table order
  double avg_psnr = 0;
  double avg_ssim = 0;
  int total_count = 0;
  bool per_type_mean = false;         // averaging convention
  bool quantize = false;
  std::string guidance;               // "predicted" | "oracle"
  std::vector<PerImageResult> per_image;

  nlohmann::json to_json() const;
  std::string to_table() const;       // aligned, rows I..XI then Avg.
};

// Assembles the report from per-image results. The average is per-image by
// default; per_type_mean averages the per-type means instead.
MetricReport make_report(const std::vector<PerImageResult>& results, bool per_type_mean,
                         bool quantize, const std::string& guidance);

}  // namespace vlur::metrics
