#include "vlur/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "vlur/image/image.hpp"

namespace vlur::metrics {

namespace {

void check_pair(const Tensorf& a, const Tensorf& b, const char* who) {
  img::check_image(a, who);
  if (a.shape != b.shape)
    throw ShapeError(std::string(who) + ": size mismatch " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
}

double clamp01d(float v) { return v < 0.0f ? 0.0 : (v > 1.0f ? 1.0 : static_cast<double>(v)); }

std::vector<double> gaussian_taps(int size, double sigma) {
  std::vector<double> taps(static_cast<size_t>(size));
  const double half = (size - 1) / 2.0;
  double sum = 0;
  for (int i = 0; i < size; ++i) {
    const double d = i - half;
    taps[static_cast<size_t>(i)] = std::exp(-d * d / (2 * sigma * sigma));
    sum += taps[static_cast<size_t>(i)];
  }
  for (auto& t : taps) t /= sum;
  return taps;
}

struct Plane {
  int64_t h = 0, w = 0;
  std::vector<double> v;
  double& at(int64_t y, int64_t x) { return v[static_cast<size_t>(y * w + x)]; }
  double at(int64_t y, int64_t x) const { return v[static_cast<size_t>(y * w + x)]; }
};

Plane channel_plane(const Tensorf& im, int64_t c) {
  Plane p;
  p.h = im.dim(0);
  p.w = im.dim(1);
  p.v.resize(static_cast<size_t>(p.h * p.w));
  for (int64_t y = 0; y < p.h; ++y)
    for (int64_t x = 0; x < p.w; ++x) p.at(y, x) = clamp01d(im.at(y, x, c));
  return p;
}

// Separable valid-mode Gaussian filter.
Plane blur_valid(const Plane& in, const std::vector<double>& taps) {
  const int k = static_cast<int>(taps.size());
  Plane mid;
  mid.h = in.h;
  mid.w = in.w - k + 1;
  mid.v.resize(static_cast<size_t>(mid.h * mid.w));
  for (int64_t y = 0; y < mid.h; ++y)
    for (int64_t x = 0; x < mid.w; ++x) {
      double s = 0;
      for (int i = 0; i < k; ++i) s += taps[static_cast<size_t>(i)] * in.at(y, x + i);
      mid.at(y, x) = s;
    }
  Plane out;
  out.h = in.h - k + 1;
  out.w = mid.w;
  out.v.resize(static_cast<size_t>(out.h * out.w));
  for (int64_t y = 0; y < out.h; ++y)
    for (int64_t x = 0; x < out.w; ++x) {
      double s = 0;
      for (int i = 0; i < k; ++i) s += taps[static_cast<size_t>(i)] * mid.at(y + i, x);
      out.at(y, x) = s;
    }
  return out;
}

Plane multiply(const Plane& a, const Plane& b) {
  Plane out = a;
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= b.v[i];
  return out;
}

Plane downsample2(const Plane& in) {
  Plane out;
  out.h = in.h / 2;
  out.w = in.w / 2;
  out.v.resize(static_cast<size_t>(out.h * out.w));
  for (int64_t y = 0; y < out.h; ++y)
    for (int64_t x = 0; x < out.w; ++x)
      out.at(y, x) = 0.25 * (in.at(2 * y, 2 * x) + in.at(2 * y, 2 * x + 1) +
                             in.at(2 * y + 1, 2 * x) + in.at(2 * y + 1, 2 * x + 1));
  return out;
}

struct ScaleTerms {
  double cs = 0;
  double lcs = 0;  // luminance * cs
};

ScaleTerms ssim_terms(const Plane& a, const Plane& b, const SsimConfig& cfg) {
  const auto taps = gaussian_taps(cfg.window, cfg.sigma);
  const Plane mu_a = blur_valid(a, taps);
  const Plane mu_b = blur_valid(b, taps);
  const Plane aa = blur_valid(multiply(a, a), taps);
  const Plane bb = blur_valid(multiply(b, b), taps);
  const Plane ab = blur_valid(multiply(a, b), taps);
  double cs_sum = 0, lcs_sum = 0;
  const int64_t n = mu_a.h * mu_a.w;
  for (int64_t i = 0; i < n; ++i) {
    const double ma = mu_a.v[static_cast<size_t>(i)];
    const double mb = mu_b.v[static_cast<size_t>(i)];
    const double sa = aa.v[static_cast<size_t>(i)] - ma * ma;
    const double sb = bb.v[static_cast<size_t>(i)] - mb * mb;
    const double sab = ab.v[static_cast<size_t>(i)] - ma * mb;
    const double cs = (2 * sab + cfg.c2) / (sa + sb + cfg.c2);
    const double l = (2 * ma * mb + cfg.c1) / (ma * ma + mb * mb + cfg.c1);
    cs_sum += cs;
    lcs_sum += l * cs;
  }
  ScaleTerms t;
  t.cs = cs_sum / static_cast<double>(n);
  t.lcs = lcs_sum / static_cast<double>(n);
  return t;
}

}  // namespace

double psnr(const Tensorf& a, const Tensorf& b) {
  check_pair(a, b, "psnr");
  double se = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = clamp01d(a[i]) - clamp01d(b[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.numel());
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Tensorf& a, const Tensorf& b) { return ssim(a, b, SsimConfig{}); }

double ssim(const Tensorf& a, const Tensorf& b, const SsimConfig& cfg) {
  check_pair(a, b, "ssim");
  if (std::min(a.dim(0), a.dim(1)) < cfg.window)
    throw ScaleError("ssim: image smaller than the " + std::to_string(cfg.window) +
                     "-tap window");
  const auto taps = gaussian_taps(cfg.window, cfg.sigma);
  double acc = 0;
  for (int64_t c = 0; c < 3; ++c) {
    const Plane pa = channel_plane(a, c);
    const Plane pb = channel_plane(b, c);
    const Plane mu_a = blur_valid(pa, taps);
    const Plane mu_b = blur_valid(pb, taps);
    const Plane aa = blur_valid(multiply(pa, pa), taps);
    const Plane bb = blur_valid(multiply(pb, pb), taps);
    const Plane ab = blur_valid(multiply(pa, pb), taps);
    double sum = 0;
    const int64_t n = mu_a.h * mu_a.w;
    for (int64_t i = 0; i < n; ++i) {
      const double ma = mu_a.v[static_cast<size_t>(i)];
      const double mb = mu_b.v[static_cast<size_t>(i)];
      const double sa = aa.v[static_cast<size_t>(i)] - ma * ma;
      const double sb = bb.v[static_cast<size_t>(i)] - mb * mb;
      const double sab = ab.v[static_cast<size_t>(i)] - ma * mb;
      sum += ((2 * ma * mb + cfg.c1) * (2 * sab + cfg.c2)) /
             ((ma * ma + mb * mb + cfg.c1) * (sa + sb + cfg.c2));
    }
    acc += sum / static_cast<double>(n);
  }
  return acc / 3.0;
}

double msssim(const Tensorf& a, const Tensorf& b, int scales, const SsimConfig& cfg) {
  check_pair(a, b, "msssim");
  if (scales < 1 || scales > 5) throw ScaleError("msssim: scales must be in [1,5]");
  const int64_t needed = static_cast<int64_t>(cfg.window) << (scales - 1);
  if (std::min(a.dim(0), a.dim(1)) < needed)
    throw ScaleError("msssim: min side " + std::to_string(std::min(a.dim(0), a.dim(1))) +
                     " too small for " + std::to_string(scales) + " scales (needs >= " +
                     std::to_string(needed) + ")");
  static const double canonical[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  std::vector<double> w(canonical, canonical + scales);
  if (scales < 5) {
    double s = 0;
    for (double v : w) s += v;
    for (double& v : w) v /= s;
  }

  std::vector<Plane> pa, pb;
  for (int64_t c = 0; c < 3; ++c) {
    pa.push_back(channel_plane(a, c));
    pb.push_back(channel_plane(b, c));
  }
  double value = 1.0;
  for (int s = 0; s < scales; ++s) {
    double cs = 0, lcs = 0;
    for (int64_t c = 0; c < 3; ++c) {
      const ScaleTerms t = ssim_terms(pa[static_cast<size_t>(c)], pb[static_cast<size_t>(c)], cfg);
      cs += t.cs / 3.0;
      lcs += t.lcs / 3.0;
    }
    const bool last = s + 1 == scales;
    value *= std::pow(std::max(last ? lcs : cs, 1e-4), w[static_cast<size_t>(s)]);
    if (!last) {
      for (int64_t c = 0; c < 3; ++c) {
        pa[static_cast<size_t>(c)] = downsample2(pa[static_cast<size_t>(c)]);
        pb[static_cast<size_t>(c)] = downsample2(pb[static_cast<size_t>(c)]);
      }
    }
  }
  return value;
}

MetricReport make_report(const std::vector<PerImageResult>& results, bool per_type_mean,
                         bool quantize, const std::string& guidance) {
  if (results.empty()) throw DataError("cannot build a metric report from an empty split");
  MetricReport r;
  r.per_type_mean = per_type_mean;
  r.quantize = quantize;
  r.guidance = guidance;
  r.per_image = results;
  for (auto type : synth::all_degradations()) {
    MetricRow row;
    row.type = type;
    for (const auto& pr : results) {
      if (pr.type != type) continue;
      row.psnr += pr.psnr;
      row.ssim += pr.ssim;
      ++row.count;
    }
    if (row.count == 0) continue;
    row.psnr /= row.count;
    row.ssim /= row.count;
    r.rows.push_back(row);
  }
  r.total_count = static_cast<int>(results.size());
  if (per_type_mean) {
    for (const auto& row : r.rows) {
      r.avg_psnr += row.psnr;
      r.avg_ssim += row.ssim;
    }
    r.avg_psnr /= static_cast<double>(r.rows.size());
    r.avg_ssim /= static_cast<double>(r.rows.size());
  } else {
    for (const auto& pr : results) {
      r.avg_psnr += pr.psnr;
      r.avg_ssim += pr.ssim;
    }
    r.avg_psnr /= static_cast<double>(results.size());
    r.avg_ssim /= static_cast<double>(results.size());
  }
  return r;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j;
  j["rows"] = nlohmann::json::array();
  for (const auto& row : rows) {
    j["rows"].push_back({{"type", synth::label_of(row.type)},
                         {"roman", synth::roman_of(row.type)},
                         {"psnr", row.psnr},
                         {"ssim", row.ssim},
                         {"count", row.count}});
  }
  j["average"] = {{"psnr", avg_psnr}, {"ssim", avg_ssim}, {"count", total_count}};
  j["config"] = {{"guidance", guidance},
                 {"quantize", quantize},
                 {"per_type_mean", per_type_mean}};
  return j;
}

std::string MetricReport::to_table() const {
  std::string out;
  char line[128];
  std::snprintf(line, sizeof(line), "%-5s %-15s %8s %8s %6s\n", "Idx", "Type", "PSNR", "SSIM",
                "N");
  out += line;
  out += std::string(46, '-') + "\n";
  for (const auto& row : rows) {
    std::snprintf(line, sizeof(line), "%-5s %-15s %8.2f %8.4f %6d\n",
                  synth::roman_of(row.type).c_str(), synth::label_of(row.type).c_str(), row.psnr,
                  row.ssim, row.count);
    out += line;
  }
  out += std::string(46, '-') + "\n";
  std::snprintf(line, sizeof(line), "%-5s %-15s %8.2f %8.4f %6d\n", "Avg.", "", avg_psnr, avg_ssim,
                total_count);
  out += line;
  return out;
}

}  // namespace vlur::metrics
