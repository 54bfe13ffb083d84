#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "vlur/core/ops.hpp"
#include "vlur/losses/vgg.hpp"

namespace vlur::losses {

// Published 5-scale MS-SSIM weights (they sum to 1.0001).
inline const std::array<double, 5>& msssim_canonical_weights() {
  static const std::array<double, 5> w = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  return w;
}

struct MsssimConfig {
  int scales = 5;      // reduced-scale desk variant uses 3
  int window = 11;
  double sigma = 1.5;
  double c1 = 0.01 * 0.01;  // on the [0,1] range
  double c2 = 0.03 * 0.03;

  // Leading canonical weights, renormalized to sum to 1 when scales < 5.
  std::vector<double> weights() const {
    if (scales < 1 || scales > 5) throw ConfigError("msssim scales must be in [1,5]");
    std::vector<double> w(msssim_canonical_weights().begin(),
                          msssim_canonical_weights().begin() + scales);
    if (scales < 5) {
      double s = 0;
      for (double v : w) s += v;
      for (double& v : w) v /= s;
    }
    return w;
  }
};

struct LossWeights {
  double gamma1 = 0.6;  // smooth L1
  double gamma2 = 0.3;  // MS-SSIM
  double gamma3 = 0.1;  // CDRL
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double smooth_l1_beta = 1.0;
  MsssimConfig msssim;

  void validate() const {
    if (gamma1 < 0 || gamma2 < 0 || gamma3 < 0) throw ConfigError("loss gammas must be >= 0");
    if (lambda1 <= 0 || lambda2 <= 0) throw ConfigError("loss lambdas must be > 0");
    if (smooth_l1_beta <= 0) throw ConfigError("smooth_l1 beta must be > 0");
    double s = 0;
    for (double v : msssim_canonical_weights()) s += v;
    if (std::abs(s - 1.0) > 2e-4)
      throw ConfigError("msssim canonical weights drifted");  // guards against edits
  }
};

namespace detail {

template <class T>
TensorT<T> gaussian_window(int size, double sigma, int64_t channels) {
  TensorT<T> w(Shape{size, size, channels});
  const double half = (size - 1) / 2.0;
  double sum = 0;
  std::vector<double> vals(static_cast<size_t>(size) * size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double dy = y - half, dx = x - half;
      const double v = std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma));
      vals[static_cast<size_t>(y * size + x)] = v;
      sum += v;
    }
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int64_t c = 0; c < channels; ++c)
        w.at(y, x, c) = static_cast<T>(vals[static_cast<size_t>(y * size + x)] / sum);
  return w;
}

// (mean contrast-structure, mean luminance*cs) of one scale.
template <class T>
std::pair<VarT<T>, VarT<T>> ssim_scale_terms(const VarT<T>& a, const VarT<T>& b,
                                             const VarT<T>& window, double c1, double c2) {
  auto blur = [&](const VarT<T>& t) { return dwconv2d(t, window, VarT<T>(), 0); };
  auto mu_a = blur(a);
  auto mu_b = blur(b);
  auto mu_aa = mul(mu_a, mu_a);
  auto mu_bb = mul(mu_b, mu_b);
  auto mu_ab = mul(mu_a, mu_b);
  auto sigma_aa = sub(blur(mul(a, a)), mu_aa);
  auto sigma_bb = sub(blur(mul(b, b)), mu_bb);
  auto sigma_ab = sub(blur(mul(a, b)), mu_ab);

  auto cs_map = div(add_scalar(mul_scalar(sigma_ab, T(2)), static_cast<T>(c2)),
                    add_scalar(add(sigma_aa, sigma_bb), static_cast<T>(c2)));
  auto l_map = div(add_scalar(mul_scalar(mu_ab, T(2)), static_cast<T>(c1)),
                   add_scalar(add(mu_aa, mu_bb), static_cast<T>(c1)));
  return {mean_all(cs_map), mean_all(mul(l_map, cs_map))};
}

}  // namespace detail

// 1 - prod_i term_i^{w_i}: contrast-structure at every scale, luminance
// folded in at the coarsest. Images [N,H,W,C]; requires the coarsest scale
// to still fit the window.
template <class T>
VarT<T> msssim_loss(const VarT<T>& restored, const VarT<T>& truth, const MsssimConfig& cfg) {
  vlur::detail::check_same_shape(restored, truth, "msssim_loss");
  if (restored.shape().size() != 4) throw ShapeError("msssim_loss expects [N,H,W,C]");
  const int64_t min_side = std::min(restored.shape()[1], restored.shape()[2]);
  const int64_t needed = static_cast<int64_t>(cfg.window) << (cfg.scales - 1);
  if (min_side < needed)
    throw ScaleError("image side " + std::to_string(min_side) + " too small for " +
                     std::to_string(cfg.scales) + " scales with an " + std::to_string(cfg.window) +
                     "-tap window (needs >= " + std::to_string(needed) + ")");
  const auto w = cfg.weights();
  auto window =
      make_leaf(detail::gaussian_window<T>(cfg.window, cfg.sigma, restored.shape()[3]), false);

  VarT<T> product;
  VarT<T> a = restored, b = truth;
  for (int s = 0; s < cfg.scales; ++s) {
    auto [cs, lcs] = detail::ssim_scale_terms(a, b, window, cfg.c1, cfg.c2);
    const bool last = s + 1 == cfg.scales;
    auto term = pow_scalar(clamp_min(last ? lcs : cs, T(1e-4)), static_cast<T>(w[static_cast<size_t>(s)]));
    product = product.defined() ? mul(product, term) : term;
    if (!last) {
      a = avgpool2(a);
      b = avgpool2(b);
    }
  }
  return add_scalar(mul_scalar(product, T(-1)), T(1));
}

// Contrastive ratio of VGG-tap distances: pull the restored image toward the
// ground truth, push it away from the degraded input and the negatives.
// Gradients flow through `restored` only.
template <class T>
VarT<T> cdrl_loss(const VarT<T>& restored, const TensorT<T>& positive, const TensorT<T>& input,
                  const std::vector<TensorT<T>>& negatives, const VggFeatureExtractor<T>& vgg,
                  double lambda1, double lambda2) {
  if (negatives.empty()) throw ParameterError("cdrl requires at least one negative sample");
  if (restored.shape().size() != 4 || restored.shape()[0] != 1)
    throw ShapeError("cdrl_loss expects a single [1,H,W,3] restored image");
  Shape img_shape{restored.shape()[1], restored.shape()[2], restored.shape()[3]};
  if (positive.shape != img_shape || input.shape != img_shape)
    throw ShapeError("cdrl sample size mismatch");
  for (const auto& n : negatives)
    if (n.shape != img_shape) throw ShapeError("cdrl negative size mismatch");

  auto rec_taps = vgg.taps(restored);
  auto pos_taps = vgg.taps_nograd(positive);
  auto in_taps = vgg.taps_nograd(input);
  std::vector<std::vector<TensorT<T>>> neg_taps;
  for (const auto& n : negatives) neg_taps.push_back(vgg.taps_nograd(n));

  auto l1_to = [](const VarT<T>& a, const TensorT<T>& b) {
    return mean_all(vabs(sub(a, make_leaf(TensorT<T>(b), false))));
  };

  VarT<T> total;
  for (size_t i = 0; i < rec_taps.size(); ++i) {
    auto numer = l1_to(rec_taps[i], pos_taps[i]);
    auto denom = mul_scalar(l1_to(rec_taps[i], in_taps[i]), static_cast<T>(lambda1));
    for (const auto& nt : neg_taps)
      denom = add(denom, mul_scalar(l1_to(rec_taps[i], nt[i]), static_cast<T>(lambda2)));
    auto ratio = div(numer, clamp_min(denom, T(1e-8)));
    total = total.defined() ? add(total, ratio) : ratio;
  }
  return total;
}

template <class T>
struct TotalLoss {
  VarT<T> total;
  double l1 = 0, msssim = 0, cdrl = 0, value = 0;
};

// gamma1 * smoothL1 + gamma2 * msssim + gamma3 * cdrl. Terms with zero
// weight are skipped entirely (the ablation grid zeroes them out).
template <class T>
TotalLoss<T> total_loss(const VarT<T>& restored, const TensorT<T>& truth, const TensorT<T>& input,
                        const std::vector<TensorT<T>>& negatives,
                        const VggFeatureExtractor<T>& vgg, const LossWeights& w) {
  w.validate();
  if (restored.shape().size() != 4 || restored.shape()[0] != 1)
    throw ShapeError("total_loss expects a single [1,H,W,3] restored image");
  if (truth.shape != Shape{restored.shape()[1], restored.shape()[2], restored.shape()[3]})
    throw ShapeError("total_loss: truth size mismatch");
  TotalLoss<T> out;
  Shape batch_shape = restored.shape();
  auto truth_leaf = make_leaf(TensorT<T>(batch_shape, truth.data), false);

  auto l1 = smooth_l1_loss(restored, truth_leaf, static_cast<T>(w.smooth_l1_beta));
  out.l1 = static_cast<double>(scalar_of(l1));
  out.total = mul_scalar(l1, static_cast<T>(w.gamma1));

  if (w.gamma2 > 0) {
    auto ms = msssim_loss(restored, truth_leaf, w.msssim);
    out.msssim = static_cast<double>(scalar_of(ms));
    out.total = add(out.total, mul_scalar(ms, static_cast<T>(w.gamma2)));
  }
  if (w.gamma3 > 0) {
    auto cd = cdrl_loss(restored, truth, input, negatives, vgg, w.lambda1, w.lambda2);
    out.cdrl = static_cast<double>(scalar_of(cd));
    out.total = add(out.total, mul_scalar(cd, static_cast<T>(w.gamma3)));
  }
  out.value = static_cast<double>(scalar_of(out.total));
  return out;
}

}  // namespace vlur::losses
