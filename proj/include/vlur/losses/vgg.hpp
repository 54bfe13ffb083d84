#pragma once

#include <deque>
#include <string>
#include <utility>
#include <vector>

#include "vlur/core/nn.hpp"
#include "vlur/core/ops.hpp"
#include "vlur/io/tensor_archive.hpp"

namespace vlur::losses {

// VGG-16 convolution stack used as the CDRL feature extractor. Taps are
// 1-based conv indices (ReLU outputs); the net is built only as deep as the
// deepest tap. Weights are frozen: either fixed-seed random (CI mode) or
// loaded from an external archive. Inputs are [N,H,W,3].
template <class T>
class VggFeatureExtractor {
 public:
  static const std::vector<int>& conv_widths() {
    static const std::vector<int> w = {64, 64, 128, 128, 256, 256, 256,
                                       512, 512, 512, 512, 512, 512};
    return w;
  }
  // maxpool follows these conv indices
  static bool pool_after(int conv_index) {
    return conv_index == 2 || conv_index == 4 || conv_index == 7 || conv_index == 10 ||
           conv_index == 13;
  }

  VggFeatureExtractor(std::vector<int> taps, uint64_t seed) : taps_(std::move(taps)) {
    if (taps_.empty()) throw ConfigError("vgg taps must not be empty");
    int max_tap = 0;
    for (int t : taps_) {
      if (t < 1 || t > 13) throw ConfigError("vgg tap out of range: " + std::to_string(t));
      max_tap = std::max(max_tap, t);
    }
    int64_t cin = 3;
    for (int i = 1; i <= max_tap; ++i) {
      const int64_t cout = conv_widths()[static_cast<size_t>(i - 1)];
      auto rs = rng::stream(seed, "vgg.conv" + std::to_string(i));
      weights_.push_back(make_leaf(nn::conv_init<T>({3, 3, cin, cout}, rs), false));
      biases_.push_back(make_leaf(TensorT<T>::zeros(Shape{cout}), false));
      cin = cout;
    }
  }

  void load_weights(const std::string& archive_path) {
    io::Archive a = io::load_archive(archive_path);
    for (size_t i = 0; i < weights_.size(); ++i) {
      const std::string wn = "vgg.conv" + std::to_string(i + 1) + ".w";
      const std::string bn = "vgg.conv" + std::to_string(i + 1) + ".b";
      auto wi = a.tensors.find(wn);
      auto bi = a.tensors.find(bn);
      if (wi == a.tensors.end() || bi == a.tensors.end())
        throw MigrationError("vgg weights archive is missing " + wn);
      if (wi->second.shape != weights_[i].shape())
        throw MigrationError("vgg weight shape mismatch for " + wn);
      weights_[i] = make_leaf(tensor_cast<T>(wi->second), false);
      biases_[i] = make_leaf(tensor_cast<T>(bi->second), false);
    }
    cache_.clear();
  }

  const std::vector<int>& tap_indices() const { return taps_; }

  // Differentiable path; gradients flow into x only (weights are frozen).
  std::vector<VarT<T>> taps(const VarT<T>& x) const {
    std::vector<VarT<T>> out;
    VarT<T> cur = x;
    int conv_index = 0;
    for (size_t i = 0; i < weights_.size(); ++i) {
      ++conv_index;
      cur = relu(conv2d(cur, weights_[i], biases_[i], 1));
      for (int t : taps_)
        if (t == conv_index) out.push_back(cur);
      if (pool_after(conv_index) && conv_index < static_cast<int>(weights_.size()))
        cur = maxpool2(cur);
    }
    return out;
  }

  // Value-only path with a small content-addressed cache; used for the
  // positive/input/negative branches whose taps never need gradients.
  std::vector<TensorT<T>> taps_nograd(const TensorT<T>& image) const {
    const uint64_t key = image.content_hash();
    for (const auto& [k, v] : cache_)
      if (k == key) return v;
    NoGradGuard ng;
    Shape s = image.shape;
    s.insert(s.begin(), 1);
    auto x = make_leaf(TensorT<T>(s, image.data), false);
    auto tap_vars = taps(x);
    std::vector<TensorT<T>> out;
    out.reserve(tap_vars.size());
    for (auto& v : tap_vars) out.push_back(v.val());
    cache_.emplace_back(key, out);
    while (cache_.size() > kCacheEntries) cache_.pop_front();
    return out;
  }

  uint64_t weights_hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& w : weights_)
      h = fnv1a64(w.val().ptr(), static_cast<size_t>(w.numel()) * sizeof(T), h);
    return h;
  }

 private:
  static constexpr size_t kCacheEntries = 64;
  std::vector<int> taps_;
  std::vector<VarT<T>> weights_, biases_;
  mutable std::deque<std::pair<uint64_t, std::vector<TensorT<T>>>> cache_;
};

}  // namespace vlur::losses
