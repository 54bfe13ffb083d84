#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "vlur/core/nn.hpp"
#include "vlur/core/ops.hpp"

namespace vlur::restorer {

// Architecture hyperparameters. Channel width doubles per level while the
// spatial dims halve; level l (1-based) runs at 2^(l-1) * base_channels.
struct RestorerConfig {
  int64_t base_channels = 16;  // 16 desk scale, 48 full scale
  static constexpr int kLevels = 4;
  std::array<int, 4> blocks_per_level = {2, 2, 2, 2};
  std::array<int, 4> heads_per_level = {1, 2, 4, 8};
  double ffn_expansion = 2.0;
  static constexpr int64_t kTextDim = 512;
  bool text_guidance = true;

  int64_t channels_at(int level) const { return base_channels << (level - 1); }

  void validate() const {
    if (base_channels <= 0) throw ConfigError("base_channels must be positive");
    if (ffn_expansion <= 0.0) throw ConfigError("ffn_expansion must be positive");
    for (int l = 1; l <= kLevels; ++l) {
      const int heads = heads_per_level[static_cast<size_t>(l - 1)];
      if (heads <= 0 || channels_at(l) % heads != 0)
        throw ConfigError("heads_per_level[" + std::to_string(l - 1) + "]=" +
                          std::to_string(heads) + " must divide level width " +
                          std::to_string(channels_at(l)));
      if (blocks_per_level[static_cast<size_t>(l - 1)] <= 0)
        throw ConfigError("blocks_per_level entries must be positive");
    }
  }
};

// Captures the attention maps of one PGCA evaluation (testing hook).
template <class T>
struct AttentionProbeT {
  TensorT<T> a_img;  // [N*heads, ch, ch]
  TensorT<T> a_txt;  // empty when text guidance is off
};

// Prompt-guidance cross-attention. Channel-wise (transposed) attention:
// per head, keys/queries/values are ch x (hw) slabs, the attention maps are
// ch x ch, and the text query is one broadcast vector per image. The two
// softmax maps are summed as-is (rows of the sum total 2); the output
// projection absorbs any rescale.
template <class T>
class PgcaBlock {
 public:
  PgcaBlock(int64_t channels, int heads, nn::ParamStore<T>& store, const std::string& prefix,
            uint64_t seed)
      : c_(channels), heads_(heads) {
    auto named = [&](const char* n) { return prefix + "." + n; };
    auto rs_for = [&](const std::string& name) { return rng::stream(seed, name); };
    auto add_conv = [&](const char* n, Shape s) {
      auto rs = rs_for(named(n));
      return store.add(named(n), nn::conv_init<T>(std::move(s), rs));
    };
    ln_gamma_ = store.add(named("ln.gamma"), TensorT<T>::full(Shape{c_}, T(1)));
    wq_point_ = add_conv("q.point.w", {1, 1, c_, c_});
    wk_point_ = add_conv("k.point.w", {1, 1, c_, c_});
    wv_point_ = add_conv("v.point.w", {1, 1, c_, c_});
    {
      auto rs = rs_for(named("q.depth.w"));
      wq_depth_ = store.add(named("q.depth.w"), nn::dwconv_init<T>({3, 3, c_}, rs));
    }
    {
      auto rs = rs_for(named("k.depth.w"));
      wk_depth_ = store.add(named("k.depth.w"), nn::dwconv_init<T>({3, 3, c_}, rs));
    }
    {
      auto rs = rs_for(named("v.depth.w"));
      wv_depth_ = store.add(named("v.depth.w"), nn::dwconv_init<T>({3, 3, c_}, rs));
    }
    {
      auto rs = rs_for(named("text.w"));
      wt_ = store.add(named("text.w"), nn::linear_init<T>({RestorerConfig::kTextDim, c_}, rs));
      bt_ = store.add(named("text.b"), TensorT<T>::zeros(Shape{c_}));
    }
    // softplus(raw) == 1  =>  raw = log(e - 1)
    alpha_raw_ = store.add(named("alpha"),
                           TensorT<T>::full(Shape{heads_}, static_cast<T>(std::log(std::exp(1.0) - 1.0))));
    wo_ = add_conv("out.w", {1, 1, c_, c_});
    bo_ = store.add(named("out.b"), TensorT<T>::zeros(Shape{c_}));
  }

  // x: [N,H,W,C], y_text: [N,512]
  VarT<T> forward(const VarT<T>& x, const VarT<T>& y_text, bool text_guidance,
                  AttentionProbeT<T>* probe = nullptr) const {
    const int64_t N = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    const int64_t hw = H * W;
    const int64_t ch = c_ / heads_;
    const int64_t B = N * heads_;

    auto x_ln = layernorm_channels(x, ln_gamma_);
    auto project = [&](const VarT<T>& pw, const VarT<T>& dw) {
      return dwconv2d(conv2d(x_ln, pw, VarT<T>(), 0), dw, VarT<T>(), 1);
    };
    auto split_heads = [&](const VarT<T>& t) {
      // [N,H,W,C] -> [N*heads, hw, ch]
      auto r = reshape(t, Shape{N, hw, heads_, ch});
      auto p = permute(r, {0, 2, 1, 3});
      return reshape(p, Shape{B, hw, ch});
    };

    // queries/keys are L2-normalized along the spatial dim so the channel
    // attention logits stay in the cosine range; the learnable temperature
    // sharpens from there
    auto q = l2_normalize_cols(split_heads(project(wq_point_, wq_depth_)));
    auto k = l2_normalize_cols(split_heads(project(wk_point_, wk_depth_)));
    auto v = split_heads(project(wv_point_, wv_depth_));

    auto alpha = softplus(alpha_raw_);
    auto alpha_b = tile_vec(alpha, N);  // [N*heads], batch-major

    auto a_img = softmax_lastdim(div_by_batch_scalar(bmm_tn(k, q), alpha_b));

    VarT<T> attn;
    VarT<T> a_txt;
    if (text_guidance) {
      // per-head unit text query against the normalized keys; typical
      // normalized-key column sums are O(1), so these logits match the
      // image-path scale and the shared temperature covers both
      auto qt = l2_normalize_rows(reshape(linear_rows(y_text, wt_, bt_), Shape{N * heads_, ch}));
      auto qt_b = broadcast_text_query(reshape(qt, Shape{N, heads_, ch}), hw);
      a_txt = softmax_lastdim(div_by_batch_scalar(bmm_tn(k, qt_b), alpha_b));
      attn = add(a_img, a_txt);
    } else {
      attn = a_img;
    }
    if (probe) {
      probe->a_img = a_img.val();
      probe->a_txt = text_guidance ? a_txt.val() : TensorT<T>();
    }

    auto out = bmm_nt(v, attn);  // [B, hw, ch]
    auto merged = reshape(permute(reshape(out, Shape{N, heads_, hw, ch}), {0, 2, 1, 3}),
                          Shape{N, H, W, c_});
    return add(x, conv2d(merged, wo_, bo_, 0));
  }

  int64_t channels() const { return c_; }
  int heads() const { return heads_; }

 private:
  int64_t c_;
  int heads_;
  VarT<T> ln_gamma_;
  VarT<T> wq_point_, wk_point_, wv_point_;
  VarT<T> wq_depth_, wk_depth_, wv_depth_;
  VarT<T> wt_, bt_;
  VarT<T> alpha_raw_;
  VarT<T> wo_, bo_;
};

// Gated feed-forward: 1x1 expansion to two lanes, depthwise 3x3, GELU gate,
// 1x1 back down; residual around the whole thing.
template <class T>
class FfnBlock {
 public:
  FfnBlock(int64_t channels, double expansion, nn::ParamStore<T>& store,
           const std::string& prefix, uint64_t seed)
      : c_(channels), hidden_(static_cast<int64_t>(std::lround(expansion * static_cast<double>(channels)))) {
    if (hidden_ <= 0) throw ConfigError("ffn expansion too small");
    auto named = [&](const char* n) { return prefix + "." + n; };
    ln_gamma_ = store.add(named("ln.gamma"), TensorT<T>::full(Shape{c_}, T(1)));
    {
      auto rs = rng::stream(seed, named("in.w"));
      w1_ = store.add(named("in.w"), nn::conv_init<T>({1, 1, c_, 2 * hidden_}, rs));
    }
    {
      auto rs = rng::stream(seed, named("depth.w"));
      wd_ = store.add(named("depth.w"), nn::dwconv_init<T>({3, 3, 2 * hidden_}, rs));
    }
    {
      auto rs = rng::stream(seed, named("out.w"));
      w2_ = store.add(named("out.w"), nn::conv_init<T>({1, 1, hidden_, c_}, rs));
      b2_ = store.add(named("out.b"), TensorT<T>::zeros(Shape{c_}));
    }
  }

  VarT<T> forward(const VarT<T>& x) const {
    auto x_ln = layernorm_channels(x, ln_gamma_);
    auto h = dwconv2d(conv2d(x_ln, w1_, VarT<T>(), 0), wd_, VarT<T>(), 1);
    auto x1 = slice_lastdim(h, 0, hidden_);
    auto x2 = slice_lastdim(h, hidden_, 2 * hidden_);
    auto gated = mul(gelu(x1), x2);
    return add(x, conv2d(gated, w2_, b2_, 0));
  }

 private:
  int64_t c_;
  int64_t hidden_;
  VarT<T> ln_gamma_;
  VarT<T> w1_, wd_, w2_, b2_;
};

// One CTransAgg block: PGCA then FFN.
template <class T>
class CTransAggBlock {
 public:
  CTransAggBlock(int64_t channels, int heads, double expansion, nn::ParamStore<T>& store,
                 const std::string& prefix, uint64_t seed)
      : pgca_(channels, heads, store, prefix + ".pgca", seed),
        ffn_(channels, expansion, store, prefix + ".ffn", seed) {}

  VarT<T> forward(const VarT<T>& x, const VarT<T>& y_text, bool text_guidance,
                  AttentionProbeT<T>* probe = nullptr) const {
    return ffn_.forward(pgca_.forward(x, y_text, text_guidance, probe));
  }

  const PgcaBlock<T>& pgca() const { return pgca_; }

 private:
  PgcaBlock<T> pgca_;
  FfnBlock<T> ffn_;
};

enum class RunMode { kTrain, kEval };

// The scene restorer: shallow 3x3 embed, 4 encoder levels with pixel-unshuffle
// downsampling, mirrored decoder with pixel-shuffle upsampling and concat+1x1
// skip fusion, 3x3 reconstruction, global residual onto the input.
template <class T>
class Restorer {
 public:
  explicit Restorer(const RestorerConfig& cfg, uint64_t seed = 7) : cfg_(cfg) {
    cfg_.validate();
    const int64_t C = cfg_.base_channels;
    {
      auto rs = rng::stream(seed, "shallow.w");
      shallow_w_ = store_.add("shallow.w", nn::conv_init<T>({3, 3, 3, C}, rs));
      shallow_b_ = store_.add("shallow.b", TensorT<T>::zeros(Shape{C}));
    }
    for (int l = 1; l <= RestorerConfig::kLevels; ++l) {
      const int64_t c = cfg_.channels_at(l);
      const int heads = cfg_.heads_per_level[static_cast<size_t>(l - 1)];
      const int nblocks = cfg_.blocks_per_level[static_cast<size_t>(l - 1)];
      for (int b = 0; b < nblocks; ++b)
        enc_blocks_[static_cast<size_t>(l - 1)].emplace_back(
            c, heads, cfg_.ffn_expansion, store_,
            "enc" + std::to_string(l) + ".block" + std::to_string(b), seed);
    }
    for (int l = 1; l < RestorerConfig::kLevels; ++l) {
      const int64_t c = cfg_.channels_at(l);
      auto rs = rng::stream(seed, "down" + std::to_string(l) + ".w");
      down_w_[static_cast<size_t>(l - 1)] = store_.add(
          "down" + std::to_string(l) + ".w", nn::conv_init<T>({1, 1, 4 * c, 2 * c}, rs));
    }
    for (int l = RestorerConfig::kLevels - 1; l >= 1; --l) {
      const int64_t c = cfg_.channels_at(l);
      {
        auto rs = rng::stream(seed, "up" + std::to_string(l) + ".w");
        up_w_[static_cast<size_t>(l - 1)] = store_.add(
            "up" + std::to_string(l) + ".w", nn::conv_init<T>({1, 1, 2 * c, 4 * c}, rs));
      }
      {
        auto rs = rng::stream(seed, "fuse" + std::to_string(l) + ".w");
        fuse_w_[static_cast<size_t>(l - 1)] = store_.add(
            "fuse" + std::to_string(l) + ".w", nn::conv_init<T>({1, 1, 2 * c, c}, rs));
      }
      const int heads = cfg_.heads_per_level[static_cast<size_t>(l - 1)];
      const int nblocks = cfg_.blocks_per_level[static_cast<size_t>(l - 1)];
      for (int b = 0; b < nblocks; ++b)
        dec_blocks_[static_cast<size_t>(l - 1)].emplace_back(
            c, heads, cfg_.ffn_expansion, store_,
            "dec" + std::to_string(l) + ".block" + std::to_string(b), seed);
    }
    // zero init: the restorer starts as the identity map (global residual)
    final_w_ = store_.add("final.w", TensorT<T>::zeros(Shape{3, 3, cfg_.base_channels, 3}));
    final_b_ = store_.add("final.b", TensorT<T>::zeros(Shape{3}));
  }

  // x: [N,H,W,3] with H,W divisible by 8; y_text: [N,512].
  VarT<T> forward(const VarT<T>& x, const VarT<T>& y_text, RunMode mode) const {
    if (x.shape().size() != 4 || x.shape()[3] != 3)
      throw ShapeError("restorer input must be [N,H,W,3], got " + shape_str(x.shape()));
    const int64_t H = x.shape()[1], W = x.shape()[2];
    if (H % 8 != 0 || W % 8 != 0)
      throw ShapeError("restorer input dims must be multiples of 8, got " + std::to_string(H) +
                       "x" + std::to_string(W));
    if (y_text.shape() != Shape{x.shape()[0], RestorerConfig::kTextDim})
      throw ShapeError("text feature must be [N,512], got " + shape_str(y_text.shape()));
    const bool tg = cfg_.text_guidance;

    auto run_level = [&](const std::vector<CTransAggBlock<T>>& blocks, VarT<T> t) {
      for (const auto& b : blocks) t = b.forward(t, y_text, tg);
      return t;
    };

    auto x1 = conv2d(x, shallow_w_, shallow_b_, 1);
    auto e1 = run_level(enc_blocks_[0], x1);
    auto e2 = run_level(enc_blocks_[1], conv2d(pixel_unshuffle2(e1), down_w_[0], VarT<T>(), 0));
    auto e3 = run_level(enc_blocks_[2], conv2d(pixel_unshuffle2(e2), down_w_[1], VarT<T>(), 0));
    auto latent = run_level(enc_blocks_[3], conv2d(pixel_unshuffle2(e3), down_w_[2], VarT<T>(), 0));

    auto up = [&](const VarT<T>& t, int l) {
      return pixel_shuffle2(conv2d(t, up_w_[static_cast<size_t>(l - 1)], VarT<T>(), 0));
    };
    auto fuse = [&](const VarT<T>& dec, const VarT<T>& skip, int l) {
      return conv2d(concat_lastdim(dec, skip), fuse_w_[static_cast<size_t>(l - 1)], VarT<T>(), 0);
    };

    auto d3 = run_level(dec_blocks_[2], fuse(up(latent, 3), e3, 3));
    auto d2 = run_level(dec_blocks_[1], fuse(up(d3, 2), e2, 2));
    auto d1 = run_level(dec_blocks_[0], fuse(up(d2, 1), e1, 1));

    auto out = add(conv2d(d1, final_w_, final_b_, 1), x);
    if (mode == RunMode::kEval) {
      // clamp only at inference; training keeps gradients at saturation
      TensorT<T> clamped = out.val();
      for (auto& v : clamped.data) v = v < T(0) ? T(0) : (v > T(1) ? T(1) : v);
      return make_leaf(std::move(clamped), false);
    }
    return out;
  }

  nn::ParamStore<T>& params() { return store_; }
  const nn::ParamStore<T>& params() const { return store_; }
  const RestorerConfig& config() const { return cfg_; }
  void set_text_guidance(bool on) { cfg_.text_guidance = on; }

  const std::array<std::vector<CTransAggBlock<T>>, 4>& encoder_blocks() const {
    return enc_blocks_;
  }

 private:
  RestorerConfig cfg_;
  nn::ParamStore<T> store_;
  VarT<T> shallow_w_, shallow_b_;
  std::array<std::vector<CTransAggBlock<T>>, 4> enc_blocks_;
  std::array<VarT<T>, 3> down_w_;  // level l -> l+1, index l-1
  std::array<VarT<T>, 3> up_w_;    // level l+1 -> l, index l-1
  std::array<VarT<T>, 3> fuse_w_;
  std::array<std::vector<CTransAggBlock<T>>, 4> dec_blocks_;  // index 0..2 used
  VarT<T> final_w_, final_b_;
};

// Single-image convenience: restores an [H,W,3] image (dims multiple of 8)
// with a normalized 512-d text feature; output clamped to [0,1].
template <class T>
TensorT<T> restore_image(const Restorer<T>& model, const TensorT<T>& image,
                         const TensorT<T>& y_text) {
  NoGradGuard ng;
  if (image.ndim() != 3 || image.dim(2) != 3)
    throw ShapeError("restore_image expects [H,W,3]");
  auto x = make_leaf(TensorT<T>(Shape{1, image.dim(0), image.dim(1), 3}, image.data), false);
  auto yt = make_leaf(TensorT<T>(Shape{1, RestorerConfig::kTextDim}, y_text.data), false);
  auto out = model.forward(x, yt, RunMode::kEval);
  return TensorT<T>(Shape{image.dim(0), image.dim(1), 3}, out.val().data);
}

}  // namespace vlur::restorer
