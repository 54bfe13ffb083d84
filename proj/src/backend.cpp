#include "vlur/classifier/backend.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>

#include "vlur/core/kernels.hpp"
#include "vlur/core/rng.hpp"
#include "vlur/image/image.hpp"
#include "vlur/io/tensor_archive.hpp"
#include "vlur/synth/degrade.hpp"

namespace vlur::clf {

namespace {

constexpr int64_t kStubInputSize = 64;

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    } else if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(cur);
  return tokens;
}

// Hashed bag-of-words: each token scatters signed weight into 8 slots.
void hash_text_into(const std::string& text, float* out, uint64_t salt) {
  for (const auto& tok : tokenize(text)) {
    uint64_t h = rng::mix(fnv1a64(tok), salt);
    for (int j = 0; j < 8; ++j) {
      const uint64_t r = rng::splitmix64(h);
      const int64_t idx = static_cast<int64_t>(r % kEmbeddingDim);
      const float sign = (r >> 32) & 1 ? 1.0f : -1.0f;
      out[idx] += sign;
    }
  }
}

// Plain stride-2 3x3 convolution + ReLU for the stub tower (NHWC).
Tensorf conv3x3_s2_relu(const Tensorf& x, const Tensorf& w, const Tensorf& b) {
  const int64_t h = x.dim(0), wd = x.dim(1), cin = x.dim(2), cout = w.dim(3);
  const int64_t oh = h / 2, ow = wd / 2;
  Tensorf y(Shape{oh, ow, cout});
  for (int64_t oy = 0; oy < oh; ++oy)
    for (int64_t ox = 0; ox < ow; ++ox)
      for (int64_t co = 0; co < cout; ++co) {
        float acc = b[co];
        for (int64_t ky = 0; ky < 3; ++ky)
          for (int64_t kx = 0; kx < 3; ++kx) {
            const int64_t iy = 2 * oy + ky - 1;
            const int64_t ix = 2 * ox + kx - 1;
            if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
            for (int64_t ci = 0; ci < cin; ++ci)
              acc += x.at(iy, ix, ci) * w.at(ky, kx, ci, co);
          }
        y.at(oy, ox, co) = acc > 0.0f ? acc : 0.0f;
      }
  return y;
}

void gap_gmp(const Tensorf& fmap, std::vector<float>& out) {
  const int64_t hw = fmap.dim(0) * fmap.dim(1), c = fmap.dim(2);
  for (int64_t ci = 0; ci < c; ++ci) {
    double sum = 0;
    float mx = -1e30f;
    for (int64_t p = 0; p < hw; ++p) {
      const float v = fmap[p * c + ci];
      sum += v;
      mx = std::max(mx, v);
    }
    out.push_back(static_cast<float>(sum / static_cast<double>(hw)));
    out.push_back(mx);
  }
}

float luminance(const Tensorf& im, int64_t y, int64_t x) {
  return 0.299f * im.at(y, x, 0) + 0.587f * im.at(y, x, 1) + 0.114f * im.at(y, x, 2);
}

// Hand statistics that make the degradation families separable: exposure,
// saturation/veil, high-frequency energy and streak orientation.
void image_stats(const Tensorf& im, std::vector<float>& out) {
  const int64_t h = im.dim(0), w = im.dim(1);
  const int64_t npix = h * w;

  for (int64_t c = 0; c < 3; ++c) {
    double sum = 0, sum2 = 0;
    float mn = 1e9f, mx = -1e9f;
    for (int64_t p = 0; p < npix; ++p) {
      const float v = im[p * 3 + c];
      sum += v;
      sum2 += static_cast<double>(v) * v;
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    const double mean = sum / npix;
    out.push_back(static_cast<float>(mean));
    out.push_back(static_cast<float>(std::sqrt(std::max(0.0, sum2 / npix - mean * mean))));
    out.push_back(mn);
    out.push_back(mx);
  }

  std::vector<float> lum(static_cast<size_t>(npix));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) lum[static_cast<size_t>(y * w + x)] = luminance(im, y, x);

  std::vector<float> sorted = lum;
  std::sort(sorted.begin(), sorted.end());
  for (double q : {0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99})
    out.push_back(sorted[static_cast<size_t>(q * (npix - 1))]);

  float hist[16] = {};
  for (float v : lum) {
    int bin = static_cast<int>(v * 16.0f);
    bin = std::clamp(bin, 0, 15);
    hist[bin] += 1.0f / static_cast<float>(npix);
  }
  for (float hv : hist) out.push_back(hv);

  double sat_sum = 0, sat_sum2 = 0;
  for (int64_t p = 0; p < npix; ++p) {
    const float r = im[p * 3], g = im[p * 3 + 1], b = im[p * 3 + 2];
    const float s = std::max({r, g, b}) - std::min({r, g, b});
    sat_sum += s;
    sat_sum2 += static_cast<double>(s) * s;
  }
  const double sat_mean = sat_sum / npix;
  out.push_back(static_cast<float>(sat_mean));
  out.push_back(static_cast<float>(std::sqrt(std::max(0.0, sat_sum2 / npix - sat_mean * sat_mean))));

  // dark channel over 3x3 neighborhoods
  double dark_sum = 0;
  for (int64_t y = 1; y + 1 < h; ++y)
    for (int64_t x = 1; x + 1 < w; ++x) {
      float mn = 1e9f;
      for (int64_t dy = -1; dy <= 1; ++dy)
        for (int64_t dx = -1; dx <= 1; ++dx)
          for (int64_t c = 0; c < 3; ++c) mn = std::min(mn, im.at(y + dy, x + dx, c));
      dark_sum += mn;
    }
  out.push_back(static_cast<float>(dark_sum / static_cast<double>((h - 2) * (w - 2))));

  // gradient statistics
  double gx_sum = 0, gy_sum = 0, gm_sum = 0, gm_sum2 = 0;
  std::vector<float> gmag;
  gmag.reserve(static_cast<size_t>((h - 1) * (w - 1)));
  for (int64_t y = 0; y + 1 < h; ++y)
    for (int64_t x = 0; x + 1 < w; ++x) {
      const float gx = lum[static_cast<size_t>(y * w + x + 1)] - lum[static_cast<size_t>(y * w + x)];
      const float gy = lum[static_cast<size_t>((y + 1) * w + x)] - lum[static_cast<size_t>(y * w + x)];
      const float gm = std::sqrt(gx * gx + gy * gy);
      gx_sum += std::abs(gx);
      gy_sum += std::abs(gy);
      gm_sum += gm;
      gm_sum2 += static_cast<double>(gm) * gm;
      gmag.push_back(gm);
    }
  const double ng = static_cast<double>(gmag.size());
  out.push_back(static_cast<float>(gx_sum / ng));
  out.push_back(static_cast<float>(gy_sum / ng));
  const double gm_mean = gm_sum / ng;
  out.push_back(static_cast<float>(gm_mean));
  out.push_back(static_cast<float>(std::sqrt(std::max(0.0, gm_sum2 / ng - gm_mean * gm_mean))));
  std::sort(gmag.begin(), gmag.end());
  out.push_back(gmag[static_cast<size_t>(0.95 * (ng - 1))]);

  // 5x5 local means, reused by the line responses and the speck fraction
  std::vector<float> local5(static_cast<size_t>(npix), 0.0f);
  for (int64_t y = 2; y + 2 < h; ++y)
    for (int64_t x = 2; x + 2 < w; ++x) {
      float nb = 0;
      for (int64_t dy = -2; dy <= 2; ++dy)
        for (int64_t dx = -2; dx <= 2; ++dx) nb += lum[static_cast<size_t>((y + dy) * w + (x + dx))];
      local5[static_cast<size_t>(y * w + x)] = nb / 25.0f;
    }

  // oriented 5-tap line responses at 0/45/90/135 degrees: a bright streak
  // keeps its line mean above the local mean along its own direction only
  const int64_t dirs[4][2] = {{0, 1}, {1, 1}, {1, 0}, {1, -1}};
  for (const auto& d : dirs) {
    double resp = 0;
    int64_t cnt = 0;
    for (int64_t y = 2; y + 2 < h; ++y)
      for (int64_t x = 2; x + 2 < w; ++x) {
        float line = 0;
        for (int64_t k = -2; k <= 2; ++k)
          line += lum[static_cast<size_t>((y + k * d[0]) * w + (x + k * d[1]))];
        line *= 0.2f;
        resp += std::max(0.0f, line - local5[static_cast<size_t>(y * w + x)]);
        ++cnt;
      }
    out.push_back(static_cast<float>(resp / static_cast<double>(cnt)));
  }

  // bright speck fraction: pixels well above their 5x5 neighborhood mean
  int64_t specks = 0, total = 0;
  for (int64_t y = 2; y + 2 < h; ++y)
    for (int64_t x = 2; x + 2 < w; ++x) {
      if (lum[static_cast<size_t>(y * w + x)] > local5[static_cast<size_t>(y * w + x)] + 0.12f)
        ++specks;
      ++total;
    }
  out.push_back(static_cast<float>(specks) / static_cast<float>(total));

  // contrast-normalized particle statistics: haze and low light rescale the
  // luminance range, so streak/flake signatures are measured in sigma units
  // of the normalized image where they stay comparable across exposures
  {
    double lsum = 0, lsum2 = 0;
    for (float v : lum) {
      lsum += v;
      lsum2 += static_cast<double>(v) * v;
    }
    const double lmean = lsum / npix;
    const double lstd = std::max(1e-3, std::sqrt(std::max(0.0, lsum2 / npix - lmean * lmean)));
    std::vector<float> lumn(static_cast<size_t>(npix));
    for (int64_t i = 0; i < npix; ++i)
      lumn[static_cast<size_t>(i)] = static_cast<float>((lum[static_cast<size_t>(i)] - lmean) / lstd);

    std::vector<float> local5n(static_cast<size_t>(npix), 0.0f);
    for (int64_t y = 2; y + 2 < h; ++y)
      for (int64_t x = 2; x + 2 < w; ++x) {
        float nb = 0;
        for (int64_t dy = -2; dy <= 2; ++dy)
          for (int64_t dx = -2; dx <= 2; ++dx)
            nb += lumn[static_cast<size_t>((y + dy) * w + (x + dx))];
        local5n[static_cast<size_t>(y * w + x)] = nb / 25.0f;
      }

    // speck fractions at three prominence thresholds
    for (float thr : {0.5f, 1.0f, 2.0f}) {
      int64_t cnt = 0, tot = 0;
      for (int64_t y = 2; y + 2 < h; ++y)
        for (int64_t x = 2; x + 2 < w; ++x) {
          if (lumn[static_cast<size_t>(y * w + x)] >
              local5n[static_cast<size_t>(y * w + x)] + thr)
            ++cnt;
          ++tot;
        }
      out.push_back(static_cast<float>(cnt) / static_cast<float>(tot));
    }

    // oriented line responses on the normalized image + anisotropy ratio
    float resp_n[4];
    for (int di = 0; di < 4; ++di) {
      const int64_t* d = dirs[di];
      double resp = 0;
      int64_t cnt = 0;
      for (int64_t y = 2; y + 2 < h; ++y)
        for (int64_t x = 2; x + 2 < w; ++x) {
          float line = 0;
          for (int64_t k = -2; k <= 2; ++k)
            line += lumn[static_cast<size_t>((y + k * d[0]) * w + (x + k * d[1]))];
          line *= 0.2f;
          resp += std::max(0.0f, line - local5n[static_cast<size_t>(y * w + x)]);
          ++cnt;
        }
      resp_n[di] = static_cast<float>(resp / static_cast<double>(cnt));
      out.push_back(resp_n[di]);
    }
    // rain streaks run near-vertical: dirs[2] is the vertical line response
    out.push_back((resp_n[2] + 1e-4f) / (resp_n[0] + 1e-4f));

    // gradient stats in sigma units
    double gsum = 0;
    std::vector<float> gm;
    gm.reserve(static_cast<size_t>((h - 1) * (w - 1)));
    for (int64_t y = 0; y + 1 < h; ++y)
      for (int64_t x = 0; x + 1 < w; ++x) {
        const float gx = lumn[static_cast<size_t>(y * w + x + 1)] - lumn[static_cast<size_t>(y * w + x)];
        const float gy = lumn[static_cast<size_t>((y + 1) * w + x)] - lumn[static_cast<size_t>(y * w + x)];
        const float g = std::sqrt(gx * gx + gy * gy);
        gsum += g;
        gm.push_back(g);
      }
    std::sort(gm.begin(), gm.end());
    out.push_back(static_cast<float>(gsum / static_cast<double>(gm.size())));
    out.push_back(gm[static_cast<size_t>(0.95 * (static_cast<double>(gm.size()) - 1))]);
    out.push_back(gm[static_cast<size_t>(0.99 * (static_cast<double>(gm.size()) - 1))]);

    // particle persistence across scale: blobs survive 2x downsampling,
    // thin streaks mostly vanish
    const int64_t h2 = h / 2, w2 = w / 2;
    std::vector<float> lumd(static_cast<size_t>(h2 * w2));
    for (int64_t y = 0; y < h2; ++y)
      for (int64_t x = 0; x < w2; ++x)
        lumd[static_cast<size_t>(y * w2 + x)] =
            0.25f * (lumn[static_cast<size_t>(2 * y * w + 2 * x)] +
                     lumn[static_cast<size_t>(2 * y * w + 2 * x + 1)] +
                     lumn[static_cast<size_t>((2 * y + 1) * w + 2 * x)] +
                     lumn[static_cast<size_t>((2 * y + 1) * w + 2 * x + 1)]);
    int64_t cnt2 = 0, tot2 = 0;
    for (int64_t y = 2; y + 2 < h2; ++y)
      for (int64_t x = 2; x + 2 < w2; ++x) {
        float nb = 0;
        for (int64_t dy = -2; dy <= 2; ++dy)
          for (int64_t dx = -2; dx <= 2; ++dx)
            nb += lumd[static_cast<size_t>((y + dy) * w2 + (x + dx))];
        nb /= 25.0f;
        if (lumd[static_cast<size_t>(y * w2 + x)] > nb + 0.75f) ++cnt2;
        ++tot2;
      }
    out.push_back(static_cast<float>(cnt2) / static_cast<float>(tot2));
  }
}

constexpr int64_t kMaxStubFeatures = 256;

class StubBackend final : public EncoderBackend {
 public:
  explicit StubBackend(uint64_t seed) : seed_(seed) {
    auto rs = rng::stream(seed, "stub-backend");
    w1_ = Tensorf::randn(Shape{3, 3, 3, 16}, rs, std::sqrt(2.0f / (9 * 3)));
    b1_ = Tensorf::zeros(Shape{16});
    w2_ = Tensorf::randn(Shape{3, 3, 16, 32}, rs, std::sqrt(2.0f / (9 * 16)));
    b2_ = Tensorf::zeros(Shape{32});
    auto prs = rng::stream(seed, "stub-projection");
    proj_ = Tensorf::randn(Shape{kMaxStubFeatures, kEmbeddingDim}, prs);
  }

  std::string identifier() const override {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "stub-cnn-bow-v1/seed=%llu",
                  static_cast<unsigned long long>(seed_));
    return buf;
  }

  Tensorf encode_text(const std::vector<std::string>& prompts) override {
    Tensorf out(Shape{static_cast<int64_t>(prompts.size()), kEmbeddingDim});
    for (size_t i = 0; i < prompts.size(); ++i)
      hash_text_into(prompts[i], out.ptr() + static_cast<int64_t>(i) * kEmbeddingDim,
                     rng::mix(seed_, rng::tag("stub-text")));
    return out;
  }

  Tensorf encode_image(const Tensorf& image) override {
    img::check_image(image, "StubBackend::encode_image");
    const Tensorf im = (image.dim(0) == kStubInputSize && image.dim(1) == kStubInputSize)
                           ? image
                           : img::resize_bilinear(image, kStubInputSize, kStubInputSize);
    std::vector<float> feats;
    feats.reserve(200);
    image_stats(im, feats);
    const Tensorf f1 = conv3x3_s2_relu(im, w1_, b1_);
    const Tensorf f2 = conv3x3_s2_relu(f1, w2_, b2_);
    gap_gmp(f1, feats);
    gap_gmp(f2, feats);
    if (static_cast<int64_t>(feats.size()) > kMaxStubFeatures)
      throw ConfigError("stub feature block exceeds projection width");

    // fixed random projection of the feature block into the embedding space
    Tensorf out(Shape{kEmbeddingDim});
    const float scale = 1.0f / std::sqrt(static_cast<float>(feats.size()));
    for (size_t fi = 0; fi < feats.size(); ++fi) {
      const float fv = feats[fi] * scale;
      const float* prow = proj_.ptr() + static_cast<int64_t>(fi) * kEmbeddingDim;
      for (int64_t d = 0; d < kEmbeddingDim; ++d) out[d] += fv * prow[d];
    }
    return out;
  }

  uint64_t weights_hash() const override {
    uint64_t h = seed_;
    h = fnv1a64(w1_.data.data(), w1_.data.size() * sizeof(float), h);
    h = fnv1a64(w2_.data.data(), w2_.data.size() * sizeof(float), h);
    h = fnv1a64(proj_.data.data(), proj_.data.size() * sizeof(float), h);
    return h;
  }

 private:
  uint64_t seed_;
  Tensorf w1_, b1_, w2_, b2_;
  Tensorf proj_;
};

// Image tower: three stride-2 convs, global average pool, linear head.
struct PretrainedTower {
  Tensorf c1w, c1b, c2w, c2b, c3w, c3b, head_w, head_b;
};

class PretrainedBackend final : public EncoderBackend {
 public:
  explicit PretrainedBackend(const std::string& path) : path_(path) {
    io::Archive a = io::load_archive(path);
    auto need = [&](const std::string& name) -> Tensorf {
      auto it = a.tensors.find(name);
      if (it == a.tensors.end())
        throw MigrationError("pretrained weights missing tensor " + name + " in " + path);
      return it->second;
    };
    text_table_ = need("text.embeddings");
    tower_.c1w = need("image.conv1.w");
    tower_.c1b = need("image.conv1.b");
    tower_.c2w = need("image.conv2.w");
    tower_.c2b = need("image.conv2.b");
    tower_.c3w = need("image.conv3.w");
    tower_.c3b = need("image.conv3.b");
    tower_.head_w = need("image.head.w");
    tower_.head_b = need("image.head.b");
    if (!a.meta.contains("prompts"))
      throw MigrationError("pretrained weights missing prompt list in " + path);
    for (const auto& p : a.meta["prompts"]) prompts_.push_back(p.get<std::string>());
    if (static_cast<int64_t>(prompts_.size()) != text_table_.dim(0))
      throw MigrationError("pretrained prompt list does not match text table rows");
    hash_ = a.content_hash;
  }

  std::string identifier() const override {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "pretrained-encoder-v1/weights=0x%016llx",
                  static_cast<unsigned long long>(hash_));
    return buf;
  }

  Tensorf encode_text(const std::vector<std::string>& prompts) override {
    Tensorf out(Shape{static_cast<int64_t>(prompts.size()), kEmbeddingDim});
    for (size_t i = 0; i < prompts.size(); ++i) {
      auto it = std::find(prompts_.begin(), prompts_.end(), prompts[i]);
      if (it == prompts_.end())
        throw ClassificationError("prompt not present in pretrained text table: " + prompts[i]);
      const int64_t row = it - prompts_.begin();
      std::copy_n(text_table_.ptr() + row * kEmbeddingDim, kEmbeddingDim,
                  out.ptr() + static_cast<int64_t>(i) * kEmbeddingDim);
    }
    return out;
  }

  Tensorf encode_image(const Tensorf& image) override {
    img::check_image(image, "PretrainedBackend::encode_image");
    const Tensorf im = (image.dim(0) == kStubInputSize && image.dim(1) == kStubInputSize)
                           ? image
                           : img::resize_bilinear(image, kStubInputSize, kStubInputSize);
    Tensorf f = conv3x3_s2_relu(im, tower_.c1w, tower_.c1b);
    f = conv3x3_s2_relu(f, tower_.c2w, tower_.c2b);
    f = conv3x3_s2_relu(f, tower_.c3w, tower_.c3b);
    const int64_t c = f.dim(2), hw = f.dim(0) * f.dim(1);
    std::vector<float> pooled(static_cast<size_t>(c), 0.0f);
    for (int64_t p = 0; p < hw; ++p)
      for (int64_t ci = 0; ci < c; ++ci) pooled[static_cast<size_t>(ci)] += f[p * c + ci];
    for (auto& v : pooled) v /= static_cast<float>(hw);
    Tensorf out(Shape{kEmbeddingDim});
    for (int64_t d = 0; d < kEmbeddingDim; ++d) {
      float acc = tower_.head_b[d];
      for (int64_t ci = 0; ci < c; ++ci) acc += pooled[static_cast<size_t>(ci)] * tower_.head_w.at(ci, d);
      out[d] = acc;
    }
    return out;
  }

  uint64_t weights_hash() const override { return hash_; }

 private:
  std::string path_;
  Tensorf text_table_;
  PretrainedTower tower_;
  std::vector<std::string> prompts_;
  uint64_t hash_ = 0;
};

}  // namespace

std::unique_ptr<EncoderBackend> make_stub_backend(uint64_t seed) {
  return std::make_unique<StubBackend>(seed);
}

std::unique_ptr<EncoderBackend> make_pretrained_backend(const std::string& weights_path) {
  if (weights_path.empty())
    throw ConfigError(
        "pretrained backend requires classifier.pretrained_path (or VLUR_CACHE) pointing at a "
        "weights archive; use backend=stub to run without external weights");
  return std::make_unique<PretrainedBackend>(weights_path);
}

std::unique_ptr<EncoderBackend> make_backend(const std::string& name,
                                             const std::string& pretrained_path) {
  if (name == "stub") return make_stub_backend();
  if (name == "pretrained") {
    std::string path = pretrained_path;
    if (path.empty()) {
      // fall back to the weight cache directory
      if (const char* cache = std::getenv("VLUR_CACHE"))
        path = std::string(cache) + "/pretrained_encoder.vlur";
    }
    return make_pretrained_backend(path);
  }
  throw ConfigError("unknown classifier backend: " + name + " (expected stub|pretrained)");
}

void write_random_pretrained_weights(const std::string& path, uint64_t seed) {
  auto rs = rng::stream(seed, "pretrained-weights");
  io::Archive a;
  a.tensors["text.embeddings"] = Tensorf::randn(Shape{11, kEmbeddingDim}, rs);
  a.tensors["image.conv1.w"] = Tensorf::randn(Shape{3, 3, 3, 16}, rs, std::sqrt(2.0f / 27));
  a.tensors["image.conv1.b"] = Tensorf::zeros(Shape{16});
  a.tensors["image.conv2.w"] = Tensorf::randn(Shape{3, 3, 16, 32}, rs, std::sqrt(2.0f / 144));
  a.tensors["image.conv2.b"] = Tensorf::zeros(Shape{32});
  a.tensors["image.conv3.w"] = Tensorf::randn(Shape{3, 3, 32, 64}, rs, std::sqrt(2.0f / 288));
  a.tensors["image.conv3.b"] = Tensorf::zeros(Shape{64});
  a.tensors["image.head.w"] = Tensorf::randn(Shape{64, kEmbeddingDim}, rs, std::sqrt(1.0f / 64));
  a.tensors["image.head.b"] = Tensorf::zeros(Shape{kEmbeddingDim});
  nlohmann::json prompts = nlohmann::json::array();
  for (auto d : synth::all_degradations())
    prompts.push_back("The image has " + synth::phrase_of(d) + " degradation");
  a.meta["prompts"] = prompts;
  a.meta["note"] = "randomly initialized tower for contract tests";
  io::save_archive(path, a);
}

}  // namespace vlur::clf
