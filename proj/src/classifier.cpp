#include "vlur/classifier/classifier.hpp"

#include <algorithm>
#include <cmath>

#include "vlur/core/nn.hpp"
#include "vlur/core/ops.hpp"

namespace vlur::clf {

std::vector<std::string> build_prompts() {
  std::vector<std::string> prompts;
  prompts.reserve(synth::kNumDegradations);
  for (auto d : synth::all_degradations())
    prompts.push_back("The image has " + synth::phrase_of(d) + " degradation");
  return prompts;
}

namespace {

void normalize_rows(Tensorf& m) {
  const int64_t rows = m.dim(0), d = m.dim(1);
  for (int64_t r = 0; r < rows; ++r) {
    double s = 0;
    for (int64_t i = 0; i < d; ++i) s += static_cast<double>(m[r * d + i]) * m[r * d + i];
    const float inv = static_cast<float>(1.0 / std::sqrt(s + 1e-24));
    for (int64_t i = 0; i < d; ++i) m[r * d + i] *= inv;
  }
}

float norm_of(const Tensorf& v) {
  double s = 0;
  for (float x : v.data) s += static_cast<double>(x) * x;
  return static_cast<float>(std::sqrt(s));
}

}  // namespace

Tensorf encode_prompts(EncoderBackend& backend) {
  Tensorf m;
  try {
    m = backend.encode_text(build_prompts());
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw ClassificationError("text backend '" + backend.identifier() + "' failed: " + e.what());
  }
  if (m.ndim() != 2 || m.dim(0) != synth::kNumDegradations || m.dim(1) != kEmbeddingDim)
    throw ClassificationError("backend '" + backend.identifier() +
                              "' returned a malformed text matrix " + shape_str(m.shape));
  if (!m.all_finite())
    throw ClassificationError("backend '" + backend.identifier() +
                              "' produced non-finite text embeddings");
  normalize_rows(m);
  return m;
}

Classification classify_embedding(const Tensorf& image_embedding, const Tensorf& text_matrix,
                                  float temperature) {
  if (image_embedding.numel() != kEmbeddingDim)
    throw ClassificationError("image embedding must be 512-d");
  const float n = norm_of(image_embedding);
  if (!(n > 1e-12f) || !image_embedding.all_finite())
    throw ClassificationError("degenerate image embedding (zero norm or non-finite)");

  std::vector<double> logits(synth::kNumDegradations);
  for (int k = 0; k < synth::kNumDegradations; ++k) {
    double dot = 0;
    for (int64_t i = 0; i < kEmbeddingDim; ++i)
      dot += static_cast<double>(image_embedding[i]) / n * text_matrix[k * kEmbeddingDim + i];
    logits[static_cast<size_t>(k)] = static_cast<double>(temperature) * dot;
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0;
  Classification out;
  out.probs.resize(synth::kNumDegradations);
  for (int k = 0; k < synth::kNumDegradations; ++k) {
    const double e = std::exp(logits[static_cast<size_t>(k)] - mx);
    out.probs[static_cast<size_t>(k)] = static_cast<float>(e);
    sum += e;
  }
  int best = 0;
  for (int k = 0; k < synth::kNumDegradations; ++k) {
    out.probs[static_cast<size_t>(k)] = static_cast<float>(out.probs[static_cast<size_t>(k)] / sum);
    // strictly-greater keeps the lowest index on ties
    if (out.probs[static_cast<size_t>(k)] > out.probs[static_cast<size_t>(best)]) best = k;
  }
  out.type = static_cast<synth::Degradation>(best);
  return out;
}

SceneClassifier::SceneClassifier(std::shared_ptr<EncoderBackend> backend, float temperature)
    : backend_(std::move(backend)), temperature_(temperature) {
  adapter_w_ = nn::identity_matrix<float>(kEmbeddingDim);
  adapter_b_ = Tensorf::zeros(Shape{kEmbeddingDim});
}

const Tensorf& SceneClassifier::text_matrix() {
  if (text_matrix_.numel() == 0) text_matrix_ = encode_prompts(*backend_);
  return text_matrix_;
}

Tensorf SceneClassifier::text_feature_for_type(synth::Degradation type) {
  const Tensorf& m = text_matrix();
  Tensorf out(Shape{kEmbeddingDim});
  std::copy_n(m.ptr() + static_cast<int64_t>(type) * kEmbeddingDim, kEmbeddingDim, out.ptr());
  return out;
}

Tensorf SceneClassifier::image_embedding(const Tensorf& image) {
  Tensorf raw;
  try {
    raw = backend_->encode_image(image);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw ClassificationError("image backend '" + backend_->identifier() + "' failed: " + e.what());
  }
  if (raw.numel() != kEmbeddingDim)
    throw ClassificationError("backend '" + backend_->identifier() +
                              "' returned a malformed image embedding");
  Tensorf out(Shape{kEmbeddingDim});
  for (int64_t d = 0; d < kEmbeddingDim; ++d) {
    float acc = adapter_b_[d];
    for (int64_t i = 0; i < kEmbeddingDim; ++i) acc += raw[i] * adapter_w_.at(i, d);
    out[d] = acc;
  }
  const float n = norm_of(out);
  if (!(n > 1e-12f)) throw ClassificationError("adapter produced a zero image embedding");
  for (auto& v : out.data) v /= n;
  return out;
}

Classification SceneClassifier::classify(const Tensorf& image) {
  return classify_embedding(image_embedding(image), text_matrix(), temperature_);
}

AccuracyReport SceneClassifier::finetune_adapter(const std::vector<Tensorf>& train_embeddings,
                                                 const std::vector<int>& train_labels,
                                                 const std::vector<Tensorf>& holdout_embeddings,
                                                 const std::vector<int>& holdout_labels,
                                                 int epochs, double lr, uint64_t seed) {
  if (train_embeddings.empty()) throw DataError("adapter fine-tuning requires a nonempty set");
  if (train_embeddings.size() != train_labels.size())
    throw DataError("embedding/label count mismatch");

  const int64_t M = static_cast<int64_t>(train_embeddings.size());
  Tensorf feats(Shape{M, kEmbeddingDim});
  for (int64_t i = 0; i < M; ++i)
    std::copy_n(train_embeddings[static_cast<size_t>(i)].ptr(), kEmbeddingDim,
                feats.ptr() + i * kEmbeddingDim);

  // text anchors, transposed for the logit matmul
  const Tensorf& tm = text_matrix();
  Tensorf tmT(Shape{kEmbeddingDim, synth::kNumDegradations});
  for (int k = 0; k < synth::kNumDegradations; ++k)
    for (int64_t d = 0; d < kEmbeddingDim; ++d) tmT.at(d, k) = tm.at(k, d);

  nn::ParamStore<float> store;
  auto w = store.add("adapter.w", adapter_w_);
  auto b = store.add("adapter.b", adapter_b_);
  auto anchors = make_leaf(tmT, false);
  nn::Adam<float> opt(store);

  auto evaluate = [&](const std::vector<Tensorf>& embs, const std::vector<int>& labels) {
    if (embs.empty()) return 0.0;
    int correct = 0;
    for (size_t i = 0; i < embs.size(); ++i) {
      Tensorf adapted(Shape{kEmbeddingDim});
      for (int64_t d = 0; d < kEmbeddingDim; ++d) {
        float acc = b.val()[d];
        for (int64_t j = 0; j < kEmbeddingDim; ++j) acc += embs[i][j] * w.val().at(j, d);
        adapted[d] = acc;
      }
      const auto cls = classify_embedding(adapted, tm, temperature_);
      if (static_cast<int>(cls.type) == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(embs.size());
  };

  const int64_t batch = std::min<int64_t>(64, M);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    // deterministic shuffled order per epoch
    std::vector<int64_t> order(static_cast<size_t>(M));
    for (int64_t i = 0; i < M; ++i) order[static_cast<size_t>(i)] = i;
    auto rs = rng::stream(seed, "adapter-shuffle", {static_cast<uint64_t>(epoch)});
    for (int64_t i = M - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(rs.uniform_int(i + 1))]);

    for (int64_t start = 0; start < M; start += batch) {
      const int64_t bs = std::min(batch, M - start);
      Tensorf bx(Shape{bs, kEmbeddingDim});
      std::vector<int> by(static_cast<size_t>(bs));
      for (int64_t i = 0; i < bs; ++i) {
        const int64_t src = order[static_cast<size_t>(start + i)];
        std::copy_n(feats.ptr() + src * kEmbeddingDim, kEmbeddingDim, bx.ptr() + i * kEmbeddingDim);
        by[static_cast<size_t>(i)] = train_labels[static_cast<size_t>(src)];
      }
      auto x = make_leaf(bx, false);
      auto adapted = linear_rows(x, w, b);
      auto normed = l2_normalize_rows(adapted);
      auto logits = mul_scalar(linear_rows(normed, anchors, VarT<float>()), temperature_);
      auto loss = cross_entropy_rows(logits, by);
      store.zero_grad();
      loss.backward();
      opt.step(static_cast<float>(lr));
    }
  }

  adapter_w_ = w.val();
  adapter_b_ = b.val();
  frozen_ = true;

  AccuracyReport report;
  report.epochs = epochs;
  report.train_count = static_cast<int>(M);
  report.holdout_count = static_cast<int>(holdout_embeddings.size());
  report.train_accuracy = evaluate(train_embeddings, train_labels);
  report.holdout_accuracy = evaluate(holdout_embeddings, holdout_labels);
  return report;
}

uint64_t SceneClassifier::checksum() const {
  uint64_t h = backend_->weights_hash();
  h = fnv1a64(adapter_w_.data.data(), adapter_w_.data.size() * sizeof(float), h);
  h = fnv1a64(adapter_b_.data.data(), adapter_b_.data.size() * sizeof(float), h);
  return h;
}

void SceneClassifier::set_adapter(Tensorf w, Tensorf b) {
  if (w.shape != Shape{kEmbeddingDim, kEmbeddingDim} || b.shape != Shape{kEmbeddingDim})
    throw ShapeError("adapter tensors have wrong shapes");
  adapter_w_ = std::move(w);
  adapter_b_ = std::move(b);
}

}  // namespace vlur::clf
