#pragma once

#include <memory>
#include <string>
#include <vector>

#include "vlur/classifier/backend.hpp"
#include "vlur/core/tensor.hpp"
#include "vlur/synth/degrade.hpp"

namespace vlur::clf {

// The 11 degradation prompts, "The image has <type> degradation", in
// canonical type order.
std::vector<std::string> build_prompts();

// Row-normalized prompt embedding matrix [11,512].
Tensorf encode_prompts(EncoderBackend& backend);

struct Classification {
  synth::Degradation type;
  std::vector<float> probs;  // 11 softmax probabilities
};

// Softmax over temperature-scaled cosine similarities between one image
// embedding [512] and the 11 text rows; lowest-index argmax tie-break.
Classification classify_embedding(const Tensorf& image_embedding, const Tensorf& text_matrix,
                                  float temperature);

struct AccuracyReport {
  double train_accuracy = 0.0;
  double holdout_accuracy = 0.0;
  int train_count = 0;
  int holdout_count = 0;
  int epochs = 0;
};

// Zero-shot scene classifier: frozen encoder backend + an identity-initialized
// linear adapter on the image embedding. The adapter is the only trainable
// part and is frozen after fine-tuning.
class SceneClassifier {
 public:
  explicit SceneClassifier(std::shared_ptr<EncoderBackend> backend, float temperature = 100.0f);

  const Tensorf& text_matrix();  // cached 11x512, rows unit-norm
  Tensorf text_feature_for_type(synth::Degradation type);  // normalized [512]
  Tensorf image_embedding(const Tensorf& image);           // adapter applied, normalized [512]

  Classification classify(const Tensorf& image);

  // Cross-entropy fine-tuning of the adapter on precomputed backend
  // embeddings; backend weights are untouched. Freezes the classifier.
  AccuracyReport finetune_adapter(const std::vector<Tensorf>& train_embeddings,
                                  const std::vector<int>& train_labels,
                                  const std::vector<Tensorf>& holdout_embeddings,
                                  const std::vector<int>& holdout_labels, int epochs, double lr,
                                  uint64_t seed);

  bool frozen() const { return frozen_; }
  void set_frozen(bool f) { frozen_ = f; }

  // Covers backend weights and adapter parameters.
  uint64_t checksum() const;

  EncoderBackend& backend() { return *backend_; }
  float temperature() const { return temperature_; }

  // Adapter parameters for checkpointing (w [512,512], b [512]).
  const Tensorf& adapter_weight() const { return adapter_w_; }
  const Tensorf& adapter_bias() const { return adapter_b_; }
  void set_adapter(Tensorf w, Tensorf b);

 private:
  std::shared_ptr<EncoderBackend> backend_;
  float temperature_;
  Tensorf adapter_w_, adapter_b_;
  Tensorf text_matrix_;  // lazily cached
  bool frozen_ = false;
};

}  // namespace vlur::clf
