#pragma once

#include <optional>

#include "vlur/classifier/classifier.hpp"
#include "vlur/image/image.hpp"
#include "vlur/restorer/restorer.hpp"

namespace vlur::restorer {

// Restores an image of any size by reflect-padding to the next multiple of 8
// and cropping back afterwards.
inline Tensorf restore_image_padded(const Restorer<float>& model, const Tensorf& image,
                                    const Tensorf& y_text) {
  const int64_t h = image.dim(0), w = image.dim(1);
  const Tensorf padded = img::pad_to_multiple_reflect(image, 8);
  Tensorf out = restore_image(model, padded, y_text);
  if (out.dim(0) != h || out.dim(1) != w) out = img::crop(out, 0, 0, h, w);
  return out;
}

struct GuidedRestoration {
  Tensorf restored;
  synth::Degradation type_used;
  std::vector<float> probs;  // empty when the type was overridden
};

// Phased-guidance entry point: the text feature comes from the override type
// when given, otherwise from the classifier prediction.
inline GuidedRestoration restore_with_classifier(const Restorer<float>& model,
                                                 clf::SceneClassifier& classifier,
                                                 const Tensorf& degraded,
                                                 std::optional<synth::Degradation> override_type) {
  GuidedRestoration out;
  if (override_type) {
    out.type_used = *override_type;
  } else {
    auto cls = classifier.classify(degraded);
    out.type_used = cls.type;
    out.probs = std::move(cls.probs);
  }
  const Tensorf y_text = classifier.text_feature_for_type(out.type_used);
  out.restored = restore_image_padded(model, degraded, y_text);
  return out;
}

}  // namespace vlur::restorer
