#pragma once

#include <string>

#include "vlur/core/tensor.hpp"

namespace vlur::img {

// Images travel as [H,W,3] float tensors in [0,1]. Files are 8-bit RGB;
// quantization happens only when writing.

Tensorf read_image(const std::string& path);           // PNG or JPEG
void write_png(const std::string& path, const Tensorf& image);

inline void check_image(const Tensorf& t, const char* who) {
  if (t.ndim() != 3 || t.dim(2) != 3)
    throw ShapeError(std::string(who) + ": expected [H,W,3] image, got " + shape_str(t.shape));
}

// Round-to-nearest 8-bit quantization of a clamped copy.
Tensorf quantize8(const Tensorf& image);

float clampf(float v, float lo, float hi);

Tensorf clamp01(const Tensorf& image);

// Bilinear resize to [oh,ow,3].
Tensorf resize_bilinear(const Tensorf& image, int64_t oh, int64_t ow);

// Reflective pad so both sides become multiples of `multiple`; returns the
// padded image and reports the original size for a later crop.
Tensorf pad_to_multiple_reflect(const Tensorf& image, int64_t multiple);
Tensorf crop(const Tensorf& image, int64_t y0, int64_t x0, int64_t h, int64_t w);

// Mean over all pixel-channels.
double mean_value(const Tensorf& image);

}  // namespace vlur::img
