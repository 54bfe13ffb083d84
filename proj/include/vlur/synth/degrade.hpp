#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "vlur/core/tensor.hpp"

namespace vlur::synth {

// The 11 degradation classes, in canonical (Table) order I..XI. Composite
// labels decompose into a subset of the four primitives; rain and snow
// never co-occur.
enum class Degradation : int {
  kHaze = 0,
  kLow,
  kRain,
  kSnow,
  kHazeLow,
  kHazeRain,
  kHazeSnow,
  kLowRain,
  kLowSnow,
  kHazeLowRain,
  kHazeLowSnow,
};

constexpr int kNumDegradations = 11;

struct Primitives {
  bool haze = false;
  bool low = false;
  bool rain = false;
  bool snow = false;
};

const std::array<Degradation, kNumDegradations>& all_degradations();

// lowercase manifest label, e.g. "haze+low+snow"
const std::string& label_of(Degradation d);
// roman index "I".."XI" matching the canonical table rows
const std::string& roman_of(Degradation d);
// prompt phrase, e.g. "low light" or "haze + low"
const std::string& phrase_of(Degradation d);

Primitives primitives_of(Degradation d);
Degradation degradation_from_label(const std::string& label);
std::optional<Degradation> try_degradation_from_label(const std::string& label);

// Per-image synthesis parameters with their valid ranges. Identical
// (params, seed) always produce bit-identical output.
struct DegradationParams {
  double haze_t = 0.55;        // transmission, (0,1]
  double airlight = 0.85;      // [0.7,1.0]
  double lowlight_gamma = 2.2; // [1.5,3.5]
  double lowlight_gain = 0.5;  // [0.3,0.8]
  double rain_density = 0.0015;  // streaks per pixel
  double rain_angle_deg = 15.0;  // from vertical
  double rain_length = 12.0;     // pixels
  double snow_density = 0.0020;  // flakes per pixel
  double snow_flake_size = 1.6;  // gaussian sigma in pixels
  uint64_t rng_seed = 0;

  void validate() const;
};

// Draws parameters uniformly inside the documented ranges.
DegradationParams sample_params(uint64_t seed);

Tensorf apply_haze(const Tensorf& clean, double t, double airlight);
Tensorf apply_low_light(const Tensorf& clean, double gamma, double gain);
Tensorf apply_rain(const Tensorf& clean, const DegradationParams& params, uint64_t seed);
Tensorf apply_snow(const Tensorf& clean, const DegradationParams& params, uint64_t seed);

// Fixed composition order: scene particles (rain/snow) first, then the
// atmospheric haze veil, then the low-light exposure change.
Tensorf compose_degradations(const Tensorf& clean, Degradation type,
                             const DegradationParams& params, uint64_t seed);

// Procedural "natural-ish" clean image: layered value noise, soft shapes
// and varied hues. Used to build desk-scale datasets without external data.
Tensorf generate_clean_image(uint64_t seed, int64_t h, int64_t w);

}  // namespace vlur::synth
