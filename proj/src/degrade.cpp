#include "vlur/synth/degrade.hpp"

#include <algorithm>
#include <cmath>

#include "vlur/core/rng.hpp"
#include "vlur/image/image.hpp"

namespace vlur::synth {

namespace {

struct TypeInfo {
  Degradation d;
  const char* label;
  const char* roman;
  const char* phrase;
  Primitives prims;
};

const std::array<TypeInfo, kNumDegradations>& table() {
  static const std::array<TypeInfo, kNumDegradations> t = {{
      {Degradation::kHaze, "haze", "I", "haze", {true, false, false, false}},
      {Degradation::kLow, "low", "II", "low light", {false, true, false, false}},
      {Degradation::kRain, "rain", "III", "rain", {false, false, true, false}},
      {Degradation::kSnow, "snow", "IV", "snow", {false, false, false, true}},
      {Degradation::kHazeLow, "haze+low", "V", "haze + low", {true, true, false, false}},
      {Degradation::kHazeRain, "haze+rain", "VI", "haze + rain", {true, false, true, false}},
      {Degradation::kHazeSnow, "haze+snow", "VII", "haze + snow", {true, false, false, true}},
      {Degradation::kLowRain, "low+rain", "VIII", "low + rain", {false, true, true, false}},
      {Degradation::kLowSnow, "low+snow", "IX", "low + snow", {false, true, false, true}},
      {Degradation::kHazeLowRain, "haze+low+rain", "X", "haze + low + rain",
       {true, true, true, false}},
      {Degradation::kHazeLowSnow, "haze+low+snow", "XI", "haze + low + snow",
       {true, true, false, true}},
  }};
  return t;
}

const TypeInfo& info(Degradation d) { return table()[static_cast<size_t>(d)]; }

}  // namespace

const std::array<Degradation, kNumDegradations>& all_degradations() {
  static const std::array<Degradation, kNumDegradations> a = [] {
    std::array<Degradation, kNumDegradations> out{};
    for (int i = 0; i < kNumDegradations; ++i) out[static_cast<size_t>(i)] = static_cast<Degradation>(i);
    return out;
  }();
  return a;
}

const std::string& label_of(Degradation d) {
  static std::array<std::string, kNumDegradations> cache = [] {
    std::array<std::string, kNumDegradations> out;
    for (int i = 0; i < kNumDegradations; ++i) out[static_cast<size_t>(i)] = table()[static_cast<size_t>(i)].label;
    return out;
  }();
  return cache[static_cast<size_t>(d)];
}

const std::string& roman_of(Degradation d) {
  static std::array<std::string, kNumDegradations> cache = [] {
    std::array<std::string, kNumDegradations> out;
    for (int i = 0; i < kNumDegradations; ++i) out[static_cast<size_t>(i)] = table()[static_cast<size_t>(i)].roman;
    return out;
  }();
  return cache[static_cast<size_t>(d)];
}

const std::string& phrase_of(Degradation d) {
  static std::array<std::string, kNumDegradations> cache = [] {
    std::array<std::string, kNumDegradations> out;
    for (int i = 0; i < kNumDegradations; ++i) out[static_cast<size_t>(i)] = table()[static_cast<size_t>(i)].phrase;
    return out;
  }();
  return cache[static_cast<size_t>(d)];
}

Primitives primitives_of(Degradation d) { return info(d).prims; }

std::optional<Degradation> try_degradation_from_label(const std::string& label) {
  std::string norm = label;
  std::replace(norm.begin(), norm.end(), '_', '+');
  for (const auto& ti : table())
    if (norm == ti.label) return ti.d;
  return std::nullopt;
}

Degradation degradation_from_label(const std::string& label) {
  if (auto d = try_degradation_from_label(label)) return *d;
  throw DataError("unknown degradation label: " + label);
}

void DegradationParams::validate() const {
  if (!(haze_t > 0.0 && haze_t <= 1.0))
    throw ParameterError("haze transmission must be in (0,1], got " + std::to_string(haze_t));
  if (airlight < 0.7 || airlight > 1.0)
    throw ParameterError("airlight must be in [0.7,1.0], got " + std::to_string(airlight));
  if (lowlight_gamma < 1.5 || lowlight_gamma > 3.5)
    throw ParameterError("lowlight gamma must be in [1.5,3.5], got " + std::to_string(lowlight_gamma));
  if (lowlight_gain < 0.3 || lowlight_gain > 0.8)
    throw ParameterError("lowlight gain must be in [0.3,0.8], got " + std::to_string(lowlight_gain));
  if (rain_density < 0.0 || snow_density < 0.0)
    throw ParameterError("densities must be non-negative");
  if (rain_length <= 0.0 || snow_flake_size <= 0.0)
    throw ParameterError("rain length and flake size must be positive");
}

DegradationParams sample_params(uint64_t seed) {
  auto rs = rng::stream(seed, "degradation-params");
  DegradationParams p;
  p.haze_t = rs.uniform(0.35, 0.70);
  p.airlight = rs.uniform(0.75, 0.95);
  p.lowlight_gamma = rs.uniform(1.6, 3.0);
  p.lowlight_gain = rs.uniform(0.35, 0.65);
  p.rain_density = rs.uniform(0.002, 0.006);
  p.rain_angle_deg = rs.uniform(5.0, 25.0);
  p.rain_length = rs.uniform(8.0, 16.0);
  p.snow_density = rs.uniform(0.003, 0.008);
  p.snow_flake_size = rs.uniform(1.0, 2.2);
  p.rng_seed = seed;
  return p;
}

Tensorf apply_haze(const Tensorf& clean, double t, double airlight) {
  img::check_image(clean, "apply_haze");
  // t = 0 (pure airlight) is allowed at the op level; dataset sampling keeps
  // transmission strictly positive
  if (t < 0.0 || t > 1.0)
    throw ParameterError("apply_haze: transmission must be in [0,1], got " + std::to_string(t));
  if (airlight < 0.0 || airlight > 1.0)
    throw ParameterError("apply_haze: airlight must be in [0,1], got " + std::to_string(airlight));
  Tensorf out(clean.shape);
  const float tf = static_cast<float>(t);
  const float veil = static_cast<float>(airlight * (1.0 - t));
  for (int64_t i = 0; i < clean.numel(); ++i)
    out[i] = img::clampf(clean[i] * tf + veil, 0.0f, 1.0f);
  return out;
}

Tensorf apply_low_light(const Tensorf& clean, double gamma, double gain) {
  img::check_image(clean, "apply_low_light");
  if (gamma < 1.0)
    throw ParameterError("apply_low_light: gamma < 1 would brighten, got " + std::to_string(gamma));
  if (!(gain > 0.0 && gain <= 1.0))
    throw ParameterError("apply_low_light: gain must be in (0,1], got " + std::to_string(gain));
  Tensorf out(clean.shape);
  const float g = static_cast<float>(gain);
  for (int64_t i = 0; i < clean.numel(); ++i) {
    const float v = img::clampf(clean[i], 0.0f, 1.0f);
    // gamma == 1 stays bit-exact (identity composition contract)
    out[i] = gamma == 1.0 ? g * v
                          : g * static_cast<float>(std::pow(static_cast<double>(v), gamma));
  }
  return out;
}

namespace {

// Splat a gaussian-profiled dot into the single-channel brightness map.
void splat(Tensorf& map, double cy, double cx, double sigma, double amp) {
  const int64_t h = map.dim(0), w = map.dim(1);
  const int64_t r = static_cast<int64_t>(std::ceil(3.0 * sigma));
  const int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(cy) - r);
  const int64_t y1 = std::min<int64_t>(h - 1, static_cast<int64_t>(cy) + r);
  const int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(cx) - r);
  const int64_t x1 = std::min<int64_t>(w - 1, static_cast<int64_t>(cx) + r);
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  for (int64_t y = y0; y <= y1; ++y)
    for (int64_t x = x0; x <= x1; ++x) {
      const double dy = static_cast<double>(y) - cy;
      const double dx = static_cast<double>(x) - cx;
      const float v = static_cast<float>(amp * std::exp(-(dy * dy + dx * dx) * inv2s2));
      float& cell = map.at(y, x, 0);
      cell = std::max(cell, v);
    }
}

Tensorf add_brightness_map(const Tensorf& clean, const Tensorf& map) {
  Tensorf out(clean.shape);
  const int64_t h = clean.dim(0), w = clean.dim(1);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const float s = map.at(y, x, 0);
      for (int64_t c = 0; c < 3; ++c)
        out.at(y, x, c) = img::clampf(clean.at(y, x, c) + s, 0.0f, 1.0f);
    }
  return out;
}

}  // namespace

Tensorf apply_rain(const Tensorf& clean, const DegradationParams& params, uint64_t seed) {
  img::check_image(clean, "apply_rain");
  if (params.rain_density < 0.0) throw ParameterError("rain density must be non-negative");
  if (params.rain_length <= 0.0) throw ParameterError("rain length must be positive");
  if (params.rain_density == 0.0) return clean;
  const int64_t h = clean.dim(0), w = clean.dim(1);
  auto rs = rng::stream(seed, "rain");
  const int64_t count = std::max<int64_t>(
      1, static_cast<int64_t>(params.rain_density * static_cast<double>(h * w)));
  Tensorf map(Shape{h, w, 1});
  for (int64_t i = 0; i < count; ++i) {
    const double cy = rs.uniform(0.0, static_cast<double>(h));
    const double cx = rs.uniform(0.0, static_cast<double>(w));
    const double angle =
        (params.rain_angle_deg + rs.uniform(-4.0, 4.0)) * 3.14159265358979323846 / 180.0;
    const double len = params.rain_length * rs.uniform(0.7, 1.3);
    const double amp = rs.uniform(0.25, 0.55);
    const double dy = std::cos(angle), dx = std::sin(angle);
    for (double s = -len / 2; s <= len / 2; s += 0.5)
      splat(map, cy + s * dy, cx + s * dx, 0.7, amp);
  }
  return add_brightness_map(clean, map);
}

Tensorf apply_snow(const Tensorf& clean, const DegradationParams& params, uint64_t seed) {
  img::check_image(clean, "apply_snow");
  if (params.snow_density < 0.0) throw ParameterError("snow density must be non-negative");
  if (params.snow_flake_size <= 0.0) throw ParameterError("snow flake size must be positive");
  if (params.snow_density == 0.0) return clean;
  const int64_t h = clean.dim(0), w = clean.dim(1);
  auto rs = rng::stream(seed, "snow");
  const int64_t count = std::max<int64_t>(
      1, static_cast<int64_t>(params.snow_density * static_cast<double>(h * w)));
  Tensorf map(Shape{h, w, 1});
  for (int64_t i = 0; i < count; ++i) {
    const double cy = rs.uniform(0.0, static_cast<double>(h));
    const double cx = rs.uniform(0.0, static_cast<double>(w));
    const double sigma = params.snow_flake_size * rs.uniform(0.6, 1.6);
    const double amp = rs.uniform(0.35, 0.75);
    splat(map, cy, cx, sigma, amp);
  }
  return add_brightness_map(clean, map);
}

// Each op validates its own arguments here, so composing with neutral
// parameters (t=1, gamma=1, gain=1, densities 0) is exactly the identity;
// the declared sampling ranges are enforced when datasets are built.
Tensorf compose_degradations(const Tensorf& clean, Degradation type,
                             const DegradationParams& params, uint64_t seed) {
  const Primitives p = primitives_of(type);
  Tensorf out = clean;
  if (p.rain) out = apply_rain(out, params, seed);
  if (p.snow) out = apply_snow(out, params, seed);
  if (p.haze) out = apply_haze(out, params.haze_t, params.airlight);
  if (p.low) out = apply_low_light(out, params.lowlight_gamma, params.lowlight_gain);
  return out;
}

namespace {

// Smooth value noise: seeded lattice values, bilinearly interpolated.
float value_noise(uint64_t seed, int64_t gy, int64_t gx, uint64_t octave) {
  uint64_t s = rng::mix(seed, rng::mix(static_cast<uint64_t>(gy) * 0x9e37u + 0x1234u,
                                       rng::mix(static_cast<uint64_t>(gx), octave)));
  return static_cast<float>(static_cast<double>(rng::splitmix64(s) >> 11) * 0x1.0p-53);
}

}  // namespace

Tensorf generate_clean_image(uint64_t seed, int64_t h, int64_t w) {
  auto rs = rng::stream(seed, "clean-image");
  Tensorf out(Shape{h, w, 3});

  // base hue gradient
  float base[3], grad[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = static_cast<float>(rs.uniform(0.25, 0.65));
    grad[c] = static_cast<float>(rs.uniform(-0.25, 0.25));
  }
  const bool vertical = rs.uniform() < 0.5;
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const float t = vertical ? static_cast<float>(y) / static_cast<float>(h - 1)
                               : static_cast<float>(x) / static_cast<float>(w - 1);
      for (int64_t c = 0; c < 3; ++c) out.at(y, x, c) = base[c] + grad[c] * t;
    }

  // octaves of value noise for texture
  for (int oct = 0; oct < 3; ++oct) {
    const int64_t cells = 4 << oct;  // 4, 8, 16
    const float amp = 0.22f / static_cast<float>(1 << oct);
    const uint64_t oseed = rs.next_u64();
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        const double fy = static_cast<double>(y) * cells / h;
        const double fx = static_cast<double>(x) * cells / w;
        const int64_t gy = static_cast<int64_t>(fy), gx = static_cast<int64_t>(fx);
        const float ty = static_cast<float>(fy - gy), tx = static_cast<float>(fx - gx);
        const float v00 = value_noise(oseed, gy, gx, static_cast<uint64_t>(oct));
        const float v01 = value_noise(oseed, gy, gx + 1, static_cast<uint64_t>(oct));
        const float v10 = value_noise(oseed, gy + 1, gx, static_cast<uint64_t>(oct));
        const float v11 = value_noise(oseed, gy + 1, gx + 1, static_cast<uint64_t>(oct));
        const float v = (v00 * (1 - tx) + v01 * tx) * (1 - ty) + (v10 * (1 - tx) + v11 * tx) * ty;
        const float d = (v - 0.5f) * amp;
        for (int64_t c = 0; c < 3; ++c) out.at(y, x, c) += d;
      }
  }

  // a few solid shapes (rectangles and disks) for structure and edges
  const int nshapes = 3 + static_cast<int>(rs.uniform_int(4));
  for (int i = 0; i < nshapes; ++i) {
    float col[3];
    for (int c = 0; c < 3; ++c) col[c] = static_cast<float>(rs.uniform(0.1, 0.9));
    const bool disk = rs.uniform() < 0.5;
    const double cy = rs.uniform(0.1, 0.9) * h;
    const double cx = rs.uniform(0.1, 0.9) * w;
    const double ry = rs.uniform(0.05, 0.25) * h;
    const double rx = rs.uniform(0.05, 0.25) * w;
    const float blend = static_cast<float>(rs.uniform(0.5, 0.95));
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        const double dy = (y - cy) / ry, dx = (x - cx) / rx;
        const bool inside = disk ? (dy * dy + dx * dx <= 1.0)
                                 : (std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0);
        if (!inside) continue;
        for (int64_t c = 0; c < 3; ++c)
          out.at(y, x, c) = out.at(y, x, c) * (1 - blend) + col[c] * blend;
      }
  }

  for (auto& v : out.data) v = img::clampf(v, 0.02f, 0.98f);
  return out;
}

}  // namespace vlur::synth
