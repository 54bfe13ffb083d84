#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "testutil.hpp"
#include "vlur/image/image.hpp"
#include "vlur/synth/dataset.hpp"
#include "vlur/synth/degrade.hpp"

using namespace vlur;
using namespace vlur::synth;

namespace {

Tensorf uniform_image(int64_t h, int64_t w, float v) {
  return Tensorf::full(Shape{h, w, 3}, v);
}

Tensorf ramp_image(int64_t h, int64_t w) {
  Tensorf t(Shape{h, w, 3});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c)
        t.at(y, x, c) = 0.8f * static_cast<float>(y * w + x) / static_cast<float>(h * w);
  return t;
}

bool bit_equal(const Tensorf& a, const Tensorf& b) {
  if (a.shape != b.shape) return false;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("degradation taxonomy") {
  CHECK(all_degradations().size() == 11);
  std::set<std::string> labels;
  for (auto d : all_degradations()) {
    labels.insert(label_of(d));
    const Primitives p = primitives_of(d);
    CHECK_FALSE((p.rain && p.snow));  // rain and snow never co-occur
    // label decomposes into exactly its primitives
    CHECK((label_of(d).find("rain") != std::string::npos) == p.rain);
    CHECK((label_of(d).find("snow") != std::string::npos) == p.snow);
    CHECK((label_of(d).find("haze") != std::string::npos) == p.haze);
    CHECK((label_of(d).find("low") != std::string::npos) == p.low);
    CHECK(degradation_from_label(label_of(d)) == d);
  }
  CHECK(labels.size() == 11);
  CHECK_FALSE(primitives_of(Degradation::kHazeSnow).rain);
  CHECK(label_of(Degradation::kHaze) == "haze");
  CHECK(roman_of(Degradation::kHazeLowSnow) == "XI");
  CHECK(degradation_from_label("haze_low") == Degradation::kHazeLow);  // underscore variant
  CHECK_THROWS_AS(degradation_from_label("fog"), DataError);
}

TEST_CASE("apply_haze formula cases") {
  const Tensorf clean = ramp_image(8, 8);
  CHECK(bit_equal(apply_haze(clean, 1.0, 0.3), clean));  // t=1 identity
  const Tensorf all_air = apply_haze(clean, 0.0, 1.0);   // t=0 pure airlight
  for (int64_t i = 0; i < all_air.numel(); ++i) CHECK(all_air[i] == 1.0f);
  const Tensorf mid = apply_haze(uniform_image(4, 4, 0.5f), 0.5, 1.0);
  for (int64_t i = 0; i < mid.numel(); ++i) CHECK(mid[i] == doctest::Approx(0.75).epsilon(1e-6));
  CHECK_THROWS_AS(apply_haze(clean, 1.5, 0.5), ParameterError);
  CHECK_THROWS_AS(apply_haze(clean, 0.5, 1.5), ParameterError);
}

TEST_CASE("apply_low_light formula and monotonicity") {
  const Tensorf clean = ramp_image(8, 8);
  CHECK(bit_equal(apply_low_light(clean, 1.0, 1.0), clean));
  const Tensorf dark = apply_low_light(uniform_image(4, 4, 1.0f), 2.0, 0.5);
  for (int64_t i = 0; i < dark.numel(); ++i) CHECK(dark[i] == doctest::Approx(0.5).epsilon(1e-6));
  CHECK_THROWS_AS(apply_low_light(clean, 0.9, 0.5), ParameterError);

  // darkening never exceeds the input, ordering preserved (brute force)
  const Tensorf out = apply_low_light(clean, 2.2, 0.6);
  for (int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] <= clean[i] + 1e-7f);
  for (int64_t i = 1; i < out.numel(); ++i)
    if (clean[i] > clean[i - 1]) CHECK(out[i] >= out[i - 1]);
}

TEST_CASE("rain and snow synthesis contracts") {
  const Tensorf clean = uniform_image(48, 48, 0.4f);
  DegradationParams p = sample_params(5);

  SUBCASE("zero density is the identity") {
    DegradationParams q = p;
    q.rain_density = 0;
    q.snow_density = 0;
    CHECK(bit_equal(apply_rain(clean, q, 7), clean));
    CHECK(bit_equal(apply_snow(clean, q, 7), clean));
  }
  SUBCASE("determinism in the seed") {
    CHECK(bit_equal(apply_rain(clean, p, 11), apply_rain(clean, p, 11)));
    CHECK(bit_equal(apply_snow(clean, p, 11), apply_snow(clean, p, 11)));
    CHECK_FALSE(bit_equal(apply_rain(clean, p, 11), apply_rain(clean, p, 12)));
  }
  SUBCASE("mean brightness strictly increases") {
    CHECK(img::mean_value(apply_rain(clean, p, 3)) > img::mean_value(clean));
    CHECK(img::mean_value(apply_snow(clean, p, 3)) > img::mean_value(clean));
  }
  SUBCASE("range stays valid") {
    const Tensorf r = apply_rain(clean, p, 3);
    CHECK(r.all_finite());
    for (int64_t i = 0; i < r.numel(); ++i) {
      CHECK(r[i] >= 0.0f);
      CHECK(r[i] <= 1.0f);
    }
  }
}

TEST_CASE("compose_degradations order and identity") {
  const Tensorf clean = ramp_image(32, 32);
  DegradationParams p = sample_params(17);

  SUBCASE("single-primitive composite equals the primitive op") {
    CHECK(bit_equal(compose_degradations(clean, Degradation::kHaze, p, 9),
                    apply_haze(clean, p.haze_t, p.airlight)));
  }
  SUBCASE("neutral parameters reproduce the clean image for every type") {
    DegradationParams neutral;
    neutral.haze_t = 1.0;
    neutral.lowlight_gamma = 1.0;
    neutral.lowlight_gain = 1.0;
    neutral.rain_density = 0.0;
    neutral.snow_density = 0.0;
    for (auto type : all_degradations())
      CHECK(bit_equal(compose_degradations(clean, type, neutral, 23), clean));
  }
  SUBCASE("low+rain equals manual composition") {
    const Tensorf manual =
        apply_low_light(apply_rain(clean, p, 31), p.lowlight_gamma, p.lowlight_gain);
    CHECK(bit_equal(compose_degradations(clean, Degradation::kLowRain, p, 31), manual));
  }
  SUBCASE("determinism and range for all 11 types") {
    for (auto type : all_degradations()) {
      const Tensorf a = compose_degradations(clean, type, p, 77);
      const Tensorf b = compose_degradations(clean, type, p, 77);
      CHECK(bit_equal(a, b));
      CHECK(a.all_finite());
      for (int64_t i = 0; i < a.numel(); ++i) {
        CHECK(a[i] >= 0.0f);
        CHECK(a[i] <= 1.0f);
      }
    }
  }
}

TEST_CASE("sampled parameters stay in their declared ranges") {
  for (uint64_t s = 0; s < 50; ++s) {
    const DegradationParams p = sample_params(s);
    CHECK_NOTHROW(p.validate());
    CHECK(p.haze_t > 0.0);
    CHECK(p.haze_t <= 1.0);
    CHECK(p.airlight >= 0.7);
    CHECK(p.airlight <= 1.0);
    CHECK(p.lowlight_gamma >= 1.5);
    CHECK(p.lowlight_gamma <= 3.5);
    CHECK(p.lowlight_gain >= 0.3);
    CHECK(p.lowlight_gain <= 0.8);
  }
}

TEST_CASE("build_synthetic_dataset and manifest round-trip") {
  testutil::TempDir tmp("synth");
  synth::generate_clean_dir(tmp.file("clean"), 3, 19, 40, 48);
  auto manifest = build_synthetic_dataset(tmp.file("clean"), tmp.file("ds"), 2, 101, "train");
  CHECK(manifest.entries.size() == 22);

  std::map<Degradation, int> counts;
  for (const auto& e : manifest.entries) counts[e.type]++;
  CHECK(counts.size() == 11);  // taxonomy closure: all 11 types emitted
  for (const auto& [type, n] : counts) CHECK(n == 2);

  auto loaded = load_dataset(tmp.file("ds"));
  CHECK(loaded.entries.size() == manifest.entries.size());
  for (size_t i = 0; i < loaded.entries.size(); ++i) {
    auto pair = load_pair(loaded, i);
    CHECK(pair.clean.shape == pair.degraded.shape);
    CHECK(pair.type == manifest.entries[i].type);
  }

  SUBCASE("synthesis is reproducible from the same seed") {
    auto manifest2 = build_synthetic_dataset(tmp.file("clean"), tmp.file("ds2"), 2, 101, "train");
    auto a = load_pair(load_dataset(tmp.file("ds")), 5);
    auto b = load_pair(load_dataset(tmp.file("ds2")), 5);
    CHECK(bit_equal(a.degraded, b.degraded));
  }
  SUBCASE("empty clean dir is an ingestion error") {
    std::filesystem::create_directories(tmp.file("empty"));
    CHECK_THROWS_AS(build_synthetic_dataset(tmp.file("empty"), tmp.file("ds3"), 1, 1, "train"),
                    IngestionError);
  }
}

TEST_CASE("CDD-style directory ingestion") {
  testutil::TempDir tmp("cdd");
  const Tensorf clean = ramp_image(24, 24);
  DegradationParams p = sample_params(3);
  namespace fs = std::filesystem;
  fs::create_directories(tmp.file("tree/clear"));
  fs::create_directories(tmp.file("tree/haze"));
  fs::create_directories(tmp.file("tree/low_rain"));
  img::write_png(tmp.file("tree/clear/img1.png"), clean);
  img::write_png(tmp.file("tree/haze/img1.png"), apply_haze(clean, 0.6, 0.9));
  img::write_png(tmp.file("tree/low_rain/img1.png"),
                 compose_degradations(clean, Degradation::kLowRain, p, 5));

  auto manifest = load_dataset(tmp.file("tree"));
  CHECK(manifest.entries.size() == 2);
  std::set<Degradation> types;
  for (const auto& e : manifest.entries) types.insert(e.type);
  CHECK(types.count(Degradation::kHaze) == 1);
  CHECK(types.count(Degradation::kLowRain) == 1);

  SUBCASE("pair size mismatch names the file") {
    img::write_png(tmp.file("tree/haze/img1.png"), uniform_image(12, 12, 0.5f));
    auto broken = load_dataset(tmp.file("tree"));
    size_t haze_idx = 0;
    for (size_t i = 0; i < broken.entries.size(); ++i)
      if (broken.entries[i].type == Degradation::kHaze) haze_idx = i;
    try {
      load_pair(broken, haze_idx);
      CHECK(false);
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("img1.png") != std::string::npos);
    }
  }
  SUBCASE("missing tree is an ingestion error") {
    CHECK_THROWS_AS(load_dataset(tmp.file("nope")), IngestionError);
  }
}

TEST_CASE("sample_negatives contract") {
  testutil::TempDir tmp("neg");
  synth::generate_clean_dir(tmp.file("clean"), 2, 7, 24, 24);
  auto manifest = build_synthetic_dataset(tmp.file("clean"), tmp.file("ds"), 2, 55, "train");

  CHECK(sample_negatives(manifest, 0, 0, 9).empty());

  const auto idx = sample_negative_indices(manifest, 0, 4, 9);
  CHECK(idx.size() == 4);
  for (size_t i : idx) CHECK(manifest.entries[i].type != manifest.entries[0].type);
  CHECK(sample_negative_indices(manifest, 0, 4, 9) == idx);            // determinism
  CHECK(sample_negative_indices(manifest, 0, 4, 10) != idx);           // seed sensitivity
  CHECK_THROWS_AS(sample_negative_indices(manifest, 0, 21, 9), DataError);  // only 20 others
}
