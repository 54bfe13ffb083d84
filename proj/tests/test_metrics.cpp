#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "testutil.hpp"
#include "vlur/metrics/metrics.hpp"

using namespace vlur;
using namespace vlur::metrics;

namespace {

Tensorf random_image(uint64_t seed, int64_t h = 48, int64_t w = 48) {
  auto rs = rng::stream(seed, "m");
  return Tensorf::rand_uniform(Shape{h, w, 3}, rs, 0.0f, 1.0f);
}

Tensorf with_noise(const Tensorf& a, double amp, uint64_t seed) {
  auto rs = rng::stream(seed, "n");
  Tensorf out = a;
  for (auto& v : out.data)
    v = std::clamp(v + static_cast<float>(amp * (rs.uniform() * 2 - 1)), 0.0f, 1.0f);
  return out;
}

}  // namespace

TEST_CASE("psnr formula cases") {
  const Tensorf a = random_image(1);
  CHECK(psnr(a, a) == 100.0);  // zero-MSE cap

  Tensorf b(a.shape);
  b.fill(0.1f);
  Tensorf zeros(a.shape);
  // uniform 0.1 difference -> 20 dB; the exact value reflects that 0.1f is
  // the nearest float, so the closed form is evaluated on the stored value
  const double d = static_cast<double>(0.1f);
  CHECK(psnr(b, zeros) == doctest::Approx(-10.0 * std::log10(d * d)).epsilon(1e-12));
  CHECK(std::abs(psnr(b, zeros) - 20.0) < 1e-6);

  SUBCASE("matches a direct-formula evaluation on random pairs") {
    for (uint64_t s = 0; s < 20; ++s) {
      const Tensorf x = random_image(s + 10);
      const Tensorf y = random_image(s + 200);
      double se = 0;
      for (int64_t i = 0; i < x.numel(); ++i) {
        const double d = static_cast<double>(x[i]) - y[i];
        se += d * d;
      }
      const double expected = 10.0 * std::log10(static_cast<double>(x.numel()) / se);
      CHECK(psnr(x, y) == doctest::Approx(expected).epsilon(1e-12));
    }
  }
  SUBCASE("strictly decreases as noise grows") {
    const Tensorf base = random_image(3);
    double prev = psnr(base, with_noise(base, 0.02, 7));
    for (double amp : {0.05, 0.1, 0.2, 0.4}) {
      const double cur = psnr(base, with_noise(base, amp, 7));
      CHECK(cur < prev);
      prev = cur;
    }
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(psnr(random_image(1), random_image(1, 24, 48)), ShapeError);
  }
}

TEST_CASE("ssim analytic and oracle cases") {
  const Tensorf a = random_image(5);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-6));

  SUBCASE("constant images, closed form (zero variance)") {
    const Tensorf x = Tensorf::full(Shape{16, 16, 3}, 0.2f);
    const Tensorf y = Tensorf::full(Shape{16, 16, 3}, 0.4f);
    const double c1 = 1e-4;
    const double expected = (2 * 0.2 * 0.4 + c1) / (0.2 * 0.2 + 0.4 * 0.4 + c1);
    CHECK(ssim(x, y) == doctest::Approx(expected).epsilon(1e-9));
  }
  SUBCASE("symmetry and identical channel permutation invariance") {
    const Tensorf x = random_image(6);
    const Tensorf y = with_noise(x, 0.1, 8);
    CHECK(ssim(x, y) == doctest::Approx(ssim(y, x)).epsilon(1e-12));
    auto permute_channels = [](const Tensorf& t) {
      Tensorf out = t;
      for (int64_t p = 0; p < t.numel() / 3; ++p) {
        out[p * 3 + 0] = t[p * 3 + 2];
        out[p * 3 + 1] = t[p * 3 + 0];
        out[p * 3 + 2] = t[p * 3 + 1];
      }
      return out;
    };
    CHECK(ssim(permute_channels(x), permute_channels(y)) ==
          doctest::Approx(ssim(x, y)).epsilon(1e-12));
  }
  SUBCASE("matches the independent reference implementation") {
    for (uint64_t s = 0; s < 5; ++s) {
      const Tensorf x = random_image(s + 30);
      const Tensorf y = with_noise(x, 0.05 + 0.05 * s, s + 40);
      CHECK(ssim(x, y) == doctest::Approx(testutil::ref_ssim(x, y)).epsilon(1e-5));
    }
  }
  SUBCASE("too-small image raises a scale error") {
    CHECK_THROWS_AS(ssim(random_image(1, 8, 8), random_image(2, 8, 8)), ScaleError);
  }
}

TEST_CASE("msssim matches the independent reference implementation") {
  for (uint64_t s = 0; s < 3; ++s) {
    const Tensorf x = random_image(s + 60, 96, 80);
    const Tensorf y = with_noise(x, 0.1, s + 70);
    CHECK(msssim(x, y, 3) == doctest::Approx(testutil::ref_msssim(x, y, 3)).epsilon(1e-4));
  }
  SUBCASE("identical images score 1") {
    const Tensorf x = random_image(80, 64, 64);
    CHECK(msssim(x, x, 3) == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("five scales need at least 176 pixels per side") {
    CHECK_THROWS_AS(msssim(random_image(1, 96, 96), random_image(2, 96, 96), 5), ScaleError);
    const Tensorf big = random_image(9, 176, 176);
    CHECK_NOTHROW(msssim(big, with_noise(big, 0.05, 10), 5));
  }
}

TEST_CASE("metric report assembly") {
  std::vector<PerImageResult> results;
  // two types, unbalanced counts so per-image vs per-type means differ
  results.push_back({synth::Degradation::kHaze, 30.0, 0.9});
  results.push_back({synth::Degradation::kHaze, 20.0, 0.7});
  results.push_back({synth::Degradation::kHaze, 25.0, 0.8});
  results.push_back({synth::Degradation::kSnow, 10.0, 0.5});

  const MetricReport per_image = make_report(results, false, false, "oracle");
  CHECK(per_image.rows.size() == 2);
  CHECK(per_image.rows[0].type == synth::Degradation::kHaze);
  CHECK(per_image.rows[0].psnr == doctest::Approx(25.0));
  CHECK(per_image.rows[0].count == 3);
  CHECK(per_image.avg_psnr == doctest::Approx((30 + 20 + 25 + 10) / 4.0));
  CHECK(per_image.total_count == 4);

  const MetricReport per_type = make_report(results, true, false, "oracle");
  CHECK(per_type.avg_psnr == doctest::Approx((25.0 + 10.0) / 2.0));

  SUBCASE("averages recompute exactly from stored per-image values") {
    double acc = 0;
    for (const auto& r : per_image.per_image) acc += r.psnr;
    CHECK(per_image.avg_psnr == acc / 4.0);
  }
  SUBCASE("json and table render") {
    const auto j = per_image.to_json();
    CHECK(j["rows"].size() == 2);
    CHECK(j["average"]["count"] == 4);
    CHECK(j["config"]["guidance"] == "oracle");
    const std::string table = per_image.to_table();
    CHECK(table.find("Avg.") != std::string::npos);
    CHECK(table.find("haze") != std::string::npos);
  }
  SUBCASE("empty result set is a data error") {
    CHECK_THROWS_AS(make_report({}, false, false, "oracle"), DataError);
  }
}
