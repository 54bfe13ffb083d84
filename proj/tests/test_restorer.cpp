#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "testutil.hpp"
#include "vlur/restorer/restorer.hpp"

using namespace vlur;
using namespace vlur::restorer;

namespace {

template <class T>
bool bit_equal(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape != b.shape) return false;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

RestorerConfig tiny_config() {
  RestorerConfig cfg;
  cfg.base_channels = 4;
  cfg.blocks_per_level = {1, 1, 1, 1};
  cfg.heads_per_level = {1, 2, 2, 4};
  cfg.ffn_expansion = 2.0;
  return cfg;
}

}  // namespace

TEST_CASE("config validation") {
  RestorerConfig cfg;
  CHECK(cfg.channels_at(1) == 16);
  CHECK(cfg.channels_at(4) == 128);  // 8C at the latent level
  CHECK_NOTHROW(cfg.validate());
  cfg.heads_per_level = {3, 2, 4, 8};  // 3 does not divide 16
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = RestorerConfig{};
  cfg.ffn_expansion = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("pixel shuffle pair is an exact shape-and-value inverse") {
  auto rs = rng::stream(5, "px");
  auto x = make_leaf(Tensorf::randn({2, 6, 4, 8}, rs), false);
  auto down = pixel_unshuffle2(x);
  CHECK(down.shape() == Shape{2, 3, 2, 32});  // halve spatial, 4x channels
  auto up = pixel_shuffle2(down);
  CHECK(up.shape() == x.shape());
  CHECK(bit_equal(up.val(), x.val()));
}

TEST_CASE("restorer forward contracts") {
  Restorer<float> model(tiny_config(), 11);
  auto rs = rng::stream(2, "in");

  SUBCASE("indivisible dims raise a shape error naming the multiple") {
    auto x = make_leaf(Tensorf::randn({1, 12, 16, 3}, rs), false);
    auto yt = make_leaf(Tensorf::randn({1, 512}, rs), false);
    try {
      model.forward(x, yt, RunMode::kEval);
      CHECK(false);
    } catch (const ShapeError& e) {
      CHECK(std::string(e.what()).find("8") != std::string::npos);
    }
  }
  SUBCASE("output shape equals input shape") {
    for (auto [h, w] : {std::pair{16, 16}, std::pair{8, 24}, std::pair{32, 16}}) {
      auto x = make_leaf(Tensorf::rand_uniform({1, h, w, 3}, rs, 0, 1), false);
      auto yt = make_leaf(Tensorf::randn({1, 512}, rs), false);
      auto out = model.forward(x, yt, RunMode::kEval);
      CHECK(out.shape() == Shape{1, h, w, 3});
    }
  }
  SUBCASE("zero-initialized final conv makes restore the identity, bit-exact") {
    // default construction zero-inits the reconstruction conv
    auto x = make_leaf(Tensorf::rand_uniform({2, 16, 16, 3}, rs, 0, 1), false);
    auto yt = make_leaf(Tensorf::randn({2, 512}, rs), false);
    auto out = model.forward(x, yt, RunMode::kTrain);
    CHECK(bit_equal(out.val(), x.val()));
  }
  SUBCASE("eval mode clamps, train mode does not") {
    Restorer<float> m2(tiny_config(), 11);
    auto frs = rng::stream(3, "f");
    m2.params().find("final.w").val_mut() = Tensorf::randn({3, 3, 4, 3}, frs, 2.0f);
    auto x = make_leaf(Tensorf::rand_uniform({1, 16, 16, 3}, frs, 0, 1), false);
    auto yt = make_leaf(Tensorf::randn({1, 512}, frs), false);
    auto train_out = m2.forward(x, yt, RunMode::kTrain).val();
    auto eval_out = m2.forward(x, yt, RunMode::kEval).val();
    bool exceeded = false;
    for (int64_t i = 0; i < train_out.numel(); ++i) {
      if (train_out[i] < 0.0f || train_out[i] > 1.0f) exceeded = true;
      CHECK(eval_out[i] >= 0.0f);
      CHECK(eval_out[i] <= 1.0f);
    }
    CHECK(exceeded);  // the probe weights are large enough to saturate
  }
  SUBCASE("deterministic: same seed, same params; repeated forward bit-equal") {
    Restorer<float> a(tiny_config(), 42), b(tiny_config(), 42), c(tiny_config(), 43);
    CHECK(a.params().content_hash() == b.params().content_hash());
    CHECK(a.params().content_hash() != c.params().content_hash());
    auto x = make_leaf(Tensorf::rand_uniform({1, 16, 16, 3}, rs, 0, 1), false);
    auto yt = make_leaf(Tensorf::randn({1, 512}, rs), false);
    auto o1 = a.forward(x, yt, RunMode::kEval).val();
    auto o2 = a.forward(x, yt, RunMode::kEval).val();
    CHECK(bit_equal(o1, o2));
    parallel_enabled() = false;
    auto o3 = a.forward(x, yt, RunMode::kEval).val();
    parallel_enabled() = true;
    CHECK(bit_equal(o1, o3));  // thread count does not change results
  }
}

TEST_CASE("pgca attention maps are row-normalized softmaxes") {
  nn::ParamStore<float> store;
  PgcaBlock<float> block(8, 2, store, "t", 3);
  auto rs = rng::stream(4, "x");
  auto x = make_leaf(Tensorf::randn({2, 4, 4, 8}, rs), false);
  auto yt = make_leaf(Tensorf::randn({2, 512}, rs), false);
  AttentionProbeT<float> probe;
  auto out = block.forward(x, yt, true, &probe);
  CHECK(out.shape() == x.shape());

  REQUIRE(probe.a_img.shape == Shape{4, 4, 4});  // N*heads=4, ch=4
  REQUIRE(probe.a_txt.shape == Shape{4, 4, 4});
  for (int64_t b = 0; b < 4; ++b)
    for (int64_t i = 0; i < 4; ++i) {
      float si = 0, st = 0;
      for (int64_t j = 0; j < 4; ++j) {
        si += probe.a_img.at(b, i, j);
        st += probe.a_txt.at(b, i, j);
      }
      CHECK(si == doctest::Approx(1.0).epsilon(1e-6));
      CHECK(st == doctest::Approx(1.0).epsilon(1e-6));
      CHECK(si + st == doctest::Approx(2.0).epsilon(1e-6));  // Eq. 6 sum of two softmaxes
    }
}

TEST_CASE("pgca with zeroed output projection is a pure residual") {
  nn::ParamStore<float> store;
  PgcaBlock<float> block(8, 2, store, "t", 3);
  store.find("t.out.w").val_mut().fill(0.0f);
  store.find("t.out.b").val_mut().fill(0.0f);
  auto rs = rng::stream(4, "x");
  auto x = make_leaf(Tensorf::randn({1, 4, 4, 8}, rs), false);
  auto yt = make_leaf(Tensorf::randn({1, 512}, rs), false);
  auto out = block.forward(x, yt, true);
  CHECK(bit_equal(out.val(), x.val()));
}

// Scalar-level evaluation of the attention equation on a 1x2 image with
// c=2, one head: every intermediate is recomputed with plain loops.
TEST_CASE("pgca matches an independent step-by-step evaluation") {
  using T = double;
  nn::ParamStore<T> store;
  PgcaBlock<T> block(2, 1, store, "t", 3);

  // hand-set projections: depthwise convs become identities (center tap 1)
  auto set = [&](const std::string& name, const TensorT<T>& t) {
    store.find(name).val_mut() = t;
  };
  const TensorT<T> wq({1, 1, 2, 2}, {0.6, -0.3, 0.2, 0.9});
  const TensorT<T> wk({1, 1, 2, 2}, {-0.4, 0.8, 0.5, 0.1});
  const TensorT<T> wv({1, 1, 2, 2}, {1.1, 0.3, -0.2, 0.7});
  set("t.q.point.w", wq);
  set("t.k.point.w", wk);
  set("t.v.point.w", wv);
  for (const char* n : {"t.q.depth.w", "t.k.depth.w", "t.v.depth.w"}) {
    TensorT<T> dw(Shape{3, 3, 2});
    dw.at(1, 1, 0) = 1.0;
    dw.at(1, 1, 1) = 1.0;
    set(n, dw);
  }
  TensorT<T> wt(Shape{512, 2});
  wt.at(0, 0) = 0.7;
  wt.at(0, 1) = -0.4;
  wt.at(3, 0) = 0.2;
  set("t.text.w", wt);
  set("t.text.b", TensorT<T>(Shape{2}, {0.05, -0.1}));
  const double alpha = 1.7;
  set("t.alpha", TensorT<T>::full(Shape{1}, std::log(std::exp(alpha) - 1.0)));  // softplus^-1
  const TensorT<T> wo({1, 1, 2, 2}, {1.0, 0.0, 0.0, 1.0});
  set("t.out.w", wo);
  set("t.out.b", TensorT<T>(Shape{2}, {0.0, 0.0}));
  set("t.ln.gamma", TensorT<T>(Shape{2}, {1.3, 0.8}));

  const TensorT<T> x(Shape{1, 1, 2, 2}, {0.9, -0.5, 0.2, 0.4});  // hw=2 positions
  TensorT<T> yt(Shape{1, 512});
  yt.at(0, 0) = 0.6;
  yt.at(0, 3) = -1.0;

  auto out = block.forward(make_leaf(TensorT<T>(x), false), make_leaf(TensorT<T>(yt), false), true);

  // independent evaluation
  double xln[2][2];  // [position][channel]
  const double gamma[2] = {1.3, 0.8};
  for (int p = 0; p < 2; ++p) {
    const double a = x[p * 2 + 0], b = x[p * 2 + 1];
    const double mu = (a + b) / 2;
    const double var = ((a - mu) * (a - mu) + (b - mu) * (b - mu)) / 2;
    const double is = 1.0 / std::sqrt(var + 1e-6);
    xln[p][0] = (a - mu) * is * gamma[0];
    xln[p][1] = (b - mu) * is * gamma[1];
  }
  double q[2][2], k[2][2], v[2][2];  // [position][channel]
  for (int p = 0; p < 2; ++p)
    for (int co = 0; co < 2; ++co) {
      q[p][co] = xln[p][0] * wq[0 * 2 + co] + xln[p][1] * wq[1 * 2 + co];
      k[p][co] = xln[p][0] * wk[0 * 2 + co] + xln[p][1] * wk[1 * 2 + co];
      v[p][co] = xln[p][0] * wv[0 * 2 + co] + xln[p][1] * wv[1 * 2 + co];
    }
  // q/k columns unit-normalized along the two positions
  for (int i = 0; i < 2; ++i) {
    const double qn = std::sqrt(q[0][i] * q[0][i] + q[1][i] * q[1][i] + 1e-12);
    const double kn = std::sqrt(k[0][i] * k[0][i] + k[1][i] * k[1][i] + 1e-12);
    for (int p = 0; p < 2; ++p) {
      q[p][i] /= qn;
      k[p][i] /= kn;
    }
  }
  double qt[2] = {0.6 * 0.7 + (-1.0) * 0.2 + 0.05, 0.6 * (-0.4) - 0.1};
  const double qtn = std::sqrt(qt[0] * qt[0] + qt[1] * qt[1] + 1e-12);
  qt[0] /= qtn;
  qt[1] /= qtn;
  // K_I is ch x hw (K_I[i][p] = k[p][i]); A = rowsoftmax(K_I Q^T / alpha)
  double a_img[2][2], a_txt[2][2];
  for (int i = 0; i < 2; ++i) {
    double li[2], lt[2];
    for (int j = 0; j < 2; ++j) {
      li[j] = (k[0][i] * q[0][j] + k[1][i] * q[1][j]) / alpha;
      lt[j] = (k[0][i] * qt[j] + k[1][i] * qt[j]) / alpha;  // broadcast text query
    }
    for (auto [l, dst] : {std::pair{li, a_img[i]}, std::pair{lt, a_txt[i]}}) {
      const double mx = std::max(l[0], l[1]);
      const double e0 = std::exp(l[0] - mx), e1 = std::exp(l[1] - mx);
      dst[0] = e0 / (e0 + e1);
      dst[1] = e1 / (e0 + e1);
    }
  }
  // head output = (A_img + A_txt) V_I, then identity 1x1 out proj + residual
  for (int p = 0; p < 2; ++p)
    for (int i = 0; i < 2; ++i) {
      double s = 0;
      for (int j = 0; j < 2; ++j) s += (a_img[i][j] + a_txt[i][j]) * v[p][j];
      const double expected = x[p * 2 + i] + s;
      CHECK(out.val()[p * 2 + i] == doctest::Approx(expected).epsilon(1e-9));
    }
}

TEST_CASE("ffn spec cases") {
  using T = double;
  auto rs = rng::stream(6, "ffn");

  SUBCASE("zeroed final projection leaves the residual only") {
    nn::ParamStore<T> store;
    FfnBlock<T> ffn(6, 2.0, store, "f", 9);
    store.find("f.out.w").val_mut().fill(0.0);
    store.find("f.out.b").val_mut().fill(0.0);
    auto x = make_leaf(TensorT<T>::randn({1, 3, 5, 6}, rs), false);
    CHECK(bit_equal(ffn.forward(x).val(), x.val()));
  }
  SUBCASE("forcing the gate lane to zero annihilates the product") {
    nn::ParamStore<T> store;
    FfnBlock<T> ffn(4, 2.0, store, "f", 9);
    // hidden = 8; lanes are channels [0,8) and [8,16) of the expansion
    auto& w1 = store.find("f.in.w").val_mut();   // [1,1,4,16]
    auto& dw = store.find("f.depth.w").val_mut();  // [3,3,16]
    for (int64_t ci = 0; ci < 4; ++ci)
      for (int64_t co = 8; co < 16; ++co) w1.at(0, 0, ci, co) = 0.0;
    for (int64_t ky = 0; ky < 3; ++ky)
      for (int64_t kx = 0; kx < 3; ++kx)
        for (int64_t c = 8; c < 16; ++c) dw.at(ky, kx, c) = 0.0;
    auto x = make_leaf(TensorT<T>::randn({1, 4, 4, 4}, rs), false);
    CHECK(bit_equal(ffn.forward(x).val(), x.val()));  // gelu(x1) * 0 = 0control
  }
  SUBCASE("matches an independent composition of the five stages") {
    nn::ParamStore<T> store;
    FfnBlock<T> ffn(2, 2.0, store, "f", 9);  // hidden = 4, expansion lanes = 8
    auto x_t = TensorT<T>::randn({1, 2, 2, 2}, rs);
    auto out = ffn.forward(make_leaf(TensorT<T>(x_t), false));

    const auto& gamma = store.find("f.ln.gamma").val();
    const auto& w1 = store.find("f.in.w").val();
    const auto& dw = store.find("f.depth.w").val();
    const auto& w2 = store.find("f.out.w").val();
    const auto& b2 = store.find("f.out.b").val();

    const int64_t H = 2, W = 2;
    std::vector<double> ln(H * W * 2), expanded(H * W * 8), mixed(H * W * 8);
    for (int64_t p = 0; p < H * W; ++p) {
      const double a = x_t[p * 2], b = x_t[p * 2 + 1];
      const double mu = (a + b) / 2;
      const double var = ((a - mu) * (a - mu) + (b - mu) * (b - mu)) / 2;
      const double is = 1.0 / std::sqrt(var + 1e-6);
      ln[p * 2] = (a - mu) * is * gamma[0];
      ln[p * 2 + 1] = (b - mu) * is * gamma[1];
    }
    for (int64_t p = 0; p < H * W; ++p)
      for (int64_t co = 0; co < 8; ++co)
        expanded[p * 8 + co] = ln[p * 2] * w1.at(0, 0, 0, co) + ln[p * 2 + 1] * w1.at(0, 0, 1, co);
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x2 = 0; x2 < W; ++x2)
        for (int64_t c = 0; c < 8; ++c) {
          double acc = 0;
          for (int64_t ky = 0; ky < 3; ++ky)
            for (int64_t kx = 0; kx < 3; ++kx) {
              const int64_t iy = y + ky - 1, ix = x2 + kx - 1;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              acc += expanded[(iy * W + ix) * 8 + c] * dw.at(ky, kx, c);
            }
          mixed[(y * W + x2) * 8 + c] = acc;
        }
    for (int64_t p = 0; p < H * W; ++p)
      for (int64_t c = 0; c < 2; ++c) {
        double acc = b2[c];
        for (int64_t hidden = 0; hidden < 4; ++hidden) {
          const double x1 = mixed[p * 8 + hidden];
          const double x2v = mixed[p * 8 + 4 + hidden];
          const double g = 0.5 * x1 * (1.0 + std::erf(x1 * 0.7071067811865475244));
          acc += g * x2v * w2.at(0, 0, hidden, c);
        }
        CHECK(out.val()[p * 2 + c] == doctest::Approx(x_t[p * 2 + c] + acc).epsilon(1e-12));
      }
  }
}

TEST_CASE("pgca and ffn blocks pass finite-difference gradient checks") {
  using T = double;
  auto rs = rng::stream(8, "fd");

  SUBCASE("pgca") {
    nn::ParamStore<T> store;
    PgcaBlock<T> block(4, 2, store, "g", 21);
    auto x = make_leaf(TensorT<T>::randn({1, 4, 4, 4}, rs), true);
    auto yt = make_leaf(TensorT<T>::randn({1, 512}, rs), true);
    auto target = make_leaf(TensorT<T>::randn({1, 4, 4, 4}, rs), false);
    auto build = [&]() {
      auto out = block.forward(x, yt, true);
      return mean_all(mul(sub(out, target), sub(out, target)));
    };
    auto zero_all = [&]() {
      for (auto& [n, p] : store.all()) { auto v = p; v.zero_grad(); }
      x.zero_grad();
      yt.zero_grad();
    };
    for (const auto& [name, param] : store.all()) {
      zero_all();
      auto loss = build();
      loss.backward();
      auto p = param;
      const double err = testutil::fd_max_rel_error(p, [&]() { return scalar_of(build()); });
      INFO("param ", name);
      CHECK(err < 1e-3);
    }
    zero_all();
    build().backward();
    CHECK(testutil::fd_max_rel_error(x, [&]() { return scalar_of(build()); }) < 1e-3);
    zero_all();
    build().backward();
    CHECK(testutil::fd_max_rel_error(yt, [&]() { return scalar_of(build()); }) < 1e-3);
  }
  SUBCASE("ffn") {
    nn::ParamStore<T> store;
    FfnBlock<T> ffn(4, 2.0, store, "g", 22);
    auto x = make_leaf(TensorT<T>::randn({1, 4, 4, 4}, rs), true);
    auto target = make_leaf(TensorT<T>::randn({1, 4, 4, 4}, rs), false);
    auto build = [&]() {
      auto out = ffn.forward(x);
      return mean_all(mul(sub(out, target), sub(out, target)));
    };
    for (const auto& [name, param] : store.all()) {
      for (auto& [n2, p2] : store.all()) { auto v = p2; v.zero_grad(); }
      x.zero_grad();
      auto loss = build();
      loss.backward();
      auto p = param;
      const double err = testutil::fd_max_rel_error(p, [&]() { return scalar_of(build()); });
      INFO("param ", name);
      CHECK(err < 1e-3);
    }
  }
}

TEST_CASE("text guidance sensitivity") {
  RestorerConfig cfg = tiny_config();
  Restorer<float> model(cfg, 31);
  auto rs = rng::stream(9, "ts");
  // give the reconstruction conv real weights so text effects reach the output
  model.params().find("final.w").val_mut() = Tensorf::randn({3, 3, 4, 3}, rs, 0.2f);

  auto x = make_leaf(Tensorf::rand_uniform({1, 16, 16, 3}, rs, 0, 1), false);
  Tensorf y1t = Tensorf::randn({1, 512}, rs);
  Tensorf y2t = Tensorf::randn({1, 512}, rs);
  auto y1 = make_leaf(Tensorf(y1t), false);
  auto y2 = make_leaf(Tensorf(y2t), false);

  SUBCASE("distinct text features change the output (A_txt path is live)") {
    auto o1 = model.forward(x, y1, RunMode::kTrain).val();
    auto o2 = model.forward(x, y2, RunMode::kTrain).val();
    double diff = 0;
    for (int64_t i = 0; i < o1.numel(); ++i) diff += std::abs(o1[i] - o2[i]);
    CHECK(diff > 0.0);
  }
  SUBCASE("with every text projection zeroed the output ignores Y_T") {
    for (const auto& [name, param] : model.params().all())
      if (name.find(".text.") != std::string::npos) {
        auto p = param;
        p.val_mut().fill(0.0f);
      }
    auto o1 = model.forward(x, y1, RunMode::kTrain).val();
    auto o2 = model.forward(x, y2, RunMode::kTrain).val();
    CHECK(bit_equal(o1, o2));
  }
  SUBCASE("the text_guidance=off ablation switch disables A_txt") {
    auto on = model.forward(x, y1, RunMode::kTrain).val();
    model.set_text_guidance(false);
    auto off1 = model.forward(x, y1, RunMode::kTrain).val();
    auto off2 = model.forward(x, y2, RunMode::kTrain).val();
    CHECK(bit_equal(off1, off2));  // invariant to the text feature
    double diff = 0;
    for (int64_t i = 0; i < on.numel(); ++i) diff += std::abs(on[i] - off1[i]);
    CHECK(diff > 0.0);
  }
}
