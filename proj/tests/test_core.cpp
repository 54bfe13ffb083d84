#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "testutil.hpp"
#include "vlur/core/kernels.hpp"
#include "vlur/core/nn.hpp"
#include "vlur/core/ops.hpp"
#include "vlur/core/reference_kernels.hpp"

using namespace vlur;

TEST_CASE("rng streams are deterministic and tag-separated") {
  auto a = rng::stream(42, "alpha");
  auto b = rng::stream(42, "alpha");
  auto c = rng::stream(42, "beta");
  CHECK(a.next_u64() == b.next_u64());
  CHECK(a.next_u64() == b.next_u64());
  CHECK(rng::stream(42, "alpha").next_u64() != c.next_u64());
  auto u = rng::stream(1, "u");
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("tensor shape checks") {
  Tensorf t(Shape{2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK_THROWS_AS(Tensorf(Shape{2, 2}, std::vector<float>(5)), ShapeError);
  t.at(1, 2, 3) = 7.0f;
  CHECK(t[t.numel() - 1] == 7.0f);
}

namespace {

template <class T>
void fill_random(TensorT<T>& t, uint64_t seed) {
  auto rs = rng::stream(seed, "fill");
  for (auto& v : t.data) v = static_cast<T>(rs.normal());
}

}  // namespace

TEST_CASE("conv kernels match the naive reference and are thread-count invariant") {
  kernels::ConvDims d{2, 9, 7, 5, 6, 3, 3, 1};
  Tensorf x(Shape{d.n, d.h, d.w, d.cin}), w(Shape{d.kh, d.kw, d.cin, d.cout}), b(Shape{d.cout});
  fill_random(x, 1);
  fill_random(w, 2);
  fill_random(b, 3);
  Tensorf y_ref(Shape{d.n, d.oh(), d.ow(), d.cout});
  Tensorf y_par = y_ref, y_ser = y_ref;
  reference::conv2d_fwd(x.ptr(), w.ptr(), b.ptr(), y_ref.ptr(), d);
  parallel_enabled() = true;
  kernels::conv2d_fwd(x.ptr(), w.ptr(), b.ptr(), y_par.ptr(), d);
  parallel_enabled() = false;
  kernels::conv2d_fwd(x.ptr(), w.ptr(), b.ptr(), y_ser.ptr(), d);
  parallel_enabled() = true;
  for (int64_t i = 0; i < y_ref.numel(); ++i) {
    CHECK(y_par[i] == doctest::Approx(y_ref[i]).epsilon(1e-5));
    CHECK(y_par[i] == y_ser[i]);  // bit-identical across thread counts
  }

  SUBCASE("valid-mode (pad 0) output size") {
    kernels::ConvDims v{1, 8, 8, 2, 3, 3, 3, 0};
    CHECK(v.oh() == 6);
    CHECK(v.ow() == 6);
  }
}

TEST_CASE("dwconv kernels match the naive reference, serial == parallel") {
  kernels::DwDims d{2, 8, 6, 7, 3, 3, 1};
  Tensorf x(Shape{d.n, d.h, d.w, d.c}), w(Shape{d.kh, d.kw, d.c}), b(Shape{d.c});
  fill_random(x, 4);
  fill_random(w, 5);
  fill_random(b, 6);
  Tensorf y_ref(Shape{d.n, d.oh(), d.ow(), d.c});
  Tensorf y_par = y_ref, y_ser = y_ref;
  reference::dwconv2d_fwd(x.ptr(), w.ptr(), b.ptr(), y_ref.ptr(), d);
  kernels::dwconv2d_fwd(x.ptr(), w.ptr(), b.ptr(), y_par.ptr(), d);
  parallel_enabled() = false;
  kernels::dwconv2d_fwd(x.ptr(), w.ptr(), b.ptr(), y_ser.ptr(), d);
  parallel_enabled() = true;
  for (int64_t i = 0; i < y_ref.numel(); ++i) {
    CHECK(y_par[i] == doctest::Approx(y_ref[i]).epsilon(1e-5));
    CHECK(y_par[i] == y_ser[i]);
  }
}

TEST_CASE("bmm kernels match the naive reference, serial == parallel") {
  kernels::BmmDims d{3, 5, 17, 4};
  auto run = [&](auto ref_fn, auto fn, Shape sa, Shape sb) {
    Tensorf a(sa), b(sb);
    fill_random(a, 7);
    fill_random(b, 8);
    Tensorf y_ref(Shape{d.b, d.m, d.n});
    Tensorf y_par = y_ref, y_ser = y_ref;
    ref_fn(a.ptr(), b.ptr(), y_ref.ptr(), d);
    fn(a.ptr(), b.ptr(), y_par.ptr(), d);
    parallel_enabled() = false;
    fn(a.ptr(), b.ptr(), y_ser.ptr(), d);
    parallel_enabled() = true;
    for (int64_t i = 0; i < y_ref.numel(); ++i) {
      CHECK(y_par[i] == doctest::Approx(y_ref[i]).epsilon(1e-5));
      CHECK(y_par[i] == y_ser[i]);
    }
  };
  run(reference::bmm_nn<float>, kernels::bmm_nn<float>, Shape{d.b, d.m, d.k}, Shape{d.b, d.k, d.n});
  run(reference::bmm_tn<float>, kernels::bmm_tn<float>, Shape{d.b, d.k, d.m}, Shape{d.b, d.k, d.n});
  run(reference::bmm_nt<float>, kernels::bmm_nt<float>, Shape{d.b, d.m, d.k}, Shape{d.b, d.n, d.k});
}

TEST_CASE("deterministic chunked sum") {
  Tensorf x(Shape{100000});
  fill_random(x, 9);
  const float par = kernels::sum_all(x.ptr(), x.numel());
  parallel_enabled() = false;
  const float ser = kernels::sum_all(x.ptr(), x.numel());
  parallel_enabled() = true;
  CHECK(par == ser);
  const double ref = reference::sum_all(tensor_cast<double>(x).ptr(), x.numel());
  CHECK(par == doctest::Approx(ref).epsilon(1e-4));
}

// Finite-difference sweep over every autodiff op, double precision.
TEST_CASE("autograd ops pass central finite-difference checks") {
  auto rs = rng::stream(42, "fd");
  auto check = [&](VarT<double> param, auto&& loss_builder, double tol = 1e-5) {
    auto loss = loss_builder();
    loss.backward();
    auto fn = [&]() { return scalar_of(loss_builder()); };
    const double err = testutil::fd_max_rel_error(param, fn);
    CHECK(err < tol);
    param.zero_grad();
  };

  SUBCASE("elementwise, reductions, activations") {
    auto a = make_leaf(TensorT<double>::randn({3, 4}, rs), true);
    auto b = make_leaf(TensorT<double>::rand_uniform({3, 4}, rs, 0.5, 2.0), true);
    auto build = [&]() {
      auto s = add(mul(a, b), sub(a, b));
      s = div(s, add_scalar(vabs(b), 1.0));
      s = add(gelu(s), relu(s));
      s = add(softplus(s), mul_scalar(s, 0.3));
      auto m = add(mean_all(mul(s, s)), sum_all(clamp_min(s, -0.2)));
      return add(m, pow_scalar(add_scalar(mean_all(vabs(s)), 0.5), 1.7));
    };
    check(a, build);
    b.zero_grad();
    check(b, build);
  }

  SUBCASE("softmax, layernorm, l2norm, cross entropy") {
    auto x = make_leaf(TensorT<double>::randn({4, 6}, rs), true);
    auto g = make_leaf(TensorT<double>::rand_uniform({6}, rs, 0.5, 2.0), true);
    std::vector<int> labels = {1, 0, 5, 3};
    auto build = [&]() {
      auto y = layernorm_channels(x, g, 1e-6);
      y = softmax_lastdim(y);
      auto n = l2_normalize_rows(reshape(y, {4, 6}));
      return add(cross_entropy_rows(mul_scalar(n, 4.0), labels), mean_all(mul(y, y)));
    };
    check(x, build);
    g.zero_grad();
    check(g, build);
  }

  SUBCASE("pooling and pixel shuffles") {
    auto x = make_leaf(TensorT<double>::randn({1, 6, 8, 4}, rs), true);
    auto build = [&]() {
      auto u = pixel_unshuffle2(x);
      auto v = pixel_shuffle2(u);
      auto p = avgpool2(v);
      auto q = maxpool2(p);
      return mean_all(mul(q, q));
    };
    check(x, build);
  }

  SUBCASE("conv, dwconv, linear, bmm family") {
    auto x = make_leaf(TensorT<double>::randn({1, 5, 6, 3}, rs), true);
    auto w = make_leaf(TensorT<double>::randn({3, 3, 3, 4}, rs, 0.4), true);
    auto wb = make_leaf(TensorT<double>::randn({4}, rs, 0.1), true);
    auto dw = make_leaf(TensorT<double>::randn({3, 3, 4}, rs, 0.4), true);
    auto lin = make_leaf(TensorT<double>::randn({4, 5}, rs, 0.4), true);
    auto build = [&]() {
      auto y = conv2d(x, w, wb, 1);
      y = dwconv2d(y, dw, VarT<double>(), 1);
      auto flat = reshape(y, {30, 4});
      auto z = linear_rows(flat, lin, VarT<double>());
      auto z3 = reshape(z, {5, 6, 5});
      auto s = bmm_tn(z3, z3);
      auto t = bmm_nt(z3, s);
      auto u = bmm_nn(s, s);
      return add(mean_all(mul(t, t)), mean_all(u));
    };
    check(x, build, 2e-5);
    for (auto& p : {w, wb, dw, lin}) {
      auto pc = p;
      for (auto& q : {w, wb, dw, lin}) { auto qc = q; qc.zero_grad(); }
      check(pc, build, 2e-5);
    }
  }

  SUBCASE("slices, concat, broadcasts, smooth l1") {
    auto x = make_leaf(TensorT<double>::randn({2, 3, 8}, rs), true);
    auto qt = make_leaf(TensorT<double>::randn({1, 2, 4}, rs), true);
    auto alpha = make_leaf(TensorT<double>::rand_uniform({2}, rs, 0.5, 1.5), true);
    auto target = make_leaf(TensorT<double>::randn({2, 3, 8}, rs), false);
    auto build = [&]() {
      auto lo = slice_lastdim(x, 0, 4);
      auto hi = slice_lastdim(x, 4, 8);
      auto cat = concat_lastdim(mul(lo, hi), lo);
      auto bq = broadcast_text_query(qt, 3);
      auto scaled = div_by_batch_scalar(bq, tile_vec(alpha, 1));
      auto joined = concat_lastdim(cat, permute(scaled, {0, 1, 2}));
      return add(smooth_l1_loss(x, target, 1.0), mean_all(mul(joined, joined)));
    };
    check(x, build);
    qt.zero_grad();
    alpha.zero_grad();
    check(qt, build);
    alpha.zero_grad();
    check(alpha, build);
  }
}

TEST_CASE("no-grad mode builds no tape") {
  auto rs = rng::stream(1, "ng");
  auto x = make_leaf(TensorT<double>::randn({2, 2}, rs), true);
  NoGradGuard ng;
  auto y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->parents.empty());
}

TEST_CASE("adam step is deterministic and moves parameters") {
  auto make_run = [&]() {
    nn::ParamStore<float> store;
    auto rs = rng::stream(3, "adam");
    auto w = store.add("w", Tensorf::randn({8}, rs));
    nn::Adam<float> opt(store);
    for (int i = 0; i < 5; ++i) {
      store.zero_grad();
      auto loss = mean_all(mul(w, w));
      loss.backward();
      opt.step(0.05f);
    }
    return store.content_hash();
  };
  CHECK(make_run() == make_run());
}

TEST_CASE("cosine schedule endpoints") {
  CHECK(nn::cosine_lr(1e-3, 1e-6, 0, 100) == doctest::Approx(1e-3));
  CHECK(nn::cosine_lr(1e-3, 1e-6, 99, 100) == doctest::Approx(1e-6));
  CHECK(nn::cosine_lr(1e-3, 1e-6, 50, 100) < 1e-3);
}
