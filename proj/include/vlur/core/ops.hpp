#pragma once

#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#include "vlur/core/autograd.hpp"
#include "vlur/core/kernels.hpp"

// Differentiable tensor operations. Forward values are computed by the
// kernels; each op installs a backward closure that accumulates into its
// parents' gradients. Shapes are validated eagerly so a bad graph fails at
// construction, not inside backward().

namespace vlur {
namespace detail {

template <class T>
void check_same_shape(const VarT<T>& a, const VarT<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

template <class T, class F>
TensorT<T> map(const TensorT<T>& x, F&& f) {
  TensorT<T> y(x.shape);
  const int64_t n = x.numel();
#pragma omp parallel for schedule(static) if (parallel_enabled() && n > (1 << 14))
  for (int64_t i = 0; i < n; ++i) y[i] = f(x[i]);
  return y;
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
VarT<T> add(const VarT<T>& a, const VarT<T>& b) {
  detail::check_same_shape(a, b, "add");
  TensorT<T> y(a.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = a.val()[i] + b.val()[i];
  return make_op<T>(std::move(y), {a, b}, [](NodeT<T>& self) {
    accumulate_grad(self.parents[0], self.grad);
    accumulate_grad(self.parents[1], self.grad);
  });
}

template <class T>
VarT<T> sub(const VarT<T>& a, const VarT<T>& b) {
  detail::check_same_shape(a, b, "sub");
  TensorT<T> y(a.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = a.val()[i] - b.val()[i];
  return make_op<T>(std::move(y), {a, b}, [](NodeT<T>& self) {
    accumulate_grad(self.parents[0], self.grad);
    if (self.parents[1].requires_grad()) {
      TensorT<T> g(self.grad.shape);
      for (int64_t i = 0; i < g.numel(); ++i) g[i] = -self.grad[i];
      accumulate_grad(self.parents[1], g);
    }
  });
}

template <class T>
VarT<T> mul(const VarT<T>& a, const VarT<T>& b) {
  detail::check_same_shape(a, b, "mul");
  TensorT<T> y(a.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = a.val()[i] * b.val()[i];
  return make_op<T>(std::move(y), {a, b}, [](NodeT<T>& self) {
    const TensorT<T>& av = self.parents[0].val();
    const TensorT<T>& bv = self.parents[1].val();
    if (self.parents[0].requires_grad()) {
      TensorT<T> g(self.grad.shape);
      for (int64_t i = 0; i < g.numel(); ++i) g[i] = self.grad[i] * bv[i];
      accumulate_grad(self.parents[0], g);
    }
    if (self.parents[1].requires_grad()) {
      TensorT<T> g(self.grad.shape);
      for (int64_t i = 0; i < g.numel(); ++i) g[i] = self.grad[i] * av[i];
      accumulate_grad(self.parents[1], g);
    }
  });
}

template <class T>
VarT<T> div(const VarT<T>& a, const VarT<T>& b) {
  detail::check_same_shape(a, b, "div");
  TensorT<T> y(a.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = a.val()[i] / b.val()[i];
  return make_op<T>(std::move(y), {a, b}, [](NodeT<T>& self) {
    const TensorT<T>& bv = self.parents[1].val();
    const TensorT<T>& yv = self.value;
    if (self.parents[0].requires_grad()) {
      TensorT<T> g(self.grad.shape);
      for (int64_t i = 0; i < g.numel(); ++i) g[i] = self.grad[i] / bv[i];
      accumulate_grad(self.parents[0], g);
    }
    if (self.parents[1].requires_grad()) {
      TensorT<T> g(self.grad.shape);
      for (int64_t i = 0; i < g.numel(); ++i) g[i] = -self.grad[i] * yv[i] / bv[i];
      accumulate_grad(self.parents[1], g);
    }
  });
}

template <class T>
VarT<T> add_scalar(const VarT<T>& a, T s) {
  TensorT<T> y = detail::map(a.val(), [s](T v) { return v + s; });
  return make_op<T>(std::move(y), {a},
                    [](NodeT<T>& self) { accumulate_grad(self.parents[0], self.grad); });
}

template <class T>
VarT<T> mul_scalar(const VarT<T>& a, T s) {
  TensorT<T> y = detail::map(a.val(), [s](T v) { return v * s; });
  return make_op<T>(std::move(y), {a}, [s](NodeT<T>& self) {
    TensorT<T> g(self.grad.shape);
    for (int64_t i = 0; i < g.numel(); ++i) g[i] = self.grad[i] * s;
    accumulate_grad(self.parents[0], g);
  });
}

template <class T>
VarT<T> vabs(const VarT<T>& a) {
  TensorT<T> y = detail::map(a.val(), [](T v) { return v < T(0) ? -v : v; });
  return make_op<T>(std::move(y), {a}, [](NodeT<T>& self) {
    const TensorT<T>& av = self.parents[0].val();
    TensorT<T> g(self.grad.shape);
    for (int64_t i = 0; i < g.numel(); ++i)
      g[i] = self.grad[i] * (av[i] > T(0) ? T(1) : (av[i] < T(0) ? T(-1) : T(0)));
    accumulate_grad(self.parents[0], g);
  });
}

template <class T>
VarT<T> clamp_min(const VarT<T>& a, T lo) {
  TensorT<T> y = detail::map(a.val(), [lo](T v) { return v < lo ? lo : v; });
  return make_op<T>(std::move(y), {a}, [lo](NodeT<T>& self) {
    const TensorT<T>& av = self.parents[0].val();
    TensorT<T> g(self.grad.shape);
    for (int64_t i = 0; i < g.numel(); ++i) g[i] = av[i] > lo ? self.grad[i] : T(0);
    accumulate_grad(self.parents[0], g);
  });
}

// x must be positive; used for the MS-SSIM exponents.
template <class T>
VarT<T> pow_scalar(const VarT<T>& a, T p) {
  TensorT<T> y = detail::map(a.val(), [p](T v) { return std::pow(v, p); });
  return make_op<T>(std::move(y), {a}, [p](NodeT<T>& self) {
    const TensorT<T>& av = self.parents[0].val();
    TensorT<T> g(self.grad.shape);
    for (int64_t i = 0; i < g.numel(); ++i)
      g[i] = self.grad[i] * p * std::pow(av[i], p - T(1));
    accumulate_grad(self.parents[0], g);
  });
}

template <class T>
VarT<T> relu(const VarT<T>& a) {
  TensorT<T> y = detail::map(a.val(), [](T v) { return v > T(0) ? v : T(0); });
  return make_op<T>(std::move(y), {a}, [](NodeT<T>& self) {
    const TensorT<T>& av = self.parents[0].val();
    TensorT<T> g(self.grad.shape);
    for (int64_t i = 0; i < g.numel(); ++i) g[i] = av[i] > T(0) ? self.grad[i] : T(0);
    accumulate_grad(self.parents[0], g);
  });
}

// Exact GELU, x * Phi(x).
template <class T>
VarT<T> gelu(const VarT<T>& a) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  TensorT<T> y = detail::map(a.val(), [](T v) {
    const double x = static_cast<double>(v);
    return static_cast<T>(0.5 * x * (1.0 + std::erf(x * inv_sqrt2)));
  });
  return make_op<T>(std::move(y), {a}, [](NodeT<T>& self) {
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    const TensorT<T>& av = self.parents[0].val();
    TensorT<T> g(self.grad.shape);
    for (int64_t i = 0; i < g.numel(); ++i) {
      const double x = static_cast<double>(av[i]);
      const double phi = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
      g[i] = self.grad[i] * static_cast<T>(phi + x * pdf);
    }
    accumulate_grad(self.parents[0], g);
  });
}

template <class T>
VarT<T> softplus(const VarT<T>& a) {
  TensorT<T> y = detail::map(a.val(), [](T v) {
    const double x = static_cast<double>(v);
    return static_cast<T>(x > 20.0 ? x : std::log1p(std::exp(x)));
  });
  return make_op<T>(std::move(y), {a}, [](NodeT<T>& self) {
    const TensorT<T>& av = self.parents[0].val();
    TensorT<T> g(self.grad.shape);
    for (int64_t i = 0; i < g.numel(); ++i) {
      const double x = static_cast<double>(av[i]);
      g[i] = self.grad[i] * static_cast<T>(1.0 / (1.0 + std::exp(-x)));
    }
    accumulate_grad(self.parents[0], g);
  });
}

// ---------------------------------------------------------------- reductions

template <class T>
VarT<T> sum_all(const VarT<T>& a) {
  TensorT<T> y = TensorT<T>::scalar(kernels::sum_all(a.val().ptr(), a.numel()));
  return make_op<T>(std::move(y), {a}, [](NodeT<T>& self) {
    if (!self.parents[0].requires_grad()) return;
    const T g = self.grad[0];
    TensorT<T>& pg = self.parents[0].grad();
    for (int64_t i = 0; i < pg.numel(); ++i) pg[i] += g;
  });
}

template <class T>
VarT<T> mean_all(const VarT<T>& a) {
  const T n = static_cast<T>(a.numel());
  TensorT<T> y = TensorT<T>::scalar(kernels::sum_all(a.val().ptr(), a.numel()) / n);
  return make_op<T>(std::move(y), {a}, [n](NodeT<T>& self) {
    if (!self.parents[0].requires_grad()) return;
    const T g = self.grad[0] / n;
    TensorT<T>& pg = self.parents[0].grad();
    for (int64_t i = 0; i < pg.numel(); ++i) pg[i] += g;
  });
}

// ------------------------------------------------------------------- linear

// y[M,N] = x[M,K] * w[K,N] (+ b[N])
template <class T>
VarT<T> linear_rows(const VarT<T>& x, const VarT<T>& w, const VarT<T>& b) {
  if (x.shape().size() != 2 || w.shape().size() != 2 || x.shape()[1] != w.shape()[0])
    throw ShapeError("linear_rows: incompatible shapes " + shape_str(x.shape()) + " x " +
                     shape_str(w.shape()));
  const int64_t M = x.shape()[0], K = x.shape()[1], N = w.shape()[1];
  TensorT<T> y(Shape{M, N});
  kernels::bmm_nn(x.val().ptr(), w.val().ptr(), y.ptr(), {1, M, K, N});
  if (b.defined()) {
    if (b.shape() != Shape{N}) throw ShapeError("linear_rows: bias shape mismatch");
    for (int64_t m = 0; m < M; ++m)
      for (int64_t n = 0; n < N; ++n) y[m * N + n] += b.val()[n];
  }
  std::vector<VarT<T>> parents = {x, w};
  if (b.defined()) parents.push_back(b);
  return make_op<T>(std::move(y), std::move(parents), [M, K, N](NodeT<T>& self) {
    const auto& x_ = self.parents[0];
    const auto& w_ = self.parents[1];
    if (x_.requires_grad()) {
      TensorT<T> gx(Shape{M, K});
      kernels::bmm_nt(self.grad.ptr(), w_.val().ptr(), gx.ptr(), {1, M, N, K});
      accumulate_grad(x_, gx);
    }
    if (w_.requires_grad()) {
      // gw[K,N] = x^T * g, contraction over the M rows
      TensorT<T> gw(Shape{K, N});
      kernels::bmm_tn(x_.val().ptr(), self.grad.ptr(), gw.ptr(), {1, K, M, N});
      accumulate_grad(w_, gw);
    }
    if (self.parents.size() > 2 && self.parents[2].requires_grad()) {
      TensorT<T> gb(Shape{N});
      for (int64_t m = 0; m < M; ++m)
        for (int64_t n = 0; n < N; ++n) gb[n] += self.grad[m * N + n];
      accumulate_grad(self.parents[2], gb);
    }
  });
}

// ----------------------------------------------------------- batched matmul

namespace detail {

template <class T>
void check_3d(const VarT<T>& a, const char* op) {
  if (a.shape().size() != 3) throw ShapeError(std::string(op) + ": expected 3-d tensor");
}

}  // namespace detail

template <class T>
VarT<T> bmm_nn(const VarT<T>& a, const VarT<T>& b) {
  detail::check_3d(a, "bmm_nn");
  detail::check_3d(b, "bmm_nn");
  const int64_t B = a.shape()[0], M = a.shape()[1], K = a.shape()[2], N = b.shape()[2];
  if (b.shape()[0] != B || b.shape()[1] != K) throw ShapeError("bmm_nn: shape mismatch");
  TensorT<T> y(Shape{B, M, N});
  kernels::bmm_nn(a.val().ptr(), b.val().ptr(), y.ptr(), {B, M, K, N});
  return make_op<T>(std::move(y), {a, b}, [B, M, K, N](NodeT<T>& self) {
    const auto& a_ = self.parents[0];
    const auto& b_ = self.parents[1];
    if (a_.requires_grad()) {
      TensorT<T> ga(Shape{B, M, K});
      kernels::bmm_nt(self.grad.ptr(), b_.val().ptr(), ga.ptr(), {B, M, N, K});
      accumulate_grad(a_, ga);
    }
    if (b_.requires_grad()) {
      TensorT<T> gb(Shape{B, K, N});
      kernels::bmm_tn(a_.val().ptr(), self.grad.ptr(), gb.ptr(), {B, K, M, N});
      accumulate_grad(b_, gb);
    }
  });
}

// y[B,M,N] = sum_p a[B,p,M] * b[B,p,N]
template <class T>
VarT<T> bmm_tn(const VarT<T>& a, const VarT<T>& b) {
  detail::check_3d(a, "bmm_tn");
  detail::check_3d(b, "bmm_tn");
  const int64_t B = a.shape()[0], P = a.shape()[1], M = a.shape()[2], N = b.shape()[2];
  if (b.shape()[0] != B || b.shape()[1] != P) throw ShapeError("bmm_tn: shape mismatch");
  TensorT<T> y(Shape{B, M, N});
  kernels::bmm_tn(a.val().ptr(), b.val().ptr(), y.ptr(), {B, M, P, N});
  return make_op<T>(std::move(y), {a, b}, [B, P, M, N](NodeT<T>& self) {
    const auto& a_ = self.parents[0];
    const auto& b_ = self.parents[1];
    if (a_.requires_grad()) {
      // ga[B,P,M] = b[B,P,N] * g[B,M,N]^T
      TensorT<T> ga(Shape{B, P, M});
      kernels::bmm_nt(b_.val().ptr(), self.grad.ptr(), ga.ptr(), {B, P, N, M});
      accumulate_grad(a_, ga);
    }
    if (b_.requires_grad()) {
      // gb[B,P,N] = a[B,P,M] * g[B,M,N]
      TensorT<T> gb(Shape{B, P, N});
      kernels::bmm_nn(a_.val().ptr(), self.grad.ptr(), gb.ptr(), {B, P, M, N});
      accumulate_grad(b_, gb);
    }
  });
}

// y[B,M,N] = sum_k a[B,M,k] * b[B,N,k]
template <class T>
VarT<T> bmm_nt(const VarT<T>& a, const VarT<T>& b) {
  detail::check_3d(a, "bmm_nt");
  detail::check_3d(b, "bmm_nt");
  const int64_t B = a.shape()[0], M = a.shape()[1], K = a.shape()[2], N = b.shape()[1];
  if (b.shape()[0] != B || b.shape()[2] != K) throw ShapeError("bmm_nt: shape mismatch");
  TensorT<T> y(Shape{B, M, N});
  kernels::bmm_nt(a.val().ptr(), b.val().ptr(), y.ptr(), {B, M, K, N});
  return make_op<T>(std::move(y), {a, b}, [B, M, K, N](NodeT<T>& self) {
    const auto& a_ = self.parents[0];
    const auto& b_ = self.parents[1];
    if (a_.requires_grad()) {
      TensorT<T> ga(Shape{B, M, K});
      kernels::bmm_nn(self.grad.ptr(), b_.val().ptr(), ga.ptr(), {B, M, N, K});
      accumulate_grad(a_, ga);
    }
    if (b_.requires_grad()) {
      TensorT<T> gb(Shape{B, N, K});
      kernels::bmm_tn(self.grad.ptr(), a_.val().ptr(), gb.ptr(), {B, N, M, K});
      accumulate_grad(b_, gb);
    }
  });
}

// ------------------------------------------------------------- convolutions

// x[N,H,W,Cin], w[kh,kw,Cin,Cout], optional b[Cout]; stride 1, zero pad.
template <class T>
VarT<T> conv2d(const VarT<T>& x, const VarT<T>& w, const VarT<T>& b, int64_t pad) {
  if (x.shape().size() != 4 || w.shape().size() != 4)
    throw ShapeError("conv2d: expected 4-d input and weight");
  kernels::ConvDims d{x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3],
                      w.shape()[3], w.shape()[0], w.shape()[1], pad};
  if (w.shape()[2] != d.cin)
    throw ShapeError("conv2d: weight cin " + std::to_string(w.shape()[2]) +
                     " does not match input channels " + std::to_string(d.cin));
  TensorT<T> y(Shape{d.n, d.oh(), d.ow(), d.cout});
  kernels::conv2d_fwd(x.val().ptr(), w.val().ptr(), b.defined() ? b.val().ptr() : nullptr,
                      y.ptr(), d);
  std::vector<VarT<T>> parents = {x, w};
  if (b.defined()) parents.push_back(b);
  return make_op<T>(std::move(y), std::move(parents), [d](NodeT<T>& self) {
    const auto& x_ = self.parents[0];
    const auto& w_ = self.parents[1];
    const bool has_bias = self.parents.size() > 2;
    if (x_.requires_grad()) {
      TensorT<T> gx(x_.shape());
      kernels::conv2d_bwd_input(self.grad.ptr(), w_.val().ptr(), gx.ptr(), d);
      accumulate_grad(x_, gx);
    }
    const bool need_w = w_.requires_grad();
    const bool need_b = has_bias && self.parents[2].requires_grad();
    if (need_w || need_b) {
      TensorT<T> gw(w_.shape());
      TensorT<T> gb(Shape{d.cout});
      kernels::conv2d_bwd_weight(x_.val().ptr(), self.grad.ptr(), gw.ptr(),
                                 need_b ? gb.ptr() : nullptr, d);
      if (need_w) accumulate_grad(w_, gw);
      if (need_b) accumulate_grad(self.parents[2], gb);
    }
  });
}

// x[N,H,W,C], w[kh,kw,C], optional b[C]
template <class T>
VarT<T> dwconv2d(const VarT<T>& x, const VarT<T>& w, const VarT<T>& b, int64_t pad) {
  if (x.shape().size() != 4 || w.shape().size() != 3)
    throw ShapeError("dwconv2d: expected 4-d input and 3-d weight");
  kernels::DwDims d{x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3],
                    w.shape()[0], w.shape()[1], pad};
  if (w.shape()[2] != d.c) throw ShapeError("dwconv2d: channel mismatch");
  TensorT<T> y(Shape{d.n, d.oh(), d.ow(), d.c});
  kernels::dwconv2d_fwd(x.val().ptr(), w.val().ptr(), b.defined() ? b.val().ptr() : nullptr,
                        y.ptr(), d);
  std::vector<VarT<T>> parents = {x, w};
  if (b.defined()) parents.push_back(b);
  return make_op<T>(std::move(y), std::move(parents), [d](NodeT<T>& self) {
    const auto& x_ = self.parents[0];
    const auto& w_ = self.parents[1];
    const bool has_bias = self.parents.size() > 2;
    if (x_.requires_grad()) {
      TensorT<T> gx(x_.shape());
      kernels::dwconv2d_bwd_input(self.grad.ptr(), w_.val().ptr(), gx.ptr(), d);
      accumulate_grad(x_, gx);
    }
    const bool need_w = w_.requires_grad();
    const bool need_b = has_bias && self.parents[2].requires_grad();
    if (need_w || need_b) {
      TensorT<T> gw(w_.shape());
      TensorT<T> gb(Shape{d.c});
      kernels::dwconv2d_bwd_weight(x_.val().ptr(), self.grad.ptr(), gw.ptr(),
                                   need_b ? gb.ptr() : nullptr, d);
      if (need_w) accumulate_grad(w_, gw);
      if (need_b) accumulate_grad(self.parents[2], gb);
    }
  });
}

// ------------------------------------------------------------------ pooling

// 2x2 max pool, stride 2, floor semantics (trailing odd row/col dropped).
template <class T>
VarT<T> maxpool2(const VarT<T>& x) {
  const int64_t N = x.shape()[0], H = x.shape()[1], W = x.shape()[2], C = x.shape()[3];
  const int64_t OH = H / 2, OW = W / 2;
  TensorT<T> y(Shape{N, OH, OW, C});
  auto indices = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(y.numel()));
  const TensorT<T>& xv = x.val();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t oy = 0; oy < OH; ++oy)
      for (int64_t ox = 0; ox < OW; ++ox)
        for (int64_t c = 0; c < C; ++c) {
          T best = -std::numeric_limits<T>::infinity();
          int64_t besti = 0;
          for (int64_t dy = 0; dy < 2; ++dy)
            for (int64_t dx = 0; dx < 2; ++dx) {
              const int64_t idx = ((n * H + 2 * oy + dy) * W + 2 * ox + dx) * C + c;
              if (xv[idx] > best) {
                best = xv[idx];
                besti = idx;
              }
            }
          const int64_t oidx = ((n * OH + oy) * OW + ox) * C + c;
          y[oidx] = best;
          (*indices)[static_cast<size_t>(oidx)] = besti;
        }
  return make_op<T>(std::move(y), {x}, [indices](NodeT<T>& self) {
    if (!self.parents[0].requires_grad()) return;
    TensorT<T>& pg = self.parents[0].grad();
    for (int64_t i = 0; i < self.grad.numel(); ++i)
      pg[(*indices)[static_cast<size_t>(i)]] += self.grad[i];
  });
}

// 2x2 average pool, stride 2, floor semantics.
template <class T>
VarT<T> avgpool2(const VarT<T>& x) {
  const int64_t N = x.shape()[0], H = x.shape()[1], W = x.shape()[2], C = x.shape()[3];
  const int64_t OH = H / 2, OW = W / 2;
  TensorT<T> y(Shape{N, OH, OW, C});
  const TensorT<T>& xv = x.val();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t oy = 0; oy < OH; ++oy)
      for (int64_t ox = 0; ox < OW; ++ox)
        for (int64_t c = 0; c < C; ++c) {
          T s = T(0);
          for (int64_t dy = 0; dy < 2; ++dy)
            for (int64_t dx = 0; dx < 2; ++dx)
              s += xv[((n * H + 2 * oy + dy) * W + 2 * ox + dx) * C + c];
          y[((n * OH + oy) * OW + ox) * C + c] = s * T(0.25);
        }
  return make_op<T>(std::move(y), {x}, [N, H, W, C, OH, OW](NodeT<T>& self) {
    if (!self.parents[0].requires_grad()) return;
    TensorT<T>& pg = self.parents[0].grad();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t oy = 0; oy < OH; ++oy)
        for (int64_t ox = 0; ox < OW; ++ox)
          for (int64_t c = 0; c < C; ++c) {
            const T g = self.grad[((n * OH + oy) * OW + ox) * C + c] * T(0.25);
            for (int64_t dy = 0; dy < 2; ++dy)
              for (int64_t dx = 0; dx < 2; ++dx)
                pg[((n * H + 2 * oy + dy) * W + 2 * ox + dx) * C + c] += g;
          }
  });
}

// ------------------------------------------------------------ pixel shuffle

// [N,H,W,C] -> [N,H/2,W/2,4C]; out channel block (dy*2+dx)*C + c.
template <class T>
VarT<T> pixel_unshuffle2(const VarT<T>& x) {
  const int64_t N = x.shape()[0], H = x.shape()[1], W = x.shape()[2], C = x.shape()[3];
  if (H % 2 || W % 2) throw ShapeError("pixel_unshuffle2: spatial dims must be even");
  const int64_t OH = H / 2, OW = W / 2;
  TensorT<T> y(Shape{N, OH, OW, 4 * C});
  const TensorT<T>& xv = x.val();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t oy = 0; oy < OH; ++oy)
      for (int64_t ox = 0; ox < OW; ++ox)
        for (int64_t dy = 0; dy < 2; ++dy)
          for (int64_t dx = 0; dx < 2; ++dx) {
            const T* src = &xv[((n * H + 2 * oy + dy) * W + 2 * ox + dx) * C];
            T* dst = &y[((n * OH + oy) * OW + ox) * 4 * C + (dy * 2 + dx) * C];
            for (int64_t c = 0; c < C; ++c) dst[c] = src[c];
          }
  return make_op<T>(std::move(y), {x}, [N, H, W, C, OH, OW](NodeT<T>& self) {
    if (!self.parents[0].requires_grad()) return;
    TensorT<T>& pg = self.parents[0].grad();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t oy = 0; oy < OH; ++oy)
        for (int64_t ox = 0; ox < OW; ++ox)
          for (int64_t dy = 0; dy < 2; ++dy)
            for (int64_t dx = 0; dx < 2; ++dx) {
              const T* gsrc = &self.grad[((n * OH + oy) * OW + ox) * 4 * C + (dy * 2 + dx) * C];
              T* gdst = &pg[((n * H + 2 * oy + dy) * W + 2 * ox + dx) * C];
              for (int64_t c = 0; c < C; ++c) gdst[c] += gsrc[c];
            }
  });
}

// [N,H,W,4C] -> [N,2H,2W,C]; exact inverse of pixel_unshuffle2.
template <class T>
VarT<T> pixel_shuffle2(const VarT<T>& x) {
  const int64_t N = x.shape()[0], H = x.shape()[1], W = x.shape()[2], C4 = x.shape()[3];
  if (C4 % 4) throw ShapeError("pixel_shuffle2: channels must be divisible by 4");
  const int64_t C = C4 / 4;
  TensorT<T> y(Shape{N, 2 * H, 2 * W, C});
  const TensorT<T>& xv = x.val();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t iy = 0; iy < H; ++iy)
      for (int64_t ix = 0; ix < W; ++ix)
        for (int64_t dy = 0; dy < 2; ++dy)
          for (int64_t dx = 0; dx < 2; ++dx) {
            const T* src = &xv[((n * H + iy) * W + ix) * C4 + (dy * 2 + dx) * C];
            T* dst = &y[((n * 2 * H + 2 * iy + dy) * 2 * W + 2 * ix + dx) * C];
            for (int64_t c = 0; c < C; ++c) dst[c] = src[c];
          }
  return make_op<T>(std::move(y), {x}, [N, H, W, C, C4](NodeT<T>& self) {
    if (!self.parents[0].requires_grad()) return;
    TensorT<T>& pg = self.parents[0].grad();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t iy = 0; iy < H; ++iy)
        for (int64_t ix = 0; ix < W; ++ix)
          for (int64_t dy = 0; dy < 2; ++dy)
            for (int64_t dx = 0; dx < 2; ++dx) {
              const T* gsrc = &self.grad[((n * 2 * H + 2 * iy + dy) * 2 * W + 2 * ix + dx) * C];
              T* gdst = &pg[((n * H + iy) * W + ix) * C4 + (dy * 2 + dx) * C];
              for (int64_t c = 0; c < C; ++c) gdst[c] += gsrc[c];
            }
  });
}

// ------------------------------------------------------------ normalization

// Channel layer norm over the last dim, learnable scale, no additive bias.
template <class T>
VarT<T> layernorm_channels(const VarT<T>& x, const VarT<T>& gamma, T eps = T(1e-6)) {
  const int64_t C = x.shape().back();
  if (gamma.shape() != Shape{C}) throw ShapeError("layernorm_channels: gamma shape mismatch");
  const int64_t rows = x.numel() / C;
  TensorT<T> y(x.shape());
  auto xhat = std::make_shared<TensorT<T>>(x.shape());
  auto inv_s = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
  const T* xp = x.val().ptr();
  const T* gp = gamma.val().ptr();
#pragma omp parallel for schedule(static) if (parallel_enabled() && rows > 64)
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = xp + r * C;
    T mean = T(0);
    for (int64_t c = 0; c < C; ++c) mean += xr[c];
    mean /= static_cast<T>(C);
    T var = T(0);
    for (int64_t c = 0; c < C; ++c) {
      const T d = xr[c] - mean;
      var += d * d;
    }
    var /= static_cast<T>(C);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_s)[static_cast<size_t>(r)] = is;
    for (int64_t c = 0; c < C; ++c) {
      const T xh = (xr[c] - mean) * is;
      (*xhat)[r * C + c] = xh;
      y[r * C + c] = xh * gp[c];
    }
  }
  return make_op<T>(std::move(y), {x, gamma}, [C, rows, xhat, inv_s](NodeT<T>& self) {
    const auto& x_ = self.parents[0];
    const auto& g_ = self.parents[1];
    const T* gam = g_.val().ptr();
    if (g_.requires_grad()) {
      TensorT<T> gg(Shape{C});
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < C; ++c) gg[c] += self.grad[r * C + c] * (*xhat)[r * C + c];
      accumulate_grad(g_, gg);
    }
    if (x_.requires_grad()) {
      TensorT<T> gx(x_.shape());
#pragma omp parallel for schedule(static) if (parallel_enabled() && rows > 64)
      for (int64_t r = 0; r < rows; ++r) {
        T sum_gg = T(0), sum_ggx = T(0);
        for (int64_t c = 0; c < C; ++c) {
          const T gg = self.grad[r * C + c] * gam[c];
          sum_gg += gg;
          sum_ggx += gg * (*xhat)[r * C + c];
        }
        const T is = (*inv_s)[static_cast<size_t>(r)];
        const T invC = T(1) / static_cast<T>(C);
        for (int64_t c = 0; c < C; ++c) {
          const T gg = self.grad[r * C + c] * gam[c];
          gx[r * C + c] = is * (gg - sum_gg * invC - (*xhat)[r * C + c] * sum_ggx * invC);
        }
      }
      accumulate_grad(x_, gx);
    }
  });
}

// Softmax over the last dim.
template <class T>
VarT<T> softmax_lastdim(const VarT<T>& x) {
  const int64_t D = x.shape().back();
  const int64_t rows = x.numel() / D;
  TensorT<T> y(x.shape());
  const T* xp = x.val().ptr();
#pragma omp parallel for schedule(static) if (parallel_enabled() && rows > 64)
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = xp + r * D;
    T* yr = y.ptr() + r * D;
    T mx = xr[0];
    for (int64_t i = 1; i < D; ++i) mx = xr[i] > mx ? xr[i] : mx;
    T sum = T(0);
    for (int64_t i = 0; i < D; ++i) {
      yr[i] = std::exp(xr[i] - mx);
      sum += yr[i];
    }
    const T inv = T(1) / sum;
    for (int64_t i = 0; i < D; ++i) yr[i] *= inv;
  }
  return make_op<T>(std::move(y), {x}, [D, rows](NodeT<T>& self) {
    if (!self.parents[0].requires_grad()) return;
    TensorT<T> gx(self.value.shape);
#pragma omp parallel for schedule(static) if (parallel_enabled() && rows > 64)
    for (int64_t r = 0; r < rows; ++r) {
      const T* yr = self.value.ptr() + r * D;
      const T* gr = self.grad.ptr() + r * D;
      T dot = T(0);
      for (int64_t i = 0; i < D; ++i) dot += gr[i] * yr[i];
      for (int64_t i = 0; i < D; ++i) gx[r * D + i] = yr[i] * (gr[i] - dot);
    }
    accumulate_grad(self.parents[0], gx);
  });
}

// L2 normalization of [B,M,N] along M: every (b,n) column becomes unit norm.
// Used to keep channel-attention logits in the cosine range.
template <class T>
VarT<T> l2_normalize_cols(const VarT<T>& x, T eps = T(1e-12)) {
  detail::check_3d(x, "l2_normalize_cols");
  const int64_t B = x.shape()[0], M = x.shape()[1], N = x.shape()[2];
  TensorT<T> y(x.shape());
  auto norms = std::make_shared<TensorT<T>>(Shape{B, N});
  const T* xp = x.val().ptr();
#pragma omp parallel for schedule(static) if (parallel_enabled() && B * N > 64)
  for (int64_t bn = 0; bn < B * N; ++bn) {
    const int64_t b = bn / N, n = bn % N;
    T s = T(0);
    for (int64_t m = 0; m < M; ++m) {
      const T v = xp[(b * M + m) * N + n];
      s += v * v;
    }
    const T norm = std::sqrt(s + eps);
    (*norms)[bn] = norm;
    for (int64_t m = 0; m < M; ++m) y[(b * M + m) * N + n] = xp[(b * M + m) * N + n] / norm;
  }
  return make_op<T>(std::move(y), {x}, [B, M, N, norms](NodeT<T>& self) {
    if (!self.parents[0].requires_grad()) return;
    TensorT<T> gx(self.value.shape);
#pragma omp parallel for schedule(static) if (parallel_enabled() && B * N > 64)
    for (int64_t bn = 0; bn < B * N; ++bn) {
      const int64_t b = bn / N, n = bn % N;
      T dot = T(0);
      for (int64_t m = 0; m < M; ++m)
        dot += self.grad[(b * M + m) * N + n] * self.value[(b * M + m) * N + n];
      const T inv = T(1) / (*norms)[bn];
      for (int64_t m = 0; m < M; ++m) {
        const int64_t i = (b * M + m) * N + n;
        gx[i] = (self.grad[i] - self.value[i] * dot) * inv;
      }
    }
    accumulate_grad(self.parents[0], gx);
  });
}

// Row-wise L2 normalization of [M,D].
template <class T>
VarT<T> l2_normalize_rows(const VarT<T>& x, T eps = T(1e-12)) {
  if (x.shape().size() != 2) throw ShapeError("l2_normalize_rows: expected 2-d tensor");
  const int64_t M = x.shape()[0], D = x.shape()[1];
  TensorT<T> y(x.shape());
  auto norms = std::make_shared<std::vector<T>>(static_cast<size_t>(M));
  for (int64_t m = 0; m < M; ++m) {
    T s = T(0);
    for (int64_t i = 0; i < D; ++i) s += x.val()[m * D + i] * x.val()[m * D + i];
    const T n = std::sqrt(s + eps);
    (*norms)[static_cast<size_t>(m)] = n;
    for (int64_t i = 0; i < D; ++i) y[m * D + i] = x.val()[m * D + i] / n;
  }
  return make_op<T>(std::move(y), {x}, [M, D, norms](NodeT<T>& self) {
    if (!self.parents[0].requires_grad()) return;
    TensorT<T> gx(self.value.shape);
    for (int64_t m = 0; m < M; ++m) {
      const T* yr = self.value.ptr() + m * D;
      const T* gr = self.grad.ptr() + m * D;
      T dot = T(0);
      for (int64_t i = 0; i < D; ++i) dot += gr[i] * yr[i];
      const T inv = T(1) / (*norms)[static_cast<size_t>(m)];
      for (int64_t i = 0; i < D; ++i) gx[m * D + i] = (gr[i] - yr[i] * dot) * inv;
    }
    accumulate_grad(self.parents[0], gx);
  });
}

// ------------------------------------------------------------ shape plumbing

template <class T>
VarT<T> reshape(const VarT<T>& x, Shape s) {
  if (numel_of(s) != x.numel())
    throw ShapeError("reshape: numel mismatch " + shape_str(x.shape()) + " -> " + shape_str(s));
  TensorT<T> y(std::move(s), x.val().data);
  return make_op<T>(std::move(y), {x}, [](NodeT<T>& self) {
    if (!self.parents[0].requires_grad()) return;
    TensorT<T>& pg = self.parents[0].grad();
    for (int64_t i = 0; i < pg.numel(); ++i) pg[i] += self.grad[i];
  });
}

namespace detail {

inline std::vector<int64_t> strides_of(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[static_cast<size_t>(i)] = acc;
    acc *= s[static_cast<size_t>(i)];
  }
  return st;
}

template <class T>
void permute_copy(const TensorT<T>& in, TensorT<T>& out, const std::vector<int>& perm) {
  const auto in_strides = strides_of(in.shape);
  const auto& os = out.shape;
  const int nd = static_cast<int>(os.size());
  std::vector<int64_t> idx(static_cast<size_t>(nd), 0);
  for (int64_t o = 0; o < out.numel(); ++o) {
    int64_t src = 0;
    for (int d = 0; d < nd; ++d)
      src += idx[static_cast<size_t>(d)] * in_strides[static_cast<size_t>(perm[static_cast<size_t>(d)])];
    out[o] = in[src];
    for (int d = nd - 1; d >= 0; --d) {
      if (++idx[static_cast<size_t>(d)] < os[static_cast<size_t>(d)]) break;
      idx[static_cast<size_t>(d)] = 0;
    }
  }
}

}  // namespace detail

// out dim d = in dim perm[d]
template <class T>
VarT<T> permute(const VarT<T>& x, std::vector<int> perm) {
  if (perm.size() != x.shape().size()) throw ShapeError("permute: rank mismatch");
  Shape os(perm.size());
  for (size_t d = 0; d < perm.size(); ++d) os[d] = x.shape()[static_cast<size_t>(perm[d])];
  TensorT<T> y(os);
  detail::permute_copy(x.val(), y, perm);
  return make_op<T>(std::move(y), {x}, [perm](NodeT<T>& self) {
    if (!self.parents[0].requires_grad()) return;
    std::vector<int> inv(perm.size());
    for (size_t d = 0; d < perm.size(); ++d) inv[static_cast<size_t>(perm[d])] = static_cast<int>(d);
    TensorT<T> gx(self.parents[0].shape());
    detail::permute_copy(self.grad, gx, inv);
    accumulate_grad(self.parents[0], gx);
  });
}

template <class T>
VarT<T> concat_lastdim(const VarT<T>& a, const VarT<T>& b) {
  Shape sa = a.shape(), sb = b.shape();
  if (sa.size() != sb.size()) throw ShapeError("concat_lastdim: rank mismatch");
  for (size_t d = 0; d + 1 < sa.size(); ++d)
    if (sa[d] != sb[d]) throw ShapeError("concat_lastdim: leading dims differ");
  const int64_t Da = sa.back(), Db = sb.back();
  Shape os = sa;
  os.back() = Da + Db;
  const int64_t rows = a.numel() / Da;
  TensorT<T> y(os);
  for (int64_t r = 0; r < rows; ++r) {
    std::memcpy(y.ptr() + r * (Da + Db), a.val().ptr() + r * Da, sizeof(T) * static_cast<size_t>(Da));
    std::memcpy(y.ptr() + r * (Da + Db) + Da, b.val().ptr() + r * Db,
                sizeof(T) * static_cast<size_t>(Db));
  }
  return make_op<T>(std::move(y), {a, b}, [Da, Db, rows](NodeT<T>& self) {
    if (self.parents[0].requires_grad()) {
      TensorT<T>& pg = self.parents[0].grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t i = 0; i < Da; ++i) pg[r * Da + i] += self.grad[r * (Da + Db) + i];
    }
    if (self.parents[1].requires_grad()) {
      TensorT<T>& pg = self.parents[1].grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t i = 0; i < Db; ++i) pg[r * Db + i] += self.grad[r * (Da + Db) + Da + i];
    }
  });
}

template <class T>
VarT<T> slice_lastdim(const VarT<T>& x, int64_t from, int64_t to) {
  const int64_t D = x.shape().back();
  if (from < 0 || to > D || from >= to) throw ShapeError("slice_lastdim: bad range");
  Shape os = x.shape();
  os.back() = to - from;
  const int64_t rows = x.numel() / D;
  const int64_t Dn = to - from;
  TensorT<T> y(os);
  for (int64_t r = 0; r < rows; ++r)
    std::memcpy(y.ptr() + r * Dn, x.val().ptr() + r * D + from, sizeof(T) * static_cast<size_t>(Dn));
  return make_op<T>(std::move(y), {x}, [D, Dn, from, rows](NodeT<T>& self) {
    if (!self.parents[0].requires_grad()) return;
    TensorT<T>& pg = self.parents[0].grad();
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t i = 0; i < Dn; ++i) pg[r * D + from + i] += self.grad[r * Dn + i];
  });
}

// ---------------------------------------------------- attention broadcasting

// qt[N,heads,ch] -> [N*heads, hw, ch]; every spatial row of a (n,head) slab
// is the same text query vector.
template <class T>
VarT<T> broadcast_text_query(const VarT<T>& qt, int64_t hw) {
  if (qt.shape().size() != 3) throw ShapeError("broadcast_text_query: expected [N,heads,ch]");
  const int64_t N = qt.shape()[0], Hh = qt.shape()[1], Ch = qt.shape()[2];
  TensorT<T> y(Shape{N * Hh, hw, Ch});
  for (int64_t b = 0; b < N * Hh; ++b) {
    const T* src = qt.val().ptr() + b * Ch;
    for (int64_t p = 0; p < hw; ++p)
      std::memcpy(y.ptr() + (b * hw + p) * Ch, src, sizeof(T) * static_cast<size_t>(Ch));
  }
  return make_op<T>(std::move(y), {qt}, [N, Hh, Ch, hw](NodeT<T>& self) {
    if (!self.parents[0].requires_grad()) return;
    TensorT<T>& pg = self.parents[0].grad();
    for (int64_t b = 0; b < N * Hh; ++b)
      for (int64_t p = 0; p < hw; ++p)
        for (int64_t c = 0; c < Ch; ++c) pg[b * Ch + c] += self.grad[(b * hw + p) * Ch + c];
  });
}

// v[K] -> [reps*K], rep-major.
template <class T>
VarT<T> tile_vec(const VarT<T>& v, int64_t reps) {
  const int64_t K = v.numel();
  TensorT<T> y(Shape{reps * K});
  for (int64_t r = 0; r < reps; ++r)
    std::memcpy(y.ptr() + r * K, v.val().ptr(), sizeof(T) * static_cast<size_t>(K));
  return make_op<T>(std::move(y), {v}, [K, reps](NodeT<T>& self) {
    if (!self.parents[0].requires_grad()) return;
    TensorT<T>& pg = self.parents[0].grad();
    for (int64_t r = 0; r < reps; ++r)
      for (int64_t k = 0; k < K; ++k) pg[k] += self.grad[r * K + k];
  });
}

// y[b,m,n] = x[b,m,n] / s[b]
template <class T>
VarT<T> div_by_batch_scalar(const VarT<T>& x, const VarT<T>& s) {
  detail::check_3d(x, "div_by_batch_scalar");
  const int64_t B = x.shape()[0];
  if (s.shape() != Shape{B}) throw ShapeError("div_by_batch_scalar: scale shape mismatch");
  const int64_t slab = x.numel() / B;
  TensorT<T> y(x.shape());
  for (int64_t b = 0; b < B; ++b) {
    const T inv = T(1) / s.val()[b];
    for (int64_t i = 0; i < slab; ++i) y[b * slab + i] = x.val()[b * slab + i] * inv;
  }
  return make_op<T>(std::move(y), {x, s}, [B, slab](NodeT<T>& self) {
    const auto& x_ = self.parents[0];
    const auto& s_ = self.parents[1];
    if (x_.requires_grad()) {
      TensorT<T> gx(x_.shape());
      for (int64_t b = 0; b < B; ++b) {
        const T inv = T(1) / s_.val()[b];
        for (int64_t i = 0; i < slab; ++i) gx[b * slab + i] = self.grad[b * slab + i] * inv;
      }
      accumulate_grad(x_, gx);
    }
    if (s_.requires_grad()) {
      TensorT<T> gs(Shape{B});
      for (int64_t b = 0; b < B; ++b) {
        const T inv = T(1) / s_.val()[b];
        T acc = T(0);
        for (int64_t i = 0; i < slab; ++i) acc += self.grad[b * slab + i] * self.value[b * slab + i];
        gs[b] = -acc * inv;
      }
      accumulate_grad(s_, gs);
    }
  });
}

// ------------------------------------------------------------------- losses

// Mean smooth-L1 over all elements: 0.5 d^2/beta for |d|<beta, |d|-0.5 beta else.
template <class T>
VarT<T> smooth_l1_loss(const VarT<T>& a, const VarT<T>& b, T beta = T(1)) {
  detail::check_same_shape(a, b, "smooth_l1_loss");
  const int64_t n = a.numel();
  TensorT<T> elems(Shape{n});
  for (int64_t i = 0; i < n; ++i) {
    const T d = a.val()[i] - b.val()[i];
    const T ad = d < T(0) ? -d : d;
    elems[i] = ad < beta ? T(0.5) * d * d / beta : ad - T(0.5) * beta;
  }
  TensorT<T> y = TensorT<T>::scalar(kernels::sum_all(elems.ptr(), n) / static_cast<T>(n));
  return make_op<T>(std::move(y), {a, b}, [beta, n](NodeT<T>& self) {
    const T g = self.grad[0] / static_cast<T>(n);
    const TensorT<T>& av = self.parents[0].val();
    const TensorT<T>& bv = self.parents[1].val();
    TensorT<T> gd(av.shape);
    for (int64_t i = 0; i < n; ++i) {
      const T d = av[i] - bv[i];
      const T ad = d < T(0) ? -d : d;
      gd[i] = g * (ad < beta ? d / beta : (d > T(0) ? T(1) : T(-1)));
    }
    if (self.parents[0].requires_grad()) accumulate_grad(self.parents[0], gd);
    if (self.parents[1].requires_grad()) {
      for (int64_t i = 0; i < n; ++i) gd[i] = -gd[i];
      accumulate_grad(self.parents[1], gd);
    }
  });
}

// Mean cross entropy of logits[M,C] against integer labels.
template <class T>
VarT<T> cross_entropy_rows(const VarT<T>& logits, const std::vector<int>& labels) {
  const int64_t M = logits.shape()[0], C = logits.shape()[1];
  if (static_cast<int64_t>(labels.size()) != M)
    throw ShapeError("cross_entropy_rows: label count mismatch");
  auto probs = std::make_shared<TensorT<T>>(logits.shape());
  T loss = T(0);
  for (int64_t m = 0; m < M; ++m) {
    const T* lr = logits.val().ptr() + m * C;
    T mx = lr[0];
    for (int64_t c = 1; c < C; ++c) mx = lr[c] > mx ? lr[c] : mx;
    T sum = T(0);
    for (int64_t c = 0; c < C; ++c) {
      (*probs)[m * C + c] = std::exp(lr[c] - mx);
      sum += (*probs)[m * C + c];
    }
    for (int64_t c = 0; c < C; ++c) (*probs)[m * C + c] /= sum;
    loss -= std::log((*probs)[m * C + labels[static_cast<size_t>(m)]] + T(1e-30));
  }
  loss /= static_cast<T>(M);
  return make_op<T>(TensorT<T>::scalar(loss), {logits}, [M, C, probs, labels](NodeT<T>& self) {
    if (!self.parents[0].requires_grad()) return;
    const T g = self.grad[0] / static_cast<T>(M);
    TensorT<T> gx(self.parents[0].shape());
    for (int64_t m = 0; m < M; ++m)
      for (int64_t c = 0; c < C; ++c)
        gx[m * C + c] =
            g * ((*probs)[m * C + c] - (labels[static_cast<size_t>(m)] == c ? T(1) : T(0)));
    accumulate_grad(self.parents[0], gx);
  });
}

template <class T>
T scalar_of(const VarT<T>& v) {
  if (v.numel() != 1) throw ShapeError("scalar_of: variable is not scalar");
  return v.val()[0];
}

}  // namespace vlur
