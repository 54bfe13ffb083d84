#pragma once

#include <cstdint>

#include "vlur/core/kernels.hpp"

// Naive single-thread implementations of the heavy kernels, written as the
// plainest possible loops. The unit tests check the production kernels
// against these, and the kernel benchmark reports the speedup over them.

namespace vlur::reference {

template <class T>
void conv2d_fwd(const T* x, const T* w, const T* bias, T* y, const kernels::ConvDims& d) {
  const int64_t oh = d.oh(), ow = d.ow();
  for (int64_t n = 0; n < d.n; ++n)
    for (int64_t oy = 0; oy < oh; ++oy)
      for (int64_t ox = 0; ox < ow; ++ox)
        for (int64_t co = 0; co < d.cout; ++co) {
          T acc = bias ? bias[co] : T(0);
          for (int64_t ky = 0; ky < d.kh; ++ky)
            for (int64_t kx = 0; kx < d.kw; ++kx) {
              const int64_t iy = oy + ky - d.pad;
              const int64_t ix = ox + kx - d.pad;
              if (iy < 0 || iy >= d.h || ix < 0 || ix >= d.w) continue;
              for (int64_t ci = 0; ci < d.cin; ++ci)
                acc += x[((n * d.h + iy) * d.w + ix) * d.cin + ci] *
                       w[((ky * d.kw + kx) * d.cin + ci) * d.cout + co];
            }
          y[((n * oh + oy) * ow + ox) * d.cout + co] = acc;
        }
}

template <class T>
void dwconv2d_fwd(const T* x, const T* w, const T* bias, T* y, const kernels::DwDims& d) {
  const int64_t oh = d.oh(), ow = d.ow();
  for (int64_t n = 0; n < d.n; ++n)
    for (int64_t oy = 0; oy < oh; ++oy)
      for (int64_t ox = 0; ox < ow; ++ox)
        for (int64_t c = 0; c < d.c; ++c) {
          T acc = bias ? bias[c] : T(0);
          for (int64_t ky = 0; ky < d.kh; ++ky)
            for (int64_t kx = 0; kx < d.kw; ++kx) {
              const int64_t iy = oy + ky - d.pad;
              const int64_t ix = ox + kx - d.pad;
              if (iy < 0 || iy >= d.h || ix < 0 || ix >= d.w) continue;
              acc += x[((n * d.h + iy) * d.w + ix) * d.c + c] * w[(ky * d.kw + kx) * d.c + c];
            }
          y[((n * oh + oy) * ow + ox) * d.c + c] = acc;
        }
}

template <class T>
void bmm_nn(const T* a, const T* b, T* c, const kernels::BmmDims& d) {
  for (int64_t bi = 0; bi < d.b; ++bi)
    for (int64_t mi = 0; mi < d.m; ++mi)
      for (int64_t ni = 0; ni < d.n; ++ni) {
        T acc = T(0);
        for (int64_t ki = 0; ki < d.k; ++ki)
          acc += a[(bi * d.m + mi) * d.k + ki] * b[(bi * d.k + ki) * d.n + ni];
        c[(bi * d.m + mi) * d.n + ni] = acc;
      }
}

template <class T>
void bmm_tn(const T* a, const T* b, T* c, const kernels::BmmDims& d) {
  for (int64_t bi = 0; bi < d.b; ++bi)
    for (int64_t mi = 0; mi < d.m; ++mi)
      for (int64_t ni = 0; ni < d.n; ++ni) {
        T acc = T(0);
        for (int64_t p = 0; p < d.k; ++p)
          acc += a[(bi * d.k + p) * d.m + mi] * b[(bi * d.k + p) * d.n + ni];
        c[(bi * d.m + mi) * d.n + ni] = acc;
      }
}

template <class T>
void bmm_nt(const T* a, const T* b, T* c, const kernels::BmmDims& d) {
  for (int64_t bi = 0; bi < d.b; ++bi)
    for (int64_t mi = 0; mi < d.m; ++mi)
      for (int64_t ni = 0; ni < d.n; ++ni) {
        T acc = T(0);
        for (int64_t ki = 0; ki < d.k; ++ki)
          acc += a[(bi * d.m + mi) * d.k + ki] * b[(bi * d.n + ni) * d.k + ki];
        c[(bi * d.m + mi) * d.n + ni] = acc;
      }
}

template <class T>
T sum_all(const T* x, int64_t n) {
  T s = T(0);
  for (int64_t i = 0; i < n; ++i) s += x[i];
  return s;
}

}  // namespace vlur::reference
