#pragma once

#include <cstdint>
#include <vector>

#include "vlur/core/parallel.hpp"

// Compute kernels for the channels-last tensor ops. Parallelization is
// always across independent output elements and every output element is
// accumulated in a fixed serial order, so results do not depend on the
// thread count. Naive single-loop counterparts of the heavy kernels live
// in reference_kernels.hpp and are compared against these in the tests
// and in the kernel benchmark.
//
// Convolutions are stride-1 with zero padding; output size is
// oh = h + 2*pad - kh + 1 (same-size for kh=3/pad=1, valid for pad=0).

namespace vlur::kernels {

struct ConvDims {
  int64_t n, h, w, cin, cout;
  int64_t kh, kw;
  int64_t pad;
  int64_t oh() const { return h + 2 * pad - kh + 1; }
  int64_t ow() const { return w + 2 * pad - kw + 1; }
};

struct DwDims {
  int64_t n, h, w, c;
  int64_t kh, kw;
  int64_t pad;
  int64_t oh() const { return h + 2 * pad - kh + 1; }
  int64_t ow() const { return w + 2 * pad - kw + 1; }
};

// y[n,oy,ox,co] = bias[co] + sum_{ky,kx,ci} x[n,oy+ky-p,ox+kx-p,ci] * w[ky,kx,ci,co]
template <class T>
void conv2d_fwd(const T* x, const T* w, const T* bias, T* y, const ConvDims& d) {
  const int64_t oh = d.oh(), ow = d.ow();
  const int64_t rows = d.n * oh;
#pragma omp parallel for schedule(static) if (parallel_enabled())
  for (int64_t r = 0; r < rows; ++r) {
    const int64_t n = r / oh;
    const int64_t oy = r % oh;
    std::vector<T> acc(static_cast<size_t>(d.cout));
    for (int64_t ox = 0; ox < ow; ++ox) {
      for (int64_t co = 0; co < d.cout; ++co) acc[co] = bias ? bias[co] : T(0);
      for (int64_t ky = 0; ky < d.kh; ++ky) {
        const int64_t iy = oy + ky - d.pad;
        if (iy < 0 || iy >= d.h) continue;
        for (int64_t kx = 0; kx < d.kw; ++kx) {
          const int64_t ix = ox + kx - d.pad;
          if (ix < 0 || ix >= d.w) continue;
          const T* xp = x + ((n * d.h + iy) * d.w + ix) * d.cin;
          const T* wp = w + (ky * d.kw + kx) * d.cin * d.cout;
          for (int64_t ci = 0; ci < d.cin; ++ci) {
            const T xv = xp[ci];
            const T* wrow = wp + ci * d.cout;
            for (int64_t co = 0; co < d.cout; ++co) acc[co] += xv * wrow[co];
          }
        }
      }
      T* yp = y + ((n * oh + oy) * ow + ox) * d.cout;
      for (int64_t co = 0; co < d.cout; ++co) yp[co] = acc[co];
    }
  }
}

// gx[n,iy,ix,ci] = sum_{ky,kx,co} gy[n,iy-ky+p,ix-kx+p,co] * w[ky,kx,ci,co]
template <class T>
void conv2d_bwd_input(const T* gy, const T* w, T* gx, const ConvDims& d) {
  const int64_t oh = d.oh(), ow = d.ow();
  const int64_t rows = d.n * d.h;
#pragma omp parallel for schedule(static) if (parallel_enabled())
  for (int64_t r = 0; r < rows; ++r) {
    const int64_t n = r / d.h;
    const int64_t iy = r % d.h;
    std::vector<T> acc(static_cast<size_t>(d.cin));
    for (int64_t ix = 0; ix < d.w; ++ix) {
      for (int64_t ci = 0; ci < d.cin; ++ci) acc[ci] = T(0);
      for (int64_t ky = 0; ky < d.kh; ++ky) {
        const int64_t oy = iy - ky + d.pad;
        if (oy < 0 || oy >= oh) continue;
        for (int64_t kx = 0; kx < d.kw; ++kx) {
          const int64_t ox = ix - kx + d.pad;
          if (ox < 0 || ox >= ow) continue;
          const T* gp = gy + ((n * oh + oy) * ow + ox) * d.cout;
          const T* wp = w + (ky * d.kw + kx) * d.cin * d.cout;
          for (int64_t ci = 0; ci < d.cin; ++ci) {
            const T* wrow = wp + ci * d.cout;
            T s0 = T(0), s1 = T(0);
            int64_t co = 0;
            for (; co + 2 <= d.cout; co += 2) {
              s0 += gp[co] * wrow[co];
              s1 += gp[co + 1] * wrow[co + 1];
            }
            T s = s0 + s1;
            for (; co < d.cout; ++co) s += gp[co] * wrow[co];
            acc[ci] += s;
          }
        }
      }
      T* xp = gx + ((n * d.h + iy) * d.w + ix) * d.cin;
      for (int64_t ci = 0; ci < d.cin; ++ci) xp[ci] = acc[ci];
    }
  }
}

// gw[ky,kx,ci,co] = sum_{n,oy,ox} x[n,oy+ky-p,ox+kx-p,ci] * gy[n,oy,ox,co]
// gbias[co] = sum gy
template <class T>
void conv2d_bwd_weight(const T* x, const T* gy, T* gw, T* gbias, const ConvDims& d) {
  const int64_t oh = d.oh(), ow = d.ow();
  const int64_t taps = d.kh * d.kw;
#pragma omp parallel for schedule(static) if (parallel_enabled())
  for (int64_t t = 0; t < taps; ++t) {
    const int64_t ky = t / d.kw;
    const int64_t kx = t % d.kw;
    T* gwp = gw + t * d.cin * d.cout;
    for (int64_t i = 0; i < d.cin * d.cout; ++i) gwp[i] = T(0);
    for (int64_t n = 0; n < d.n; ++n) {
      for (int64_t oy = 0; oy < oh; ++oy) {
        const int64_t iy = oy + ky - d.pad;
        if (iy < 0 || iy >= d.h) continue;
        for (int64_t ox = 0; ox < ow; ++ox) {
          const int64_t ix = ox + kx - d.pad;
          if (ix < 0 || ix >= d.w) continue;
          const T* xp = x + ((n * d.h + iy) * d.w + ix) * d.cin;
          const T* gp = gy + ((n * oh + oy) * ow + ox) * d.cout;
          for (int64_t ci = 0; ci < d.cin; ++ci) {
            const T xv = xp[ci];
            T* grow = gwp + ci * d.cout;
            for (int64_t co = 0; co < d.cout; ++co) grow[co] += xv * gp[co];
          }
        }
      }
    }
  }
  if (gbias) {
    for (int64_t co = 0; co < d.cout; ++co) gbias[co] = T(0);
    for (int64_t i = 0; i < d.n * oh * ow; ++i) {
      const T* gp = gy + i * d.cout;
      for (int64_t co = 0; co < d.cout; ++co) gbias[co] += gp[co];
    }
  }
}

// Depthwise: y[n,oy,ox,c] = bias[c] + sum_{ky,kx} x[n,oy+ky-p,ox+kx-p,c] * w[ky,kx,c]
template <class T>
void dwconv2d_fwd(const T* x, const T* w, const T* bias, T* y, const DwDims& d) {
  const int64_t oh = d.oh(), ow = d.ow();
  const int64_t rows = d.n * oh;
#pragma omp parallel for schedule(static) if (parallel_enabled())
  for (int64_t r = 0; r < rows; ++r) {
    const int64_t n = r / oh;
    const int64_t oy = r % oh;
    std::vector<T> acc(static_cast<size_t>(d.c));
    for (int64_t ox = 0; ox < ow; ++ox) {
      for (int64_t c = 0; c < d.c; ++c) acc[c] = bias ? bias[c] : T(0);
      for (int64_t ky = 0; ky < d.kh; ++ky) {
        const int64_t iy = oy + ky - d.pad;
        if (iy < 0 || iy >= d.h) continue;
        for (int64_t kx = 0; kx < d.kw; ++kx) {
          const int64_t ix = ox + kx - d.pad;
          if (ix < 0 || ix >= d.w) continue;
          const T* xp = x + ((n * d.h + iy) * d.w + ix) * d.c;
          const T* wp = w + (ky * d.kw + kx) * d.c;
          for (int64_t c = 0; c < d.c; ++c) acc[c] += xp[c] * wp[c];
        }
      }
      T* yp = y + ((n * oh + oy) * ow + ox) * d.c;
      for (int64_t c = 0; c < d.c; ++c) yp[c] = acc[c];
    }
  }
}

template <class T>
void dwconv2d_bwd_input(const T* gy, const T* w, T* gx, const DwDims& d) {
  const int64_t oh = d.oh(), ow = d.ow();
  const int64_t rows = d.n * d.h;
#pragma omp parallel for schedule(static) if (parallel_enabled())
  for (int64_t r = 0; r < rows; ++r) {
    const int64_t n = r / d.h;
    const int64_t iy = r % d.h;
    std::vector<T> acc(static_cast<size_t>(d.c));
    for (int64_t ix = 0; ix < d.w; ++ix) {
      for (int64_t c = 0; c < d.c; ++c) acc[c] = T(0);
      for (int64_t ky = 0; ky < d.kh; ++ky) {
        const int64_t oy = iy - ky + d.pad;
        if (oy < 0 || oy >= oh) continue;
        for (int64_t kx = 0; kx < d.kw; ++kx) {
          const int64_t ox = ix - kx + d.pad;
          if (ox < 0 || ox >= ow) continue;
          const T* gp = gy + ((n * oh + oy) * ow + ox) * d.c;
          const T* wp = w + (ky * d.kw + kx) * d.c;
          for (int64_t c = 0; c < d.c; ++c) acc[c] += gp[c] * wp[c];
        }
      }
      T* xp = gx + ((n * d.h + iy) * d.w + ix) * d.c;
      for (int64_t c = 0; c < d.c; ++c) xp[c] = acc[c];
    }
  }
}

template <class T>
void dwconv2d_bwd_weight(const T* x, const T* gy, T* gw, T* gbias, const DwDims& d) {
  const int64_t oh = d.oh(), ow = d.ow();
  const int64_t taps = d.kh * d.kw;
#pragma omp parallel for schedule(static) if (parallel_enabled())
  for (int64_t t = 0; t < taps; ++t) {
    const int64_t ky = t / d.kw;
    const int64_t kx = t % d.kw;
    T* gwp = gw + t * d.c;
    for (int64_t c = 0; c < d.c; ++c) gwp[c] = T(0);
    for (int64_t n = 0; n < d.n; ++n) {
      for (int64_t oy = 0; oy < oh; ++oy) {
        const int64_t iy = oy + ky - d.pad;
        if (iy < 0 || iy >= d.h) continue;
        for (int64_t ox = 0; ox < ow; ++ox) {
          const int64_t ix = ox + kx - d.pad;
          if (ix < 0 || ix >= d.w) continue;
          const T* xp = x + ((n * d.h + iy) * d.w + ix) * d.c;
          const T* gp = gy + ((n * oh + oy) * ow + ox) * d.c;
          for (int64_t c = 0; c < d.c; ++c) gwp[c] += xp[c] * gp[c];
        }
      }
    }
  }
  if (gbias) {
    for (int64_t c = 0; c < d.c; ++c) gbias[c] = T(0);
    for (int64_t i = 0; i < d.n * oh * ow; ++i) {
      const T* gp = gy + i * d.c;
      for (int64_t c = 0; c < d.c; ++c) gbias[c] += gp[c];
    }
  }
}

struct BmmDims {
  int64_t b, m, k, n;  // k is the contraction length
};

// c[b,m,n] = sum_k a[b,m,k] * bb[b,k,n]
template <class T>
void bmm_nn(const T* a, const T* bb, T* c, const BmmDims& d) {
  const int64_t rows = d.b * d.m;
#pragma omp parallel for schedule(static) if (parallel_enabled())
  for (int64_t r = 0; r < rows; ++r) {
    const int64_t bi = r / d.m;
    const int64_t mi = r % d.m;
    const T* ap = a + (bi * d.m + mi) * d.k;
    const T* bp = bb + bi * d.k * d.n;
    T* cp = c + (bi * d.m + mi) * d.n;
    for (int64_t ni = 0; ni < d.n; ++ni) cp[ni] = T(0);
    for (int64_t ki = 0; ki < d.k; ++ki) {
      const T av = ap[ki];
      const T* brow = bp + ki * d.n;
      for (int64_t ni = 0; ni < d.n; ++ni) cp[ni] += av * brow[ni];
    }
  }
}

// c[b,m,n] = sum_p a[b,p,m] * bb[b,p,n]   (a transposed)
template <class T>
void bmm_tn(const T* a, const T* bb, T* c, const BmmDims& d) {
#pragma omp parallel for schedule(static) if (parallel_enabled())
  for (int64_t bi = 0; bi < d.b; ++bi) {
    const T* ap = a + bi * d.k * d.m;
    const T* bp = bb + bi * d.k * d.n;
    T* cp = c + bi * d.m * d.n;
    for (int64_t i = 0; i < d.m * d.n; ++i) cp[i] = T(0);
    for (int64_t p = 0; p < d.k; ++p) {
      const T* arow = ap + p * d.m;
      const T* brow = bp + p * d.n;
      for (int64_t mi = 0; mi < d.m; ++mi) {
        const T av = arow[mi];
        T* crow = cp + mi * d.n;
        for (int64_t ni = 0; ni < d.n; ++ni) crow[ni] += av * brow[ni];
      }
    }
  }
}

// c[b,m,n] = sum_k a[b,m,k] * bb[b,n,k]   (b transposed)
template <class T>
void bmm_nt(const T* a, const T* bb, T* c, const BmmDims& d) {
  const int64_t rows = d.b * d.m;
#pragma omp parallel for schedule(static) if (parallel_enabled())
  for (int64_t r = 0; r < rows; ++r) {
    const int64_t bi = r / d.m;
    const int64_t mi = r % d.m;
    const T* ap = a + (bi * d.m + mi) * d.k;
    const T* bp = bb + bi * d.n * d.k;
    T* cp = c + (bi * d.m + mi) * d.n;
    for (int64_t ni = 0; ni < d.n; ++ni) {
      const T* brow = bp + ni * d.k;
      T s0 = T(0), s1 = T(0), s2 = T(0), s3 = T(0);
      int64_t ki = 0;
      for (; ki + 4 <= d.k; ki += 4) {
        s0 += ap[ki] * brow[ki];
        s1 += ap[ki + 1] * brow[ki + 1];
        s2 += ap[ki + 2] * brow[ki + 2];
        s3 += ap[ki + 3] * brow[ki + 3];
      }
      T s = ((s0 + s1) + (s2 + s3));
      for (; ki < d.k; ++ki) s += ap[ki] * brow[ki];
      cp[ni] = s;
    }
  }
}

// Deterministic chunked sum: partials are computed per fixed-size chunk
// (parallel) and combined in chunk order (serial), so the result does not
// depend on the thread count.
template <class T>
T sum_all(const T* x, int64_t n) {
  constexpr int64_t kChunk = 4096;
  const int64_t nchunks = (n + kChunk - 1) / kChunk;
  std::vector<T> partial(static_cast<size_t>(nchunks));
#pragma omp parallel for schedule(static) if (parallel_enabled() && nchunks > 1)
  for (int64_t ci = 0; ci < nchunks; ++ci) {
    const int64_t lo = ci * kChunk;
    const int64_t hi = lo + kChunk < n ? lo + kChunk : n;
    T s = T(0);
    for (int64_t i = lo; i < hi; ++i) s += x[i];
    partial[ci] = s;
  }
  T total = T(0);
  for (int64_t ci = 0; ci < nchunks; ++ci) total += partial[ci];
  return total;
}

}  // namespace vlur::kernels
