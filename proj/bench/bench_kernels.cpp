#include <chrono>
#include <cstdio>
#include <string>

#include "vlur/core/kernels.hpp"
#include "vlur/core/reference_kernels.hpp"
#include "vlur/core/tensor.hpp"

// Times the production (OpenMP) kernels against the naive serial reference
// on restoration-shaped workloads and reports the speedups.

using namespace vlur;
using Clock = std::chrono::steady_clock;

namespace {

template <class F>
double time_ms(F&& fn, int reps) {
  fn();  // warm up
  const auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) fn();
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count() / reps;
}

void report(const std::string& name, double ref_ms, double par_ms, double serial_ms) {
  std::printf("%-34s reference %9.2f ms   kernel(1t) %9.2f ms   kernel(omp) %9.2f ms   speedup %5.2fx\n",
              name.c_str(), ref_ms, serial_ms, par_ms, ref_ms / par_ms);
}

}  // namespace

int main() {
  auto rs = rng::stream(7, "bench");
  std::printf("threads: %d\n\n", thread_count());

  {
    kernels::ConvDims d{1, 64, 64, 64, 64, 3, 3, 1};
    Tensorf x = Tensorf::randn(Shape{d.n, d.h, d.w, d.cin}, rs);
    Tensorf w = Tensorf::randn(Shape{d.kh, d.kw, d.cin, d.cout}, rs);
    Tensorf b = Tensorf::randn(Shape{d.cout}, rs);
    Tensorf y(Shape{d.n, d.oh(), d.ow(), d.cout});
    const double ref = time_ms([&] { reference::conv2d_fwd(x.ptr(), w.ptr(), b.ptr(), y.ptr(), d); }, 3);
    parallel_enabled() = false;
    const double ser = time_ms([&] { kernels::conv2d_fwd(x.ptr(), w.ptr(), b.ptr(), y.ptr(), d); }, 3);
    parallel_enabled() = true;
    const double par = time_ms([&] { kernels::conv2d_fwd(x.ptr(), w.ptr(), b.ptr(), y.ptr(), d); }, 3);
    report("conv2d 3x3 64x64x64->64", ref, par, ser);
  }
  {
    kernels::ConvDims d{1, 64, 64, 16, 64, 1, 1, 0};
    Tensorf x = Tensorf::randn(Shape{d.n, d.h, d.w, d.cin}, rs);
    Tensorf w = Tensorf::randn(Shape{d.kh, d.kw, d.cin, d.cout}, rs);
    Tensorf y(Shape{d.n, d.oh(), d.ow(), d.cout});
    const double ref = time_ms([&] { reference::conv2d_fwd(x.ptr(), w.ptr(), static_cast<const float*>(nullptr), y.ptr(), d); }, 10);
    parallel_enabled() = false;
    const double ser = time_ms([&] { kernels::conv2d_fwd(x.ptr(), w.ptr(), static_cast<const float*>(nullptr), y.ptr(), d); }, 10);
    parallel_enabled() = true;
    const double par = time_ms([&] { kernels::conv2d_fwd(x.ptr(), w.ptr(), static_cast<const float*>(nullptr), y.ptr(), d); }, 10);
    report("conv2d 1x1 64x64x16->64", ref, par, ser);
  }
  {
    kernels::DwDims d{1, 64, 64, 128, 3, 3, 1};
    Tensorf x = Tensorf::randn(Shape{d.n, d.h, d.w, d.c}, rs);
    Tensorf w = Tensorf::randn(Shape{d.kh, d.kw, d.c}, rs);
    Tensorf y(Shape{d.n, d.oh(), d.ow(), d.c});
    const double ref = time_ms([&] { reference::dwconv2d_fwd(x.ptr(), w.ptr(), static_cast<const float*>(nullptr), y.ptr(), d); }, 10);
    parallel_enabled() = false;
    const double ser = time_ms([&] { kernels::dwconv2d_fwd(x.ptr(), w.ptr(), static_cast<const float*>(nullptr), y.ptr(), d); }, 10);
    parallel_enabled() = true;
    const double par = time_ms([&] { kernels::dwconv2d_fwd(x.ptr(), w.ptr(), static_cast<const float*>(nullptr), y.ptr(), d); }, 10);
    report("dwconv2d 3x3 64x64x128", ref, par, ser);
  }
  {
    // channel attention shape: K^T Q over hw=4096 positions, 8 heads of 16
    kernels::BmmDims d{8, 16, 4096, 16};
    Tensorf a = Tensorf::randn(Shape{d.b, d.k, d.m}, rs);
    Tensorf b = Tensorf::randn(Shape{d.b, d.k, d.n}, rs);
    Tensorf c(Shape{d.b, d.m, d.n});
    const double ref = time_ms([&] { reference::bmm_tn(a.ptr(), b.ptr(), c.ptr(), d); }, 10);
    parallel_enabled() = false;
    const double ser = time_ms([&] { kernels::bmm_tn(a.ptr(), b.ptr(), c.ptr(), d); }, 10);
    parallel_enabled() = true;
    const double par = time_ms([&] { kernels::bmm_tn(a.ptr(), b.ptr(), c.ptr(), d); }, 10);
    report("bmm_tn 8x(4096x16)^T(4096x16)", ref, par, ser);
  }
  {
    kernels::BmmDims d{8, 4096, 16, 16};
    Tensorf a = Tensorf::randn(Shape{d.b, d.m, d.k}, rs);
    Tensorf b = Tensorf::randn(Shape{d.b, d.n, d.k}, rs);
    Tensorf c(Shape{d.b, d.m, d.n});
    const double ref = time_ms([&] { reference::bmm_nt(a.ptr(), b.ptr(), c.ptr(), d); }, 10);
    parallel_enabled() = false;
    const double ser = time_ms([&] { kernels::bmm_nt(a.ptr(), b.ptr(), c.ptr(), d); }, 10);
    parallel_enabled() = true;
    const double par = time_ms([&] { kernels::bmm_nt(a.ptr(), b.ptr(), c.ptr(), d); }, 10);
    report("bmm_nt 8x(4096x16)(16x16)^T", ref, par, ser);
  }
  {
    const int64_t n = 1 << 22;
    Tensorf x = Tensorf::randn(Shape{n}, rs);
    volatile float sink = 0;
    const double ref = time_ms([&] { sink = reference::sum_all(x.ptr(), n); }, 10);
    parallel_enabled() = false;
    const double ser = time_ms([&] { sink = kernels::sum_all(x.ptr(), n); }, 10);
    parallel_enabled() = true;
    const double par = time_ms([&] { sink = kernels::sum_all(x.ptr(), n); }, 10);
    (void)sink;
    report("sum_all 4M", ref, par, ser);
  }
  return 0;
}
