// Times every kernel against its serial reference and prints the speedup.
// Run: ./bench/rankpyr_bench [repeats]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>

#include "rankpyr/kernels.hpp"
#include "rankpyr/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace rankpyr;
namespace k = rankpyr::kernels;

namespace {

double time_ms(const std::function<void()>& fn, int repeats) {
  fn();  // warm up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < repeats; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / repeats;
}

void report(const char* name, double serial_ms, double parallel_ms) {
  std::printf("%-28s serial %9.3f ms   parallel %9.3f ms   speedup %5.2fx\n", name, serial_ms, parallel_ms,
              serial_ms / parallel_ms);
}

Tensor random_tensor(int c, int h, int w, Rng& rng) {
  Tensor t(c, h, w);
  for (double& v : t.data) v = rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace

int main(int argc, char** argv) {
  const int repeats = argc > 1 ? std::atoi(argv[1]) : 5;
  k::set_parallel_cutoff(0);  // measure the true parallel paths
#ifdef _OPENMP
  std::printf("OpenMP threads: %d, repeats: %d\n\n", omp_get_max_threads(), repeats);
#else
  std::printf("OpenMP disabled, repeats: %d\n\n", repeats);
#endif

  Rng rng(1);

  {
    const k::ConvSpec spec{32, 32, 3, 1, 1};
    Tensor x = random_tensor(32, 96, 96, rng);
    Tensor w = random_tensor(32, 32, 9, rng);
    Tensor b = random_tensor(32, 1, 1, rng);
    Tensor y;
    report("conv2d 32x96x96 fwd", time_ms([&] { k::serial::conv2d_forward(spec, x, w.data.data(), b.data.data(), y); }, repeats),
           time_ms([&] { k::par::conv2d_forward(spec, x, w.data.data(), b.data.data(), y); }, repeats));

    Tensor dy = random_tensor(32, 96, 96, rng);
    Tensor dx;
    report("conv2d 32x96x96 bwd data",
           time_ms([&] { k::serial::conv2d_backward_data(spec, dy, w.data.data(), dx); }, repeats),
           time_ms([&] { k::par::conv2d_backward_data(spec, dy, w.data.data(), dx); }, repeats));

    Tensor dw(32, 32, 9), db(32, 1, 1);
    report("conv2d 32x96x96 bwd weights",
           time_ms([&] { k::serial::conv2d_backward_weights(spec, x, dy, dw.data.data(), db.data.data()); }, repeats),
           time_ms([&] { k::par::conv2d_backward_weights(spec, x, dy, dw.data.data(), db.data.data()); }, repeats));
  }

  {
    Tensor x = random_tensor(16, 64, 64, rng);
    Tensor up(16, 256, 256);
    report("bilinear 16:64->256 fwd", time_ms([&] { k::serial::bilinear_resize_forward(x, up); }, repeats),
           time_ms([&] { k::par::bilinear_resize_forward(x, up); }, repeats));

    Tensor dy = random_tensor(16, 256, 256, rng);
    Tensor dx(16, 64, 64);
    report("bilinear 16:256->64 bwd",
           time_ms([&] { dx.fill(0.0); k::serial::bilinear_resize_backward(dy, dx); }, repeats),
           time_ms([&] { dx.fill(0.0); k::par::bilinear_resize_backward(dy, dx); }, repeats));
  }

  {
    Tensor x = random_tensor(64, 128, 128, rng);
    Tensor y;
    std::vector<int32_t> idx;
    report("maxpool2 64x128x128", time_ms([&] { k::serial::maxpool2_forward(x, y, idx); }, repeats),
           time_ms([&] { k::par::maxpool2_forward(x, y, idx); }, repeats));
  }

  {
    std::vector<double> v(4 << 20);
    for (double& x : v) x = rng.uniform(-1, 1);
    report("reduce_sum 4M", time_ms([&] { (void)k::serial::reduce_sum(v.data(), v.size()); }, repeats),
           time_ms([&] { (void)k::par::reduce_sum(v.data(), v.size()); }, repeats));
  }

  {
    const int n = 400, h = 512, w = 512;
    std::vector<double> xs(n), ys(n), sigmas(n);
    for (int i = 0; i < n; ++i) {
      xs[i] = rng.uniform(0, w - 1.0);
      ys[i] = rng.uniform(0, h - 1.0);
      sigmas[i] = rng.uniform(2.0, 15.0);
    }
    std::vector<float> grid(static_cast<size_t>(h) * w);
    report("gaussian_splat 400@512",
           time_ms([&] { std::fill(grid.begin(), grid.end(), 0.0f);
                         k::serial::gaussian_splat(xs.data(), ys.data(), sigmas.data(), n, h, w, grid.data()); }, repeats),
           time_ms([&] { std::fill(grid.begin(), grid.end(), 0.0f);
                         k::par::gaussian_splat(xs.data(), ys.data(), sigmas.data(), n, h, w, grid.data()); }, repeats));
  }

  return 0;
}
