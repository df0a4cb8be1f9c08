// Compares the OpenMP kernels against their serial reference
// implementations: wall time, speedup, and max absolute difference.

#include <chrono>
#include <cstdio>
#include <functional>

#include "CLI11.hpp"
#include "terracer/kernels.hpp"
#include "terracer/ref_kernels.hpp"
#include "terracer/rng.hpp"
#include "terracer/threading.hpp"

using namespace terracer;

namespace {

double time_ms(const std::function<void()>& fn, int iters) {
  fn();  // warm up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < iters; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / iters;
}

double max_abs_diff(const Tensor<float>& a, const Tensor<float>& b) {
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

void row(const char* name, double serial_ms, double omp_ms, double diff) {
  std::printf("%-28s %10.2f ms %10.2f ms %8.2fx   max|d|=%.3g\n", name,
              serial_ms, omp_ms, serial_ms / omp_ms, diff);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kernel benchmark: serial reference vs OpenMP"};
  int size = 96, iters = 3, threads = 0;
  app.add_option("--size", size, "spatial extent");
  app.add_option("--iters", iters, "timed iterations");
  app.add_option("--threads", threads, "thread cap");
  CLI11_PARSE(app, argc, argv);
  apply_thread_cap_from_env(threads);

  auto rng = make_rng(7);
  std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "openmp",
              "speedup");

  {  // conv2d: 16->32 channels, 3x3
    Tensor<float> in({2, 16, size, size}), w({32, 16, 3, 3}), b({32});
    fill_uniform(in, rng, -1.0f, 1.0f);
    fill_uniform(w, rng, -0.5f, 0.5f);
    Tensor<float> fast({2, 32, size, size}), slow;
    const double t_omp = time_ms(
        [&] {
          kernels::conv2d_forward(in.data(), w.data(), b.data(), fast.data(),
                                  2, 16, size, size, 32, 3, 3, 1, 1, size,
                                  size);
        },
        iters);
    const double t_ser =
        time_ms([&] { slow = ref::conv2d(in, w, b, 1, 1); }, iters);
    row("conv2d 16->32 3x3", t_ser, t_omp, max_abs_diff(fast, slow));
  }

  {  // conv3d: the spectral-fusion workhorse
    const int d = 9, sp = size / 2;
    Tensor<float> in({1, 8, d, sp, sp}), w({16, 8, 3, 3, 3}), b({16});
    fill_uniform(in, rng, -1.0f, 1.0f);
    fill_uniform(w, rng, -0.5f, 0.5f);
    Tensor<float> fast({1, 16, d, sp, sp}), slow;
    const double t_omp = time_ms(
        [&] {
          kernels::conv3d_forward(in.data(), w.data(), b.data(), fast.data(),
                                  1, 8, d, sp, sp, 16, 3, 3, 3, {1, 1, 1},
                                  {1, 1, 1}, d, sp, sp);
        },
        iters);
    const double t_ser = time_ms(
        [&] { slow = ref::conv3d(in, w, b, {1, 1, 1}, {1, 1, 1}); }, iters);
    row("conv3d 8->16 3x3x3", t_ser, t_omp, max_abs_diff(fast, slow));
  }

  {  // max pooling
    Tensor<float> in({4, 64, size, size});
    fill_uniform(in, rng, -1.0f, 1.0f);
    const int ho = size / 2;
    Tensor<float> fast({4, 64, ho, ho});
    std::vector<uint32_t> idx((size_t)4 * 64 * ho * ho);
    std::pair<Tensor<float>, std::vector<uint32_t>> slow;
    const double t_omp = time_ms(
        [&] {
          kernels::maxpool2d_forward(in.data(), fast.data(), idx.data(), 4,
                                     64, size, size, ho, ho);
        },
        iters);
    const double t_ser = time_ms([&] { slow = ref::maxpool2x2(in); }, iters);
    row("maxpool 2x2", t_ser, t_omp, max_abs_diff(fast, slow.first));
  }

  {  // bilinear x3 upsample
    Tensor<float> in({1, 13, size, size});
    fill_uniform(in, rng, 0.0f, 1.0f);
    Tensor<float> fast({1, 13, size * 3, size * 3}), slow;
    const double t_omp = time_ms(
        [&] {
          kernels::bilinear_forward(in.data(), fast.data(), 1, 13, size, size,
                                    size * 3, size * 3);
        },
        iters);
    const double t_ser =
        time_ms([&] { slow = ref::bilinear(in, size * 3, size * 3); }, iters);
    row("bilinear x3", t_ser, t_omp, max_abs_diff(fast, slow));
  }

  return 0;
}
