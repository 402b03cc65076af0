// Times the OpenMP kernel path against the serial reference on the conv,
// pooling and resize workloads the decoder actually runs.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#include <CLI11.hpp>

#include "mldd/kernels.hpp"
#include "mldd/rng.hpp"

namespace {

using mldd::kernels::Conv2dDims;
using mldd::kernels::Pool2dDims;
using mldd::kernels::ResizeDims;

std::vector<double> randomv(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::vector<double> v(n);
  for (double& x : v) x = mldd::rng::uniform(gen, -1.0, 1.0);
  return v;
}

double time_ms(int iters, const std::function<void()>& fn) {
  fn();  // warm up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < iters; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / iters;
}

void report(const char* name, int iters, const std::function<void()>& ref,
            const std::function<void()>& par) {
  mldd::kernels::set_mode(mldd::kernels::Mode::Serial);
  const double t_ref = time_ms(iters, ref);
  const double t_serial = time_ms(iters, par);
  mldd::kernels::set_mode(mldd::kernels::Mode::Parallel);
  const double t_par = time_ms(iters, par);
  std::printf("%-28s ref %8.3f ms   kernel(serial) %8.3f ms   kernel(omp) %8.3f ms   speedup %.2fx\n",
              name, t_ref, t_serial, t_par, t_serial / t_par);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mldd kernel benchmark: serial reference vs OpenMP path"};
  int iters = 5;
  std::int64_t batch = 4, size = 64;
  app.add_option("--iters", iters, "iterations per measurement (default 5)");
  app.add_option("--batch", batch, "batch size (default 4)");
  app.add_option("--size", size, "image extent (default 64)");
  CLI11_PARSE(app, argc, argv);

  std::printf("threads available: %d\n", mldd::kernels::max_threads());

  {
    Conv2dDims d{batch, 32, size / 4, size / 4, 32, 3, 3, 1, 1, size / 4, size / 4};
    const auto x = randomv(static_cast<std::size_t>(d.n * d.cin * d.h * d.w), 1);
    const auto w = randomv(static_cast<std::size_t>(d.cout * d.cin * d.kh * d.kw), 2);
    const auto b = randomv(static_cast<std::size_t>(d.cout), 3);
    std::vector<double> y(static_cast<std::size_t>(d.n * d.cout * d.oh * d.ow));
    report("conv2d_forward 32x32ch", iters,
           [&] { mldd::kernels::ref::conv2d_forward(x.data(), w.data(), b.data(), y.data(), d); },
           [&] { mldd::kernels::conv2d_forward(x.data(), w.data(), b.data(), y.data(), d); });

    const auto gy = randomv(y.size(), 4);
    std::vector<double> gx(x.size());
    report("conv2d_backward_input", iters,
           [&] { mldd::kernels::ref::conv2d_backward_input(gy.data(), w.data(), gx.data(), d); },
           [&] { mldd::kernels::conv2d_backward_input(gy.data(), w.data(), gx.data(), d); });

    std::vector<double> gw(w.size());
    report("conv2d_backward_weight", iters,
           [&] { mldd::kernels::ref::conv2d_backward_weight(gy.data(), x.data(), gw.data(), d); },
           [&] { mldd::kernels::conv2d_backward_weight(gy.data(), x.data(), gw.data(), d); });
  }

  {
    Pool2dDims d{batch, 1, size, size, 31, 1, 15, size, size};
    const auto x = randomv(static_cast<std::size_t>(d.n * d.c * d.h * d.w), 5);
    std::vector<double> y(static_cast<std::size_t>(d.n * d.c * d.oh * d.ow));
    report("avg_pool2d 31x31", iters,
           [&] { mldd::kernels::ref::avg_pool2d_forward(x.data(), y.data(), d); },
           [&] { mldd::kernels::avg_pool2d_forward(x.data(), y.data(), d); });
  }

  {
    ResizeDims d{batch, 32, size / 4, size / 4, size, size};
    const auto x = randomv(static_cast<std::size_t>(d.n * d.c * d.h * d.w), 6);
    std::vector<double> y(static_cast<std::size_t>(d.n * d.c * d.oh * d.ow));
    report("bilinear_forward 4x", iters,
           [&] { mldd::kernels::ref::bilinear_forward(x.data(), y.data(), d); },
           [&] { mldd::kernels::bilinear_forward(x.data(), y.data(), d); });
  }

  return 0;
}
