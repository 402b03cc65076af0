#include <doctest.h>

#include <random>
#include <vector>

#include "mldd/kernels.hpp"
#include "mldd/rng.hpp"

// The OpenMP kernels are pure gathers (or plane-local scatters) with the
// same per-element accumulation order as the serial reference, so every
// comparison here is bitwise.

using namespace mldd::kernels;

namespace {

std::vector<double> randomv(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::vector<double> v(n);
  for (double& x : v) x = mldd::rng::uniform(gen, -1.0, 1.0);
  return v;
}

struct ModeGuard {
  Mode saved = mode();
  ~ModeGuard() { set_mode(saved); }
};

template <class Run>
void check_modes_match(std::vector<double>& out_parallel, std::vector<double>& out_serial,
                       const Run& run) {
  ModeGuard guard;
  set_mode(Mode::Parallel);
  run(out_parallel);
  set_mode(Mode::Serial);
  run(out_serial);
  REQUIRE(out_parallel.size() == out_serial.size());
  for (std::size_t i = 0; i < out_parallel.size(); ++i) {
    REQUIRE(out_parallel[i] == out_serial[i]);
  }
}

}  // namespace

TEST_CASE("conv2d kernels: parallel == serial == reference, bitwise") {
  std::uint64_t seed = 1;
  for (const auto& [stride, pad] : std::vector<std::pair<std::int64_t, std::int64_t>>{
           {1, 0}, {1, 1}, {2, 1}, {3, 2}}) {
    Conv2dDims d;
    d.n = 2;
    d.cin = 3;
    d.h = 9;
    d.w = 7;
    d.cout = 4;
    d.kh = 3;
    d.kw = 5;
    d.stride = stride;
    d.pad = pad;
    d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
    d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
    REQUIRE(d.oh >= 1);
    REQUIRE(d.ow >= 1);

    const auto x = randomv(static_cast<std::size_t>(d.n * d.cin * d.h * d.w), seed++);
    const auto w = randomv(static_cast<std::size_t>(d.cout * d.cin * d.kh * d.kw), seed++);
    const auto b = randomv(static_cast<std::size_t>(d.cout), seed++);
    const auto gy = randomv(static_cast<std::size_t>(d.n * d.cout * d.oh * d.ow), seed++);

    std::vector<double> y_par, y_ser;
    check_modes_match(y_par, y_ser, [&](std::vector<double>& out) {
      out.assign(static_cast<std::size_t>(d.n * d.cout * d.oh * d.ow), 0.0);
      conv2d_forward(x.data(), w.data(), b.data(), out.data(), d);
    });
    std::vector<double> y_ref(y_par.size());
    ref::conv2d_forward(x.data(), w.data(), b.data(), y_ref.data(), d);
    for (std::size_t i = 0; i < y_ref.size(); ++i) REQUIRE(y_par[i] == y_ref[i]);

    std::vector<double> gx_par, gx_ser;
    check_modes_match(gx_par, gx_ser, [&](std::vector<double>& out) {
      out.assign(x.size(), 0.5);  // backward accumulates
      conv2d_backward_input(gy.data(), w.data(), out.data(), d);
    });
    std::vector<double> gx_ref(x.size(), 0.5);
    ref::conv2d_backward_input(gy.data(), w.data(), gx_ref.data(), d);
    for (std::size_t i = 0; i < gx_ref.size(); ++i) REQUIRE(gx_par[i] == gx_ref[i]);

    std::vector<double> gw_par, gw_ser;
    check_modes_match(gw_par, gw_ser, [&](std::vector<double>& out) {
      out.assign(w.size(), 0.0);
      conv2d_backward_weight(gy.data(), x.data(), out.data(), d);
    });
    std::vector<double> gw_ref(w.size(), 0.0);
    ref::conv2d_backward_weight(gy.data(), x.data(), gw_ref.data(), d);
    for (std::size_t i = 0; i < gw_ref.size(); ++i) REQUIRE(gw_par[i] == gw_ref[i]);

    std::vector<double> gb_par, gb_ser;
    check_modes_match(gb_par, gb_ser, [&](std::vector<double>& out) {
      out.assign(b.size(), 0.0);
      conv2d_backward_bias(gy.data(), gb_par == out ? gb_par.data() : out.data(), d);
    });
    std::vector<double> gb_ref(b.size(), 0.0);
    ref::conv2d_backward_bias(gy.data(), gb_ref.data(), d);
    for (std::size_t i = 0; i < gb_ref.size(); ++i) REQUIRE(gb_par[i] == gb_ref[i]);
  }
}

TEST_CASE("avg_pool kernels: parallel == serial == reference, bitwise") {
  std::uint64_t seed = 100;
  for (const auto& [k, stride, pad] : std::vector<std::array<std::int64_t, 3>>{
           {3, 1, 1}, {5, 2, 2}, {31, 1, 15}}) {
    Pool2dDims d;
    d.n = 2;
    d.c = 2;
    d.h = 33;
    d.w = 34;
    d.k = k;
    d.stride = stride;
    d.pad = pad;
    d.oh = (d.h + 2 * pad - k) / stride + 1;
    d.ow = (d.w + 2 * pad - k) / stride + 1;

    const auto x = randomv(static_cast<std::size_t>(d.n * d.c * d.h * d.w), seed++);
    const auto gy = randomv(static_cast<std::size_t>(d.n * d.c * d.oh * d.ow), seed++);

    std::vector<double> y_par, y_ser;
    check_modes_match(y_par, y_ser, [&](std::vector<double>& out) {
      out.assign(static_cast<std::size_t>(d.n * d.c * d.oh * d.ow), 0.0);
      avg_pool2d_forward(x.data(), out.data(), d);
    });
    std::vector<double> y_ref(y_par.size());
    ref::avg_pool2d_forward(x.data(), y_ref.data(), d);
    for (std::size_t i = 0; i < y_ref.size(); ++i) REQUIRE(y_par[i] == y_ref[i]);

    std::vector<double> gx_par, gx_ser;
    check_modes_match(gx_par, gx_ser, [&](std::vector<double>& out) {
      out.assign(x.size(), 0.0);
      avg_pool2d_backward(gy.data(), out.data(), d);
    });
    std::vector<double> gx_ref(x.size(), 0.0);
    ref::avg_pool2d_backward(gy.data(), gx_ref.data(), d);
    for (std::size_t i = 0; i < gx_ref.size(); ++i) REQUIRE(gx_par[i] == gx_ref[i]);
  }
}

TEST_CASE("bilinear kernels: parallel == serial == reference, bitwise") {
  std::uint64_t seed = 200;
  for (const auto& [h, w, oh, ow] : std::vector<std::array<std::int64_t, 4>>{
           {8, 8, 16, 16}, {16, 12, 64, 48}, {9, 9, 9, 9}, {16, 16, 7, 5}}) {
    ResizeDims d{2, 3, h, w, oh, ow};
    const auto x = randomv(static_cast<std::size_t>(d.n * d.c * h * w), seed++);
    const auto gy = randomv(static_cast<std::size_t>(d.n * d.c * oh * ow), seed++);

    std::vector<double> y_par, y_ser;
    check_modes_match(y_par, y_ser, [&](std::vector<double>& out) {
      out.assign(static_cast<std::size_t>(d.n * d.c * oh * ow), 0.0);
      bilinear_forward(x.data(), out.data(), d);
    });
    std::vector<double> y_ref(y_par.size());
    ref::bilinear_forward(x.data(), y_ref.data(), d);
    for (std::size_t i = 0; i < y_ref.size(); ++i) REQUIRE(y_par[i] == y_ref[i]);

    std::vector<double> gx_par, gx_ser;
    check_modes_match(gx_par, gx_ser, [&](std::vector<double>& out) {
      out.assign(x.size(), 0.0);
      bilinear_backward(gy.data(), out.data(), d);
    });
    std::vector<double> gx_ref(x.size(), 0.0);
    ref::bilinear_backward(gy.data(), gx_ref.data(), d);
    for (std::size_t i = 0; i < gx_ref.size(); ++i) REQUIRE(gx_par[i] == gx_ref[i]);
  }
}
