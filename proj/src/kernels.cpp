#include "mldd/kernels.hpp"

#include <atomic>
#include <cstring>
#include <vector>

namespace mldd::kernels {

namespace {
std::atomic<Mode> g_mode{Mode::Parallel};
std::atomic<bool> g_corrupt_conv_backward{false};

struct Lerp {
  std::int64_t lo, hi;
  double t;
};

// Half-pixel source coordinate for output index o, clamped into the input.
Lerp lerp_coeff(std::int64_t o, std::int64_t in, std::int64_t out) {
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
  if (src < 0.0) src = 0.0;
  std::int64_t lo = static_cast<std::int64_t>(src);
  if (lo > in - 1) lo = in - 1;
  const std::int64_t hi = lo + 1 < in ? lo + 1 : in - 1;
  return {lo, hi, src - static_cast<double>(lo)};
}
}  // namespace

Mode mode() { return g_mode.load(std::memory_order_relaxed); }
void set_mode(Mode m) { g_mode.store(m, std::memory_order_relaxed); }

namespace testing {
void set_corrupt_conv_backward(bool on) { g_corrupt_conv_backward.store(on); }
bool corrupt_conv_backward() { return g_corrupt_conv_backward.load(); }
}  // namespace testing

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void conv2d_forward(const double* x, const double* w, const double* b,
                    double* y, const Conv2dDims& d) {
  const std::int64_t total = d.n * d.cout * d.oh * d.ow;
  parallel_for(total, [&](std::int64_t idx) {
    const std::int64_t ow = idx % d.ow;
    const std::int64_t oh = (idx / d.ow) % d.oh;
    const std::int64_t co = (idx / (d.ow * d.oh)) % d.cout;
    const std::int64_t n = idx / (d.ow * d.oh * d.cout);
    double acc = b ? b[co] : 0.0;
    const double* xn = x + n * d.cin * d.h * d.w;
    const double* wc = w + co * d.cin * d.kh * d.kw;
    for (std::int64_t ci = 0; ci < d.cin; ++ci) {
      for (std::int64_t kh = 0; kh < d.kh; ++kh) {
        const std::int64_t ih = oh * d.stride - d.pad + kh;
        if (ih < 0 || ih >= d.h) continue;
        for (std::int64_t kw = 0; kw < d.kw; ++kw) {
          const std::int64_t iw = ow * d.stride - d.pad + kw;
          if (iw < 0 || iw >= d.w) continue;
          acc += xn[(ci * d.h + ih) * d.w + iw] * wc[(ci * d.kh + kh) * d.kw + kw];
        }
      }
    }
    y[idx] = acc;
  });
}

void conv2d_backward_input(const double* gy, const double* w, double* gx,
                           const Conv2dDims& d) {
  const std::int64_t total = d.n * d.cin * d.h * d.w;
  parallel_for(total, [&](std::int64_t idx) {
    const std::int64_t iw = idx % d.w;
    const std::int64_t ih = (idx / d.w) % d.h;
    const std::int64_t ci = (idx / (d.w * d.h)) % d.cin;
    const std::int64_t n = idx / (d.w * d.h * d.cin);
    double acc = 0.0;
    const double* gyn = gy + n * d.cout * d.oh * d.ow;
    for (std::int64_t co = 0; co < d.cout; ++co) {
      const double* wc = w + (co * d.cin + ci) * d.kh * d.kw;
      for (std::int64_t kh = 0; kh < d.kh; ++kh) {
        const std::int64_t num_h = ih + d.pad - kh;
        if (num_h < 0 || num_h % d.stride != 0) continue;
        const std::int64_t oh = num_h / d.stride;
        if (oh >= d.oh) continue;
        for (std::int64_t kw = 0; kw < d.kw; ++kw) {
          const std::int64_t num_w = iw + d.pad - kw;
          if (num_w < 0 || num_w % d.stride != 0) continue;
          const std::int64_t ow = num_w / d.stride;
          if (ow >= d.ow) continue;
          acc += wc[kh * d.kw + kw] * gyn[(co * d.oh + oh) * d.ow + ow];
        }
      }
    }
    if (g_corrupt_conv_backward.load(std::memory_order_relaxed)) acc *= 1.001;
    gx[idx] += acc;
  });
}

void conv2d_backward_weight(const double* gy, const double* x, double* gw,
                            const Conv2dDims& d) {
  const std::int64_t total = d.cout * d.cin * d.kh * d.kw;
  parallel_for(total, [&](std::int64_t idx) {
    const std::int64_t kw = idx % d.kw;
    const std::int64_t kh = (idx / d.kw) % d.kh;
    const std::int64_t ci = (idx / (d.kw * d.kh)) % d.cin;
    const std::int64_t co = idx / (d.kw * d.kh * d.cin);
    double acc = 0.0;
    for (std::int64_t n = 0; n < d.n; ++n) {
      const double* xn = x + (n * d.cin + ci) * d.h * d.w;
      const double* gyn = gy + (n * d.cout + co) * d.oh * d.ow;
      for (std::int64_t oh = 0; oh < d.oh; ++oh) {
        const std::int64_t ih = oh * d.stride - d.pad + kh;
        if (ih < 0 || ih >= d.h) continue;
        for (std::int64_t ow = 0; ow < d.ow; ++ow) {
          const std::int64_t iw = ow * d.stride - d.pad + kw;
          if (iw < 0 || iw >= d.w) continue;
          acc += xn[ih * d.w + iw] * gyn[oh * d.ow + ow];
        }
      }
    }
    gw[idx] += acc;
  });
}

void conv2d_backward_bias(const double* gy, double* gb, const Conv2dDims& d) {
  parallel_for(d.cout, [&](std::int64_t co) {
    double acc = 0.0;
    for (std::int64_t n = 0; n < d.n; ++n) {
      const double* gyn = gy + (n * d.cout + co) * d.oh * d.ow;
      for (std::int64_t i = 0; i < d.oh * d.ow; ++i) acc += gyn[i];
    }
    gb[co] += acc;
  });
}

void avg_pool2d_forward(const double* x, double* y, const Pool2dDims& d) {
  const double divisor = static_cast<double>(d.k * d.k);
  const std::int64_t total = d.n * d.c * d.oh * d.ow;
  parallel_for(total, [&](std::int64_t idx) {
    const std::int64_t ow = idx % d.ow;
    const std::int64_t oh = (idx / d.ow) % d.oh;
    const std::int64_t plane = idx / (d.ow * d.oh);
    const double* xp = x + plane * d.h * d.w;
    double acc = 0.0;
    for (std::int64_t kh = 0; kh < d.k; ++kh) {
      const std::int64_t ih = oh * d.stride - d.pad + kh;
      if (ih < 0 || ih >= d.h) continue;
      for (std::int64_t kw = 0; kw < d.k; ++kw) {
        const std::int64_t iw = ow * d.stride - d.pad + kw;
        if (iw < 0 || iw >= d.w) continue;
        acc += xp[ih * d.w + iw];
      }
    }
    y[idx] = acc / divisor;
  });
}

void avg_pool2d_backward(const double* gy, double* gx, const Pool2dDims& d) {
  const double divisor = static_cast<double>(d.k * d.k);
  const std::int64_t total = d.n * d.c * d.h * d.w;
  parallel_for(total, [&](std::int64_t idx) {
    const std::int64_t iw = idx % d.w;
    const std::int64_t ih = (idx / d.w) % d.h;
    const std::int64_t plane = idx / (d.w * d.h);
    const double* gyp = gy + plane * d.oh * d.ow;
    double acc = 0.0;
    // windows with oh*stride - pad <= ih <= oh*stride - pad + k - 1
    for (std::int64_t kh = 0; kh < d.k; ++kh) {
      const std::int64_t num_h = ih + d.pad - kh;
      if (num_h < 0 || num_h % d.stride != 0) continue;
      const std::int64_t oh = num_h / d.stride;
      if (oh >= d.oh) continue;
      for (std::int64_t kw = 0; kw < d.k; ++kw) {
        const std::int64_t num_w = iw + d.pad - kw;
        if (num_w < 0 || num_w % d.stride != 0) continue;
        const std::int64_t ow = num_w / d.stride;
        if (ow >= d.ow) continue;
        acc += gyp[oh * d.ow + ow];
      }
    }
    gx[idx] += acc / divisor;
  });
}

void bilinear_forward(const double* x, double* y, const ResizeDims& d) {
  if (d.oh == d.h && d.ow == d.w) {
    std::memcpy(y, x, sizeof(double) * static_cast<std::size_t>(d.n * d.c * d.h * d.w));
    return;
  }
  std::vector<Lerp> hc(static_cast<std::size_t>(d.oh)), wc(static_cast<std::size_t>(d.ow));
  for (std::int64_t i = 0; i < d.oh; ++i) hc[static_cast<std::size_t>(i)] = lerp_coeff(i, d.h, d.oh);
  for (std::int64_t i = 0; i < d.ow; ++i) wc[static_cast<std::size_t>(i)] = lerp_coeff(i, d.w, d.ow);
  const std::int64_t total = d.n * d.c * d.oh * d.ow;
  parallel_for(total, [&](std::int64_t idx) {
    const std::int64_t ow = idx % d.ow;
    const std::int64_t oh = (idx / d.ow) % d.oh;
    const std::int64_t plane = idx / (d.ow * d.oh);
    const double* xp = x + plane * d.h * d.w;
    const Lerp& ph = hc[static_cast<std::size_t>(oh)];
    const Lerp& pw = wc[static_cast<std::size_t>(ow)];
    y[idx] = (1.0 - ph.t) * (1.0 - pw.t) * xp[ph.lo * d.w + pw.lo] +
             (1.0 - ph.t) * pw.t * xp[ph.lo * d.w + pw.hi] +
             ph.t * (1.0 - pw.t) * xp[ph.hi * d.w + pw.lo] +
             ph.t * pw.t * xp[ph.hi * d.w + pw.hi];
  });
}

void bilinear_backward(const double* gy, double* gx, const ResizeDims& d) {
  if (d.oh == d.h && d.ow == d.w) {
    const std::int64_t total = d.n * d.c * d.h * d.w;
    parallel_for(total, [&](std::int64_t i) { gx[i] += gy[i]; });
    return;
  }
  std::vector<Lerp> hc(static_cast<std::size_t>(d.oh)), wc(static_cast<std::size_t>(d.ow));
  for (std::int64_t i = 0; i < d.oh; ++i) hc[static_cast<std::size_t>(i)] = lerp_coeff(i, d.h, d.oh);
  for (std::int64_t i = 0; i < d.ow; ++i) wc[static_cast<std::size_t>(i)] = lerp_coeff(i, d.w, d.ow);
  // Scatter is plane-local: parallelize over (n, c) planes, serial inside.
  parallel_for(d.n * d.c, [&](std::int64_t plane) {
    const double* gyp = gy + plane * d.oh * d.ow;
    double* gxp = gx + plane * d.h * d.w;
    for (std::int64_t oh = 0; oh < d.oh; ++oh) {
      const Lerp& ph = hc[static_cast<std::size_t>(oh)];
      for (std::int64_t ow = 0; ow < d.ow; ++ow) {
        const Lerp& pw = wc[static_cast<std::size_t>(ow)];
        const double g = gyp[oh * d.ow + ow];
        gxp[ph.lo * d.w + pw.lo] += (1.0 - ph.t) * (1.0 - pw.t) * g;
        gxp[ph.lo * d.w + pw.hi] += (1.0 - ph.t) * pw.t * g;
        gxp[ph.hi * d.w + pw.lo] += ph.t * (1.0 - pw.t) * g;
        gxp[ph.hi * d.w + pw.hi] += ph.t * pw.t * g;
      }
    }
  });
}

}  // namespace mldd::kernels
