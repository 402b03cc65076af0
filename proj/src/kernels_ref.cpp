#include <cstring>

#include "mldd/kernels.hpp"

// Plain nested-loop reference kernels. No threading, no precomputed
// coefficient tables; accumulation order matches the parallel path so the
// two can be compared bitwise.

namespace mldd::kernels::ref {

namespace {
void src_coeff(std::int64_t o, std::int64_t in, std::int64_t out,
               std::int64_t& lo, std::int64_t& hi, double& t) {
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
  if (src < 0.0) src = 0.0;
  lo = static_cast<std::int64_t>(src);
  if (lo > in - 1) lo = in - 1;
  hi = lo + 1 < in ? lo + 1 : in - 1;
  t = src - static_cast<double>(lo);
}
}  // namespace

void conv2d_forward(const double* x, const double* w, const double* b,
                    double* y, const Conv2dDims& d) {
  for (std::int64_t n = 0; n < d.n; ++n)
    for (std::int64_t co = 0; co < d.cout; ++co)
      for (std::int64_t oh = 0; oh < d.oh; ++oh)
        for (std::int64_t ow = 0; ow < d.ow; ++ow) {
          double acc = b ? b[co] : 0.0;
          for (std::int64_t ci = 0; ci < d.cin; ++ci)
            for (std::int64_t kh = 0; kh < d.kh; ++kh)
              for (std::int64_t kw = 0; kw < d.kw; ++kw) {
                const std::int64_t ih = oh * d.stride - d.pad + kh;
                const std::int64_t iw = ow * d.stride - d.pad + kw;
                if (ih < 0 || ih >= d.h || iw < 0 || iw >= d.w) continue;
                acc += x[((n * d.cin + ci) * d.h + ih) * d.w + iw] *
                       w[((co * d.cin + ci) * d.kh + kh) * d.kw + kw];
              }
          y[((n * d.cout + co) * d.oh + oh) * d.ow + ow] = acc;
        }
}

void conv2d_backward_input(const double* gy, const double* w, double* gx,
                           const Conv2dDims& d) {
  for (std::int64_t n = 0; n < d.n; ++n)
    for (std::int64_t ci = 0; ci < d.cin; ++ci)
      for (std::int64_t ih = 0; ih < d.h; ++ih)
        for (std::int64_t iw = 0; iw < d.w; ++iw) {
          double acc = 0.0;
          for (std::int64_t co = 0; co < d.cout; ++co)
            for (std::int64_t kh = 0; kh < d.kh; ++kh)
              for (std::int64_t kw = 0; kw < d.kw; ++kw) {
                const std::int64_t num_h = ih + d.pad - kh;
                const std::int64_t num_w = iw + d.pad - kw;
                if (num_h < 0 || num_w < 0) continue;
                if (num_h % d.stride != 0 || num_w % d.stride != 0) continue;
                const std::int64_t oh = num_h / d.stride;
                const std::int64_t ow = num_w / d.stride;
                if (oh >= d.oh || ow >= d.ow) continue;
                acc += w[((co * d.cin + ci) * d.kh + kh) * d.kw + kw] *
                       gy[((n * d.cout + co) * d.oh + oh) * d.ow + ow];
              }
          gx[((n * d.cin + ci) * d.h + ih) * d.w + iw] += acc;
        }
}

void conv2d_backward_weight(const double* gy, const double* x, double* gw,
                            const Conv2dDims& d) {
  for (std::int64_t co = 0; co < d.cout; ++co)
    for (std::int64_t ci = 0; ci < d.cin; ++ci)
      for (std::int64_t kh = 0; kh < d.kh; ++kh)
        for (std::int64_t kw = 0; kw < d.kw; ++kw) {
          double acc = 0.0;
          for (std::int64_t n = 0; n < d.n; ++n)
            for (std::int64_t oh = 0; oh < d.oh; ++oh)
              for (std::int64_t ow = 0; ow < d.ow; ++ow) {
                const std::int64_t ih = oh * d.stride - d.pad + kh;
                const std::int64_t iw = ow * d.stride - d.pad + kw;
                if (ih < 0 || ih >= d.h || iw < 0 || iw >= d.w) continue;
                acc += x[((n * d.cin + ci) * d.h + ih) * d.w + iw] *
                       gy[((n * d.cout + co) * d.oh + oh) * d.ow + ow];
              }
          gw[((co * d.cin + ci) * d.kh + kh) * d.kw + kw] += acc;
        }
}

void conv2d_backward_bias(const double* gy, double* gb, const Conv2dDims& d) {
  for (std::int64_t co = 0; co < d.cout; ++co) {
    double acc = 0.0;
    for (std::int64_t n = 0; n < d.n; ++n)
      for (std::int64_t i = 0; i < d.oh * d.ow; ++i)
        acc += gy[(n * d.cout + co) * d.oh * d.ow + i];
    gb[co] += acc;
  }
}

void avg_pool2d_forward(const double* x, double* y, const Pool2dDims& d) {
  const double divisor = static_cast<double>(d.k * d.k);
  for (std::int64_t plane = 0; plane < d.n * d.c; ++plane)
    for (std::int64_t oh = 0; oh < d.oh; ++oh)
      for (std::int64_t ow = 0; ow < d.ow; ++ow) {
        double acc = 0.0;
        for (std::int64_t kh = 0; kh < d.k; ++kh)
          for (std::int64_t kw = 0; kw < d.k; ++kw) {
            const std::int64_t ih = oh * d.stride - d.pad + kh;
            const std::int64_t iw = ow * d.stride - d.pad + kw;
            if (ih < 0 || ih >= d.h || iw < 0 || iw >= d.w) continue;
            acc += x[plane * d.h * d.w + ih * d.w + iw];
          }
        y[plane * d.oh * d.ow + oh * d.ow + ow] = acc / divisor;
      }
}

void avg_pool2d_backward(const double* gy, double* gx, const Pool2dDims& d) {
  const double divisor = static_cast<double>(d.k * d.k);
  for (std::int64_t plane = 0; plane < d.n * d.c; ++plane)
    for (std::int64_t ih = 0; ih < d.h; ++ih)
      for (std::int64_t iw = 0; iw < d.w; ++iw) {
        double acc = 0.0;
        for (std::int64_t kh = 0; kh < d.k; ++kh)
          for (std::int64_t kw = 0; kw < d.k; ++kw) {
            const std::int64_t num_h = ih + d.pad - kh;
            const std::int64_t num_w = iw + d.pad - kw;
            if (num_h < 0 || num_w < 0) continue;
            if (num_h % d.stride != 0 || num_w % d.stride != 0) continue;
            const std::int64_t oh = num_h / d.stride;
            const std::int64_t ow = num_w / d.stride;
            if (oh >= d.oh || ow >= d.ow) continue;
            acc += gy[plane * d.oh * d.ow + oh * d.ow + ow];
          }
        gx[plane * d.h * d.w + ih * d.w + iw] += acc / divisor;
      }
}

void bilinear_forward(const double* x, double* y, const ResizeDims& d) {
  if (d.oh == d.h && d.ow == d.w) {
    std::memcpy(y, x, sizeof(double) * static_cast<std::size_t>(d.n * d.c * d.h * d.w));
    return;
  }
  for (std::int64_t plane = 0; plane < d.n * d.c; ++plane) {
    const double* xp = x + plane * d.h * d.w;
    double* yp = y + plane * d.oh * d.ow;
    for (std::int64_t oh = 0; oh < d.oh; ++oh) {
      std::int64_t h0, h1;
      double th;
      src_coeff(oh, d.h, d.oh, h0, h1, th);
      for (std::int64_t ow = 0; ow < d.ow; ++ow) {
        std::int64_t w0, w1;
        double tw;
        src_coeff(ow, d.w, d.ow, w0, w1, tw);
        yp[oh * d.ow + ow] = (1.0 - th) * (1.0 - tw) * xp[h0 * d.w + w0] +
                             (1.0 - th) * tw * xp[h0 * d.w + w1] +
                             th * (1.0 - tw) * xp[h1 * d.w + w0] +
                             th * tw * xp[h1 * d.w + w1];
      }
    }
  }
}

void bilinear_backward(const double* gy, double* gx, const ResizeDims& d) {
  if (d.oh == d.h && d.ow == d.w) {
    for (std::int64_t i = 0; i < d.n * d.c * d.h * d.w; ++i) gx[i] += gy[i];
    return;
  }
  for (std::int64_t plane = 0; plane < d.n * d.c; ++plane) {
    const double* gyp = gy + plane * d.oh * d.ow;
    double* gxp = gx + plane * d.h * d.w;
    for (std::int64_t oh = 0; oh < d.oh; ++oh) {
      std::int64_t h0, h1;
      double th;
      src_coeff(oh, d.h, d.oh, h0, h1, th);
      for (std::int64_t ow = 0; ow < d.ow; ++ow) {
        std::int64_t w0, w1;
        double tw;
        src_coeff(ow, d.w, d.ow, w0, w1, tw);
        const double g = gyp[oh * d.ow + ow];
        gxp[h0 * d.w + w0] += (1.0 - th) * (1.0 - tw) * g;
        gxp[h0 * d.w + w1] += (1.0 - th) * tw * g;
        gxp[h1 * d.w + w0] += th * (1.0 - tw) * g;
        gxp[h1 * d.w + w1] += th * tw * g;
      }
    }
  }
}

}  // namespace mldd::kernels::ref
