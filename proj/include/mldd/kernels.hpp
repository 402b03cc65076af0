#pragma once

#include <cstdint>

#include "mldd/parallel.hpp"

namespace mldd::kernels {

// Raw NCHW kernels behind the tensor ops. Forward kernels overwrite their
// output; backward kernels accumulate (+=) into the destination buffer so the
// autodiff layer can sum gradients across multiple uses.
//
// Convolution is cross-correlation (no kernel flip) with zero padding.

struct Conv2dDims {
  std::int64_t n, cin, h, w;
  std::int64_t cout, kh, kw;
  std::int64_t stride, pad;
  std::int64_t oh, ow;
};

void conv2d_forward(const double* x, const double* w, const double* b,
                    double* y, const Conv2dDims& d);
void conv2d_backward_input(const double* gy, const double* w, double* gx,
                           const Conv2dDims& d);
void conv2d_backward_weight(const double* gy, const double* x, double* gw,
                            const Conv2dDims& d);
void conv2d_backward_bias(const double* gy, double* gb, const Conv2dDims& d);

struct Pool2dDims {
  std::int64_t n, c, h, w;
  std::int64_t k, stride, pad;
  std::int64_t oh, ow;
};

// Fixed divisor k*k; padded cells count as zeros.
void avg_pool2d_forward(const double* x, double* y, const Pool2dDims& d);
void avg_pool2d_backward(const double* gy, double* gx, const Pool2dDims& d);

struct ResizeDims {
  std::int64_t n, c, h, w;
  std::int64_t oh, ow;
};

// Bilinear interpolation with half-pixel centers (align-corners false).
void bilinear_forward(const double* x, double* y, const ResizeDims& d);
void bilinear_backward(const double* gy, double* gx, const ResizeDims& d);

// Naive single-threaded reference implementations with identical contracts
// and accumulation order. Used by the tests as an oracle for the parallel
// path and by the benchmark tool as the baseline.
namespace ref {

void conv2d_forward(const double* x, const double* w, const double* b,
                    double* y, const Conv2dDims& d);
void conv2d_backward_input(const double* gy, const double* w, double* gx,
                           const Conv2dDims& d);
void conv2d_backward_weight(const double* gy, const double* x, double* gw,
                            const Conv2dDims& d);
void conv2d_backward_bias(const double* gy, double* gb, const Conv2dDims& d);

void avg_pool2d_forward(const double* x, double* y, const Pool2dDims& d);
void avg_pool2d_backward(const double* gy, double* gx, const Pool2dDims& d);

void bilinear_forward(const double* x, double* y, const ResizeDims& d);
void bilinear_backward(const double* gy, double* gx, const ResizeDims& d);

}  // namespace ref

// Fault-injection hook so the gradcheck harness can be shown to catch a
// broken backward pass. Never set outside tests.
namespace testing {
void set_corrupt_conv_backward(bool on);
bool corrupt_conv_backward();
}  // namespace testing

}  // namespace mldd::kernels
