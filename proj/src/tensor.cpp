#include "mldd/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "mldd/kernels.hpp"

namespace mldd {

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // zero-filled at creation when requires_grad
  bool requires_grad = false;
  std::int64_t id = -1;
  Tape* tape = nullptr;  // tape that produced this value, ops only
};
}  // namespace detail

using detail::TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

namespace {

std::atomic<std::int64_t> g_next_id{0};
thread_local Tape* t_active_tape = nullptr;
thread_local bool t_grad_enabled = true;

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void check_finite_debug(const char* op, std::span<const double> v) {
#ifndef NDEBUG
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw std::runtime_error(std::string(op) + ": non-finite value in forward result");
    }
  }
#else
  (void)op;
  (void)v;
#endif
}

ImplPtr new_impl(const char* who, const Shape& shape, std::vector<double> data,
                 bool requires_grad) {
  if (shape.rank < 1 || shape.rank > 4) {
    fail(std::string(who) + ": rank must be 1..4");
  }
  for (int i = 0; i < shape.rank; ++i) {
    if (shape[i] < 1) fail(std::string(who) + ": extent " + std::to_string(i) + " of shape " + shape.str() + " must be >= 1");
  }
  if (shape.numel() != static_cast<std::int64_t>(data.size())) {
    fail(std::string(who) + ": shape " + shape.str() + " expects " + std::to_string(shape.numel()) +
         " values, got " + std::to_string(data.size()));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  if (requires_grad) {
    impl->grad.assign(impl->data.size(), 0.0);
    impl->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  }
  return impl;
}

}  // namespace

class TensorFactory {
 public:
  static Tensor wrap(ImplPtr p) {
    Tensor t;
    t.impl_ = std::move(p);
    return t;
  }
  static std::shared_ptr<TensorImpl>& impl_of(Tensor& t) { return t.impl_; }
};

namespace {

struct BcastPlan {
  Shape out;
  std::array<std::int64_t, 4> stride_a{}, stride_b{}, stride_out{};
};

BcastPlan broadcast_plan(const char* op, const Shape& a, const Shape& b) {
  if (a.rank != 4 || b.rank != 4) {
    fail(std::string(op) + ": expects rank-4 tensors, got " + a.str() + " and " + b.str());
  }
  BcastPlan p;
  p.out.rank = 4;
  for (int i = 0; i < 4; ++i) {
    const std::int64_t ea = a[i], eb = b[i];
    if (ea == eb) {
      p.out.d[static_cast<std::size_t>(i)] = ea;
    } else if (ea == 1) {
      p.out.d[static_cast<std::size_t>(i)] = eb;
    } else if (eb == 1) {
      p.out.d[static_cast<std::size_t>(i)] = ea;
    } else {
      fail(std::string(op) + ": incompatible shapes " + a.str() + " and " + b.str());
    }
  }
  std::int64_t sa = 1, sb = 1, so = 1;
  for (int i = 3; i >= 0; --i) {
    p.stride_a[static_cast<std::size_t>(i)] = (a[i] == 1 && p.out[i] > 1) ? 0 : sa;
    p.stride_b[static_cast<std::size_t>(i)] = (b[i] == 1 && p.out[i] > 1) ? 0 : sb;
    p.stride_out[static_cast<std::size_t>(i)] = so;
    sa *= a[i];
    sb *= b[i];
    so *= p.out[i];
  }
  return p;
}

inline void decompose4(std::int64_t i, const Shape& s, std::int64_t idx[4]) {
  idx[3] = i % s[3];
  i /= s[3];
  idx[2] = i % s[2];
  i /= s[2];
  idx[1] = i % s[1];
  idx[0] = i / s[1];
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void require_rank4(const char* op, const Tensor& x) {
  if (!x.defined()) fail(std::string(op) + ": undefined tensor");
  if (x.shape().rank != 4) fail(std::string(op) + ": expects a rank-4 tensor, got " + x.shape().str());
}

}  // namespace

// ---------------------------------------------------------------------------
// Shape / Tensor

Shape::Shape(std::initializer_list<std::int64_t> dims) {
  if (dims.size() < 1 || dims.size() > 4) fail("Shape: rank must be 1..4");
  rank = static_cast<int>(dims.size());
  int i = 0;
  for (std::int64_t v : dims) d[static_cast<std::size_t>(i++)] = v;
}

std::int64_t Shape::numel() const {
  std::int64_t n = 1;
  for (int i = 0; i < rank; ++i) n *= d[static_cast<std::size_t>(i)];
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (int i = 0; i < rank; ++i) os << (i ? "," : "") << d[static_cast<std::size_t>(i)];
  os << ']';
  return os.str();
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data, bool requires_grad) {
  return TensorFactory::wrap(new_impl("tensor_new", shape, std::move(data), requires_grad));
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return from_data(shape, std::vector<double>(static_cast<std::size_t>(shape.numel()), 0.0), requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  return from_data(shape, std::vector<double>(static_cast<std::size_t>(shape.numel()), value), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!impl_) fail("Tensor: undefined");
  return impl_->shape;
}

std::int64_t Tensor::numel() const { return shape().numel(); }

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

std::int64_t Tensor::id() const { return impl_ ? impl_->id : -1; }

std::span<const double> Tensor::value() const {
  if (!impl_) fail("Tensor: undefined");
  return {impl_->data.data(), impl_->data.size()};
}

std::span<const double> Tensor::grad() const {
  if (!impl_) fail("Tensor: undefined");
  return {impl_->grad.data(), impl_->grad.size()};
}

std::span<double> Tensor::value_mut() {
  if (!impl_) fail("Tensor: undefined");
  return {impl_->data.data(), impl_->data.size()};
}

std::span<double> Tensor::grad_mut() {
  if (!impl_) fail("Tensor: undefined");
  if (impl_->grad.empty()) fail("Tensor: no grad buffer (requires_grad is false)");
  return {impl_->grad.data(), impl_->grad.size()};
}

void Tensor::zero_grad() {
  if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

double Tensor::scalar() const {
  if (numel() != 1) fail("Tensor::scalar: tensor has " + std::to_string(numel()) + " elements");
  return impl_->data[0];
}

// ---------------------------------------------------------------------------
// Tape

Tape* Tape::active() { return t_active_tape; }

std::size_t Tape::size() const { return nodes_.size(); }
const char* Tape::node_op(std::size_t i) const { return nodes_[i].op; }
const std::vector<std::int64_t>& Tape::node_parents(std::size_t i) const { return nodes_[i].parents; }
std::int64_t Tape::node_result(std::size_t i) const { return nodes_[i].result; }

void Tape::record(const char* op, std::vector<std::int64_t> parents, std::int64_t result,
                  std::function<void()> backward) {
  nodes_.push_back(Node{op, std::move(parents), result, std::move(backward)});
}

void Tape::replay_backward() {
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
}

TapeScope::TapeScope() : prev_(t_active_tape) { t_active_tape = &tape_; }
TapeScope::~TapeScope() { t_active_tape = prev_; }

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }

bool grad_enabled() { return t_grad_enabled; }

// ---------------------------------------------------------------------------
// Elementwise

namespace {

// Creates the output tensor, then records backward with access to it.
Tensor record_after(const char* op, const Shape& shape, std::vector<double> data,
                    std::span<const Tensor* const> inputs,
                    const std::function<std::function<void()>(ImplPtr out)>& make_backward) {
  bool any_rg = false;
  for (const Tensor* t : inputs) any_rg = any_rg || t->requires_grad();
  const bool rg = t_grad_enabled && t_active_tape != nullptr && any_rg;
  Tensor out = TensorFactory::wrap(new_impl(op, shape, std::move(data), rg));
  check_finite_debug(op, out.value());
  if (rg) {
    out.impl()->tape = t_active_tape;
    std::vector<std::int64_t> parents;
    parents.reserve(inputs.size());
    for (const Tensor* t : inputs) parents.push_back(t->id());
    t_active_tape->record(op, std::move(parents), out.id(),
                          make_backward(TensorFactory::impl_of(out)));
  }
  return out;
}

}  // namespace

Tensor elementwise(EwKind kind, const Tensor& a, const Tensor& b) {
  const char* op = kind == EwKind::add ? "add" : "mul";
  const BcastPlan plan = broadcast_plan(op, a.shape(), b.shape());
  const std::int64_t n = plan.out.numel();
  std::vector<double> y(static_cast<std::size_t>(n));
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  const Shape out_shape = plan.out;
  const bool is_mul = kind == EwKind::mul;
  kernels::parallel_for(n, [&](std::int64_t i) {
    std::int64_t idx[4];
    decompose4(i, out_shape, idx);
    const double va = pa[idx[0] * plan.stride_a[0] + idx[1] * plan.stride_a[1] +
                         idx[2] * plan.stride_a[2] + idx[3] * plan.stride_a[3]];
    const double vb = pb[idx[0] * plan.stride_b[0] + idx[1] * plan.stride_b[1] +
                         idx[2] * plan.stride_b[2] + idx[3] * plan.stride_b[3]];
    y[static_cast<std::size_t>(i)] = is_mul ? va * vb : va + vb;
  });

  ImplPtr ia = TensorFactory::impl_of(const_cast<Tensor&>(a));
  ImplPtr ib = TensorFactory::impl_of(const_cast<Tensor&>(b));
  const Tensor* inputs[] = {&a, &b};
  return record_after(op, out_shape, std::move(y), inputs, [&](ImplPtr out) -> std::function<void()> {
    return [ia, ib, out, plan, is_mul, out_shape]() {
      const std::int64_t n = out_shape.numel();
      for (std::int64_t i = 0; i < n; ++i) {
        std::int64_t idx[4];
        decompose4(i, out_shape, idx);
        const std::int64_t oa = idx[0] * plan.stride_a[0] + idx[1] * plan.stride_a[1] +
                                idx[2] * plan.stride_a[2] + idx[3] * plan.stride_a[3];
        const std::int64_t ob = idx[0] * plan.stride_b[0] + idx[1] * plan.stride_b[1] +
                                idx[2] * plan.stride_b[2] + idx[3] * plan.stride_b[3];
        const double g = out->grad[static_cast<std::size_t>(i)];
        if (is_mul) {
          if (ia->requires_grad) ia->grad[static_cast<std::size_t>(oa)] += g * ib->data[static_cast<std::size_t>(ob)];
          if (ib->requires_grad) ib->grad[static_cast<std::size_t>(ob)] += g * ia->data[static_cast<std::size_t>(oa)];
        } else {
          if (ia->requires_grad) ia->grad[static_cast<std::size_t>(oa)] += g;
          if (ib->requires_grad) ib->grad[static_cast<std::size_t>(ob)] += g;
        }
      }
    };
  });
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(EwKind::add, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(EwKind::mul, a, b); }

// ---------------------------------------------------------------------------
// Activations

Tensor activation(ActKind kind, const Tensor& x) {
  const char* op = kind == ActKind::relu ? "relu" : "sigmoid";
  if (!x.defined()) fail(std::string(op) + ": undefined tensor");
  const std::int64_t n = x.numel();
  std::vector<double> y(static_cast<std::size_t>(n));
  const double* px = x.value().data();
  const bool is_relu = kind == ActKind::relu;
  kernels::parallel_for(n, [&](std::int64_t i) {
    y[static_cast<std::size_t>(i)] = is_relu ? (px[i] > 0.0 ? px[i] : 0.0) : stable_sigmoid(px[i]);
  });
  ImplPtr ix = TensorFactory::impl_of(const_cast<Tensor&>(x));
  const Tensor* inputs[] = {&x};
  return record_after(op, x.shape(), std::move(y), inputs, [&](ImplPtr out) -> std::function<void()> {
    if (is_relu) {
      return [ix, out]() {
        if (!ix->requires_grad) return;
        for (std::size_t i = 0; i < out->grad.size(); ++i) {
          if (ix->data[i] > 0.0) ix->grad[i] += out->grad[i];
        }
      };
    }
    return [ix, out]() {
      if (!ix->requires_grad) return;
      for (std::size_t i = 0; i < out->grad.size(); ++i) {
        const double s = out->data[i];
        ix->grad[i] += out->grad[i] * s * (1.0 - s);
      }
    };
  });
}

Tensor relu(const Tensor& x) { return activation(ActKind::relu, x); }
Tensor sigmoid(const Tensor& x) { return activation(ActKind::sigmoid, x); }

Tensor softmax_channels(const Tensor& x) {
  require_rank4("softmax_channels", x);
  const Shape s = x.shape();
  const std::int64_t N = s[0], C = s[1], H = s[2], W = s[3];
  const std::int64_t hw = H * W;
  std::vector<double> y(static_cast<std::size_t>(s.numel()));
  const double* px = x.value().data();
  kernels::parallel_for(N * hw, [&](std::int64_t i) {
    const std::int64_t n = i / hw;
    const std::int64_t p = i % hw;
    const std::int64_t base = n * C * hw + p;
    double m = px[base];
    for (std::int64_t c = 1; c < C; ++c) m = std::max(m, px[base + c * hw]);
    double sum = 0.0;
    for (std::int64_t c = 0; c < C; ++c) {
      const double e = std::exp(px[base + c * hw] - m);
      y[static_cast<std::size_t>(base + c * hw)] = e;
      sum += e;
    }
    for (std::int64_t c = 0; c < C; ++c) y[static_cast<std::size_t>(base + c * hw)] /= sum;
  });
  ImplPtr ix = TensorFactory::impl_of(const_cast<Tensor&>(x));
  const Tensor* inputs[] = {&x};
  return record_after("softmax_channels", s, std::move(y), inputs, [&](ImplPtr out) -> std::function<void()> {
    return [ix, out, N, C, hw]() {
      if (!ix->requires_grad) return;
      for (std::int64_t i = 0; i < N * hw; ++i) {
        const std::int64_t n = i / hw;
        const std::int64_t p = i % hw;
        const std::int64_t base = n * C * hw + p;
        double dot = 0.0;
        for (std::int64_t c = 0; c < C; ++c) {
          dot += out->grad[static_cast<std::size_t>(base + c * hw)] *
                 out->data[static_cast<std::size_t>(base + c * hw)];
        }
        for (std::int64_t c = 0; c < C; ++c) {
          const std::size_t k = static_cast<std::size_t>(base + c * hw);
          ix->grad[k] += out->data[k] * (out->grad[k] - dot);
        }
      }
    };
  });
}

// ---------------------------------------------------------------------------
// Convolution

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::int64_t stride,
              std::int64_t pad) {
  require_rank4("conv2d", x);
  if (w.shape().rank != 4) fail("conv2d: weight must be rank 4, got " + w.shape().str());
  if (b.shape().rank != 1) fail("conv2d: bias must be rank 1, got " + b.shape().str());
  if (stride < 1) fail("conv2d: stride must be >= 1");
  if (pad < 0) fail("conv2d: pad must be >= 0");
  kernels::Conv2dDims d;
  d.n = x.shape()[0];
  d.cin = x.shape()[1];
  d.h = x.shape()[2];
  d.w = x.shape()[3];
  d.cout = w.shape()[0];
  d.kh = w.shape()[2];
  d.kw = w.shape()[3];
  d.stride = stride;
  d.pad = pad;
  if (w.shape()[1] != d.cin) {
    fail("conv2d: input has " + std::to_string(d.cin) + " channels but weight expects " +
         std::to_string(w.shape()[1]));
  }
  if (b.shape()[0] != d.cout) fail("conv2d: bias extent must equal Cout");
  const std::int64_t num_h = d.h + 2 * pad - d.kh;
  const std::int64_t num_w = d.w + 2 * pad - d.kw;
  if (num_h < 0 || num_w < 0) fail("conv2d: kernel larger than padded input");
  d.oh = num_h / stride + 1;
  d.ow = num_w / stride + 1;
  if (d.oh < 1 || d.ow < 1) fail("conv2d: non-positive output extent");

  std::vector<double> y(static_cast<std::size_t>(d.n * d.cout * d.oh * d.ow));
  kernels::conv2d_forward(x.value().data(), w.value().data(), b.value().data(), y.data(), d);

  ImplPtr ix = TensorFactory::impl_of(const_cast<Tensor&>(x));
  ImplPtr iw = TensorFactory::impl_of(const_cast<Tensor&>(w));
  ImplPtr ib = TensorFactory::impl_of(const_cast<Tensor&>(b));
  const Tensor* inputs[] = {&x, &w, &b};
  Shape out_shape{d.n, d.cout, d.oh, d.ow};
  return record_after("conv2d", out_shape, std::move(y), inputs, [&](ImplPtr out) -> std::function<void()> {
    return [ix, iw, ib, out, d]() {
      const double* gy = out->grad.data();
      if (ix->requires_grad) kernels::conv2d_backward_input(gy, iw->data.data(), ix->grad.data(), d);
      if (iw->requires_grad) kernels::conv2d_backward_weight(gy, ix->data.data(), iw->grad.data(), d);
      if (ib->requires_grad) kernels::conv2d_backward_bias(gy, ib->grad.data(), d);
    };
  });
}

// ---------------------------------------------------------------------------
// Resize / concat / pooling

Tensor upsample_bilinear(const Tensor& x, std::int64_t out_h, std::int64_t out_w) {
  require_rank4("upsample_bilinear", x);
  if (out_h < 1 || out_w < 1) fail("upsample_bilinear: target extents must be positive");
  kernels::ResizeDims d{x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3], out_h, out_w};
  std::vector<double> y(static_cast<std::size_t>(d.n * d.c * d.oh * d.ow));
  kernels::bilinear_forward(x.value().data(), y.data(), d);
  ImplPtr ix = TensorFactory::impl_of(const_cast<Tensor&>(x));
  const Tensor* inputs[] = {&x};
  Shape out_shape{d.n, d.c, d.oh, d.ow};
  return record_after("upsample_bilinear", out_shape, std::move(y), inputs,
                      [&](ImplPtr out) -> std::function<void()> {
                        return [ix, out, d]() {
                          if (!ix->requires_grad) return;
                          kernels::bilinear_backward(out->grad.data(), ix->grad.data(), d);
                        };
                      });
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
  if (xs.empty()) fail("concat_channels: needs at least one tensor");
  for (const Tensor& t : xs) require_rank4("concat_channels", t);
  const std::int64_t N = xs[0].shape()[0], H = xs[0].shape()[2], W = xs[0].shape()[3];
  std::int64_t cout = 0;
  for (const Tensor& t : xs) {
    if (t.shape()[0] != N || t.shape()[2] != H || t.shape()[3] != W) {
      fail("concat_channels: mismatched extents " + t.shape().str() + " vs " + xs[0].shape().str());
    }
    cout += t.shape()[1];
  }
  const std::int64_t hw = H * W;
  std::vector<double> y(static_cast<std::size_t>(N * cout * hw));
  std::int64_t off = 0;
  for (const Tensor& t : xs) {
    const std::int64_t ci = t.shape()[1];
    const double* px = t.value().data();
    for (std::int64_t n = 0; n < N; ++n) {
      std::memcpy(y.data() + (n * cout + off) * hw, px + n * ci * hw,
                  sizeof(double) * static_cast<std::size_t>(ci * hw));
    }
    off += ci;
  }
  std::vector<ImplPtr> impls;
  impls.reserve(xs.size());
  std::vector<const Tensor*> inputs;
  inputs.reserve(xs.size());
  for (const Tensor& t : xs) {
    impls.push_back(TensorFactory::impl_of(const_cast<Tensor&>(t)));
    inputs.push_back(&t);
  }
  Shape out_shape{N, cout, H, W};
  return record_after("concat_channels", out_shape, std::move(y), inputs,
                      [&](ImplPtr out) -> std::function<void()> {
                        return [impls, out, N, cout, hw]() {
                          std::int64_t off = 0;
                          for (const ImplPtr& p : impls) {
                            const std::int64_t ci = p->shape[1];
                            if (p->requires_grad) {
                              for (std::int64_t n = 0; n < N; ++n) {
                                const double* gy = out->grad.data() + (n * cout + off) * hw;
                                double* gx = p->grad.data() + n * ci * hw;
                                for (std::int64_t i = 0; i < ci * hw; ++i) gx[i] += gy[i];
                              }
                            }
                            off += ci;
                          }
                        };
                      });
}

Tensor global_pool(PoolKind kind, const Tensor& x) {
  require_rank4("global_pool", x);
  const Shape s = x.shape();
  const std::int64_t N = s[0], C = s[1], hw = s[2] * s[3];
  std::vector<double> y(static_cast<std::size_t>(N * C));
  std::vector<std::int64_t> argmax;
  const double* px = x.value().data();
  if (kind == PoolKind::max) {
    argmax.resize(static_cast<std::size_t>(N * C));
    for (std::int64_t p = 0; p < N * C; ++p) {
      const double* xp = px + p * hw;
      std::int64_t best = 0;
      for (std::int64_t i = 1; i < hw; ++i) {
        if (xp[i] > xp[best]) best = i;  // first max wins ties
      }
      argmax[static_cast<std::size_t>(p)] = best;
      y[static_cast<std::size_t>(p)] = xp[best];
    }
  } else {
    for (std::int64_t p = 0; p < N * C; ++p) {
      const double* xp = px + p * hw;
      double acc = 0.0;
      for (std::int64_t i = 0; i < hw; ++i) acc += xp[i];
      y[static_cast<std::size_t>(p)] = acc / static_cast<double>(hw);
    }
  }
  ImplPtr ix = TensorFactory::impl_of(const_cast<Tensor&>(x));
  const Tensor* inputs[] = {&x};
  Shape out_shape{N, C, 1, 1};
  const char* op = kind == PoolKind::max ? "global_max_pool" : "global_avg_pool";
  return record_after(op, out_shape, std::move(y), inputs, [&](ImplPtr out) -> std::function<void()> {
    if (kind == PoolKind::max) {
      return [ix, out, argmax, hw]() {
        if (!ix->requires_grad) return;
        for (std::size_t p = 0; p < argmax.size(); ++p) {
          ix->grad[p * static_cast<std::size_t>(hw) + static_cast<std::size_t>(argmax[p])] += out->grad[p];
        }
      };
    }
    return [ix, out, hw]() {
      if (!ix->requires_grad) return;
      for (std::size_t p = 0; p < out->grad.size(); ++p) {
        const double q = out->grad[p] / static_cast<double>(hw);
        double* gx = ix->grad.data() + p * static_cast<std::size_t>(hw);
        for (std::int64_t i = 0; i < hw; ++i) gx[i] += q;
      }
    };
  });
}

Tensor channel_reduce(ReduceKind kind, const Tensor& x) {
  require_rank4("channel_reduce", x);
  const Shape s = x.shape();
  const std::int64_t N = s[0], C = s[1], hw = s[2] * s[3];
  std::vector<double> y(static_cast<std::size_t>(N * hw));
  std::vector<std::int64_t> argmax;
  const double* px = x.value().data();
  if (kind == ReduceKind::max) {
    argmax.resize(static_cast<std::size_t>(N * hw));
    for (std::int64_t i = 0; i < N * hw; ++i) {
      const std::int64_t n = i / hw, p = i % hw;
      const double* base = px + n * C * hw + p;
      std::int64_t best = 0;
      for (std::int64_t c = 1; c < C; ++c) {
        if (base[c * hw] > base[best * hw]) best = c;  // first max wins ties
      }
      argmax[static_cast<std::size_t>(i)] = best;
      y[static_cast<std::size_t>(i)] = base[best * hw];
    }
  } else {
    for (std::int64_t i = 0; i < N * hw; ++i) {
      const std::int64_t n = i / hw, p = i % hw;
      const double* base = px + n * C * hw + p;
      double acc = 0.0;
      for (std::int64_t c = 0; c < C; ++c) acc += base[c * hw];
      y[static_cast<std::size_t>(i)] = acc / static_cast<double>(C);
    }
  }
  ImplPtr ix = TensorFactory::impl_of(const_cast<Tensor&>(x));
  const Tensor* inputs[] = {&x};
  Shape out_shape{N, 1, s[2], s[3]};
  const char* op = kind == ReduceKind::max ? "channel_max" : "channel_mean";
  return record_after(op, out_shape, std::move(y), inputs, [&](ImplPtr out) -> std::function<void()> {
    if (kind == ReduceKind::max) {
      return [ix, out, argmax, C, hw]() {
        if (!ix->requires_grad) return;
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(argmax.size()); ++i) {
          const std::int64_t n = i / hw, p = i % hw;
          ix->grad[static_cast<std::size_t>(n * C * hw + argmax[static_cast<std::size_t>(i)] * hw + p)] +=
              out->grad[static_cast<std::size_t>(i)];
        }
      };
    }
    return [ix, out, C, hw]() {
      if (!ix->requires_grad) return;
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(out->grad.size()); ++i) {
        const std::int64_t n = i / hw, p = i % hw;
        const double q = out->grad[static_cast<std::size_t>(i)] / static_cast<double>(C);
        for (std::int64_t c = 0; c < C; ++c) {
          ix->grad[static_cast<std::size_t>(n * C * hw + c * hw + p)] += q;
        }
      }
    };
  });
}

Tensor avg_pool2d(const Tensor& x, std::int64_t k, std::int64_t stride, std::int64_t pad) {
  require_rank4("avg_pool2d", x);
  if (k < 1 || k % 2 == 0) fail("avg_pool2d: kernel size must be odd and positive, got " + std::to_string(k));
  if (stride < 1) fail("avg_pool2d: stride must be >= 1");
  if (pad < 0) fail("avg_pool2d: pad must be >= 0");
  kernels::Pool2dDims d;
  d.n = x.shape()[0];
  d.c = x.shape()[1];
  d.h = x.shape()[2];
  d.w = x.shape()[3];
  d.k = k;
  d.stride = stride;
  d.pad = pad;
  const std::int64_t num_h = d.h + 2 * pad - k;
  const std::int64_t num_w = d.w + 2 * pad - k;
  if (num_h < 0 || num_w < 0) fail("avg_pool2d: kernel larger than padded input");
  d.oh = num_h / stride + 1;
  d.ow = num_w / stride + 1;
  std::vector<double> y(static_cast<std::size_t>(d.n * d.c * d.oh * d.ow));
  kernels::avg_pool2d_forward(x.value().data(), y.data(), d);
  ImplPtr ix = TensorFactory::impl_of(const_cast<Tensor&>(x));
  const Tensor* inputs[] = {&x};
  Shape out_shape{d.n, d.c, d.oh, d.ow};
  return record_after("avg_pool2d", out_shape, std::move(y), inputs,
                      [&](ImplPtr out) -> std::function<void()> {
                        return [ix, out, d]() {
                          if (!ix->requires_grad) return;
                          kernels::avg_pool2d_backward(out->grad.data(), ix->grad.data(), d);
                        };
                      });
}

// ---------------------------------------------------------------------------
// Scalar helpers

Tensor scale(const Tensor& x, double c) {
  if (!x.defined()) fail("scale: undefined tensor");
  const std::int64_t n = x.numel();
  std::vector<double> y(static_cast<std::size_t>(n));
  const double* px = x.value().data();
  kernels::parallel_for(n, [&](std::int64_t i) { y[static_cast<std::size_t>(i)] = c * px[i]; });
  ImplPtr ix = TensorFactory::impl_of(const_cast<Tensor&>(x));
  const Tensor* inputs[] = {&x};
  return record_after("scale", x.shape(), std::move(y), inputs, [&](ImplPtr out) -> std::function<void()> {
    return [ix, out, c]() {
      if (!ix->requires_grad) return;
      for (std::size_t i = 0; i < out->grad.size(); ++i) ix->grad[i] += c * out->grad[i];
    };
  });
}

Tensor sum_all(const Tensor& x) {
  if (!x.defined()) fail("sum_all: undefined tensor");
  const double* px = x.value().data();
  double acc = 0.0;
  for (std::int64_t i = 0; i < x.numel(); ++i) acc += px[i];
  ImplPtr ix = TensorFactory::impl_of(const_cast<Tensor&>(x));
  const Tensor* inputs[] = {&x};
  return record_after("sum_all", Shape{1, 1, 1, 1}, {acc}, inputs, [&](ImplPtr out) -> std::function<void()> {
    return [ix, out]() {
      if (!ix->requires_grad) return;
      const double g = out->grad[0];
      for (std::size_t i = 0; i < ix->grad.size(); ++i) ix->grad[i] += g;
    };
  });
}

Tensor make_custom_op(const char* name, const Shape& out_shape, std::vector<double> out_data,
                      const std::vector<Tensor>& inputs, std::function<void(Tensor& out)> backward) {
  std::vector<const Tensor*> ptrs;
  ptrs.reserve(inputs.size());
  for (const Tensor& t : inputs) ptrs.push_back(&t);
  return record_after(name, out_shape, std::move(out_data), ptrs,
                      [&](ImplPtr out) -> std::function<void()> {
                        return [out, backward = std::move(backward)]() mutable {
                          Tensor t = TensorFactory::wrap(out);
                          backward(t);
                        };
                      });
}

// ---------------------------------------------------------------------------
// Backward / gradient checking

void backward(const Tensor& loss) {
  if (!loss.defined()) fail("backward: undefined loss");
  if (loss.numel() != 1) fail("backward: loss must be a one-element tensor, got " + loss.shape().str());
  TensorImpl* li = loss.impl();
  if (!li->requires_grad || li->tape == nullptr) {
    fail("backward: loss is not recorded on a tape");
  }
  if (li->tape != Tape::active()) {
    fail("backward: loss was recorded on a tape that is no longer active");
  }
  li->grad[0] = 1.0;
  li->tape->replay_backward();
}

double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    fail("grad_check: eps must lie in [1e-7, 1e-3], got " + std::to_string(eps));
  }
  for (const Tensor& p : params) {
    if (!p.requires_grad()) fail("grad_check: every param must require grad");
    const_cast<Tensor&>(p).zero_grad();
  }
  std::vector<std::vector<double>> g_ad;
  {
    TapeScope scope;
    Tensor loss = f();
    backward(loss);
  }
  g_ad.reserve(params.size());
  for (const Tensor& p : params) {
    g_ad.emplace_back(p.grad().begin(), p.grad().end());
  }
  const auto eval = [&]() {
    NoGradGuard ng;
    return f().scalar();
  };
  double max_rel = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = const_cast<Tensor&>(params[pi]);
    std::span<double> v = p.value_mut();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double saved = v[i];
      v[i] = saved + eps;
      const double fp = eval();
      v[i] = saved - eps;
      const double fm = eval();
      v[i] = saved;
      const double g_fd = (fp - fm) / (2.0 * eps);
      const double ga = g_ad[pi][i];
      const double rel = std::abs(ga - g_fd) / std::max(1e-8, std::abs(ga) + std::abs(g_fd));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace mldd
