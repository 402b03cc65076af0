#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mldd {

// Extents of a dense array, rank 1..4. Rank-4 tensors use NCHW layout.
struct Shape {
  int rank = 0;
  std::array<std::int64_t, 4> d{1, 1, 1, 1};

  Shape() = default;
  Shape(std::initializer_list<std::int64_t> dims);

  std::int64_t numel() const;
  std::int64_t operator[](int i) const { return d[static_cast<std::size_t>(i)]; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class Tape;

namespace detail {
struct TensorImpl;
}

// Handle to a dense float64 tensor. Copying a Tensor shares the underlying
// buffer; values are treated as immutable once used by an op. Tensors with
// requires_grad carry a same-shape gradient buffer that backward() fills.
class Tensor {
 public:
  Tensor() = default;

  // tensor_new: data must have exactly shape.numel() elements, extents >= 1.
  static Tensor from_data(const Shape& shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t numel() const;
  bool requires_grad() const;
  std::int64_t id() const;  // -1 unless participating in autodiff

  std::span<const double> value() const;
  std::span<const double> grad() const;  // empty if absent

  // In-place access for the optimizer, loaders and op implementations.
  std::span<double> value_mut();
  std::span<double> grad_mut();
  void zero_grad();

  double scalar() const;  // value of a one-element tensor

  detail::TensorImpl* impl() const { return impl_.get(); }

 private:
  friend Tensor make_custom_op(const char* name, const Shape& out_shape,
                               std::vector<double> out_data,
                               const std::vector<Tensor>& inputs,
                               std::function<void(Tensor& out)> backward);
  friend class TensorFactory;
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Reverse-mode tape. Ops record one node per result while a TapeScope is
// active and gradients are enabled; backward() replays nodes in reverse.
class Tape {
 public:
  static Tape* active();

  std::size_t size() const;
  const char* node_op(std::size_t i) const;
  const std::vector<std::int64_t>& node_parents(std::size_t i) const;
  std::int64_t node_result(std::size_t i) const;

  void record(const char* op, std::vector<std::int64_t> parents,
              std::int64_t result, std::function<void()> backward);
  void replay_backward();

 private:
  struct Node {
    const char* op;
    std::vector<std::int64_t> parents;
    std::int64_t result;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
};

class TapeScope {
 public:
  TapeScope();
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;
  Tape& tape() { return tape_; }

 private:
  Tape tape_;
  Tape* prev_;
};

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

enum class EwKind { add, mul };
enum class ActKind { relu, sigmoid };
enum class PoolKind { max, avg };
enum class ReduceKind { max, mean };

// Elementwise add/mul. Shapes must match per axis or be 1 on one side
// (e.g. [N,1,H,W] or [N,C,1,1] maps against [N,C,H,W]); broadcast axes are
// sum-reduced in backward.
Tensor elementwise(EwKind kind, const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor activation(ActKind kind, const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// Softmax over the channel axis, per (n,h,w); max-subtracted for stability.
Tensor softmax_channels(const Tensor& x);

// Cross-correlation with zero padding; w is [Cout,Cin,kh,kw], b is [Cout].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
              std::int64_t stride, std::int64_t pad);

Tensor upsample_bilinear(const Tensor& x, std::int64_t out_h, std::int64_t out_w);

Tensor concat_channels(const std::vector<Tensor>& xs);

Tensor global_pool(PoolKind kind, const Tensor& x);     // -> [N,C,1,1]
Tensor channel_reduce(ReduceKind kind, const Tensor& x);  // -> [N,1,H,W]

// k odd; fixed divisor k*k including padded zeros.
Tensor avg_pool2d(const Tensor& x, std::int64_t k, std::int64_t stride,
                  std::int64_t pad);

Tensor scale(const Tensor& x, double c);
Tensor sum_all(const Tensor& x);  // -> [1,1,1,1]

// Populates grad for every requires_grad tensor reachable from loss.
// loss must be a one-element tensor recorded on a live tape.
void backward(const Tensor& loss);

// Central-difference check of f's gradient w.r.t. params at the given eps
// (must lie in [1e-7, 1e-3]). Returns the max relative error
// |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|) over all coordinates.
double grad_check(const std::function<Tensor()>& f,
                  const std::vector<Tensor>& params, double eps);

// Registers a result produced outside the standard op set (e.g. the loss
// terms). backward receives the output tensor and must accumulate into the
// inputs' gradient buffers.
Tensor make_custom_op(const char* name, const Shape& out_shape,
                      std::vector<double> out_data,
                      const std::vector<Tensor>& inputs,
                      std::function<void(Tensor& out)> backward);

}  // namespace mldd
