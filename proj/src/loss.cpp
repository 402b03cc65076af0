#include "mldd/loss.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "mldd/kernels.hpp"

namespace mldd {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void require_binary(const char* who, const Tensor& t, double tol) {
  for (double v : t.value()) {
    if (std::abs(v) > tol && std::abs(v - 1.0) > tol) {
      fail(std::string(who) + ": tensor is not binary (found " + std::to_string(v) + ")");
    }
  }
}

void require_same_shape(const char* who, const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) {
    fail(std::string(who) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor weight_map(const Tensor& gt) {
  if (!gt.defined() || gt.shape().rank != 4 || gt.shape()[1] != 1) {
    fail("weight_map: expects an [N,1,H,W] mask");
  }
  require_binary("weight_map", gt, 1e-6);
  kernels::Pool2dDims d{gt.shape()[0], 1, gt.shape()[2], gt.shape()[3], 31, 1, 15,
                        gt.shape()[2], gt.shape()[3]};
  std::vector<double> pooled(static_cast<std::size_t>(gt.numel()));
  kernels::avg_pool2d_forward(gt.value().data(), pooled.data(), d);
  const auto g = gt.value();
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    pooled[i] = 1.0 + 5.0 * std::abs(pooled[i] - g[i]);
  }
  return Tensor::from_data(gt.shape(), std::move(pooled), false);
}

Tensor weighted_bce(const Tensor& logits, const Tensor& gt, const Tensor& w) {
  require_same_shape("weighted_bce", logits, gt);
  require_same_shape("weighted_bce", logits, w);
  const auto z = logits.value();
  const auto g = gt.value();
  const auto wv = w.value();
  double sw = 0.0;
  for (double v : wv) sw += v;
  double acc = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double zi = z[i];
    acc += wv[i] * (std::max(zi, 0.0) - zi * g[i] + std::log1p(std::exp(-std::abs(zi))));
  }
  const double value = acc / sw;
  Tensor lz = logits, lg = gt, lw = w;
  return make_custom_op("weighted_bce", Shape{1, 1, 1, 1}, {value}, {logits, gt, w},
                        [lz, lg, lw, sw](Tensor& out) mutable {
                          if (!lz.requires_grad()) return;
                          const double gy = out.grad()[0];
                          const auto z = lz.value();
                          const auto g = lg.value();
                          const auto wv = lw.value();
                          auto gz = lz.grad_mut();
                          for (std::size_t i = 0; i < z.size(); ++i) {
                            gz[i] += gy * wv[i] * (stable_sigmoid(z[i]) - g[i]) / sw;
                          }
                        });
}

Tensor weighted_iou(const Tensor& logits, const Tensor& gt, const Tensor& w) {
  require_same_shape("weighted_iou", logits, gt);
  require_same_shape("weighted_iou", logits, w);
  const auto z = logits.value();
  const auto g = gt.value();
  const auto wv = w.value();
  double inter = 0.0, uni = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double p = stable_sigmoid(z[i]);
    inter += wv[i] * p * g[i];
    uni += wv[i] * (p + g[i] - p * g[i]);
  }
  const double value = 1.0 - (inter + 1.0) / (uni + 1.0);
  Tensor lz = logits, lg = gt, lw = w;
  return make_custom_op("weighted_iou", Shape{1, 1, 1, 1}, {value}, {logits, gt, w},
                        [lz, lg, lw, inter, uni](Tensor& out) mutable {
                          if (!lz.requires_grad()) return;
                          const double gy = out.grad()[0];
                          const auto z = lz.value();
                          const auto g = lg.value();
                          const auto wv = lw.value();
                          auto gz = lz.grad_mut();
                          const double u1 = uni + 1.0;
                          for (std::size_t i = 0; i < z.size(); ++i) {
                            const double p = stable_sigmoid(z[i]);
                            const double dp = -(wv[i] * g[i] * u1 -
                                                (inter + 1.0) * wv[i] * (1.0 - g[i])) /
                                              (u1 * u1);
                            gz[i] += gy * dp * p * (1.0 - p);
                          }
                        });
}

LossReport total_loss(const DecoderGrid& grid, const Tensor& gt) {
  if (grid.layer_logits.empty()) fail("total_loss: decoder grid has no layer logits");
  LossReport report;
  const Tensor w = weight_map(gt);
  for (std::size_t j = 0; j < grid.layer_logits.size(); ++j) {
    const Tensor& lj = grid.layer_logits[j];
    Tensor loss_j = add(weighted_iou(lj, gt, w), weighted_bce(lj, gt, w));
    report.per_layer_values.push_back(loss_j.scalar());
    report.per_layer.emplace_back(static_cast<int>(j + 1), std::move(loss_j));
  }
  Tensor total = report.per_layer[0].second;
  for (std::size_t j = 1; j < report.per_layer.size(); ++j) {
    total = add(total, report.per_layer[j].second);
  }
  report.total = std::move(total);
  report.total_value = report.total.scalar();
  return report;
}

namespace {

struct OverlapCounts {
  std::int64_t inter = 0, a = 0, b = 0;
};

OverlapCounts count_overlap(const char* who, const Tensor& pred, const Tensor& gt) {
  require_same_shape(who, pred, gt);
  require_binary(who, pred, 1e-6);
  require_binary(who, gt, 1e-6);
  OverlapCounts c;
  const auto pa = pred.value();
  const auto pb = gt.value();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const bool va = pa[i] > 0.5;
    const bool vb = pb[i] > 0.5;
    c.a += va;
    c.b += vb;
    c.inter += va && vb;
  }
  return c;
}

}  // namespace

double dice(const Tensor& pred_bin, const Tensor& gt) {
  const OverlapCounts c = count_overlap("dice", pred_bin, gt);
  if (c.a + c.b == 0) return 1.0;
  return 2.0 * static_cast<double>(c.inter) / static_cast<double>(c.a + c.b);
}

double iou(const Tensor& pred_bin, const Tensor& gt) {
  const OverlapCounts c = count_overlap("iou", pred_bin, gt);
  const std::int64_t uni = c.a + c.b - c.inter;
  if (uni == 0) return 1.0;
  return static_cast<double>(c.inter) / static_cast<double>(uni);
}

Tensor binarize(const Tensor& logits) {
  std::vector<double> out(static_cast<std::size_t>(logits.numel()));
  const auto z = logits.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = z[i] > 0.0 ? 1.0 : 0.0;
  return Tensor::from_data(logits.shape(), std::move(out), false);
}

}  // namespace mldd
