#pragma once

#include <utility>
#include <vector>

#include "mldd/decoder.hpp"
#include "mldd/tensor.hpp"

namespace mldd {

struct LossReport {
  std::vector<std::pair<int, Tensor>> per_layer;  // (layer index, scalar loss)
  Tensor total;                                   // sum of per-layer losses
  std::vector<double> per_layer_values;
  double total_value = 0.0;
};

// Boundary-emphasis map w = 1 + 5*|avg_pool31(gt) - gt|, in [1,6].
// gt must be binary (tolerance 1e-6); the result carries no gradient.
Tensor weight_map(const Tensor& gt);

// sum(w * [max(z,0) - z*g + log(1+exp(-|z|))]) / sum(w), differentiable in z.
Tensor weighted_bce(const Tensor& logits, const Tensor& gt, const Tensor& w);

// 1 - (sum(w*p*g) + 1) / (sum(w*(p+g-p*g)) + 1) with p = sigmoid(z).
Tensor weighted_iou(const Tensor& logits, const Tensor& gt, const Tensor& w);

// Deep supervision: per layer, weighted_iou + weighted_bce on that layer's
// logits; total is their sum.
LossReport total_loss(const DecoderGrid& grid, const Tensor& gt);

// Overlap metrics over binary masks; 1.0 when both are empty.
double dice(const Tensor& pred_bin, const Tensor& gt);
double iou(const Tensor& pred_bin, const Tensor& gt);

// logits > 0 -> 1, else 0; detached from the tape.
Tensor binarize(const Tensor& logits);

}  // namespace mldd
