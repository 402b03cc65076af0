#include <algorithm>
#include <cmath>

#include "mldd/decoder.hpp"
#include "mldd/loss.hpp"
#include "mldd/rng.hpp"
#include "mldd/train.hpp"

// Finite-difference suite behind `mldd gradcheck`. Inputs are seeded and
// pushed at least 1e-3 away from ReLU kinks and pooling ties so the central
// difference at eps = 1e-5 stays on one side of every branch.

namespace mldd {

namespace {

constexpr double kEps = 1e-5;

Tensor rand_tensor(const Shape& s, std::uint64_t seed, double lo, double hi, bool rg,
                   double kink_margin = 0.0) {
  std::mt19937_64 gen(seed);
  std::vector<double> v(static_cast<std::size_t>(s.numel()));
  for (double& x : v) {
    x = rng::uniform(gen, lo, hi);
    if (kink_margin > 0.0 && std::abs(x) < kink_margin) {
      x = x < 0.0 ? x - kink_margin : x + kink_margin;
    }
  }
  return Tensor::from_data(s, std::move(v), rg);
}

// Pairwise-separated values (spacing 0.01), deterministically shuffled, so
// max reductions have an unambiguous winner.
Tensor separated_tensor(const Shape& s, std::uint64_t seed, bool rg) {
  const std::int64_t n = s.numel();
  std::vector<double> v(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = -1.0 + 0.01 * static_cast<double>(i);
  std::mt19937_64 gen(seed);
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[static_cast<std::size_t>(rng::below(gen, i))]);
  }
  return Tensor::from_data(s, std::move(v), rg);
}

// Scalarizes a map output against fixed random weights so every output
// element influences the loss.
Tensor weigh(const Tensor& y, std::uint64_t seed) {
  return sum_all(mul(y, rand_tensor(y.shape(), seed, -1.0, 1.0, false)));
}

Tensor binary_tensor(const Shape& s, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::vector<double> v(static_cast<std::size_t>(s.numel()));
  for (double& x : v) x = rng::uniform01(gen) < 0.5 ? 0.0 : 1.0;
  return Tensor::from_data(s, std::move(v), false);
}

GradcheckEntry run_entry(const std::string& name, const std::function<Tensor()>& f,
                         const std::vector<Tensor>& params, double threshold) {
  GradcheckEntry e;
  e.name = name;
  e.max_rel_err = grad_check(f, params, kEps);
  e.ok = e.max_rel_err < threshold;
  return e;
}

}  // namespace

GradcheckReport gradcheck_run() {
  GradcheckReport report;
  const double thr = report.threshold;
  auto add_entry = [&](const std::string& name, const std::function<Tensor()>& f,
                       const std::vector<Tensor>& params) {
    report.entries.push_back(run_entry(name, f, params, thr));
  };

  {
    Tensor a = rand_tensor(Shape{2, 3, 4, 4}, 11, -1.0, 1.0, true);
    Tensor b = rand_tensor(Shape{2, 3, 4, 4}, 12, -1.0, 1.0, true);
    add_entry("add", [=] { return weigh(add(a, b), 13); }, {a, b});
  }
  {
    Tensor a = rand_tensor(Shape{2, 3, 4, 4}, 21, -1.0, 1.0, true);
    Tensor b = rand_tensor(Shape{2, 3, 1, 1}, 22, -1.0, 1.0, true);
    add_entry("add_broadcast", [=] { return weigh(add(a, b), 23); }, {a, b});
  }
  {
    Tensor a = rand_tensor(Shape{2, 3, 4, 4}, 31, -1.0, 1.0, true);
    Tensor b = rand_tensor(Shape{2, 3, 4, 4}, 32, -1.0, 1.0, true);
    add_entry("mul", [=] { return weigh(mul(a, b), 33); }, {a, b});
  }
  {
    Tensor a = rand_tensor(Shape{2, 3, 4, 4}, 41, -1.0, 1.0, true);
    Tensor b = rand_tensor(Shape{2, 1, 4, 4}, 42, -1.0, 1.0, true);
    add_entry("mul_broadcast", [=] { return weigh(mul(a, b), 43); }, {a, b});
  }
  {
    Tensor x = rand_tensor(Shape{2, 3, 4, 4}, 51, -1.0, 1.0, true, 1e-3);
    add_entry("relu", [=] { return weigh(relu(x), 52); }, {x});
  }
  {
    Tensor x = rand_tensor(Shape{2, 3, 4, 4}, 61, -3.0, 3.0, true);
    add_entry("sigmoid", [=] { return weigh(sigmoid(x), 62); }, {x});
  }
  {
    Tensor x = rand_tensor(Shape{2, 5, 3, 3}, 71, -2.0, 2.0, true);
    add_entry("softmax_channels", [=] { return weigh(softmax_channels(x), 72); }, {x});
  }
  {
    Tensor x = rand_tensor(Shape{2, 3, 5, 5}, 81, -1.0, 1.0, true);
    Tensor w = rand_tensor(Shape{2, 3, 3, 3}, 82, -0.5, 0.5, true);
    Tensor b = rand_tensor(Shape{2}, 83, -0.5, 0.5, true);
    add_entry("conv2d", [=] { return weigh(conv2d(x, w, b, 1, 1), 84); }, {x, w, b});
  }
  {
    Tensor x = rand_tensor(Shape{1, 2, 5, 5}, 91, -1.0, 1.0, true);
    Tensor w = rand_tensor(Shape{3, 2, 3, 3}, 92, -0.5, 0.5, true);
    Tensor b = rand_tensor(Shape{3}, 93, -0.5, 0.5, true);
    add_entry("conv2d_stride2", [=] { return weigh(conv2d(x, w, b, 2, 1), 94); }, {x, w, b});
  }
  {
    Tensor x = rand_tensor(Shape{1, 2, 3, 3}, 101, -1.0, 1.0, true);
    add_entry("upsample_bilinear", [=] { return weigh(upsample_bilinear(x, 5, 6), 102); }, {x});
  }
  {
    Tensor x = rand_tensor(Shape{1, 2, 6, 6}, 111, -1.0, 1.0, true);
    add_entry("downsample_bilinear", [=] { return weigh(upsample_bilinear(x, 4, 3), 112); }, {x});
  }
  {
    Tensor a = rand_tensor(Shape{1, 2, 3, 3}, 121, -1.0, 1.0, true);
    Tensor b = rand_tensor(Shape{1, 3, 3, 3}, 122, -1.0, 1.0, true);
    Tensor c = rand_tensor(Shape{1, 1, 3, 3}, 123, -1.0, 1.0, true);
    add_entry("concat_channels", [=] { return weigh(concat_channels({a, b, c}), 124); }, {a, b, c});
  }
  {
    Tensor x = separated_tensor(Shape{2, 3, 4, 4}, 131, true);
    add_entry("global_max_pool", [=] { return weigh(global_pool(PoolKind::max, x), 132); }, {x});
  }
  {
    Tensor x = rand_tensor(Shape{2, 3, 4, 4}, 141, -1.0, 1.0, true);
    add_entry("global_avg_pool", [=] { return weigh(global_pool(PoolKind::avg, x), 142); }, {x});
  }
  {
    Tensor x = separated_tensor(Shape{2, 5, 3, 3}, 151, true);
    add_entry("channel_max", [=] { return weigh(channel_reduce(ReduceKind::max, x), 152); }, {x});
  }
  {
    Tensor x = rand_tensor(Shape{2, 5, 3, 3}, 161, -1.0, 1.0, true);
    add_entry("channel_mean", [=] { return weigh(channel_reduce(ReduceKind::mean, x), 162); }, {x});
  }
  {
    Tensor x = rand_tensor(Shape{2, 2, 5, 5}, 171, -1.0, 1.0, true);
    add_entry("avg_pool2d", [=] { return weigh(avg_pool2d(x, 3, 1, 1), 172); }, {x});
  }
  {
    Tensor x = rand_tensor(Shape{1, 2, 6, 6}, 181, -1.0, 1.0, true);
    add_entry("avg_pool2d_stride2", [=] { return weigh(avg_pool2d(x, 3, 2, 1), 182); }, {x});
  }
  {
    const Shape s{1, 1, 4, 4};
    Tensor z = rand_tensor(s, 191, -2.0, 2.0, true);
    Tensor g = binary_tensor(s, 192);
    Tensor w = rand_tensor(s, 193, 1.0, 6.0, false);
    add_entry("weighted_bce", [=] { return weighted_bce(z, g, w); }, {z});
  }
  {
    const Shape s{1, 1, 4, 4};
    Tensor z = rand_tensor(s, 201, -2.0, 2.0, true);
    Tensor g = binary_tensor(s, 202);
    Tensor w = rand_tensor(s, 203, 1.0, 6.0, false);
    add_entry("weighted_iou", [=] { return weighted_iou(z, g, w); }, {z});
  }
  {
    // Composed decode block: gate + channel/spatial attention, width 4.
    DecoderConfig dcfg;
    dcfg.width = 4;
    dcfg.n_stages = 2;
    dcfg.n_layers = 1;
    auto reg = std::make_shared<ParamRegistry>();
    init_conv(*reg, "dec/L1/S1/gate", 1, 8, 3, 3, 1, 1, 7);
    init_conv(*reg, "dec/L1/S1/ca/b1/c1", 1, 4, 1, 1, 1, 0, 7);
    init_conv(*reg, "dec/L1/S1/ca/b1/c2", 4, 1, 1, 1, 1, 0, 7);
    init_conv(*reg, "dec/L1/S1/ca/b2/c1", 1, 4, 1, 1, 1, 0, 7);
    init_conv(*reg, "dec/L1/S1/ca/b2/c2", 4, 1, 1, 1, 1, 0, 7);
    init_conv(*reg, "dec/L1/S1/sa", 1, 2, 7, 7, 1, 3, 7);
    Tensor current = separated_tensor(Shape{1, 4, 4, 4}, 211, true);
    Tensor deeper = separated_tensor(Shape{1, 4, 2, 2}, 212, true);
    std::vector<Tensor> params{current, deeper};
    for (const char* n : {"dec/L1/S1/gate", "dec/L1/S1/ca/b1/c1", "dec/L1/S1/ca/b1/c2",
                          "dec/L1/S1/ca/b2/c1", "dec/L1/S1/ca/b2/c2", "dec/L1/S1/sa"}) {
      params.push_back(reg->at(n).weight);
      params.push_back(reg->at(n).bias);
    }
    add_entry("dag_cam_block",
              [=] {
                const Tensor gated = dense_attention_gate(current, {deeper}, *reg, "dec/L1/S1/");
                return weigh(cam(gated, dcfg, *reg, "dec/L1/S1/"), 213);
              },
              params);
  }

  report.ok = std::all_of(report.entries.begin(), report.entries.end(),
                          [](const GradcheckEntry& e) { return e.ok; });
  return report;
}

}  // namespace mldd
