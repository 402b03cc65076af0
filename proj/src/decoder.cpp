#include "mldd/decoder.hpp"

#include <stdexcept>

namespace mldd {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

std::string block_prefix(int j, int i) {
  return "dec/L" + std::to_string(j) + "/S" + std::to_string(i) + "/";
}

}  // namespace

void DecoderConfig::validate() const {
  if (width < 1) fail("DecoderConfig: width must be >= 1");
  if (n_stages < 2) fail("DecoderConfig: n_stages must be >= 2");
  if (n_layers < 1 || n_layers > n_stages - 1) {
    fail("DecoderConfig: n_layers must lie in [1, n_stages-1], got " + std::to_string(n_layers));
  }
  if (reduction < 1) fail("DecoderConfig: reduction must be >= 1");
}

std::int64_t DecoderConfig::bottleneck() const {
  const std::int64_t b = width / reduction;
  return b < 1 ? 1 : b;
}

void register_decoder_params(ParamRegistry& reg, const DecoderConfig& cfg,
                             std::span<const std::int64_t> stage_channels,
                             std::uint64_t seed) {
  cfg.validate();
  if (static_cast<int>(stage_channels.size()) != cfg.n_stages) {
    fail("register_decoder_params: stage_channels size must equal n_stages");
  }
  const std::int64_t w = cfg.width;
  for (int i = 1; i <= cfg.n_stages; ++i) {
    init_conv(reg, "dec/proj" + std::to_string(i), w,
              stage_channels[static_cast<std::size_t>(i - 1)], 1, 1, 1, 0, seed);
  }
  const std::int64_t m = cfg.bottleneck();
  for (int j = 1; j <= cfg.n_layers; ++j) {
    for (int i = 1; i <= cfg.n_stages - j; ++i) {
      const std::string p = block_prefix(j, i);
      const std::int64_t deeper = cfg.n_stages - j + 1 - i;
      init_conv(reg, p + "gate", 1, w * (1 + deeper), 3, 3, 1, 1, seed);
      init_conv(reg, p + "ca/b1/c1", m, w, 1, 1, 1, 0, seed);
      init_conv(reg, p + "ca/b1/c2", w, m, 1, 1, 1, 0, seed);
      init_conv(reg, p + "ca/b2/c1", m, w, 1, 1, 1, 0, seed);
      init_conv(reg, p + "ca/b2/c2", w, m, 1, 1, 1, 0, seed);
      init_conv(reg, p + "sa", 1, 2, 7, 7, 1, 3, seed);
    }
    init_conv(reg, "dec/head" + std::to_string(j), 1, w, 1, 1, 1, 0, seed);
  }
}

Tensor dense_attention_gate(const Tensor& current, const std::vector<Tensor>& deeper,
                            const ParamRegistry& reg, const std::string& prefix) {
  if (deeper.empty()) fail("dense_attention_gate: deeper feature list is empty");
  const std::int64_t c = current.shape()[1];
  for (const Tensor& t : deeper) {
    if (t.shape()[1] != c) {
      fail("dense_attention_gate: channel mismatch, current has " + std::to_string(c) +
           " channels but a deeper feature has " + std::to_string(t.shape()[1]));
    }
  }
  std::vector<Tensor> cat;
  cat.reserve(deeper.size() + 1);
  cat.push_back(current);
  const std::int64_t h = current.shape()[2], w = current.shape()[3];
  for (const Tensor& t : deeper) cat.push_back(upsample_bilinear(t, h, w));
  const Tensor score = sigmoid(conv_apply(concat_channels(cat), reg.at(prefix + "gate")));
  return mul(current, score);
}

Tensor channel_attention(const Tensor& d, const DecoderConfig& cfg,
                         const ParamRegistry& reg, const std::string& prefix) {
  const Tensor pmax = global_pool(PoolKind::max, d);
  const Tensor pavg = global_pool(PoolKind::avg, d);
  const Tensor b1 = conv_apply(relu(conv_apply(pmax, reg.at(prefix + "ca/b1/c1"))),
                               reg.at(prefix + "ca/b1/c2"));
  const Tensor b2 = conv_apply(relu(conv_apply(pavg, reg.at(prefix + "ca/b2/c1"))),
                               reg.at(prefix + "ca/b2/c2"));
  const Tensor z = add(b1, b2);
  const Tensor a = cfg.channel_act == DecoderConfig::ChannelAct::sigmoid
                       ? sigmoid(z)
                       : softmax_channels(z);
  return mul(a, d);
}

Tensor spatial_attention(const Tensor& d, const ParamRegistry& reg,
                         const std::string& prefix) {
  const Tensor rmax = channel_reduce(ReduceKind::max, d);
  const Tensor ravg = channel_reduce(ReduceKind::mean, d);
  const Tensor s = sigmoid(conv_apply(concat_channels({rmax, ravg}), reg.at(prefix + "sa")));
  return mul(s, d);
}

Tensor cam(const Tensor& d, const DecoderConfig& cfg, const ParamRegistry& reg,
           const std::string& prefix) {
  return spatial_attention(channel_attention(d, cfg, reg, prefix), reg, prefix);
}

std::vector<Tensor> project_stages(const std::vector<Tensor>& stages,
                                   const ParamRegistry& reg) {
  std::vector<Tensor> out;
  out.reserve(stages.size());
  for (std::size_t i = 0; i < stages.size(); ++i) {
    out.push_back(relu(conv_apply(stages[i], reg.at("dec/proj" + std::to_string(i + 1)))));
  }
  return out;
}

std::vector<Tensor> project_pyramid(const FeaturePyramid& pyr, const ParamRegistry& reg) {
  return project_stages({pyr.e1, pyr.e2, pyr.e3, pyr.e4}, reg);
}

DecoderGrid decoder_forward_stages(const std::vector<Tensor>& stages,
                                   const DecoderConfig& cfg, const ParamRegistry& reg,
                                   std::int64_t out_h, std::int64_t out_w) {
  cfg.validate();
  if (static_cast<int>(stages.size()) != cfg.n_stages) {
    fail("decoder_forward: config expects " + std::to_string(cfg.n_stages) +
         " stages, pyramid has " + std::to_string(stages.size()));
  }
  if (out_h < 1 || out_w < 1) fail("decoder_forward: output extents must be positive");

  DecoderGrid grid;
  grid.p.resize(static_cast<std::size_t>(cfg.n_layers) + 1);
  grid.p[0] = project_stages(stages, reg);

  for (int j = 1; j <= cfg.n_layers; ++j) {
    const std::vector<Tensor>& prev = grid.p[static_cast<std::size_t>(j - 1)];
    std::vector<Tensor>& cur = grid.p[static_cast<std::size_t>(j)];
    const int prev_stages = cfg.n_stages - (j - 1);
    for (int i = 1; i <= cfg.n_stages - j; ++i) {
      std::vector<Tensor> deeper(prev.begin() + i, prev.begin() + prev_stages);
      const std::string prefix = block_prefix(j, i);
      const Tensor gated = dense_attention_gate(prev[static_cast<std::size_t>(i - 1)], deeper, reg, prefix);
      cur.push_back(cam(gated, cfg, reg, prefix));
    }
    const Tensor head = conv_apply(cur[0], reg.at("dec/head" + std::to_string(j)));
    grid.layer_logits.push_back(upsample_bilinear(head, out_h, out_w));
  }

  Tensor acc = grid.layer_logits[0];
  for (std::size_t j = 1; j < grid.layer_logits.size(); ++j) acc = add(acc, grid.layer_logits[j]);
  grid.final_logits = scale(acc, 1.0 / static_cast<double>(grid.layer_logits.size()));
  return grid;
}

DecoderGrid decoder_forward(const FeaturePyramid& pyr, const DecoderConfig& cfg,
                            const ParamRegistry& reg, std::int64_t out_h,
                            std::int64_t out_w) {
  if (cfg.n_stages != 4) fail("decoder_forward: the 4-stage pyramid requires n_stages == 4");
  if (out_h != pyr.e1.shape()[2] * 4 || out_w != pyr.e1.shape()[3] * 4) {
    fail("decoder_forward: output extents must equal the pre-encoder image extents");
  }
  return decoder_forward_stages({pyr.e1, pyr.e2, pyr.e3, pyr.e4}, cfg, reg, out_h, out_w);
}

}  // namespace mldd
