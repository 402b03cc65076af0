#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mldd/encoder.hpp"
#include "mldd/nn.hpp"
#include "mldd/tensor.hpp"

namespace mldd {

struct DecoderConfig {
  enum class ChannelAct { sigmoid, softmax };

  int width = 32;      // decoder channel count
  int n_stages = 4;    // encoder stages consumed
  int n_layers = 3;    // horizontal decoding layers, 1..n_stages-1
  ChannelAct channel_act = ChannelAct::sigmoid;
  int reduction = 16;  // channel-attention bottleneck divisor

  void validate() const;
  std::int64_t bottleneck() const;  // max(1, width / reduction)
};

// All intermediate block outputs plus the supervision heads.
// p[j][i-1] holds layer j, stage i: layer 0 is the width-projected encoder
// features; layer j has n_stages - j entries.
struct DecoderGrid {
  std::vector<std::vector<Tensor>> p;
  std::vector<Tensor> layer_logits;  // [j-1] -> [N,1,out_h,out_w]
  Tensor final_logits;               // mean of layer_logits
};

// Parameter names ("dec/..."), registered in deterministic order:
//   dec/proj{i}                     1x1 stage projection to `width` channels
//   dec/L{j}/S{i}/gate              3x3 gate conv, width*(1+deeper) -> 1
//   dec/L{j}/S{i}/ca/b{1,2}/c{1,2}  channel-attention bottleneck convs
//   dec/L{j}/S{i}/sa                7x7 spatial-attention conv, 2 -> 1
//   dec/head{j}                     1x1 supervision head, width -> 1
void register_decoder_params(ParamRegistry& reg, const DecoderConfig& cfg,
                             std::span<const std::int64_t> stage_channels,
                             std::uint64_t seed);

// Upsamples every deeper feature to current's extents, concatenates
// (current first), derives a single-channel sigmoid map from a 3x3 conv and
// rescales current by it.
Tensor dense_attention_gate(const Tensor& current, const std::vector<Tensor>& deeper,
                            const ParamRegistry& reg, const std::string& prefix);

// a = act(b1(maxpool) + b2(avgpool)) broadcast over [N,C,1,1]; returns a * d.
Tensor channel_attention(const Tensor& d, const DecoderConfig& cfg,
                         const ParamRegistry& reg, const std::string& prefix);

// s = sigmoid(conv7x7(concat(channel max, channel mean))); returns s * d.
Tensor spatial_attention(const Tensor& d, const ParamRegistry& reg,
                         const std::string& prefix);

// spatial_attention(channel_attention(d)).
Tensor cam(const Tensor& d, const DecoderConfig& cfg, const ParamRegistry& reg,
           const std::string& prefix);

// 1x1 conv + ReLU per stage onto `width` channels.
std::vector<Tensor> project_stages(const std::vector<Tensor>& stages,
                                   const ParamRegistry& reg);
std::vector<Tensor> project_pyramid(const FeaturePyramid& pyr, const ParamRegistry& reg);

// Triangular decoder: block (j,i) gates p[j-1][i] with all strictly deeper
// features of layer j-1, then applies CAM; layer j keeps stages
// 1..n_stages-j until a single block remains. One logit head per layer,
// upsampled to (out_h, out_w); final logits are the mean over layers.
DecoderGrid decoder_forward_stages(const std::vector<Tensor>& stages,
                                   const DecoderConfig& cfg, const ParamRegistry& reg,
                                   std::int64_t out_h, std::int64_t out_w);
DecoderGrid decoder_forward(const FeaturePyramid& pyr, const DecoderConfig& cfg,
                            const ParamRegistry& reg, std::int64_t out_h,
                            std::int64_t out_w);

}  // namespace mldd
