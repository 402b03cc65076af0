#pragma once

#include <array>
#include <cstdint>

#include "mldd/nn.hpp"
#include "mldd/tensor.hpp"

namespace mldd {

// Four-stage convolutional pyramid over an [N,3,H,W] image in [0,1].
// Stage i halves the extents of stage i-1; stage 1 is input/4.
struct FeaturePyramid {
  Tensor e1, e2, e3, e4;

  const Tensor& stage(int i) const;  // i in 1..4
};

inline constexpr std::array<std::int64_t, 4> kEncoderChannels{16, 32, 64, 128};

// Parameters "enc/s{i}/c{1,2}": per stage two 3x3 convs, the first with
// stride 2 (stage 1 uses two stride-2 convs), each followed by ReLU.
void register_encoder_params(ParamRegistry& reg, std::uint64_t seed);

// H and W must be divisible by 32.
FeaturePyramid encoder_forward(const Tensor& image, const ParamRegistry& reg);

}  // namespace mldd
