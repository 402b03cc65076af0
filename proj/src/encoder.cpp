#include "mldd/encoder.hpp"

#include <stdexcept>
#include <string>

namespace mldd {

const Tensor& FeaturePyramid::stage(int i) const {
  switch (i) {
    case 1: return e1;
    case 2: return e2;
    case 3: return e3;
    case 4: return e4;
    default: throw std::invalid_argument("FeaturePyramid: stage must be 1..4");
  }
}

void register_encoder_params(ParamRegistry& reg, std::uint64_t seed) {
  std::int64_t cin = 3;
  for (int s = 1; s <= 4; ++s) {
    const std::int64_t cout = kEncoderChannels[static_cast<std::size_t>(s - 1)];
    const std::string base = "enc/s" + std::to_string(s) + "/c";
    init_conv(reg, base + "1", cout, cin, 3, 3, 2, 1, seed);
    // stage 1 downsamples twice for a net stride of 4
    init_conv(reg, base + "2", cout, cout, 3, 3, s == 1 ? 2 : 1, 1, seed);
    cin = cout;
  }
}

FeaturePyramid encoder_forward(const Tensor& image, const ParamRegistry& reg) {
  if (!image.defined() || image.shape().rank != 4 || image.shape()[1] != 3) {
    throw std::invalid_argument("encoder_forward: expects an [N,3,H,W] image");
  }
  const std::int64_t h = image.shape()[2], w = image.shape()[3];
  if (h % 32 != 0 || w % 32 != 0) {
    throw std::invalid_argument("encoder_forward: extents " + std::to_string(h) + "x" +
                                std::to_string(w) +
                                " are not divisible by 32; resize the input first");
  }
  FeaturePyramid pyr;
  Tensor x = image;
  Tensor* stages[4] = {&pyr.e1, &pyr.e2, &pyr.e3, &pyr.e4};
  for (int s = 1; s <= 4; ++s) {
    const std::string base = "enc/s" + std::to_string(s) + "/c";
    x = relu(conv_apply(x, reg.at(base + "1")));
    x = relu(conv_apply(x, reg.at(base + "2")));
    *stages[s - 1] = x;
  }
  return pyr;
}

}  // namespace mldd
