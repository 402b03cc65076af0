#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "mldd/tensor.hpp"

namespace mldd {

// A learnable convolution: weight [Cout,Cin,kh,kw] and bias [Cout], both
// requiring grad. Shapes are fixed after construction.
struct ConvParam {
  std::string name;
  Tensor weight;
  Tensor bias;
  std::int64_t stride = 1;
  std::int64_t pad = 0;
};

// Ordered name -> ConvParam map. Iteration follows insertion order, which
// fixes the checkpoint layout and the optimizer traversal.
class ParamRegistry {
 public:
  ConvParam& add(ConvParam p);
  ConvParam& at(const std::string& name);
  const ConvParam& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const { return params_.size(); }
  ConvParam& operator[](std::size_t i) { return *params_[i]; }
  const ConvParam& operator[](std::size_t i) const { return *params_[i]; }

  std::int64_t parameter_count() const;  // total scalar count
  void zero_grad();

 private:
  std::vector<std::unique_ptr<ConvParam>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Kaiming-uniform weights with bound sqrt(6 / (cin*kh*kw)), zero bias.
// Fully determined by (seed, name).
ConvParam& init_conv(ParamRegistry& reg, const std::string& name, std::int64_t cout,
                     std::int64_t cin, std::int64_t kh, std::int64_t kw,
                     std::int64_t stride, std::int64_t pad, std::uint64_t seed);

Tensor conv_apply(const Tensor& x, const ConvParam& p);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam over a registry. step() consumes the gradients filled
// by backward() and clears them to zero.
class AdamState {
 public:
  AdamState(const ParamRegistry& reg, AdamConfig cfg);

  void step(ParamRegistry& reg);
  std::int64_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;  // one pair per tensor, registry order
  std::int64_t t_ = 0;
};

// Checkpoint file: magic "MLDD1", then per tensor in registry order
// (weight then bias of each ConvParam): u32 name length, name bytes
// ("<param>/w" or "<param>/b"), u32 rank, u32 extents, float64 data.
// All integers and floats little-endian.
void save_checkpoint(const ParamRegistry& reg, const std::filesystem::path& path);
void load_checkpoint(ParamRegistry& reg, const std::filesystem::path& path);

}  // namespace mldd
