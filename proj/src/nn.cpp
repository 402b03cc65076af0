#include "mldd/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "mldd/rng.hpp"

namespace mldd {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  const std::filesystem::path& path;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) {
      throw std::runtime_error("checkpoint truncated: " + path.string());
    }
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + static_cast<std::size_t>(i)])) << (8 * i);
    pos += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + static_cast<std::size_t>(i)])) << (8 * i);
    pos += 8;
    return std::bit_cast<double>(v);
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

void append_tensor(std::string& out, const std::string& name, const Tensor& t) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.append(name);
  put_u32(out, static_cast<std::uint32_t>(t.shape().rank));
  for (int i = 0; i < t.shape().rank; ++i) put_u32(out, static_cast<std::uint32_t>(t.shape()[i]));
  for (double v : t.value()) put_f64(out, v);
}

void read_tensor(Reader& r, const std::string& expect_name, Tensor& t) {
  const std::uint32_t name_len = r.u32();
  const std::string name = r.bytes(name_len);
  if (name != expect_name) {
    throw std::runtime_error("checkpoint mismatch: expected parameter '" + expect_name +
                             "', found '" + name + "' in " + r.path.string());
  }
  const std::uint32_t rank = r.u32();
  if (rank != static_cast<std::uint32_t>(t.shape().rank)) {
    throw std::runtime_error("checkpoint mismatch: parameter '" + name + "' rank differs");
  }
  Shape s = t.shape();
  for (int i = 0; i < s.rank; ++i) {
    const std::uint32_t e = r.u32();
    if (e != static_cast<std::uint32_t>(s[i])) {
      throw std::runtime_error("checkpoint mismatch: parameter '" + name +
                               "' shape differs (config/checkpoint width mismatch?)");
    }
  }
  auto v = t.value_mut();
  for (double& x : v) x = r.f64();
}

constexpr char kMagic[] = {'M', 'L', 'D', 'D', '1'};

}  // namespace

ConvParam& ParamRegistry::add(ConvParam p) {
  if (index_.contains(p.name)) fail("ParamRegistry: duplicate parameter name '" + p.name + "'");
  index_.emplace(p.name, params_.size());
  params_.push_back(std::make_unique<ConvParam>(std::move(p)));
  return *params_.back();
}

ConvParam& ParamRegistry::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) fail("ParamRegistry: unknown parameter '" + name + "'");
  return *params_[it->second];
}

const ConvParam& ParamRegistry::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) fail("ParamRegistry: unknown parameter '" + name + "'");
  return *params_[it->second];
}

bool ParamRegistry::contains(const std::string& name) const { return index_.contains(name); }

std::int64_t ParamRegistry::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p->weight.numel() + p->bias.numel();
  return n;
}

void ParamRegistry::zero_grad() {
  for (auto& p : params_) {
    p->weight.zero_grad();
    p->bias.zero_grad();
  }
}

ConvParam& init_conv(ParamRegistry& reg, const std::string& name, std::int64_t cout,
                     std::int64_t cin, std::int64_t kh, std::int64_t kw,
                     std::int64_t stride, std::int64_t pad, std::uint64_t seed) {
  if (cout < 1 || cin < 1 || kh < 1 || kw < 1) fail("init_conv: extents must be positive");
  const double bound = std::sqrt(6.0 / static_cast<double>(cin * kh * kw));
  std::mt19937_64 gen(rng::mix(seed, name));
  std::vector<double> w(static_cast<std::size_t>(cout * cin * kh * kw));
  for (double& v : w) v = rng::uniform(gen, -bound, bound);
  ConvParam p;
  p.name = name;
  p.weight = Tensor::from_data(Shape{cout, cin, kh, kw}, std::move(w), true);
  p.bias = Tensor::zeros(Shape{cout}, true);
  p.stride = stride;
  p.pad = pad;
  return reg.add(std::move(p));
}

Tensor conv_apply(const Tensor& x, const ConvParam& p) {
  return conv2d(x, p.weight, p.bias, p.stride, p.pad);
}

AdamState::AdamState(const ParamRegistry& reg, AdamConfig cfg) : cfg_(cfg) {
  m_.reserve(reg.size() * 2);
  v_.reserve(reg.size() * 2);
  for (std::size_t i = 0; i < reg.size(); ++i) {
    m_.emplace_back(reg[i].weight.value().size(), 0.0);
    m_.emplace_back(reg[i].bias.value().size(), 0.0);
    v_.emplace_back(reg[i].weight.value().size(), 0.0);
    v_.emplace_back(reg[i].bias.value().size(), 0.0);
  }
}

void AdamState::step(ParamRegistry& reg) {
  if (m_.size() != reg.size() * 2) fail("adam_step: registry size changed after construction");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < reg.size(); ++i) {
    ConvParam& p = reg[i];
    Tensor* tensors[2] = {&p.weight, &p.bias};
    for (int k = 0; k < 2; ++k) {
      Tensor& t = *tensors[k];
      if (t.grad().empty()) {
        throw std::runtime_error("adam_step: parameter '" + p.name +
                                 (k == 0 ? "/w" : "/b") + "' has no gradient");
      }
      auto g = t.grad_mut();
      auto val = t.value_mut();
      std::vector<double>& m = m_[i * 2 + static_cast<std::size_t>(k)];
      std::vector<double>& v = v_[i * 2 + static_cast<std::size_t>(k)];
      for (std::size_t j = 0; j < val.size(); ++j) {
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        const double mhat = m[j] / c1;
        const double vhat = v[j] / c2;
        val[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
        g[j] = 0.0;
      }
    }
  }
}

void save_checkpoint(const ParamRegistry& reg, const std::filesystem::path& path) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  for (std::size_t i = 0; i < reg.size(); ++i) {
    append_tensor(out, reg[i].name + "/w", reg[i].weight);
    append_tensor(out, reg[i].name + "/b", reg[i].bias);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("checkpoint write failed: " + path.string());
}

void load_checkpoint(ParamRegistry& reg, const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path.string());
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kMagic) || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("not an MLDD1 checkpoint: " + path.string());
  }
  Reader r{buf, sizeof(kMagic), path};
  for (std::size_t i = 0; i < reg.size(); ++i) {
    read_tensor(r, reg[i].name + "/w", reg[i].weight);
    read_tensor(r, reg[i].name + "/b", reg[i].bias);
  }
  if (r.pos != buf.size()) {
    throw std::runtime_error("checkpoint has trailing data: " + path.string());
  }
}

}  // namespace mldd
