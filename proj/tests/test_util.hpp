#pragma once

#include <random>
#include <vector>

#include "mldd/rng.hpp"
#include "mldd/tensor.hpp"

namespace test_util {

inline mldd::Tensor rand_tensor(const mldd::Shape& s, std::uint64_t seed, double lo = -1.0,
                                double hi = 1.0, bool rg = false, double kink_margin = 0.0) {
  std::mt19937_64 gen(seed);
  std::vector<double> v(static_cast<std::size_t>(s.numel()));
  for (double& x : v) {
    x = mldd::rng::uniform(gen, lo, hi);
    if (kink_margin > 0.0 && std::abs(x) < kink_margin) {
      x = x < 0.0 ? x - kink_margin : x + kink_margin;
    }
  }
  return mldd::Tensor::from_data(s, std::move(v), rg);
}

// Pairwise-separated values (gap 0.01), shuffled; safe around max ties.
inline mldd::Tensor separated_tensor(const mldd::Shape& s, std::uint64_t seed, bool rg = false) {
  const std::int64_t n = s.numel();
  std::vector<double> v(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    v[static_cast<std::size_t>(i)] = -1.0 + 0.01 * static_cast<double>(i);
  }
  std::mt19937_64 gen(seed);
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[static_cast<std::size_t>(mldd::rng::below(gen, i))]);
  }
  return mldd::Tensor::from_data(s, std::move(v), rg);
}

inline mldd::Tensor binary_tensor(const mldd::Shape& s, std::uint64_t seed, double p = 0.5) {
  std::mt19937_64 gen(seed);
  std::vector<double> v(static_cast<std::size_t>(s.numel()));
  for (double& x : v) x = mldd::rng::uniform01(gen) < p ? 1.0 : 0.0;
  return mldd::Tensor::from_data(s, std::move(v), false);
}

inline bool bitwise_equal(const mldd::Tensor& a, const mldd::Tensor& b) {
  if (!(a.shape() == b.shape())) return false;
  const auto va = a.value(), vb = b.value();
  for (std::size_t i = 0; i < va.size(); ++i) {
    if (va[i] != vb[i]) return false;
  }
  return true;
}

inline double max_abs_diff(const mldd::Tensor& a, const mldd::Tensor& b) {
  const auto va = a.value(), vb = b.value();
  double m = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) m = std::max(m, std::abs(va[i] - vb[i]));
  return m;
}

}  // namespace test_util
