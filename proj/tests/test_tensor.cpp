#include <doctest.h>

#include <cmath>

#include "mldd/tensor.hpp"
#include "test_util.hpp"

using namespace mldd;
using test_util::bitwise_equal;
using test_util::rand_tensor;
using test_util::separated_tensor;

TEST_CASE("tensor_new layout and validation") {
  Tensor t = Tensor::from_data(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(t.value()[3] == 4.0);  // (0,0,1,1) in row-major order
  CHECK(t.shape().numel() == 4);

  CHECK_THROWS_AS(Tensor::from_data(Shape{2, 3, 0, 1}, {}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor::from_data(Shape{1, 2, 2, 2}, {1, 2, 3}), std::invalid_argument);
  CHECK_NOTHROW(Tensor::from_data(Shape{1, 3, 8, 8}, std::vector<double>(192, 0.0)));
}

TEST_CASE("tensor_new registers an id iff requires_grad") {
  Tensor a = Tensor::zeros(Shape{1, 1, 2, 2}, false);
  Tensor b = Tensor::zeros(Shape{1, 1, 2, 2}, true);
  CHECK(a.id() == -1);
  CHECK(b.id() >= 0);
  CHECK(b.grad().size() == 4);
}

TEST_CASE("elementwise broadcast forward") {
  Tensor ones = Tensor::full(Shape{1, 2, 2, 2}, 1.0);
  Tensor half = Tensor::full(Shape{1, 1, 2, 2}, 0.5);
  Tensor r = mul(ones, half);
  CHECK(r.shape() == Shape{1, 2, 2, 2});
  for (double v : r.value()) CHECK(v == 0.5);

  Tensor x = rand_tensor(Shape{2, 3, 4, 4}, 1);
  Tensor z = Tensor::zeros(Shape{2, 3, 4, 4});
  CHECK(bitwise_equal(add(x, z), x));

  CHECK_THROWS_AS(add(rand_tensor(Shape{1, 3, 4, 4}, 2), rand_tensor(Shape{1, 5, 4, 4}, 3)),
                  std::invalid_argument);
}

TEST_CASE("mul backward equals the other operand") {
  Tensor a = rand_tensor(Shape{1, 2, 3, 3}, 4, -1.0, 1.0, true);
  Tensor b = rand_tensor(Shape{1, 2, 3, 3}, 5, -1.0, 1.0, false);
  {
    TapeScope scope;
    backward(sum_all(mul(a, b)));
  }
  const auto g = a.grad();
  const auto vb = b.value();
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == doctest::Approx(vb[i]).epsilon(1e-12));

  const double err = grad_check([&] { return sum_all(mul(a, b)); }, {a}, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("activations") {
  Tensor x = Tensor::from_data(Shape{1, 1, 1, 3}, {-3.0, 0.0, 2.0});
  Tensor r = relu(x);
  CHECK(r.value()[0] == 0.0);
  CHECK(r.value()[1] == 0.0);
  CHECK(r.value()[2] == 2.0);

  Tensor s = sigmoid(Tensor::zeros(Shape{1, 1, 1, 1}));
  CHECK(s.value()[0] == 0.5);

  // derivative of sigmoid at 0 is 1/4
  Tensor z = Tensor::zeros(Shape{1, 1, 1, 1}, true);
  {
    TapeScope scope;
    backward(sum_all(sigmoid(z)));
  }
  CHECK(z.grad()[0] == doctest::Approx(0.25).epsilon(1e-12));

  Tensor xr = rand_tensor(Shape{2, 3, 4, 4}, 6, -3.0, 3.0, true);
  const double err = grad_check(
      [&] { return sum_all(mul(sigmoid(xr), rand_tensor(Shape{2, 3, 4, 4}, 7))); }, {xr}, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("sigmoid output strictly inside (0,1)") {
  Tensor x = rand_tensor(Shape{2, 3, 5, 5}, 8, -10.0, 10.0);
  for (double v : sigmoid(x).value()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("softmax_channels") {
  Tensor u = Tensor::full(Shape{1, 4, 2, 2}, 0.3);
  for (double v : softmax_channels(u).value()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

  Tensor one = rand_tensor(Shape{2, 1, 3, 3}, 9);
  for (double v : softmax_channels(one).value()) CHECK(v == 1.0);

  Tensor x = rand_tensor(Shape{2, 5, 3, 3}, 10, -4.0, 4.0);
  Tensor y = softmax_channels(x);
  const auto vy = y.value();
  for (std::int64_t n = 0; n < 2; ++n) {
    for (std::int64_t p = 0; p < 9; ++p) {
      double sum = 0.0;
      for (std::int64_t c = 0; c < 5; ++c) sum += vy[static_cast<std::size_t>(n * 45 + c * 9 + p)];
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }

  Tensor xg = rand_tensor(Shape{2, 5, 3, 3}, 11, -2.0, 2.0, true);
  const double err = grad_check(
      [&] { return sum_all(mul(softmax_channels(xg), rand_tensor(Shape{2, 5, 3, 3}, 12))); }, {xg},
      1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("conv2d values") {
  // 1x1 kernel of value 1, zero bias: identity
  Tensor x = rand_tensor(Shape{1, 1, 3, 3}, 13);
  Tensor w1 = Tensor::full(Shape{1, 1, 1, 1}, 1.0);
  Tensor b0 = Tensor::zeros(Shape{1});
  CHECK(bitwise_equal(conv2d(x, w1, b0, 1, 0), x));

  // all-ones 3x3 kernel, pad 1 over a 3x3 ones image: overlap counting
  Tensor ones = Tensor::full(Shape{1, 1, 3, 3}, 1.0);
  Tensor w9 = Tensor::full(Shape{1, 1, 3, 3}, 1.0);
  Tensor y = conv2d(ones, w9, b0, 1, 1);
  CHECK(y.value()[4] == 9.0);  // center
  CHECK(y.value()[0] == 4.0);  // corner
  CHECK(y.value()[1] == 6.0);  // edge

  CHECK_THROWS_AS(conv2d(rand_tensor(Shape{1, 2, 3, 3}, 14), Tensor::zeros(Shape{1, 3, 1, 1}),
                         b0, 1, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(conv2d(rand_tensor(Shape{1, 1, 2, 2}, 15), Tensor::zeros(Shape{1, 1, 5, 5}),
                         b0, 1, 0),
                  std::invalid_argument);
}

TEST_CASE("conv2d gradients vs finite differences") {
  Tensor x = rand_tensor(Shape{2, 3, 5, 5}, 16, -1.0, 1.0, true);
  Tensor w = rand_tensor(Shape{2, 3, 3, 3}, 17, -0.5, 0.5, true);
  Tensor b = rand_tensor(Shape{2}, 18, -0.5, 0.5, true);
  const double err = grad_check(
      [&] { return sum_all(mul(conv2d(x, w, b, 1, 1), rand_tensor(Shape{2, 2, 5, 5}, 19))); },
      {x, w, b}, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("conv2d with an identity kernel is bitwise identity") {
  Tensor x = rand_tensor(Shape{2, 4, 6, 6}, 20);
  std::vector<double> wid(static_cast<std::size_t>(4 * 4), 0.0);
  for (int c = 0; c < 4; ++c) wid[static_cast<std::size_t>(c * 4 + c)] = 1.0;
  Tensor w = Tensor::from_data(Shape{4, 4, 1, 1}, std::move(wid));
  Tensor b = Tensor::zeros(Shape{4});
  CHECK(bitwise_equal(conv2d(x, w, b, 1, 0), x));
}

TEST_CASE("upsample_bilinear") {
  Tensor c = Tensor::full(Shape{1, 2, 3, 3}, 0.75);
  Tensor up = upsample_bilinear(c, 6, 6);
  for (double v : up.value()) CHECK(v == doctest::Approx(0.75).epsilon(1e-12));

  Tensor x = rand_tensor(Shape{1, 2, 4, 5}, 21);
  CHECK(bitwise_equal(upsample_bilinear(x, 4, 5), x));

  CHECK_THROWS_AS(upsample_bilinear(x, 0, 5), std::invalid_argument);

  Tensor xg = rand_tensor(Shape{1, 2, 3, 3}, 22, -1.0, 1.0, true);
  const double err = grad_check(
      [&] { return sum_all(mul(upsample_bilinear(xg, 5, 7), rand_tensor(Shape{1, 2, 5, 7}, 23))); },
      {xg}, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("concat_channels") {
  Tensor a = rand_tensor(Shape{1, 2, 4, 4}, 24);
  Tensor b = rand_tensor(Shape{1, 3, 4, 4}, 25);
  Tensor y = concat_channels({a, b});
  CHECK(y.shape() == Shape{1, 5, 4, 4});
  CHECK(bitwise_equal(concat_channels({a}), a));
  CHECK_THROWS_AS(concat_channels({a, rand_tensor(Shape{1, 2, 3, 4}, 26)}), std::invalid_argument);
  CHECK_THROWS_AS(concat_channels({}), std::invalid_argument);

  // backward: the second input's grad is the matching slice of the output grad
  Tensor ag = rand_tensor(Shape{1, 2, 4, 4}, 27, -1.0, 1.0, true);
  Tensor bg = rand_tensor(Shape{1, 3, 4, 4}, 28, -1.0, 1.0, true);
  Tensor r = rand_tensor(Shape{1, 5, 4, 4}, 29);
  {
    TapeScope scope;
    backward(sum_all(mul(concat_channels({ag, bg}), r)));
  }
  const auto gb = bg.grad();
  const auto vr = r.value();
  for (std::size_t i = 0; i < gb.size(); ++i) {
    CHECK(gb[i] == vr[2 * 16 + i]);  // slice [2..5) of the weight map
  }
}

TEST_CASE("concat of channel slices reassembles the input bitwise") {
  Tensor x = rand_tensor(Shape{2, 6, 3, 3}, 30);
  auto slice = [&](std::int64_t c0, std::int64_t c1) {
    const std::int64_t hw = 9;
    std::vector<double> v;
    for (std::int64_t n = 0; n < 2; ++n) {
      for (std::int64_t c = c0; c < c1; ++c) {
        for (std::int64_t p = 0; p < hw; ++p) {
          v.push_back(x.value()[static_cast<std::size_t>(n * 6 * hw + c * hw + p)]);
        }
      }
    }
    return Tensor::from_data(Shape{2, c1 - c0, 3, 3}, std::move(v));
  };
  CHECK(bitwise_equal(concat_channels({slice(0, 2), slice(2, 3), slice(3, 6)}), x));
}

TEST_CASE("global_pool") {
  Tensor x = Tensor::from_data(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(global_pool(PoolKind::avg, x).value()[0] == doctest::Approx(2.5).epsilon(1e-15));

  Tensor c = Tensor::full(Shape{1, 1, 3, 3}, 0.7, true);
  CHECK(global_pool(PoolKind::max, c).value()[0] == 0.7);
  {
    TapeScope scope;
    backward(sum_all(global_pool(PoolKind::max, c)));
  }
  CHECK(c.grad()[0] == 1.0);  // ties route to the first element
  for (std::size_t i = 1; i < 9; ++i) CHECK(c.grad()[i] == 0.0);

  Tensor xs = separated_tensor(Shape{2, 3, 4, 4}, 31, true);
  const double err = grad_check(
      [&] { return sum_all(mul(global_pool(PoolKind::max, xs), rand_tensor(Shape{2, 3, 1, 1}, 32))); },
      {xs}, 1e-5);
  CHECK(err < 1e-6);
  Tensor xa = rand_tensor(Shape{2, 3, 4, 4}, 33, -1.0, 1.0, true);
  const double err2 = grad_check(
      [&] { return sum_all(mul(global_pool(PoolKind::avg, xa), rand_tensor(Shape{2, 3, 1, 1}, 34))); },
      {xa}, 1e-5);
  CHECK(err2 < 1e-6);
}

TEST_CASE("channel_reduce") {
  Tensor one = rand_tensor(Shape{2, 1, 3, 3}, 35);
  CHECK(bitwise_equal(channel_reduce(ReduceKind::max, one), one));
  CHECK(bitwise_equal(channel_reduce(ReduceKind::mean, one), one));

  Tensor x = Tensor::from_data(Shape{1, 3, 1, 1}, {1, 5, 3});
  CHECK(channel_reduce(ReduceKind::max, x).value()[0] == 5.0);
  CHECK(channel_reduce(ReduceKind::mean, x).value()[0] == doctest::Approx(3.0).epsilon(1e-15));

  Tensor xs = separated_tensor(Shape{2, 5, 3, 3}, 36, true);
  const double err = grad_check(
      [&] { return sum_all(mul(channel_reduce(ReduceKind::max, xs), rand_tensor(Shape{2, 1, 3, 3}, 37))); },
      {xs}, 1e-5);
  CHECK(err < 1e-6);
  Tensor xm = rand_tensor(Shape{2, 5, 3, 3}, 38, -1.0, 1.0, true);
  const double err2 = grad_check(
      [&] { return sum_all(mul(channel_reduce(ReduceKind::mean, xm), rand_tensor(Shape{2, 1, 3, 3}, 39))); },
      {xm}, 1e-5);
  CHECK(err2 < 1e-6);
}

TEST_CASE("avg_pool2d") {
  Tensor x = rand_tensor(Shape{1, 2, 4, 4}, 40);
  CHECK(bitwise_equal(avg_pool2d(x, 1, 1, 0), x));

  Tensor ones = Tensor::full(Shape{1, 1, 3, 3}, 1.0);
  Tensor y = avg_pool2d(ones, 3, 1, 1);
  CHECK(y.value()[4] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(y.value()[0] == doctest::Approx(4.0 / 9.0).epsilon(1e-15));

  CHECK_THROWS_AS(avg_pool2d(x, 2, 1, 0), std::invalid_argument);

  Tensor xg = rand_tensor(Shape{2, 2, 5, 5}, 41, -1.0, 1.0, true);
  const double err = grad_check(
      [&] { return sum_all(mul(avg_pool2d(xg, 3, 1, 1), rand_tensor(Shape{2, 2, 5, 5}, 42))); },
      {xg}, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("avg_pool2d 31x31 matches the nested-loop oracle") {
  Tensor m = test_util::binary_tensor(Shape{1, 1, 64, 64}, 43, 0.3);
  Tensor y = avg_pool2d(m, 31, 1, 15);
  const auto v = m.value();
  const auto vy = y.value();
  for (std::int64_t oy = 0; oy < 64; ++oy) {
    for (std::int64_t ox = 0; ox < 64; ++ox) {
      double acc = 0.0;
      for (std::int64_t ky = -15; ky <= 15; ++ky) {
        for (std::int64_t kx = -15; kx <= 15; ++kx) {
          const std::int64_t iy = oy + ky, ix = ox + kx;
          if (iy < 0 || iy >= 64 || ix < 0 || ix >= 64) continue;
          acc += v[static_cast<std::size_t>(iy * 64 + ix)];
        }
      }
      CHECK(vy[static_cast<std::size_t>(oy * 64 + ox)] == acc / 961.0);
    }
  }
}

TEST_CASE("determinism: identical inputs give bitwise identical results") {
  Tensor x = rand_tensor(Shape{2, 3, 6, 6}, 44);
  Tensor w = rand_tensor(Shape{4, 3, 3, 3}, 45);
  Tensor b = rand_tensor(Shape{4}, 46);
  CHECK(bitwise_equal(conv2d(x, w, b, 2, 1), conv2d(x, w, b, 2, 1)));
  CHECK(bitwise_equal(softmax_channels(x), softmax_channels(x)));
  CHECK(bitwise_equal(upsample_bilinear(x, 9, 11), upsample_bilinear(x, 9, 11)));
}
