#include <doctest.h>

#include <set>

#include "mldd/tensor.hpp"
#include "test_util.hpp"

using namespace mldd;
using test_util::rand_tensor;

TEST_CASE("backward of a plain sum gives unit gradients") {
  Tensor x = rand_tensor(Shape{2, 2, 3, 3}, 1, -1.0, 1.0, true);
  {
    TapeScope scope;
    backward(sum_all(x));
  }
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("unused parameter keeps a zero gradient") {
  Tensor used = rand_tensor(Shape{1, 1, 2, 2}, 2, -1.0, 1.0, true);
  Tensor unused = rand_tensor(Shape{1, 1, 2, 2}, 3, -1.0, 1.0, true);
  {
    TapeScope scope;
    backward(sum_all(used));
  }
  for (double g : unused.grad()) CHECK(g == 0.0);
}

TEST_CASE("shared subexpression accumulates both paths") {
  Tensor x = rand_tensor(Shape{1, 1, 2, 2}, 4, 0.1, 1.0, true);
  const double err = grad_check(
      [&] {
        Tensor y = mul(x, x);          // x^2
        return sum_all(add(y, mul(y, x)));  // x^2 + x^3
      },
      {x}, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("backward rejects non-scalar and untaped losses") {
  Tensor x = rand_tensor(Shape{1, 1, 2, 2}, 5, -1.0, 1.0, true);
  {
    TapeScope scope;
    Tensor y = mul(x, x);
    CHECK_THROWS_AS(backward(y), std::invalid_argument);  // 4 elements
  }
  Tensor leaf = rand_tensor(Shape{1, 1, 1, 1}, 6, -1.0, 1.0, true);
  CHECK_THROWS_AS(backward(leaf), std::invalid_argument);  // never recorded

  // op outside a tape scope does not record, so its result cannot backward
  Tensor z = sum_all(x);
  CHECK(!z.requires_grad());
  CHECK_THROWS_AS(backward(z), std::invalid_argument);
}

TEST_CASE("grad accumulates additively across backward calls") {
  Tensor x = rand_tensor(Shape{1, 1, 2, 2}, 7, -1.0, 1.0, true);
  {
    TapeScope scope;
    backward(sum_all(x));
  }
  {
    TapeScope scope;
    backward(sum_all(x));
  }
  for (double g : x.grad()) CHECK(g == 2.0);
}

TEST_CASE("tape nodes are topologically ordered") {
  Tensor a = rand_tensor(Shape{1, 1, 2, 2}, 8, -1.0, 1.0, true);
  Tensor b = rand_tensor(Shape{1, 1, 2, 2}, 9, -1.0, 1.0, true);
  TapeScope scope;
  Tensor c = mul(a, b);
  Tensor d = add(c, a);
  Tensor loss = sum_all(d);
  (void)loss;

  const Tape& tape = scope.tape();
  CHECK(tape.size() == 3);
  std::set<std::int64_t> seen{a.id(), b.id()};
  for (std::size_t i = 0; i < tape.size(); ++i) {
    for (std::int64_t p : tape.node_parents(i)) {
      if (p >= 0) CHECK(seen.count(p) == 1);
    }
    CHECK(seen.insert(tape.node_result(i)).second);
  }
}

TEST_CASE("ops do not record while gradients are disabled") {
  Tensor x = rand_tensor(Shape{1, 1, 2, 2}, 10, -1.0, 1.0, true);
  TapeScope scope;
  {
    NoGradGuard ng;
    Tensor y = sum_all(x);
    CHECK(!y.requires_grad());
  }
  CHECK(scope.tape().size() == 0);
}

TEST_CASE("grad_check on sum of squares") {
  Tensor x = Tensor::from_data(Shape{1, 1, 1, 2}, {1.0, 2.0}, true);
  const double err = grad_check([&] { return sum_all(mul(x, x)); }, {x}, 1e-5);
  CHECK(err < 1e-9);
  // the reverse pass left the analytic gradient [2, 4] behind
  CHECK(x.grad()[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(x.grad()[1] == doctest::Approx(4.0).epsilon(1e-12));

  CHECK_THROWS_AS(grad_check([&] { return sum_all(mul(x, x)); }, {x}, 1e-9), std::invalid_argument);
  CHECK_THROWS_AS(grad_check([&] { return sum_all(mul(x, x)); }, {x}, 1e-2), std::invalid_argument);
}

TEST_CASE("broadcast backward sum-reduces over broadcast axes") {
  Tensor a = rand_tensor(Shape{2, 3, 4, 4}, 11, -1.0, 1.0, false);
  Tensor b = rand_tensor(Shape{2, 3, 1, 1}, 12, -1.0, 1.0, true);
  const double err = grad_check([&] { return sum_all(mul(a, b)); }, {b}, 1e-5);
  CHECK(err < 1e-6);

  // analytic cross-check: d/db sum(a*b) = sum of a over the broadcast axes
  b.zero_grad();
  {
    TapeScope scope;
    backward(sum_all(mul(a, b)));
  }
  const auto va = a.value();
  for (std::int64_t n = 0; n < 2; ++n) {
    for (std::int64_t c = 0; c < 3; ++c) {
      double expect = 0.0;
      for (std::int64_t p = 0; p < 16; ++p) expect += va[static_cast<std::size_t>((n * 3 + c) * 16 + p)];
      CHECK(b.grad()[static_cast<std::size_t>(n * 3 + c)] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("gradients are bitwise reproducible") {
  Tensor x1 = rand_tensor(Shape{2, 3, 5, 5}, 13, -1.0, 1.0, true);
  Tensor x2 = rand_tensor(Shape{2, 3, 5, 5}, 13, -1.0, 1.0, true);
  Tensor w = rand_tensor(Shape{2, 3, 3, 3}, 14);
  Tensor b = rand_tensor(Shape{2}, 15);
  {
    TapeScope scope;
    backward(sum_all(conv2d(x1, w, b, 1, 1)));
  }
  {
    TapeScope scope;
    backward(sum_all(conv2d(x2, w, b, 1, 1)));
  }
  const auto g1 = x1.grad(), g2 = x2.grad();
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}
