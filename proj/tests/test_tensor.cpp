#include <doctest.h>

#include <cmath>
#include <string>

#include "semfuse/errors.hpp"
#include "semfuse/ops.hpp"
#include "semfuse/rng.hpp"
#include "semfuse/tensor.hpp"

using namespace semfuse;

TEST_CASE("construction checks shape against data") {
  const Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK(t.dim(1) == 3);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor::zeros({0, 2}), DimensionError);
  CHECK_THROWS_AS(t.dim(2), DimensionError);
}

TEST_CASE("non-finite results are rejected naming the op") {
  const Tensor a = Tensor::from({2}, {1.0, 1.0});
  const Tensor b = Tensor::from({2}, {0.0, 1.0});
  try {
    ops::div(a, b);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("div") != std::string::npos);
  }
}

TEST_CASE("backward of sum gives ones") {
  Tensor x = Tensor::from({2, 3}, {1, -2, 3, 0.5, 7, 9}, true);
  ops::sum(x).backward();
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward of mean squared difference is 2(x-y)/N") {
  Tensor x = Tensor::from({4}, {0.1, 0.7, -0.3, 2.0}, true);
  const Tensor y = Tensor::from({4}, {0.5, 0.5, 0.5, 0.5});
  ops::mean(ops::square(ops::sub(x, y))).backward();
  for (std::size_t i = 0; i < 4; ++i) CHECK(x.grad()[i] == doctest::Approx(2.0 * (x.at(i) - y.at(i)) / 4.0).epsilon(1e-14));
}

TEST_CASE("backward requires a scalar root") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  CHECK_THROWS_AS(ops::scale(x, 2.0).backward(), ContractError);
}

TEST_CASE("leaf grads accumulate until zero_grad; shared subexpressions counted once per path") {
  Tensor x = Tensor::from({1}, {3.0}, true);
  const Tensor y = ops::mul(x, x);  // dy/dx = 2x
  ops::sum(ops::add(y, y)).backward();
  CHECK(x.grad()[0] == doctest::Approx(12.0));
  ops::sum(y).backward();
  CHECK(x.grad()[0] == doctest::Approx(18.0));
  x.zero_grad();
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("every requires_grad leaf gets a grad after backward") {
  Tensor a = Tensor::from({2}, {1, 2}, true);
  Tensor b = Tensor::from({2}, {3, 4}, true);
  Tensor unused_path = Tensor::from({2}, {5, 6}, true);
  ops::sum(ops::mul(a, b)).backward();
  CHECK(a.has_grad());
  CHECK(b.has_grad());
  CHECK_FALSE(unused_path.has_grad());
}

TEST_CASE("no-grad guard records nothing and restores state") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  {
    NoGradGuard g;
    CHECK_FALSE(grad_enabled());
    const Tensor y = ops::sum(ops::square(x));
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(grad_enabled());
  CHECK(ops::sum(ops::square(x)).requires_grad());
}

TEST_CASE("detach cuts the graph; clone copies storage") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  const Tensor d = ops::square(x).detach();
  CHECK_FALSE(d.requires_grad());
  Tensor c = x.clone();
  c.mutable_data()[0] = 42.0;
  CHECK(x.at(0) == 1.0);
}

TEST_CASE("deep chains do not overflow the traversal") {
  Tensor x = Tensor::from({1}, {0.5}, true);
  Tensor y = x;
  for (int i = 0; i < 20000; ++i) y = ops::add_scalar(y, 1e-6);
  ops::sum(y).backward();
  CHECK(x.grad()[0] == 1.0);
}

TEST_CASE("rng draws are reproducible") {
  Rng a(9), b(9);
  for (int i = 0; i < 100; ++i) {
    CHECK(a.uniform() == b.uniform());
    CHECK(a.normal() == b.normal());
  }
  Rng r(1);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.index(7) < 7);
  }
}
