#include <doctest.h>

#include "semfuse/errors.hpp"
#include "semfuse/gradcheck.hpp"
#include "semfuse/ops.hpp"
#include "semfuse/suite.hpp"

using namespace semfuse;

TEST_CASE("relative error floors the denominator") {
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(1.1, 1.0) == doctest::Approx(0.1));
  CHECK(relative_error(1e-9, 0.0) == doctest::Approx(0.1));
}

TEST_CASE("correct backward passes both stencils") {
  Tensor x = Tensor::from({5}, {0.1, -0.4, 0.9, 1.3, -2.0}, true);
  auto loss = [&] { return ops::sum(ops::mul(ops::silu(x), ops::sigmoid(x))); };
  for (int stencil : {2, 4}) {
    GradCheckOptions o;
    o.stencil = stencil;
    o.step = stencil == 2 ? 1e-5 : 1e-3;
    const auto r = check_gradients({{"x", x}}, loss, o);
    REQUIRE(r.size() == 1);
    CHECK(r[0].passed);
    CHECK(r[0].coords == 5);
  }
}

TEST_CASE("coordinate sampling caps at max_coords") {
  Tensor x = Tensor::full({100}, 0.5, true);
  GradCheckOptions o;
  o.max_coords = 64;
  const auto r = check_gradients({{"x", x}}, [&] { return ops::sum(ops::square(x)); }, o);
  CHECK(r[0].coords == 64);
}

TEST_CASE("invalid stencil is rejected") {
  Tensor x = Tensor::full({1}, 0.5, true);
  GradCheckOptions o;
  o.stencil = 3;
  CHECK_THROWS_AS(check_gradients({{"x", x}}, [&] { return ops::sum(x); }, o), ContractError);
}

TEST_CASE("injected wrong backward rule fails loudly") {
  suite::SuiteOptions o;
  o.term = "fault";
  const auto r = suite::run_gradient_suite(o);
  REQUIRE(r.terms.size() == 1);
  CHECK_FALSE(r.passed);
  CHECK(r.terms[0].worst_rel_error > 0.4);
}

TEST_CASE("term filter restricts the suite") {
  suite::SuiteOptions o;
  o.term = "fea";
  const auto r = suite::run_gradient_suite(o);
  REQUIRE(r.terms.size() == 1);
  CHECK(r.terms[0].term == "fea");
  CHECK(r.passed);
  o.term = "bogus";
  CHECK_THROWS_AS(suite::run_gradient_suite(o), ContractError);
}

TEST_CASE("small loss-term checks pass") {
  for (const char* term : {"context", "cs", "seg", "attention"}) {
    suite::SuiteOptions o;
    o.term = term;
    const auto r = suite::run_gradient_suite(o);
    INFO(suite::format_report(r));
    CHECK(r.passed);
  }
}
