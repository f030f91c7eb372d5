#include <catch2/catch_amalgamated.hpp>

#include "sdcl/ops.hpp"
#include "sdcl/rng.hpp"
#include "sdcl/tensor.hpp"

using namespace sdcl;

TEST_CASE("data length always equals product of shape extents") {
  auto t = TensorF::zeros({2, 3, 4});
  REQUIRE(t.numel() == 24);
  REQUIRE(t.values().size() == 24);
  REQUIRE_THROWS_AS(TensorF::from_data({2, 2}, {1.f, 2.f, 3.f}), ShapeError);
}

TEST_CASE("gradient buffer matches tensor shape") {
  auto t = TensorF::zeros({3, 5}, true);
  REQUIRE_FALSE(t.has_grad());
  t.grad_buffer();
  REQUIRE(t.grad().size() == static_cast<size_t>(t.numel()));
}

TEST_CASE("backward visits each node exactly once in a diamond graph") {
  // z = (x*x) + (x*x) through a shared intermediate; double-visiting the
  // shared node would double its contribution: dz/dx = 4x exactly.
  auto x = TensorD::from_data({2}, {1.5, -0.5}, true);
  auto sq = mul(x, x);
  auto z = sum_all(add(sq, sq));
  z.backward();
  REQUIRE(x.grad()[0] == Catch::Approx(4.0 * 1.5).epsilon(1e-12));
  REQUIRE(x.grad()[1] == Catch::Approx(4.0 * -0.5).epsilon(1e-12));
}

TEST_CASE("backward requires scalar root") {
  auto x = TensorD::from_data({2}, {1.0, 2.0}, true);
  auto y = mul(x, x);
  REQUIRE_THROWS_AS(y.backward(), ShapeError);
}

TEST_CASE("detach cuts the graph") {
  auto x = TensorD::from_data({2}, {2.0, 3.0}, true);
  auto y = sum_all(mul(x.detach(), x.detach()));
  y.backward();
  REQUIRE_FALSE(x.has_grad());
}

TEST_CASE("gradients accumulate across backward calls") {
  auto x = TensorD::from_data({1}, {3.0}, true);
  auto f = [&] { return mul(x, x); };
  f().backward();
  f().backward();
  REQUIRE(x.grad()[0] == Catch::Approx(12.0));  // 2 * (2x)
}

TEST_CASE("randn and uniform are reproducible from the seed") {
  auto r1 = make_rng(7, 1);
  auto r2 = make_rng(7, 1);
  auto a = TensorF::randn({16}, r1, 1.0f);
  auto b = TensorF::randn({16}, r2, 1.0f);
  REQUIRE(a.values() == b.values());
  auto r3 = make_rng(7, 2);
  auto c = TensorF::randn({16}, r3, 1.0f);
  REQUIRE(a.values() != c.values());
}
