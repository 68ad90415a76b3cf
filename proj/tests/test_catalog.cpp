#include <doctest.h>

#include "oracles.hpp"
#include "scnas/catalog.hpp"

using namespace scnas;

TEST_CASE("catalog: fixed order of exactly eight kinds") {
  const Catalog full = Catalog::full();
  REQUIRE(full.size() == 8);
  CHECK(full.kind(0) == OperationKind::Conv3);
  CHECK(full.kind(7) == OperationKind::Zero);
  CHECK(std::string(op_name(OperationKind::SepDilConv3Rate3)) == "SepDilConv3Rate3");
  CHECK(op_from_name("AvgPool3") == OperationKind::AvgPool3);
  CHECK(!op_from_name("Conv5").has_value());
  CHECK(Catalog::from_names(full.version()).version() == full.version());

  const Catalog two = Catalog::from_names("Identity,Zero");
  CHECK(two.size() == 2);
  CHECK(two.index_of(OperationKind::Zero) == 1);
  CHECK(two.index_of(OperationKind::Conv3) == -1);
}

TEST_CASE("identity passes through, zero disconnects") {
  Rng rng(20);
  Tensor x = Tensor::randn({1, 4, 4, 4}, rng, 1.0, true);

  auto id = instantiate(OperationKind::Identity, 4, 2, 1, rng);
  Tensor y = apply(id, x);
  CHECK(y.node_id() == x.node_id());  // exact pass-through, gradients included

  auto zero = instantiate(OperationKind::Zero, 4, 2, 1, rng);
  Tensor z = apply(zero, x);
  CHECK(z.shape() == x.shape());
  CHECK(z.values().abs().maxCoeff() == 0.0);
  // No gradient flows back through a disconnection: d(sum(z*x))/dx = z = 0.
  x.zero_grad();
  sum_all(mul(z, x)).backward();
  CHECK(x.grad().abs().maxCoeff() == 0.0);
}

TEST_CASE("separable dilated block matches the composed oracle") {
  Rng rng(21);
  Tensor x = Tensor::randn({1, 2, 8, 8, 8}, rng, 1.0, true);
  auto op = instantiate(OperationKind::SepDilConv3Rate2, 2, 3, 1, rng);
  Tensor y = apply(op, x);
  REQUIRE(y.shape() == x.shape());

  auto lx = oracle::leaky_ref(oracle::from_tensor(x), kLeakyReluSlope);
  auto dw = oracle::conv_ref(lx, oracle::from_tensor(op.conv_w), 1, 2, 2);
  auto pw = oracle::conv_ref(dw, oracle::from_tensor(op.point_w), 1, 1, 1);
  auto normed = oracle::instance_norm_ref(pw, kNormEps);
  CHECK(oracle::max_abs_diff(normed, y) < 1e-8);
}

TEST_CASE("output spatial shape depends only on stride, never on kind") {
  Rng rng(22);
  Tensor x = Tensor::randn({1, 2, 8, 8, 8}, rng);
  for (int stride : {1, 2}) {
    const Shape expect = stride == 1 ? Shape{1, 2, 8, 8, 8} : Shape{1, 2, 4, 4, 4};
    for (int k = 0; k < kNumOperationKinds; ++k) {
      auto op = instantiate(static_cast<OperationKind>(k), 2, 3, stride, rng);
      CHECK(apply(op, x).shape() == expect);
    }
  }
}

TEST_CASE("max pool keeps constants, conv params check against finite differences") {
  Rng rng(23);
  Tensor c = Tensor::constant({1, 2, 6, 6}, 1.75);
  auto mp = instantiate(OperationKind::MaxPool3, 2, 2, 1, rng);
  CHECK((apply(mp, c).values() - 1.75).abs().maxCoeff() == 0.0);

  Tensor x = Tensor::randn({1, 2, 4, 4}, rng, 1.0, true);
  auto op = instantiate(OperationKind::Conv3, 2, 2, 1, rng);
  const Real worst = oracle::grad_check(
      [&] {
        Tensor y = apply(op, x);
        return sum_all(mul(y, y));
      },
      {op.conv_w, op.norm_gamma, op.norm_beta, x});
  CHECK(worst < 1e-4);
}

TEST_CASE("channel mismatch names the edge") {
  Rng rng(24);
  auto op = instantiate(OperationKind::Conv3, 4, 2, 1, rng);
  Tensor x = Tensor::randn({1, 3, 4, 4}, rng);
  CHECK_THROWS_WITH_AS(apply(op, x, "EncoderNormal edge(0,2)"),
                       doctest::Contains("edge(0,2)"), std::invalid_argument);
}

TEST_CASE("instances are never aliased across edges") {
  Rng rng(25);
  auto a = instantiate(OperationKind::Conv3, 2, 2, 1, rng);
  auto b = instantiate(OperationKind::Conv3, 2, 2, 1, rng);
  CHECK(a.conv_w.node_id() != b.conv_w.node_id());
  CHECK((a.conv_w.values() - b.conv_w.values()).abs().maxCoeff() > 0.0);
}

TEST_CASE("flops: closed-form counts") {
  Rng rng(26);
  auto id = instantiate(OperationKind::Identity, 4, 3, 1, rng);
  CHECK(op_flops(id, {4, 4, 4}) == 0);
  auto zero = instantiate(OperationKind::Zero, 4, 3, 2, rng);
  CHECK(op_flops(zero, {4, 4, 4}) == 0);

  auto conv3 = instantiate(OperationKind::Conv3, 1, 3, 1, rng);
  CHECK(op_flops(conv3, {4, 4, 4}) == 3456);  // 2 * (3^3 * 1) * (1 * 4^3)

  // The separable split wins for C >= 2 on equal shapes.
  for (int c : {2, 4, 8}) {
    auto full = instantiate(OperationKind::Conv3, c, 3, 1, rng);
    auto sep = instantiate(OperationKind::SepDilConv3Rate3, c, 3, 1, rng);
    CHECK(op_flops(sep, {6, 6, 6}) < op_flops(full, {6, 6, 6}));
  }
}
