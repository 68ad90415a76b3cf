#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "scnas/adam.hpp"
#include "scnas/losses.hpp"

using namespace scnas;

TEST_CASE("adam: zero gradient from a fresh state changes nothing") {
  Rng rng(50);
  Tensor p = Tensor::randn({4}, rng, 1.0, true);
  const Tensor::Storage before = p.values();
  Adam adam({p}, 0.1, 0.9, 0.999);
  adam.step();  // no gradient accumulated yet
  CHECK((p.values() - before).abs().maxCoeff() == 0.0);
}

TEST_CASE("adam: zero learning rate freezes parameters") {
  Rng rng(51);
  Tensor p = Tensor::randn({4}, rng, 1.0, true);
  const Tensor::Storage before = p.values();
  Adam adam({p}, 0.0, 0.1, 0.001);
  for (int i = 0; i < 3; ++i) {
    adam.zero_grad();
    sum_all(mul(p, p)).backward();
    adam.step();
  }
  CHECK((p.values() - before).abs().maxCoeff() == 0.0);
}

TEST_CASE("adam: drives a quadratic toward its minimum") {
  Tensor p = Tensor::from_vector({2}, {3.0, -2.0}, true);
  Adam adam({p}, 0.05, 0.9, 0.999);
  for (int i = 0; i < 400; ++i) {
    adam.zero_grad();
    scale(sum_all(mul(p, p)), 0.5).backward();
    adam.step();
  }
  CHECK(p.values().abs().maxCoeff() < 1e-2);
}

TEST_CASE("plateau: constant loss triggers one cut after exactly `patience` epochs") {
  PlateauTracker tracker(5, 10.0, 1e-4);
  CHECK_FALSE(tracker.update(1.0));  // establishes the best
  for (int i = 0; i < 4; ++i) CHECK_FALSE(tracker.update(1.0));
  CHECK(tracker.update(1.0));  // 5th non-improving epoch
  CHECK_FALSE(tracker.update(1.0));

  // A real improvement resets the counter.
  PlateauTracker t2(3, 10.0, 1e-4);
  CHECK_FALSE(t2.update(1.0));
  CHECK_FALSE(t2.update(1.0));
  CHECK_FALSE(t2.update(0.9));
  CHECK_FALSE(t2.update(0.9));
  CHECK_FALSE(t2.update(0.9));
  CHECK(t2.update(0.9));
}

TEST_CASE("retrain decay sequence: 3e-4 / 5^k crosses 1e-7 after five cuts") {
  Real lr = 3e-4;
  int cuts = 0;
  while (lr >= 1e-7) {
    lr /= 5.0;
    ++cuts;
  }
  CHECK(cuts == 5);
  CHECK(lr == doctest::Approx(9.6e-8));
  CHECK(3e-4 / 5.0 == doctest::Approx(6e-5));
  CHECK(3e-4 / 25.0 == doctest::Approx(1.2e-5));
}

TEST_CASE("jaccard: perfect overlap, disjoint sets, direct formula") {
  // Hard one-hot predictions via saturated logits.
  const Shape shape{1, 2, 4, 4};
  LabelMap labels(16, 0);
  for (int i = 0; i < 8; ++i) labels[static_cast<std::size_t>(i)] = 1;

  SUBCASE("p = g gives loss ~ 0") {
    Tensor logits = Tensor::zeros(shape);
    for (int v = 0; v < 16; ++v) {
      logits.values()[0 * 16 + v] = labels[static_cast<std::size_t>(v)] == 0 ? 40.0 : -40.0;
      logits.values()[1 * 16 + v] = labels[static_cast<std::size_t>(v)] == 1 ? 40.0 : -40.0;
    }
    CHECK(jaccard_loss(logits, labels, 1e-5).item() < 1e-6);
  }
  SUBCASE("disjoint prediction tends to 1 as smoothing vanishes") {
    Tensor logits = Tensor::zeros(shape);
    for (int v = 0; v < 16; ++v) {
      // Predict foreground exactly where the label is background.
      const bool fg = labels[static_cast<std::size_t>(v)] == 0;
      logits.values()[0 * 16 + v] = fg ? -40.0 : 40.0;
      logits.values()[1 * 16 + v] = fg ? 40.0 : -40.0;
    }
    CHECK(jaccard_loss(logits, labels, 1e-9).item() > 1.0 - 1e-6);
  }
  SUBCASE("p = 0.5 everywhere matches the direct formula") {
    Tensor logits = Tensor::zeros(shape);  // softmax of equal logits = 0.5
    const Real s = 1e-5;
    // intersection = 0.5 * 8; p-sum = 0.5 * 16; g-sum = 8.
    const Real expect = 1.0 - (4.0 + s) / (8.0 + 8.0 - 4.0 + s);
    CHECK(std::abs(jaccard_loss(logits, labels, s).item() - expect) < 1e-10);
  }
  SUBCASE("out-of-range labels are rejected") {
    LabelMap bad(16, 3);
    Tensor logits = Tensor::zeros(shape);
    CHECK_THROWS_AS(jaccard_loss(logits, bad), std::invalid_argument);
  }
}

TEST_CASE("jaccard stays within [0, 1 + O(s)] and is differentiable") {
  Rng rng(52);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor logits = Tensor::randn({2, 3, 4, 4}, rng, 2.0, true);
    LabelMap labels(32);
    for (auto& l : labels) l = static_cast<std::uint8_t>(rng.uniform_int(3));
    Tensor loss = jaccard_loss(logits, labels);
    CHECK(loss.item() >= 0.0);
    CHECK(loss.item() <= 1.0 + 1e-4);
  }
  Tensor logits = Tensor::randn({1, 2, 4, 4}, rng, 1.0, true);
  LabelMap labels(16);
  for (auto& l : labels) l = static_cast<std::uint8_t>(rng.uniform_int(2));
  const Real worst =
      oracle::grad_check([&] { return jaccard_loss(logits, labels); }, {logits});
  CHECK(worst < 1e-4);
}

TEST_CASE("jaccard and dice agree through J = D/(2-D) on hard masks") {
  Rng rng(53);
  for (int trial = 0; trial < 10; ++trial) {
    LabelMap truth(64), pred(64);
    for (auto& l : truth) l = static_cast<std::uint8_t>(rng.uniform_int(2));
    for (auto& l : pred) l = static_cast<std::uint8_t>(rng.uniform_int(2));

    Tensor logits = Tensor::zeros({1, 2, 8, 8});
    for (int v = 0; v < 64; ++v) {
      logits.values()[v] = pred[static_cast<std::size_t>(v)] == 0 ? 40.0 : -40.0;
      logits.values()[64 + v] = pred[static_cast<std::size_t>(v)] == 1 ? 40.0 : -40.0;
    }
    const Real d = dice_metric(pred, truth, 1);
    if (d == 0.0) continue;  // disjoint: both identities degenerate at s > 0
    const Real j_index = d / (2.0 - d);
    const Real j_loss = jaccard_loss(logits, truth, 1e-9).item();
    CHECK(std::abs((1.0 - j_loss) - j_index) < 1e-6);
  }
}

TEST_CASE("dice metric: closed forms, symmetry, permutation invariance") {
  LabelMap a(8, 1), b(8, 1);
  CHECK(dice_metric(a, b, 1) == 1.0);

  LabelMap p(8, 0), g(8, 0);
  p[0] = p[1] = p[2] = p[3] = 1;
  g[4] = g[5] = g[6] = g[7] = 1;
  CHECK(dice_metric(p, g, 1) == 0.0);

  LabelMap p2(8, 0), g2(8, 0);
  p2[0] = p2[1] = p2[2] = p2[3] = 1;
  g2[2] = g2[3] = g2[4] = g2[5] = 1;
  CHECK(dice_metric(p2, g2, 1) == doctest::Approx(0.5));

  LabelMap empty(8, 0);
  CHECK(dice_metric(empty, empty, 1) == 1.0);

  Rng rng(54);
  LabelMap x(32), y(32);
  for (auto& l : x) l = static_cast<std::uint8_t>(rng.uniform_int(3));
  for (auto& l : y) l = static_cast<std::uint8_t>(rng.uniform_int(3));
  CHECK(dice_metric(x, y, 2) == dice_metric(y, x, 2));

  std::vector<int> perm(32);
  for (int i = 0; i < 32; ++i) perm[static_cast<std::size_t>(i)] = i;
  rng.shuffle(perm);
  LabelMap xp(32), yp(32);
  for (int i = 0; i < 32; ++i) {
    xp[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    yp[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  }
  CHECK(dice_metric(xp, yp, 2) == dice_metric(x, y, 2));
}
