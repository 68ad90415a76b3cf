#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "scnas/sampler.hpp"

using namespace scnas;

TEST_CASE("relax: symmetry, closed form, annealing sharpness") {
  const std::vector<Real> no_noise(8, 0.0);
  Tensor uniform = Tensor::zeros({8});
  Tensor z = relax(uniform, no_noise, 0.7);
  for (int i = 0; i < 8; ++i) CHECK(z[i] == doctest::Approx(0.125).epsilon(1e-12));

  Tensor two = Tensor::from_vector({2}, {0.0, std::log(2.0)});
  Tensor z2 = relax(two, {0.0, 0.0}, 1.0);
  CHECK(z2[0] == doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK(z2[1] == doctest::Approx(2.0 / 3).epsilon(1e-12));

  Rng rng(40);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor logits = Tensor::randn({8}, rng);
    // Push the argmax clearly ahead, then anneal hard.
    int best = 0;
    for (int i = 1; i < 8; ++i)
      if (logits[i] > logits[best]) best = i;
    logits.values()[best] += 0.1;
    Tensor sharp = relax(logits, std::vector<Real>(8, 0.0), 0.01);
    CHECK(sharp[best] >= 0.99);
  }

  Tensor bad = Tensor::from_vector({2}, {0.0, std::numeric_limits<Real>::infinity()});
  CHECK_THROWS_AS(relax(bad, {0.0, 0.0}, 1.0), std::invalid_argument);
}

TEST_CASE("relax is continuous in tau and converges to the argmax one-hot") {
  Rng rng(41);
  Tensor logits = Tensor::randn({8}, rng);
  int best = 0;
  for (int i = 1; i < 8; ++i)
    if (logits[i] > logits[best]) best = i;
  const std::vector<Real> eps(8, 0.0);
  Real prev_gap = 1.0;
  for (Real tau : {1.0, 0.3, 0.1, 0.03, 0.01, 0.003}) {
    Tensor z = relax(logits, eps, tau);
    Real gap = 0.0;
    for (int i = 0; i < 8; ++i) gap = std::max(gap, std::abs(z[i] - (i == best ? 1.0 : 0.0)));
    CHECK(gap <= prev_gap + 1e-12);
    prev_gap = gap;
  }
  CHECK(prev_gap < 1e-3);
}

TEST_CASE("pair_probabilities: closed forms and exact normalization") {
  CHECK(pair_probabilities({0.4, 0.6}) == std::vector<Real>{1.0});

  const auto q = pair_probabilities({0.5, 0.3, 0.2});
  REQUIRE(q.size() == 3);
  CHECK(q[0] == doctest::Approx(0.40).epsilon(1e-14));  // {1,2}
  CHECK(q[1] == doctest::Approx(0.35).epsilon(1e-14));  // {1,3}
  CHECK(q[2] == doctest::Approx(0.25).epsilon(1e-14));  // {2,3}

  Rng rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Real> z(8);
    Real total = 0.0;
    for (auto& v : z) total += (v = rng.uniform01() + 1e-3);
    for (auto& v : z) v /= total;
    Real sum = 0.0;
    for (Real p : pair_probabilities(z)) sum += p;
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }

  CHECK_THROWS_AS(pair_probabilities({1.0}), std::invalid_argument);
}

TEST_CASE("sampled pair weights: rescaling, sum, differentiability") {
  // alpha chosen so softmax(alpha) = (0.5, 0.3, 0.2); force the pair {0, 1}.
  ArchitectureParams params;
  params.catalog = Catalog::from_names("Conv3,Identity,Zero");
  params.num_intermediate = 1;
  for (int t = 0; t < kNumCellTypes; ++t)
    for (int e = 0; e < 2; ++e)
      params.logits[static_cast<std::size_t>(t)].push_back(Tensor::from_vector(
          {3}, {std::log(0.5), std::log(0.3), std::log(0.2)}, true));

  SamplePlan plan;
  plan.tau = 1.0;
  for (int t = 0; t < kNumCellTypes; ++t)
    for (int e = 0; e < 2; ++e)
      plan.edges[static_cast<std::size_t>(t)].push_back({{0.0, 0.0, 0.0}, 0, 1});

  SelectionMap sel = build_selections(params, plan);
  const EdgeSelection& edge = sel[0][0];
  REQUIRE(edge.entries.size() == 2);
  CHECK(edge.entries[0].weight.item() == doctest::Approx(0.625).epsilon(1e-12));
  CHECK(edge.entries[1].weight.item() == doctest::Approx(0.375).epsilon(1e-12));
  CHECK(std::abs(edge.entries[0].weight.item() + edge.entries[1].weight.item() - 1.0) < 1e-12);
  validate_selection(edge, 3);

  // d(scalar of z-hat)/d(alpha) against finite differences, plan held fixed.
  Tensor logits = params.logits[0][0];
  const Real worst = oracle::grad_check(
      [&] {
        SelectionMap rebuilt = build_selections(params, plan);
        Tensor w0 = rebuilt[0][0].entries[0].weight;
        Tensor w1 = rebuilt[0][0].entries[1].weight;
        return add(mul_scalar(w0, Tensor::scalar(1.7)), mul_scalar(w1, Tensor::scalar(-0.4)));
      },
      {logits});
  CHECK(worst < 1e-4);
}

TEST_CASE("sample_architecture: two-op coverage, determinism, annealed one-hot") {
  Rng rng(43);
  const Catalog two = Catalog::from_names("Identity,Zero");
  auto params = ArchitectureParams::init(two, 2, rng);

  SUBCASE("a 2-op catalog always carries both ops") {
    Rng r1(7);
    SelectionMap sel = sample_architecture(params, 1.0, r1);
    for (const auto& per_type : sel)
      for (const auto& edge : per_type) {
        REQUIRE(edge.entries.size() == 2);
        const auto w = edge.dense_weights(2);
        CHECK(std::abs(w[0] + w[1] - 1.0) < 1e-12);
      }
  }
  SUBCASE("same seed gives the identical selection") {
    Rng r1(99), r2(99);
    SelectionMap a = sample_architecture(params, 0.7, r1);
    SelectionMap b = sample_architecture(params, 0.7, r2);
    for (int t = 0; t < kNumCellTypes; ++t)
      for (std::size_t e = 0; e < a[static_cast<std::size_t>(t)].size(); ++e) {
        const auto wa = a[static_cast<std::size_t>(t)][e].dense_weights(2);
        const auto wb = b[static_cast<std::size_t>(t)][e].dense_weights(2);
        CHECK(wa == wb);
      }
  }
  SUBCASE("tiny tau with separated logits is within 1e-2 of one-hot") {
    auto separated = ArchitectureParams::init(two, 2, rng);
    for (auto& per_type : separated.logits)
      for (auto& t : per_type) {
        t.values()[0] = 2.0;
        t.values()[1] = -2.0;
      }
    Rng r(5);
    SelectionMap sel = sample_architecture(separated, 1e-3, r);
    for (const auto& per_type : sel)
      for (const auto& edge : per_type) {
        const auto w = edge.dense_weights(2);
        CHECK(std::abs(w[0] - 1.0) < 1e-2);
        CHECK(w[1] < 1e-2);
      }
  }
}

TEST_CASE("monte carlo: inclusion marginals and gumbel-max frequencies (smoke)") {
  Rng rng(44);
  Tensor logits = Tensor::randn({8}, rng);
  std::vector<Real> lv(8);
  for (int i = 0; i < 8; ++i) lv[i] = logits[i];

  // Inclusion marginal of op o is sum over pairs containing o.
  const int draws = 20000;
  std::vector<int> included(8, 0);
  Rng mc(45);
  for (int d = 0; d < draws; ++d) {
    EdgeSelection sel = sample_pair(logits, 1.0, mc);
    for (const auto& e : sel.entries) ++included[static_cast<std::size_t>(e.catalog_index)];
  }
  // Expected marginal needs the same smoothing z-bar the sampler uses; with
  // tau = 1 and averaged over gumbel draws this is only approximate, so the
  // tight 3-sigma contract lives in the acceptance suite with fixed z-bar.
  for (int o = 0; o < 8; ++o) {
    const Real freq = static_cast<Real>(included[static_cast<std::size_t>(o)]) / draws;
    CHECK(freq > 0.0);
    CHECK(freq < 1.0);
  }

  // Gumbel-max: argmax((logits + eps)) follows softmax(logits).
  std::vector<Real> probs(8);
  Real mx = *std::max_element(lv.begin(), lv.end());
  Real denom = 0.0;
  for (int i = 0; i < 8; ++i) denom += (probs[static_cast<std::size_t>(i)] = std::exp(lv[static_cast<std::size_t>(i)] - mx));
  for (auto& p : probs) p /= denom;

  std::vector<int> hits(8, 0);
  Rng gum(46);
  const int n = 50000;
  for (int d = 0; d < n; ++d) {
    int best = 0;
    Real best_v = -1e300;
    for (int i = 0; i < 8; ++i) {
      const Real v = lv[static_cast<std::size_t>(i)] + gum.gumbel();
      if (v > best_v) {
        best_v = v;
        best = i;
      }
    }
    ++hits[static_cast<std::size_t>(best)];
  }
  for (int i = 0; i < 8; ++i) {
    const Real p = probs[static_cast<std::size_t>(i)];
    const Real freq = static_cast<Real>(hits[static_cast<std::size_t>(i)]) / n;
    const Real sigma = std::sqrt(p * (1 - p) / n);
    CHECK(std::abs(freq - p) < 4 * sigma + 1e-9);
  }
}

TEST_CASE("temperature schedule hits tau_min at the final epoch") {
  TemperatureSchedule s{1.0, 0.05, 30};
  CHECK(s.at(0) == doctest::Approx(1.0));
  CHECK(s.at(29) == doctest::Approx(0.05));
  for (int e = 1; e < 30; ++e) {
    CHECK(s.at(e) > 0.0);
    CHECK(s.at(e) < s.at(e - 1));
  }
  CHECK(s.at(60) == doctest::Approx(0.05));  // clipped past the end

  TemperatureSchedule one{0.8, 0.05, 1};
  CHECK(one.at(0) == doctest::Approx(0.8));
}

TEST_CASE("mean entropy decreases as logits separate") {
  Rng rng(47);
  auto uniform = ArchitectureParams::init(Catalog::full(), 2, rng);
  auto sharp = ArchitectureParams::init(Catalog::full(), 2, rng);
  for (auto& per_type : sharp.logits)
    for (auto& t : per_type) t.values()[3] = 6.0;
  for (int t = 0; t < kNumCellTypes; ++t)
    CHECK(mean_entropy(sharp, static_cast<CellType>(t)) <
          mean_entropy(uniform, static_cast<CellType>(t)));
}
