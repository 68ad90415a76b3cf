#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "oracles.hpp"
#include "scnas/search.hpp"

using namespace scnas;

namespace {

TaskSpec toy_task_spec(int channels = 1, std::uint64_t seed = 7) {
  TaskSpec spec;
  spec.kind = GeneratorKind::Blobs;
  spec.size = {16, 16};
  spec.channels = channels;
  spec.num_foreground = 1;
  spec.noise = 0.1;
  spec.count_train = 8;
  spec.count_val = 4;
  spec.count_test = 4;
  spec.seed = seed;
  return spec;
}

NetworkSpec toy_net_spec(int channels = 1) {
  NetworkSpec spec;
  spec.stem_channels = 4;
  spec.depth = 1;
  spec.num_intermediate = 1;
  spec.spatial_dims = 2;
  spec.input_channels = channels;
  spec.num_classes = 2;
  return spec;
}

SearchConfig toy_search_config(int epochs) {
  SearchConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 4;
  return cfg;
}

}  // namespace

TEST_CASE("search: zero learning rates leave theta and alpha unchanged") {
  const TaskData task = generate(toy_task_spec());
  SearchConfig cfg = toy_search_config(2);
  cfg.lr_theta = 0.0;
  cfg.lr_alpha = 0.0;
  SearchDriver driver(toy_net_spec(), Catalog::from_names("Identity,Zero"), cfg, task, 3);
  const auto theta0 = driver.theta_snapshot();
  const auto alpha0 = driver.alpha_snapshot();
  driver.step_once();
  CHECK(driver.theta_snapshot() == theta0);
  CHECK(driver.alpha_snapshot() == alpha0);
}

TEST_CASE("search: validation gradient w.r.t. alpha matches finite differences") {
  Rng rng(80);
  const Catalog catalog = Catalog::from_names("Conv3,Identity,Zero");
  NetworkSpec spec = toy_net_spec();
  spec.stem_channels = 2;
  Network net = Network::supernet(spec, catalog, rng);
  auto params = ArchitectureParams::init(catalog, 1, rng);

  const TaskData task = generate(toy_task_spec());
  Rng batch_rng(81);
  Batch batch = make_batch({z_normalize(task.val[0])}, {0}, {16, 16}, batch_rng);

  Rng sample_rng(82);
  const SamplePlan plan = draw_plan(params, 0.8, sample_rng);

  std::vector<Tensor> leaves;
  for (int t = 0; t < kNumCellTypes; ++t)
    for (const auto& l : params.logits[static_cast<std::size_t>(t)]) leaves.push_back(l);

  const Real worst = oracle::grad_check(
      [&] {
        SelectionMap sel = build_selections(params, plan);
        Tensor logits = net.forward(batch.image, &sel);
        return jaccard_loss(logits, batch.labels);
      },
      leaves);
  CHECK(worst < 1e-3);
}

TEST_CASE("search: training loss falls over 50 theta steps on a fixed batch") {
  Rng rng(83);
  const Catalog catalog = Catalog::from_names("Conv3,Identity,Zero");
  NetworkSpec spec = toy_net_spec();
  Network net = Network::supernet(spec, catalog, rng);
  auto alpha = ArchitectureParams::init(catalog, 1, rng);

  const TaskData task = generate(toy_task_spec());
  std::vector<SegmentationSample> train;
  for (const auto& s : task.train) train.push_back(z_normalize(s));
  Rng batch_rng(84);
  Batch batch = make_batch(train, {0, 1, 2, 3}, {16, 16}, batch_rng);

  Adam adam(net.parameters(), 0.025, 0.1, 0.001);
  Rng sample_rng(85);
  Real first = 0.0, last = 0.0;
  for (int step = 0; step < 50; ++step) {
    SamplePlan plan = draw_plan(alpha, 1.0, sample_rng);
    SelectionMap sel = build_selections(alpha, plan);
    Tensor loss = jaccard_loss(net.forward(batch.image, &sel), batch.labels);
    if (step == 0) first = loss.item();
    last = loss.item();
    adam.zero_grad();
    for (auto& per_type : alpha.logits)
      for (auto& t : per_type) t.zero_grad();
    loss.backward();
    adam.step();
  }
  CHECK(last < first);
}

TEST_CASE("search: identity beats zero on a signal-dependent toy task") {
  const TaskData task = generate(toy_task_spec());
  SearchConfig cfg = toy_search_config(10);
  SearchDriver driver(toy_net_spec(), Catalog::from_names("Identity,Zero"), cfg, task, 5);
  driver.run(nullptr);

  // Mean logit advantage of Identity over Zero across all edges.
  Real advantage = 0.0;
  int edges = 0;
  for (const auto& per_type : driver.alpha().logits)
    for (const auto& t : per_type) {
      advantage += t[0] - t[1];
      ++edges;
    }
  advantage /= edges;
  CHECK(advantage > 0.0);
}

TEST_CASE("search: same seed reproduces the trajectory, different seeds diverge") {
  const TaskData task = generate(toy_task_spec());
  const Catalog catalog = Catalog::from_names("Identity,Zero");
  SearchConfig cfg = toy_search_config(3);

  SearchDriver a(toy_net_spec(), catalog, cfg, task, 11);
  SearchDriver b(toy_net_spec(), catalog, cfg, task, 11);
  a.run(nullptr);
  b.run(nullptr);
  CHECK(a.alpha_snapshot() == b.alpha_snapshot());
  CHECK(a.theta_snapshot() == b.theta_snapshot());

  SearchDriver c(toy_net_spec(), catalog, cfg, task, 12);
  c.run(nullptr);
  CHECK(a.alpha_snapshot() != c.alpha_snapshot());
}

TEST_CASE("search: checkpoint resumes the trajectory bit-identically") {
  const TaskData task = generate(toy_task_spec());
  const Catalog catalog = Catalog::from_names("Conv3,Identity,Zero");
  SearchConfig cfg = toy_search_config(4);

  SearchDriver original(toy_net_spec(), catalog, cfg, task, 21);
  for (int i = 0; i < 3; ++i) original.step_once();

  std::stringstream saved;
  original.save_checkpoint(saved);
  original.step_once();

  SearchDriver resumed(toy_net_spec(), catalog, cfg, task, 21);
  resumed.load_checkpoint(saved);
  resumed.step_once();

  CHECK(resumed.theta_snapshot() == original.theta_snapshot());
  CHECK(resumed.alpha_snapshot() == original.alpha_snapshot());
}

TEST_CASE("search: epoch summaries carry the plateau rule") {
  const TaskData task = generate(toy_task_spec());
  SearchConfig cfg = toy_search_config(3);
  SearchDriver driver(toy_net_spec(), Catalog::from_names("Identity,Zero"), cfg, task, 31);
  int summaries = 0;
  while (!driver.done()) {
    auto s = driver.step_once();
    if (s) {
      CHECK(s->epoch == summaries);
      CHECK(s->tau > 0.0);
      ++summaries;
    }
  }
  CHECK(summaries == 3);
}

TEST_CASE("search: a poisoned parameter aborts with diagnostics") {
  const TaskData task = generate(toy_task_spec());
  SearchConfig cfg = toy_search_config(2);
  SearchDriver driver(toy_net_spec(), Catalog::from_names("Conv3,Zero"), cfg, task, 41);
  Tensor p = driver.network().parameters()[0];
  p.values()[0] = std::numeric_limits<Real>::infinity();
  CHECK_THROWS_WITH_AS(
      [&] {
        while (!driver.done()) driver.step_once();
      }(),
      doctest::Contains("tau"), NumericalError);
}

TEST_CASE("retrain: separable blobs reach dice >= 0.95; the zero genotype stays at chance") {
  TaskSpec task_spec = toy_task_spec();
  task_spec.count_train = 20;  // enough steps per epoch to fit in the budget
  const TaskData task = generate(task_spec);
  const Catalog catalog = Catalog::full();

  Genotype conv_geno;
  conv_geno.catalog_version = catalog.version();
  conv_geno.num_intermediate = 1;
  for (auto& kinds : conv_geno.edge_kinds) kinds.assign(2, OperationKind::Conv3);

  RetrainConfig cfg;
  cfg.max_epochs = 60;
  cfg.batch_size = 4;
  cfg.lr = 1e-3;
  const RetrainResult good = run_retrain(conv_geno, toy_net_spec(), cfg, task, 51, nullptr);
  REQUIRE(good.dice.size() == 1);
  CHECK(good.dice[0] >= 0.95);

  Genotype zero_geno = conv_geno;
  for (auto& kinds : zero_geno.edge_kinds) kinds.assign(2, OperationKind::Zero);
  RetrainConfig zcfg;
  zcfg.max_epochs = 5;
  zcfg.batch_size = 4;
  const RetrainResult zero = run_retrain(zero_geno, toy_net_spec(), zcfg, task, 52, nullptr);
  // Majority-class prediction has zero foreground dice; all-zero nets cannot
  // do better than that baseline.
  CHECK(zero.dice[0] <= 1e-9);
}

TEST_CASE("retrain: perpetual plateau walks the lr down and stops below 1e-7") {
  // Noise-free constant-label task makes the loss flat almost immediately is
  // not guaranteed; instead check the rule arithmetic through the tracker.
  RetrainConfig cfg;
  PlateauTracker tracker(cfg.plateau_patience, cfg.plateau_factor, cfg.plateau_threshold);
  Real lr = cfg.lr;
  int reductions = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    if (tracker.update(0.5)) {
      lr /= tracker.factor();
      ++reductions;
      if (lr < cfg.min_lr) break;
    }
  }
  CHECK(reductions == 5);
  CHECK(lr == doctest::Approx(3e-4 / 3125.0));
  CHECK(lr < cfg.min_lr);
}

TEST_CASE("model files round trip and evaluate identically") {
  namespace fs = std::filesystem;
  const TaskData task = generate(toy_task_spec());
  Genotype g;
  g.catalog_version = Catalog::full().version();
  g.num_intermediate = 1;
  for (auto& kinds : g.edge_kinds) kinds.assign(2, OperationKind::Conv3);

  RetrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.batch_size = 4;
  Network net;
  const RetrainResult r = run_retrain(g, toy_net_spec(), cfg, task, 61, nullptr, &net);

  const fs::path path = fs::temp_directory_path() / "scnas-model-test.bin";
  save_model(net, g, path.string());
  const LoadedModel loaded = load_model(path.string());
  CHECK(loaded.genotype.structurally_equal(g));
  CHECK(loaded.spec.stem_channels == toy_net_spec().stem_channels);

  const auto original = evaluate_dice(net, task.test, {16, 16});
  const auto reloaded = evaluate_dice(loaded.net, task.test, {16, 16});
  REQUIRE(original.size() == reloaded.size());
  for (std::size_t i = 0; i < original.size(); ++i) CHECK(original[i] == reloaded[i]);
  CHECK(original[0] == r.dice[0]);
  fs::remove(path);
}
