#include "scnas/commands.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

namespace scnas {

namespace {

namespace fs = std::filesystem;

void require_task(const RunConfig& cfg) {
  if (!cfg.has_task) throw ConfigError("missing section: [task]");
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::binary) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path, mode);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return f;
}

void write_alpha(const ArchitectureParams& alpha, const fs::path& path) {
  std::ofstream f = open_out(path);
  f << "scnas-alpha v1\n";
  f << "catalog " << alpha.catalog.version() << '\n';
  const CellTemplate tmpl =
      CellTemplate::make(CellType::EncoderNormal, alpha.num_intermediate);
  f.precision(17);
  for (int t = 0; t < kNumCellTypes; ++t) {
    f << '[' << cell_type_name(static_cast<CellType>(t)) << "]\n";
    for (int e = 0; e < tmpl.num_edges(); ++e) {
      const auto [i, j] = tmpl.edges[static_cast<std::size_t>(e)];
      f << "edge " << i << ' ' << j;
      const Tensor& logits = alpha.logits[static_cast<std::size_t>(t)][static_cast<std::size_t>(e)];
      for (std::int64_t k = 0; k < logits.size(); ++k) f << ' ' << logits[k];
      f << '\n';
    }
  }
}

void check_catalog_match(const Genotype& genotype, const Catalog& expected) {
  if (genotype.catalog_version != expected.version())
    throw ConfigError("genotype catalog version mismatch:\n  genotype: " +
                      genotype.catalog_version + "\n  config:   " + expected.version());
}

void print_dice(std::ostream& os, const std::vector<Real>& dice) {
  os.precision(6);
  os << std::fixed;
  for (std::size_t c = 0; c < dice.size(); ++c)
    os << "class=" << (c + 1) << " dice=" << dice[c] << '\n';
  os.unsetf(std::ios::fixed);
}

Shape flops_spatial(const RunConfig& cfg) {
  if (!cfg.search.patch.empty()) return cfg.search.patch;
  if (cfg.has_task) return cfg.task.size;
  throw ConfigError("missing field: network.patch (or a [task] section with size)");
}

}  // namespace

int cmd_gen_task(const RunConfig& cfg) {
  require_task(cfg);
  const TaskData task = generate(cfg.task);
  save_task(task, cfg.out_dir);
  std::cout << "task " << task.id << ": " << task.train.size() << " train, " << task.val.size()
            << " val, " << task.test.size() << " test -> " << cfg.out_dir << '\n';
  return 0;
}

int cmd_search(const RunConfig& cfg) {
  require_task(cfg);
  const TaskData task = generate(cfg.task);

  std::ofstream metrics =
      open_out(fs::path(cfg.out_dir) / "metrics.log", std::ios::binary | std::ios::app);
  if (cfg.seed_from_env) metrics << "# seed overridden by SCNAS_SEED: " << cfg.seed << '\n';

  SearchDriver driver(cfg.network, cfg.catalog, cfg.search, task, cfg.seed);
  driver.run(&metrics);

  const Genotype genotype = driver.derived_genotype();
  save_genotype(genotype, (fs::path(cfg.out_dir) / "genotype.txt").string());
  write_alpha(driver.alpha(), fs::path(cfg.out_dir) / "alpha.txt");
  {
    std::ofstream ckpt = open_out(fs::path(cfg.out_dir) / "checkpoint.bin");
    driver.save_checkpoint(ckpt);
  }
  std::cout << "search done: genotype.txt, alpha.txt, checkpoint.bin, metrics.log in "
            << cfg.out_dir << '\n';
  return 0;
}

int cmd_retrain(const RunConfig& cfg, const std::string& genotype_path) {
  require_task(cfg);
  const Genotype genotype = load_genotype(genotype_path);
  check_catalog_match(genotype, cfg.catalog);
  const TaskData task = generate(cfg.task);

  std::ofstream metrics =
      open_out(fs::path(cfg.out_dir) / "metrics.log", std::ios::binary | std::ios::app);
  Network net;
  const RetrainResult result =
      run_retrain(genotype, cfg.network, cfg.retrain, task, cfg.seed, &metrics, &net);

  save_model(net, genotype, (fs::path(cfg.out_dir) / "model.bin").string());
  std::ofstream report = open_out(fs::path(cfg.out_dir) / "report.txt");
  print_dice(report, result.dice);
  print_dice(std::cout, result.dice);
  std::cout << "retrain done after " << result.epochs_run << " epochs -> " << cfg.out_dir << '\n';
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& model_path, const std::string& split) {
  require_task(cfg);
  const LoadedModel model = load_model(model_path);
  const TaskData task = generate(cfg.task);
  if (model.spec.input_channels != task.channels ||
      model.spec.num_classes != task.num_classes)
    throw ConfigError("model expects " + std::to_string(model.spec.input_channels) +
                      " channels / " + std::to_string(model.spec.num_classes) +
                      " classes, task has " + std::to_string(task.channels) + " / " +
                      std::to_string(task.num_classes));

  const std::vector<SegmentationSample>* samples = &task.test;
  if (split == "train") samples = &task.train;
  else if (split == "val") samples = &task.val;
  else if (split != "test") throw ConfigError("unknown split: " + split);

  const Shape patch = cfg.retrain.patch.empty() ? task.size : cfg.retrain.patch;
  print_dice(std::cout, evaluate_dice(model.net, *samples, patch));
  return 0;
}

int cmd_transfer(const RunConfig& cfg, const std::string& genotype_path) {
  require_task(cfg);
  const Genotype genotype = load_genotype(genotype_path);
  check_catalog_match(genotype, cfg.catalog);
  const TaskData task = generate(cfg.task);

  // Stem and out block are rebuilt for the target channel/class counts; the
  // genotype payload is untouched and every parameter starts fresh.
  const NetworkSpec spec = transferred(cfg.network, task.channels, task.num_classes);
  std::cout << "transfer " << genotype.source_task << " -> " << task.id << " (stem "
            << spec.input_channels << " channels, " << spec.num_classes << " classes)\n";

  std::ofstream metrics =
      open_out(fs::path(cfg.out_dir) / "metrics.log", std::ios::binary | std::ios::app);
  Network net;
  const RetrainResult result =
      run_retrain(genotype, spec, cfg.retrain, task, cfg.seed, &metrics, &net);

  save_model(net, genotype, (fs::path(cfg.out_dir) / "model.bin").string());
  std::ofstream report = open_out(fs::path(cfg.out_dir) / "report.txt");
  print_dice(report, result.dice);
  print_dice(std::cout, result.dice);
  std::cout << "transfer retrain done after " << result.epochs_run << " epochs -> "
            << cfg.out_dir << '\n';
  return 0;
}

int cmd_flops(const RunConfig& cfg, const std::string& genotype_path) {
  const Genotype genotype = load_genotype(genotype_path);
  check_catalog_match(genotype, cfg.catalog);
  NetworkSpec spec = cfg.network;
  if (cfg.has_task) spec = transferred(spec, cfg.task.channels, cfg.task.num_classes());
  const std::int64_t total = count_flops(spec, genotype, flops_spatial(cfg));
  std::cout << "flops " << total << '\n';
  return 0;
}

int cmd_random_genotype(const RunConfig& cfg) {
  Rng rng(cfg.seed);
  Genotype g = random_genotype(cfg.catalog, cfg.network.num_intermediate, rng);
  g.seed = cfg.seed;
  g.source_task = "random";
  const fs::path path = fs::path(cfg.out_dir) / "genotype.txt";
  fs::create_directories(cfg.out_dir);
  save_genotype(g, path.string());
  std::cout << "wrote " << path.string() << '\n';
  return 0;
}

int run_mapped(const std::function<int()>& body) {
  try {
    return body();
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace scnas
