#include <CLI11.hpp>

#include <cstdint>
#include <string>

#include "scnas/commands.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* sub, CommonArgs& args, bool config_required = true) {
  auto* copt = sub->add_option("--config", args.config_path, "run configuration file");
  if (config_required) copt->required();
  sub->add_option("--out", args.out_dir, "output directory (overrides the config)");
  sub->add_option_function<std::uint64_t>(
      "--seed",
      [&args](const std::uint64_t& v) {
        args.seed = v;
        args.seed_set = true;
      },
      "seed override (beats SCNAS_SEED and the config)");
}

scnas::RunConfig load_config(const CommonArgs& args) {
  scnas::RunConfig cfg =
      scnas::parse_config_file(args.config_path, args.seed_set ? &args.seed : nullptr);
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scnas: stochastic cell search for encoder-decoder segmentation networks"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string genotype_path, model_path, split = "test";

  auto* search = app.add_subcommand("search", "run the bi-level architecture search");
  add_common(search, args);

  auto* retrain = app.add_subcommand("retrain", "retrain a derived genotype from scratch");
  add_common(retrain, args);
  retrain->add_option("--genotype", genotype_path, "genotype file")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a trained model on one task split");
  add_common(eval, args);
  eval->add_option("--model", model_path, "model checkpoint")->required();
  eval->add_option("--split", split, "train|val|test (default test)");

  auto* transfer =
      app.add_subcommand("transfer", "retrain a genotype on a different task (stem swap)");
  add_common(transfer, args);
  transfer->add_option("--genotype", genotype_path, "genotype file")->required();

  auto* flops = app.add_subcommand("flops", "total FLOPs of a genotype under the spec");
  add_common(flops, args);
  flops->add_option("--genotype", genotype_path, "genotype file")->required();

  auto* random = app.add_subcommand("random-genotype", "write a random baseline genotype");
  add_common(random, args);

  auto* gen_task = app.add_subcommand("gen-task", "generate and persist a synthetic task");
  add_common(gen_task, args);

  CLI11_PARSE(app, argc, argv);

  return scnas::run_mapped([&]() -> int {
    const scnas::RunConfig cfg = load_config(args);
    if (search->parsed()) return scnas::cmd_search(cfg);
    if (retrain->parsed()) return scnas::cmd_retrain(cfg, genotype_path);
    if (eval->parsed()) return scnas::cmd_eval(cfg, model_path, split);
    if (transfer->parsed()) return scnas::cmd_transfer(cfg, genotype_path);
    if (flops->parsed()) return scnas::cmd_flops(cfg, genotype_path);
    if (random->parsed()) return scnas::cmd_random_genotype(cfg);
    if (gen_task->parsed()) return scnas::cmd_gen_task(cfg);
    return 2;
  });
}
