#pragma once

#include <functional>
#include <string>

#include "scnas/config.hpp"

namespace scnas {

// Subcommand bodies shared by the CLI and the tests. Each returns an exit
// code; they throw ConfigError / NumericalError for the wrapper to map.
int cmd_gen_task(const RunConfig& cfg);
int cmd_search(const RunConfig& cfg);
int cmd_retrain(const RunConfig& cfg, const std::string& genotype_path);
int cmd_eval(const RunConfig& cfg, const std::string& model_path, const std::string& split);
int cmd_transfer(const RunConfig& cfg, const std::string& genotype_path);
int cmd_flops(const RunConfig& cfg, const std::string& genotype_path);
int cmd_random_genotype(const RunConfig& cfg);

// Exit codes: 0 success, 2 config/artifact errors, 3 numerical failures.
int run_mapped(const std::function<int()>& body);

}  // namespace scnas
