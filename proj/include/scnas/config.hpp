#pragma once

#include <string>

#include "scnas/catalog.hpp"
#include "scnas/network.hpp"
#include "scnas/search.hpp"
#include "scnas/tasks.hpp"

namespace scnas {

// Parsed run configuration: flat key-value text with [section] headers.
// Unknown sections or keys are rejected; `seed` is the one required field.
struct RunConfig {
  std::uint64_t seed = 0;
  bool seed_from_env = false;
  std::string out_dir = "scnas-out";

  NetworkSpec network;
  Catalog catalog = Catalog::full();
  TaskSpec task;
  bool has_task = false;

  SearchConfig search;
  RetrainConfig retrain;
};

// Seed precedence: --seed flag (seed_override) > SCNAS_SEED > file.
RunConfig parse_config_text(const std::string& text,
                            const std::uint64_t* seed_override = nullptr);
RunConfig parse_config_file(const std::string& path,
                            const std::uint64_t* seed_override = nullptr);

}  // namespace scnas
