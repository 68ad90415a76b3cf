#include "scnas/config.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace scnas {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

Shape parse_extents(const std::string& value, const std::string& key) {
  Shape out;
  std::istringstream is(value);
  int v;
  while (is >> v) out.push_back(v);
  if (out.empty()) throw ConfigError("field " + key + ": expected one or more integers");
  return out;
}

int parse_int(const std::string& value, const std::string& key) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError("field " + key + ": expected an integer, got '" + value + "'");
  }
}

Real parse_real(const std::string& value, const std::string& key) {
  try {
    std::size_t pos = 0;
    const Real v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError("field " + key + ": expected a number, got '" + value + "'");
  }
}

std::uint64_t parse_u64(const std::string& value, const std::string& key) {
  try {
    std::size_t pos = 0;
    const std::uint64_t v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError("field " + key + ": expected an unsigned integer, got '" + value + "'");
  }
}

}  // namespace

RunConfig parse_config_text(const std::string& text, const std::uint64_t* seed_override) {
  RunConfig cfg;
  bool have_seed = false;
  bool task_seed_set = false;
  bool net_channels_set = false, net_classes_set = false;

  std::istringstream is(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
      section = line.substr(1, line.size() - 2);
      if (section != "network" && section != "task" && section != "search" &&
          section != "retrain")
        throw ConfigError("unknown section: [" + section + "]");
      if (section == "task") cfg.has_task = true;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string qual = section.empty() ? key : section + "." + key;

    if (section.empty()) {
      if (key == "seed") {
        cfg.seed = parse_u64(value, qual);
        have_seed = true;
      } else if (key == "out") {
        cfg.out_dir = value;
      } else {
        throw ConfigError("unknown key: " + qual);
      }
    } else if (section == "network") {
      if (key == "stem_channels") cfg.network.stem_channels = parse_int(value, qual);
      else if (key == "depth") cfg.network.depth = parse_int(value, qual);
      else if (key == "nodes") cfg.network.num_intermediate = parse_int(value, qual);
      else if (key == "spatial_dims") cfg.network.spatial_dims = parse_int(value, qual);
      else if (key == "input_channels") {
        cfg.network.input_channels = parse_int(value, qual);
        net_channels_set = true;
      } else if (key == "num_classes") {
        cfg.network.num_classes = parse_int(value, qual);
        net_classes_set = true;
      } else if (key == "ops") {
        try {
          cfg.catalog = Catalog::from_names(value);
        } catch (const std::invalid_argument& e) {
          throw ConfigError(std::string("field network.ops: ") + e.what());
        }
      } else if (key == "patch") {
        cfg.search.patch = cfg.retrain.patch = parse_extents(value, qual);
      } else {
        throw ConfigError("unknown key: " + qual);
      }
    } else if (section == "task") {
      if (key == "kind") {
        try {
          cfg.task.kind = generator_from_name(value);
        } catch (const std::invalid_argument& e) {
          throw ConfigError(std::string("field task.kind: ") + e.what());
        }
      } else if (key == "size") cfg.task.size = parse_extents(value, qual);
      else if (key == "channels") cfg.task.channels = parse_int(value, qual);
      else if (key == "foreground") cfg.task.num_foreground = parse_int(value, qual);
      else if (key == "noise") cfg.task.noise = parse_real(value, qual);
      else if (key == "train") cfg.task.count_train = parse_int(value, qual);
      else if (key == "val") cfg.task.count_val = parse_int(value, qual);
      else if (key == "test") cfg.task.count_test = parse_int(value, qual);
      else if (key == "seed") {
        cfg.task.seed = parse_u64(value, qual);
        task_seed_set = true;
      } else throw ConfigError("unknown key: " + qual);
    } else if (section == "search") {
      if (key == "epochs") cfg.search.epochs = parse_int(value, qual);
      else if (key == "batch_size") cfg.search.batch_size = parse_int(value, qual);
      else if (key == "lr_theta") cfg.search.lr_theta = parse_real(value, qual);
      else if (key == "beta1_theta") cfg.search.beta1_theta = parse_real(value, qual);
      else if (key == "beta2_theta") cfg.search.beta2_theta = parse_real(value, qual);
      else if (key == "lr_alpha") cfg.search.lr_alpha = parse_real(value, qual);
      else if (key == "beta1_alpha") cfg.search.beta1_alpha = parse_real(value, qual);
      else if (key == "beta2_alpha") cfg.search.beta2_alpha = parse_real(value, qual);
      else if (key == "plateau_patience") cfg.search.plateau_patience = parse_int(value, qual);
      else if (key == "plateau_factor") cfg.search.plateau_factor = parse_real(value, qual);
      else if (key == "tau_start") cfg.search.tau_start = parse_real(value, qual);
      else if (key == "tau_min") cfg.search.tau_min = parse_real(value, qual);
      else throw ConfigError("unknown key: " + qual);
    } else if (section == "retrain") {
      if (key == "epochs") cfg.retrain.max_epochs = parse_int(value, qual);
      else if (key == "batch_size") cfg.retrain.batch_size = parse_int(value, qual);
      else if (key == "lr") cfg.retrain.lr = parse_real(value, qual);
      else if (key == "beta1") cfg.retrain.beta1 = parse_real(value, qual);
      else if (key == "beta2") cfg.retrain.beta2 = parse_real(value, qual);
      else if (key == "plateau_patience") cfg.retrain.plateau_patience = parse_int(value, qual);
      else if (key == "plateau_factor") cfg.retrain.plateau_factor = parse_real(value, qual);
      else if (key == "min_lr") cfg.retrain.min_lr = parse_real(value, qual);
      else if (key == "stem_channels") cfg.retrain.stem_channels = parse_int(value, qual);
      else throw ConfigError("unknown key: " + qual);
    }
  }

  // SCNAS_SEED takes precedence over the file value; --seed beats both.
  if (const char* env = std::getenv("SCNAS_SEED")) {
    cfg.seed = parse_u64(env, "SCNAS_SEED");
    cfg.seed_from_env = true;
    have_seed = true;
    std::cerr << "seed overridden by SCNAS_SEED: " << cfg.seed << "\n";
  }
  if (seed_override) {
    cfg.seed = *seed_override;
    cfg.seed_from_env = false;
    have_seed = true;
  }
  if (!have_seed) throw ConfigError("missing field: seed");
  if (!task_seed_set) cfg.task.seed = cfg.seed;

  if (cfg.has_task) {
    // The network geometry must agree with the task; derive it when unset.
    if (!net_channels_set) cfg.network.input_channels = cfg.task.channels;
    if (!net_classes_set) cfg.network.num_classes = cfg.task.num_classes();
    if (cfg.network.input_channels != cfg.task.channels)
      throw ConfigError("network.input_channels does not match task.channels");
    if (cfg.network.num_classes != cfg.task.num_classes())
      throw ConfigError("network.num_classes does not match the task's class count");
    if (static_cast<int>(cfg.task.size.size()) != cfg.network.spatial_dims)
      throw ConfigError("task.size rank does not match network.spatial_dims");
  }

  if (cfg.search.epochs < 1 || cfg.retrain.max_epochs < 1)
    throw ConfigError("epoch counts must be at least 1");
  if (cfg.search.batch_size < 1 || cfg.retrain.batch_size < 1)
    throw ConfigError("batch sizes must be at least 1");
  if (cfg.search.plateau_patience < 1 || cfg.retrain.plateau_patience < 1)
    throw ConfigError("plateau patience must be at least 1");
  if (!(cfg.search.lr_theta >= 0.0) || !(cfg.search.lr_alpha >= 0.0) || !(cfg.retrain.lr >= 0.0))
    throw ConfigError("learning rates must not be negative");
  if (!(cfg.search.tau_start > 0.0) || !(cfg.search.tau_min > 0.0))
    throw ConfigError("temperatures must be positive");
  return cfg;
}

RunConfig parse_config_file(const std::string& path, const std::uint64_t* seed_override) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open config file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str(), seed_override);
}

}  // namespace scnas
