#pragma once

#include <deque>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "scnas/adam.hpp"
#include "scnas/genotype.hpp"
#include "scnas/network.hpp"
#include "scnas/sampler.hpp"
#include "scnas/tasks.hpp"

namespace scnas {

// Search-phase hyperparameters (reference values from the training protocol;
// desk-scale runs shrink epochs/batch via config).
struct SearchConfig {
  Real lr_theta = 0.025;
  Real beta1_theta = 0.1;
  Real beta2_theta = 0.001;
  Real lr_alpha = 0.003;
  Real beta1_alpha = 0.5;
  Real beta2_alpha = 0.999;
  int epochs = 200;
  int batch_size = 4;
  int plateau_patience = 20;
  Real plateau_factor = 10.0;
  Real plateau_threshold = 1e-4;
  Real tau_start = 1.0;
  Real tau_min = 0.05;
  Real adam_eps = 1e-8;
  Shape patch;  // empty = whole task volume
};

struct RetrainConfig {
  Real lr = 3e-4;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  int max_epochs = 500;
  int batch_size = 8;
  int plateau_patience = 30;
  Real plateau_factor = 5.0;
  Real plateau_threshold = 1e-4;
  Real min_lr = 1e-7;
  int stem_channels = 0;  // 0 = keep the spec's stem width
  Real adam_eps = 1e-8;
  Shape patch;  // empty = whole task volume
};

struct EpochSummary {
  int epoch = 0;
  Real train_loss = 0.0;
  Real val_loss = 0.0;
  Real tau = 0.0;
  Real lr_theta = 0.0;
  Real lr_alpha = 0.0;
  bool lr_dropped = false;
};

// Alternating stochastic bi-level search over one supernet. Owns every source
// of randomness, so a checkpoint fully determines the continuation.
class SearchDriver {
 public:
  SearchDriver(const NetworkSpec& spec, const Catalog& catalog, const SearchConfig& config,
               const TaskData& task, std::uint64_t seed);

  // One alternated (theta, alpha) step; returns a summary when it closed an
  // epoch. Throws NumericalError with diagnostics on a non-finite loss.
  std::optional<EpochSummary> step_once();
  bool done() const { return epoch_ >= config_.epochs; }

  // Full loop; per-epoch records appended to the metrics log when given.
  void run(std::ostream* metrics_log);

  const ArchitectureParams& alpha() const { return alpha_; }
  Network& network() { return net_; }
  Real tau() const { return tau_; }
  long steps_taken() const { return step_; }
  std::uint64_t seed() const { return seed_; }
  const std::string& task_id() const { return task_id_; }

  Genotype derived_genotype() const;

  void save_checkpoint(std::ostream& os) const;
  void load_checkpoint(std::istream& is);

  // Flat copies of the current parameter values, for trajectory comparisons.
  std::vector<Real> theta_snapshot() const;
  std::vector<Real> alpha_snapshot() const;

 private:
  void begin_epoch();
  Real phase(const Batch& batch, Adam& optimizer, const char* phase_name);

  NetworkSpec spec_;
  Catalog catalog_;
  SearchConfig config_;
  std::string task_id_;
  std::uint64_t seed_ = 0;
  Shape patch_;

  std::vector<SegmentationSample> train_, val_;
  Network net_;
  ArchitectureParams alpha_;
  Adam adam_theta_, adam_alpha_;
  PlateauTracker plateau_;
  TemperatureSchedule schedule_;
  Rng rng_;

  int epoch_ = -1;  // becomes 0 on the first begin_epoch()
  long step_ = 0;
  Real tau_ = 1.0;
  std::deque<std::vector<int>> train_batches_;
  std::vector<int> val_order_;
  std::size_t val_cursor_ = 0;
  Real epoch_train_sum_ = 0.0, epoch_val_sum_ = 0.0;
  int epoch_steps_ = 0;
};

struct SearchResult {
  Genotype genotype;
  int epochs_run = 0;
};

SearchResult run_search(const NetworkSpec& spec, const Catalog& catalog,
                        const SearchConfig& config, const TaskData& task, std::uint64_t seed,
                        std::ostream* metrics_log, SearchDriver* driver_out = nullptr);

struct RetrainResult {
  std::vector<Real> dice;  // per foreground class, averaged over test samples
  int epochs_run = 0;
  Real final_lr = 0.0;
  Real final_train_loss = 0.0;
};

// Trains a discrete network from scratch on the full training split (train +
// val) and reports per-class dice on the test split.
RetrainResult run_retrain(const Genotype& genotype, const NetworkSpec& spec,
                          const RetrainConfig& config, const TaskData& task, std::uint64_t seed,
                          std::ostream* metrics_log, Network* net_out = nullptr);

// Mean per-sample dice per foreground class over explicit samples.
std::vector<Real> evaluate_dice(const Network& net, const std::vector<SegmentationSample>& samples,
                                const Shape& patch);

// Trained-model persistence (spec, genotype, parameter values).
void save_model(const Network& net, const Genotype& genotype, const std::string& path);
struct LoadedModel {
  NetworkSpec spec;
  Genotype genotype;
  Network net;
};
LoadedModel load_model(const std::string& path);

}  // namespace scnas
