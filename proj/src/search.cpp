#include "scnas/search.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "scnas/search_io.hpp"

namespace scnas {

namespace {

constexpr char kCheckpointMagic[] = "SCNASCKPT v1\n";
constexpr char kModelMagic[] = "SCNASMODEL v1\n";

std::vector<SegmentationSample> normalized(const std::vector<SegmentationSample>& in) {
  std::vector<SegmentationSample> out;
  out.reserve(in.size());
  for (const auto& s : in) out.push_back(z_normalize(s));
  return out;
}

Shape default_patch(const Shape& configured, const Shape& task_size) {
  return configured.empty() ? task_size : configured;
}

void write_spec(std::ostream& os, const NetworkSpec& spec) {
  for (int v : {spec.stem_channels, spec.depth, spec.num_intermediate, spec.spatial_dims,
                spec.input_channels, spec.num_classes})
    io::write_i64(os, v);
}

NetworkSpec read_spec(std::istream& is) {
  NetworkSpec spec;
  spec.stem_channels = static_cast<int>(io::read_i64(is));
  spec.depth = static_cast<int>(io::read_i64(is));
  spec.num_intermediate = static_cast<int>(io::read_i64(is));
  spec.spatial_dims = static_cast<int>(io::read_i64(is));
  spec.input_channels = static_cast<int>(io::read_i64(is));
  spec.num_classes = static_cast<int>(io::read_i64(is));
  return spec;
}

}  // namespace

SearchDriver::SearchDriver(const NetworkSpec& spec, const Catalog& catalog,
                           const SearchConfig& config, const TaskData& task, std::uint64_t seed)
    : spec_(spec),
      catalog_(catalog),
      config_(config),
      task_id_(task.id),
      seed_(seed),
      patch_(default_patch(config.patch, task.size)),
      train_(normalized(task.train)),
      val_(normalized(task.val)),
      schedule_{config.tau_start, config.tau_min, config.epochs},
      rng_(combine_seed(seed, 3)) {
  if (train_.empty() || val_.empty())
    throw std::invalid_argument("search: task must provide train and val splits");
  Rng rng_theta(combine_seed(seed, 1));
  net_ = Network::supernet(spec_, catalog_, rng_theta);
  Rng rng_alpha(combine_seed(seed, 2));
  alpha_ = ArchitectureParams::init(catalog_, spec_.num_intermediate, rng_alpha);
  adam_theta_ = Adam(net_.parameters(), config.lr_theta, config.beta1_theta, config.beta2_theta,
                     config.adam_eps);
  adam_alpha_ =
      Adam(alpha_.all(), config.lr_alpha, config.beta1_alpha, config.beta2_alpha, config.adam_eps);
  plateau_ = PlateauTracker(config.plateau_patience, config.plateau_factor,
                            config.plateau_threshold);
  // The two parameter sets must stay disjoint.
  for (const auto& t : adam_theta_.params())
    for (const auto& a : adam_alpha_.params())
      if (t.node_id() == a.node_id())
        throw std::logic_error("search: theta and alpha parameter sets overlap");
  tau_ = schedule_.at(0);
}

void SearchDriver::begin_epoch() {
  ++epoch_;
  tau_ = schedule_.at(epoch_);
  epoch_train_sum_ = epoch_val_sum_ = 0.0;
  epoch_steps_ = 0;

  std::vector<int> order(train_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  rng_.shuffle(order);
  const int bs = std::min<int>(config_.batch_size, static_cast<int>(order.size()));
  const int batches = std::max<int>(1, static_cast<int>(order.size()) / bs);
  train_batches_.clear();
  for (int b = 0; b < batches; ++b)
    train_batches_.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b) * bs,
                                order.begin() + static_cast<std::ptrdiff_t>(b + 1) * bs);
}

Real SearchDriver::phase(const Batch& batch, Adam& optimizer, const char* phase_name) {
  SamplePlan plan = draw_plan(alpha_, tau_, rng_);
  SelectionMap selections = build_selections(alpha_, plan);
  Tensor logits = net_.forward(batch.image, &selections);
  Tensor loss = jaccard_loss(logits, batch.labels);
  if (!std::isfinite(loss.item())) {
    Real wmin = std::numeric_limits<Real>::infinity();
    Real wmax = -wmin;
    for (const auto& per_type : selections)
      for (const auto& sel : per_type)
        for (const auto& entry : sel.entries) {
          const Real w = entry.weight.valid() ? entry.weight.item() : 1.0;
          wmin = std::min(wmin, w);
          wmax = std::max(wmax, w);
        }
    std::ostringstream msg;
    msg << "search: non-finite " << phase_name << " loss at epoch " << epoch_ << ", tau " << tau_
        << ", edge weights in [" << wmin << ", " << wmax << "]";
    throw NumericalError(msg.str());
  }
  adam_theta_.zero_grad();
  adam_alpha_.zero_grad();
  loss.backward();
  optimizer.step();
  return loss.item();
}

std::optional<EpochSummary> SearchDriver::step_once() {
  if (done()) return std::nullopt;
  if (train_batches_.empty()) begin_epoch();

  const std::vector<int> train_idx = train_batches_.front();
  train_batches_.pop_front();

  const int bs_val = std::min<int>(config_.batch_size, static_cast<int>(val_.size()));
  std::vector<int> val_idx;
  for (int i = 0; i < bs_val; ++i) {
    if (val_cursor_ >= val_order_.size()) {
      val_order_.resize(val_.size());
      for (std::size_t j = 0; j < val_order_.size(); ++j) val_order_[j] = static_cast<int>(j);
      rng_.shuffle(val_order_);
      val_cursor_ = 0;
    }
    val_idx.push_back(val_order_[val_cursor_++]);
  }

  Batch train_batch = make_batch(train_, train_idx, patch_, rng_);
  Batch val_batch = make_batch(val_, val_idx, patch_, rng_);

  // (a) operation parameters on the training split, (b) architecture logits
  // on the validation split; first-order alternation.
  epoch_train_sum_ += phase(train_batch, adam_theta_, "train");
  epoch_val_sum_ += phase(val_batch, adam_alpha_, "val");
  ++epoch_steps_;
  ++step_;

  if (!train_batches_.empty()) return std::nullopt;

  EpochSummary s;
  s.epoch = epoch_;
  s.train_loss = epoch_train_sum_ / epoch_steps_;
  s.val_loss = epoch_val_sum_ / epoch_steps_;
  s.tau = tau_;
  s.lr_theta = adam_theta_.lr();
  s.lr_alpha = adam_alpha_.lr();
  if (plateau_.update(s.train_loss)) {
    adam_theta_.set_lr(adam_theta_.lr() / plateau_.factor());
    adam_alpha_.set_lr(adam_alpha_.lr() / plateau_.factor());
    s.lr_dropped = true;
  }
  if (epoch_ + 1 >= config_.epochs) epoch_ = config_.epochs;  // mark done
  return s;
}

void SearchDriver::run(std::ostream* log) {
  while (!done()) {
    auto summary = step_once();
    if (summary && log) {
      std::ostream& os = *log;
      os.precision(10);
      os << "epoch " << summary->epoch << " tau " << summary->tau << '\n';
      os << "epoch=" << summary->epoch << " phase=search train_loss=" << summary->train_loss
         << " val_loss=" << summary->val_loss << " tau=" << summary->tau
         << " lr_theta=" << summary->lr_theta << " lr_alpha=" << summary->lr_alpha << '\n';
      os << "epoch=" << summary->epoch << " entropy enc="
         << mean_entropy(alpha_, CellType::EncoderNormal)
         << " red=" << mean_entropy(alpha_, CellType::Reduction)
         << " dec=" << mean_entropy(alpha_, CellType::DecoderNormal)
         << " exp=" << mean_entropy(alpha_, CellType::Expansion) << '\n';
      os.flush();
    }
  }
}

Genotype SearchDriver::derived_genotype() const {
  Genotype g = derive(alpha_);
  g.seed = seed_;
  g.tau_final = tau_;
  g.source_task = task_id_;
  return g;
}

void SearchDriver::save_checkpoint(std::ostream& os) const {
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic) - 1);
  io::write_i64(os, epoch_);
  io::write_i64(os, step_);
  io::write_real(os, tau_);
  io::write_real(os, epoch_train_sum_);
  io::write_real(os, epoch_val_sum_);
  io::write_i64(os, epoch_steps_);
  io::write_i64(os, static_cast<std::int64_t>(train_batches_.size()));
  for (const auto& b : train_batches_) {
    io::write_i64(os, static_cast<std::int64_t>(b.size()));
    for (int v : b) io::write_i64(os, v);
  }
  io::write_i64(os, static_cast<std::int64_t>(val_order_.size()));
  for (int v : val_order_) io::write_i64(os, v);
  io::write_i64(os, static_cast<std::int64_t>(val_cursor_));
  plateau_.save(os);
  adam_theta_.save(os);
  adam_alpha_.save(os);
  for (const auto& p : adam_theta_.params()) io::write_array(os, p.values());
  for (const auto& p : adam_alpha_.params()) io::write_array(os, p.values());
  io::write_string(os, rng_.save_state());
}

void SearchDriver::load_checkpoint(std::istream& is) {
  io::expect_magic(is, kCheckpointMagic, "checkpoint");
  epoch_ = static_cast<int>(io::read_i64(is));
  step_ = io::read_i64(is);
  tau_ = io::read_real(is);
  epoch_train_sum_ = io::read_real(is);
  epoch_val_sum_ = io::read_real(is);
  epoch_steps_ = static_cast<int>(io::read_i64(is));
  const std::int64_t nb = io::read_i64(is);
  train_batches_.clear();
  for (std::int64_t b = 0; b < nb; ++b) {
    std::vector<int> batch(static_cast<std::size_t>(io::read_i64(is)));
    for (auto& v : batch) v = static_cast<int>(io::read_i64(is));
    train_batches_.push_back(std::move(batch));
  }
  val_order_.resize(static_cast<std::size_t>(io::read_i64(is)));
  for (auto& v : val_order_) v = static_cast<int>(io::read_i64(is));
  val_cursor_ = static_cast<std::size_t>(io::read_i64(is));
  plateau_.load(is);
  adam_theta_.load(is);
  adam_alpha_.load(is);
  for (Tensor p : adam_theta_.params()) io::read_array(is, p.values());
  for (Tensor p : adam_alpha_.params()) io::read_array(is, p.values());
  std::string state = io::read_string(is);
  rng_.load_state(state);
}

std::vector<Real> SearchDriver::theta_snapshot() const {
  std::vector<Real> out;
  for (const auto& p : adam_theta_.params())
    for (std::int64_t i = 0; i < p.size(); ++i) out.push_back(p.values()[i]);
  return out;
}

std::vector<Real> SearchDriver::alpha_snapshot() const {
  std::vector<Real> out;
  for (const auto& p : adam_alpha_.params())
    for (std::int64_t i = 0; i < p.size(); ++i) out.push_back(p.values()[i]);
  return out;
}

SearchResult run_search(const NetworkSpec& spec, const Catalog& catalog,
                        const SearchConfig& config, const TaskData& task, std::uint64_t seed,
                        std::ostream* metrics_log, SearchDriver* driver_out) {
  SearchDriver local(spec, catalog, config, task, seed);
  SearchDriver* driver = &local;
  if (driver_out) {
    *driver_out = std::move(local);
    driver = driver_out;
  }
  driver->run(metrics_log);
  SearchResult result;
  result.genotype = driver->derived_genotype();
  result.epochs_run = config.epochs;
  return result;
}

std::vector<Real> evaluate_dice(const Network& net, const std::vector<SegmentationSample>& samples,
                                const Shape& patch) {
  const int classes = net.spec().num_classes;
  std::vector<Real> sums(static_cast<std::size_t>(classes - 1), 0.0);
  ForwardFn forward = [&](const Tensor& input) { return net.forward(input); };
  for (const auto& raw : samples) {
    const SegmentationSample sample = z_normalize(raw);
    const LabelMap prediction = sliding_window_infer(forward, sample, patch, classes);
    for (int c = 1; c < classes; ++c)
      sums[static_cast<std::size_t>(c - 1)] += dice_metric(prediction, sample.label, c);
  }
  for (auto& v : sums) v /= static_cast<Real>(samples.size());
  return sums;
}

RetrainResult run_retrain(const Genotype& genotype, const NetworkSpec& spec,
                          const RetrainConfig& config, const TaskData& task, std::uint64_t seed,
                          std::ostream* metrics_log, Network* net_out) {
  NetworkSpec effective = spec;
  if (config.stem_channels > 0) effective = scale_channels(spec, config.stem_channels);

  std::vector<SegmentationSample> train = normalized(task.train);
  for (const auto& s : normalized(task.val)) train.push_back(s);
  if (train.empty()) throw std::invalid_argument("retrain: task has no training samples");

  const Shape patch = default_patch(config.patch, task.size);
  Rng init_rng(combine_seed(seed, 11));
  Network net = Network::discrete(effective, genotype, init_rng);
  Adam adam(net.parameters(), config.lr, config.beta1, config.beta2, config.adam_eps);
  PlateauTracker plateau(config.plateau_patience, config.plateau_factor,
                         config.plateau_threshold);
  Rng rng(combine_seed(seed, 12));

  RetrainResult result;
  Real train_loss = 0.0;
  int epoch = 0;
  for (; epoch < config.max_epochs; ++epoch) {
    std::vector<int> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);
    const int bs = std::min<int>(config.batch_size, static_cast<int>(order.size()));
    const int batches = std::max<int>(1, static_cast<int>(order.size()) / bs);

    Real loss_sum = 0.0;
    for (int b = 0; b < batches; ++b) {
      std::vector<int> idx(order.begin() + static_cast<std::ptrdiff_t>(b) * bs,
                           order.begin() + static_cast<std::ptrdiff_t>(b + 1) * bs);
      Batch batch = make_batch(train, idx, patch, rng);
      Tensor logits = net.forward(batch.image);
      Tensor loss = jaccard_loss(logits, batch.labels);
      if (!std::isfinite(loss.item()))
        throw NumericalError("retrain: non-finite loss at epoch " + std::to_string(epoch));
      adam.zero_grad();
      loss.backward();
      adam.step();
      loss_sum += loss.item();
    }
    train_loss = loss_sum / batches;

    if (metrics_log) {
      metrics_log->precision(10);
      (*metrics_log) << "epoch=" << epoch << " phase=retrain train_loss=" << train_loss
                     << " val_loss=-1 tau=0 lr_theta=" << adam.lr() << " lr_alpha=0\n";
    }
    if (plateau.update(train_loss)) {
      adam.set_lr(adam.lr() / plateau.factor());
      if (adam.lr() < config.min_lr) {
        ++epoch;
        break;
      }
    }
  }

  result.epochs_run = epoch;
  result.final_lr = adam.lr();
  result.final_train_loss = train_loss;
  result.dice = evaluate_dice(net, task.test, patch);
  if (net_out) *net_out = std::move(net);
  return result;
}

void save_model(const Network& net, const Genotype& genotype, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.write(kModelMagic, sizeof(kModelMagic) - 1);
  write_spec(f, net.spec());
  io::write_string(f, serialize(genotype));
  const auto params = net.parameters();
  io::write_i64(f, static_cast<std::int64_t>(params.size()));
  for (const auto& p : params) io::write_array(f, p.values());
}

LoadedModel load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open model file " + path);
  io::expect_magic(f, kModelMagic, "model " + path);
  LoadedModel model;
  model.spec = read_spec(f);
  model.genotype = deserialize(io::read_string(f));
  Rng rng(0);
  model.net = Network::discrete(model.spec, model.genotype, rng);
  const auto params = model.net.parameters();
  const std::int64_t n = io::read_i64(f);
  if (n != static_cast<std::int64_t>(params.size()))
    throw std::runtime_error("model " + path + ": parameter count mismatch");
  for (Tensor p : params) io::read_array(f, p.values());
  return model;
}

}  // namespace scnas
