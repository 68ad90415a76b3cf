#include "scnas/network.hpp"

#include <cmath>

namespace scnas {

namespace {

Shape level_spatial(const Shape& input_spatial, int level) {
  Shape s = input_spatial;
  for (int& d : s) d >>= level;
  return s;
}

Tensor conv1_norm(const Tensor& x, const Tensor& w, const Tensor& gamma, const Tensor& beta,
                  int stride) {
  Tensor y = conv(x, w, stride, 1, 1);
  return instance_norm(y, gamma, beta, kNormEps);
}

Tensor kaiming_conv(int c_out, int c_in, int spatial_dims, int extent, Rng& rng) {
  Shape shape{c_out, c_in};
  for (int d = 0; d < spatial_dims; ++d) shape.push_back(extent);
  std::int64_t fan_in = c_in;
  for (int d = 0; d < spatial_dims; ++d) fan_in *= extent;
  return Tensor::randn(shape, rng, std::sqrt(2.0 / static_cast<Real>(fan_in)),
                       /*requires_grad=*/true);
}

}  // namespace

NetworkSpec scale_channels(const NetworkSpec& spec, int new_stem_channels) {
  if (new_stem_channels < 1)
    throw std::invalid_argument("scale_channels: stem channels must be positive");
  NetworkSpec out = spec;
  out.stem_channels = new_stem_channels;
  return out;
}

NetworkSpec transferred(const NetworkSpec& spec, int input_channels, int num_classes) {
  NetworkSpec out = spec;
  out.input_channels = input_channels;
  out.num_classes = num_classes;
  return out;
}

SelectionMap uniform_selections(const Catalog& catalog, int num_intermediate) {
  SelectionMap m;
  const int edges = CellTemplate::make(CellType::EncoderNormal, num_intermediate).num_edges();
  const std::vector<Real> w(static_cast<std::size_t>(catalog.size()),
                            1.0 / static_cast<Real>(catalog.size()));
  for (int t = 0; t < kNumCellTypes; ++t)
    for (int e = 0; e < edges; ++e) m[static_cast<std::size_t>(t)].push_back(
        EdgeSelection::relaxed_constant(w));
  return m;
}

void Network::plan_skeleton(const NetworkSpec& spec) {
  spec_ = spec;
  if (spec.stem_channels < 1 || spec.depth < 1 || spec.num_intermediate < 1 ||
      spec.input_channels < 1 || spec.num_classes < 2)
    throw std::invalid_argument("network spec fields must be positive (num_classes >= 2)");
  if (spec.spatial_dims != 2 && spec.spatial_dims != 3)
    throw std::invalid_argument("network spec: spatial_dims must be 2 or 3");

  for (int t = 0; t < kNumCellTypes; ++t)
    templates_[static_cast<std::size_t>(t)] =
        CellTemplate::make(static_cast<CellType>(t), spec.num_intermediate);

  const int D = spec.depth;
  const int B = spec.num_intermediate;
  const int c0 = spec.stem_channels;
  auto width = [&](int level) { return c0 << level; };

  // Output channel count of a producer (-1 = stem).
  auto out_channels = [&](int idx) {
    return idx < 0 ? c0 : B * cells_[static_cast<std::size_t>(idx)].working_channels;
  };
  auto out_level = [&](int idx) {
    return idx < 0 ? 0 : cells_[static_cast<std::size_t>(idx)].out_level;
  };

  cells_.clear();
  // Encoder: [Reduction, EncoderNormal] per level.
  for (int l = 1; l <= D; ++l) {
    Cell red;
    red.type = red.alpha_type = CellType::Reduction;
    red.working_channels = width(l);
    red.out_level = l;
    red.in0_src = static_cast<int>(cells_.size()) - 1;
    red.in1_src = static_cast<int>(cells_.size()) - 2;
    if (l == 1) red.in0_src = red.in1_src = -1;  // stem duplicated as both inputs
    cells_.push_back(red);

    Cell enc;
    enc.type = enc.alpha_type = CellType::EncoderNormal;
    enc.working_channels = width(l);
    enc.out_level = l;
    enc.in0_src = static_cast<int>(cells_.size()) - 1;
    enc.in1_src = static_cast<int>(cells_.size()) - 2;
    cells_.push_back(enc);
  }
  // Inter-cell: a copy of the encoder-normal structure at the bottleneck.
  {
    Cell inter;
    inter.type = inter.alpha_type = CellType::EncoderNormal;
    inter.working_channels = width(D);
    inter.out_level = D;
    inter.in0_src = static_cast<int>(cells_.size()) - 1;
    inter.in1_src = static_cast<int>(cells_.size()) - 2;
    cells_.push_back(inter);
  }
  // Decoder: [Expansion, DecoderNormal] per level, with skip sums into in0.
  for (int k = 1; k <= D; ++k) {
    Cell exp;
    exp.type = exp.alpha_type = CellType::Expansion;
    exp.working_channels = width(D - k);
    exp.out_level = D - k;
    exp.in0_src = static_cast<int>(cells_.size()) - 1;
    exp.in1_src = static_cast<int>(cells_.size()) - 2;
    cells_.push_back(exp);

    Cell dec;
    dec.type = dec.alpha_type = CellType::DecoderNormal;
    dec.working_channels = width(D - k);
    dec.out_level = D - k;
    dec.in0_src = static_cast<int>(cells_.size()) - 1;
    dec.in1_src = static_cast<int>(cells_.size()) - 2;
    cells_.push_back(dec);
  }

  // Preprocessing deltas and decoder skip sources.
  const int inter_index = 2 * D;
  for (std::size_t ci = 0; ci < cells_.size(); ++ci) {
    Cell& cell = cells_[ci];
    // Level the DAG runs at (= level preprocessed inputs must reach).
    int dag_level = cell.out_level;
    if (cell.type == CellType::Reduction) dag_level = cell.out_level - 1;
    cell.pre0.delta = dag_level - out_level(cell.in0_src);
    cell.pre1.delta = dag_level - out_level(cell.in1_src);
    for (const Preproc* p : {&cell.pre0, &cell.pre1})
      if (p->delta < -1 || p->delta > 1)
        throw std::invalid_argument("network plan: unsupported resolution gap");

    if (static_cast<int>(ci) > inter_index) {
      // Summed with the encoder-normal output at the same level, when one
      // exists (level 0 has only the stem, whose width differs).
      const int level = out_level(cell.in0_src);
      if (level >= 1) {
        const int enc_index = 2 * level - 1;
        cell.skip_src = enc_index;
        if (out_channels(enc_index) != out_channels(cell.in0_src) ||
            out_level(enc_index) != level)
          throw std::logic_error("network plan: skip source shape mismatch");
      }
    }
  }
}

void Network::init_parameters(const Catalog& catalog, const Genotype* genotype, Rng& rng) {
  const int sd = spec_.spatial_dims;
  stem_w_ = kaiming_conv(spec_.stem_channels, spec_.input_channels, sd, 3, rng);
  stem_gamma_ = Tensor::constant(Shape{spec_.stem_channels}, 1.0);
  stem_gamma_.set_requires_grad(true);
  stem_beta_ = Tensor::zeros(Shape{spec_.stem_channels}, true);

  const int B = spec_.num_intermediate;
  auto src_channels = [&](int idx) {
    return idx < 0 ? spec_.stem_channels
                   : B * cells_[static_cast<std::size_t>(idx)].working_channels;
  };

  for (auto& cell : cells_) {
    const int c = cell.working_channels;
    for (auto [pre, src] : {std::pair{&cell.pre0, cell.in0_src}, {&cell.pre1, cell.in1_src}}) {
      pre->w = kaiming_conv(c, src_channels(src), sd, 1, rng);
      pre->gamma = Tensor::constant(Shape{c}, 1.0);
      pre->gamma.set_requires_grad(true);
      pre->beta = Tensor::zeros(Shape{c}, true);
    }
    const CellTemplate& tmpl = templates_[static_cast<std::size_t>(cell.type)];
    cell.edge_ops.resize(static_cast<std::size_t>(tmpl.num_edges()));
    for (int e = 0; e < tmpl.num_edges(); ++e) {
      const int src_node = tmpl.edges[static_cast<std::size_t>(e)].first;
      const int stride = (cell.type == CellType::Reduction && src_node < 2) ? 2 : 1;
      auto& bank = cell.edge_ops[static_cast<std::size_t>(e)];
      if (genotype) {
        const OperationKind kind =
            genotype->edge_kinds[static_cast<std::size_t>(cell.alpha_type)]
                                [static_cast<std::size_t>(e)];
        const int idx = catalog.index_of(kind);
        if (idx < 0)
          throw std::invalid_argument(std::string("genotype op ") + op_name(kind) +
                                      " is not in the catalog");
        bank.emplace_back(idx, instantiate(kind, c, sd, stride, rng));
      } else {
        for (int idx = 0; idx < catalog.size(); ++idx)
          bank.emplace_back(idx, instantiate(catalog.kind(idx), c, sd, stride, rng));
      }
    }
  }
  out_w_ = kaiming_conv(spec_.num_classes, B * spec_.stem_channels, sd, 1, rng);
}

Network Network::supernet(const NetworkSpec& spec, const Catalog& catalog, Rng& rng) {
  Network net;
  net.supernet_ = true;
  net.plan_skeleton(spec);
  net.init_parameters(catalog, nullptr, rng);
  return net;
}

Network Network::discrete(const NetworkSpec& spec, const Genotype& genotype, Rng& rng) {
  if (genotype.num_intermediate != spec.num_intermediate)
    throw std::invalid_argument("genotype has " + std::to_string(genotype.num_intermediate) +
                                " intermediate nodes, spec wants " +
                                std::to_string(spec.num_intermediate));
  Network net;
  net.supernet_ = false;
  net.plan_skeleton(spec);
  const Catalog catalog = Catalog::from_names(genotype.catalog_version);
  net.init_parameters(catalog, &genotype, rng);
  return net;
}

Tensor Network::forward(const Tensor& input, const SelectionMap* selections,
                        std::ostream* trace) const {
  if (input.ndim() != spec_.spatial_dims + 2)
    throw std::invalid_argument("forward: expected batch x channels x " +
                                std::to_string(spec_.spatial_dims) + " spatial dims, got " +
                                shape_string(input.shape()));
  if (input.dim(1) != spec_.input_channels)
    throw std::invalid_argument("forward: input has " + std::to_string(input.dim(1)) +
                                " channels, spec wants " +
                                std::to_string(spec_.input_channels));
  std::int64_t bottleneck_volume = 1;
  for (int d = 2; d < input.ndim(); ++d) {
    if (input.dim(d) % (1 << spec_.depth) != 0)
      throw std::invalid_argument("forward: spatial extent " + std::to_string(input.dim(d)) +
                                  " not divisible by 2^depth");
    bottleneck_volume *= input.dim(d) >> spec_.depth;
  }
  if (bottleneck_volume < 2)
    throw std::invalid_argument("forward: bottleneck volume below 2, input too small for depth");
  if (supernet_ && !selections)
    throw std::invalid_argument("forward: supernet needs edge selections");

  Tensor stem_out =
      instance_norm(conv(input, stem_w_, 1, 1, 1), stem_gamma_, stem_beta_, kNormEps);

  std::vector<Tensor> outputs(cells_.size());
  auto producer = [&](int idx) -> const Tensor& {
    return idx < 0 ? stem_out : outputs[static_cast<std::size_t>(idx)];
  };

  for (std::size_t ci = 0; ci < cells_.size(); ++ci) {
    const Cell& cell = cells_[ci];
    Tensor raw0 = producer(cell.in0_src);
    Tensor raw1 = producer(cell.in1_src);
    if (cell.skip_src >= 0) raw0 = add(raw0, outputs[static_cast<std::size_t>(cell.skip_src)]);

    auto preprocess = [&](const Tensor& x, const Preproc& p) {
      Tensor y = x;
      if (p.delta == -1) y = upsample_nearest2(y);
      return conv1_norm(y, p.w, p.gamma, p.beta, p.delta == 1 ? 2 : 1);
    };
    Tensor in0 = preprocess(raw0, cell.pre0);
    Tensor in1 = preprocess(raw1, cell.pre1);

    const CellTemplate& tmpl = templates_[static_cast<std::size_t>(cell.type)];
    static const std::vector<EdgeSelection> kNoSelections;
    const std::vector<EdgeSelection>* sel = &kNoSelections;
    std::vector<EdgeSelection> discrete_sel;
    if (supernet_) {
      sel = &(*selections)[static_cast<std::size_t>(cell.alpha_type)];
    } else {
      discrete_sel.reserve(cell.edge_ops.size());
      for (const auto& bank : cell.edge_ops)
        discrete_sel.push_back(EdgeSelection::discrete(bank[0].first));
      sel = &discrete_sel;
    }
    const std::string where =
        "cell " + std::to_string(ci) + " (" + cell_type_name(cell.type) + ")";
    outputs[ci] = cell_forward(tmpl, *sel, cell.edge_ops, in0, in1, where);
    if (trace)
      (*trace) << "cell " << ci << ' ' << cell_type_name(cell.type) << " in0="
               << shape_string(in0.shape()) << " in1=" << shape_string(in1.shape())
               << " out=" << shape_string(outputs[ci].shape()) << '\n';
  }

  return conv(outputs.back(), out_w_, 1, 1, 1);
}

std::vector<Tensor> Network::parameters() const {
  std::vector<Tensor> out{stem_w_, stem_gamma_, stem_beta_};
  for (const auto& cell : cells_) {
    for (const Preproc* p : {&cell.pre0, &cell.pre1}) {
      out.push_back(p->w);
      out.push_back(p->gamma);
      out.push_back(p->beta);
    }
    for (const auto& bank : cell.edge_ops)
      for (const auto& [idx, op] : bank)
        for (const auto& t : op.params()) out.push_back(t);
  }
  out.push_back(out_w_);
  return out;
}

std::int64_t Network::flops(const Shape& input_spatial) const {
  if (static_cast<int>(input_spatial.size()) != spec_.spatial_dims)
    throw std::invalid_argument("flops: spatial rank mismatch");
  const int B = spec_.num_intermediate;
  auto src_channels = [&](int idx) {
    return idx < 0 ? spec_.stem_channels
                   : B * cells_[static_cast<std::size_t>(idx)].working_channels;
  };

  std::int64_t total =
      conv_flops(spec_.input_channels, spec_.stem_channels, 1, 3, input_spatial);
  for (const auto& cell : cells_) {
    const int dag_level =
        cell.type == CellType::Reduction ? cell.out_level - 1 : cell.out_level;
    const Shape dag_sp = level_spatial(input_spatial, dag_level);
    total += conv_flops(src_channels(cell.in0_src), cell.working_channels, 1, 1, dag_sp);
    total += conv_flops(src_channels(cell.in1_src), cell.working_channels, 1, 1, dag_sp);

    const CellTemplate& tmpl = templates_[static_cast<std::size_t>(cell.type)];
    for (int e = 0; e < tmpl.num_edges(); ++e) {
      const int src_node = tmpl.edges[static_cast<std::size_t>(e)].first;
      const int in_level = src_node < 2 ? dag_level : cell.out_level;
      for (const auto& [idx, op] : cell.edge_ops[static_cast<std::size_t>(e)])
        total += op_flops(op, level_spatial(input_spatial, in_level));
    }
  }
  total += conv_flops(B * spec_.stem_channels, spec_.num_classes, 1, 1, input_spatial);
  return total;
}

std::int64_t count_flops(const NetworkSpec& spec, const Genotype& genotype,
                         const Shape& input_spatial) {
  Rng rng(0);
  // Structure only; parameter values do not matter for the count.
  return Network::discrete(spec, genotype, rng).flops(input_spatial);
}

}  // namespace scnas
