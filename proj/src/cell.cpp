#include "scnas/cell.hpp"

#include <cmath>

namespace scnas {

const char* cell_type_name(CellType t) {
  switch (t) {
    case CellType::EncoderNormal:
      return "EncoderNormal";
    case CellType::Reduction:
      return "Reduction";
    case CellType::DecoderNormal:
      return "DecoderNormal";
    case CellType::Expansion:
      return "Expansion";
  }
  return "?";
}

CellTemplate CellTemplate::make(CellType type, int num_intermediate) {
  if (num_intermediate < 1)
    throw std::invalid_argument("cell template needs at least one intermediate node");
  CellTemplate t;
  t.type = type;
  t.num_intermediate = num_intermediate;
  for (int i = 0; i < 2 + num_intermediate; ++i)
    for (int j = std::max(i + 1, 2); j < 2 + num_intermediate; ++j) t.edges.emplace_back(i, j);
  return t;
}

ArchitectureParams ArchitectureParams::init(const Catalog& catalog, int num_intermediate,
                                            Rng& rng) {
  ArchitectureParams p;
  p.catalog = catalog;
  p.num_intermediate = num_intermediate;
  const int edges = CellTemplate::make(CellType::EncoderNormal, num_intermediate).num_edges();
  for (int t = 0; t < kNumCellTypes; ++t)
    for (int e = 0; e < edges; ++e)
      p.logits[t].push_back(
          Tensor::randn(Shape{catalog.size()}, rng, 1e-3, /*requires_grad=*/true));
  return p;
}

std::vector<Tensor> ArchitectureParams::all() const {
  std::vector<Tensor> out;
  for (const auto& per_type : logits)
    for (const auto& t : per_type) out.push_back(t);
  return out;
}

EdgeSelection EdgeSelection::relaxed_constant(const std::vector<Real>& weights) {
  EdgeSelection s;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    Entry e;
    e.catalog_index = static_cast<int>(i);
    e.weight = Tensor::scalar(weights[i]);
    s.entries.push_back(e);
  }
  return s;
}

EdgeSelection EdgeSelection::discrete(int catalog_index) {
  EdgeSelection s;
  Entry e;
  e.catalog_index = catalog_index;
  s.entries.push_back(e);
  return s;
}

std::vector<Real> EdgeSelection::dense_weights(int catalog_size) const {
  std::vector<Real> w(static_cast<std::size_t>(catalog_size), 0.0);
  for (const auto& e : entries)
    w[static_cast<std::size_t>(e.catalog_index)] += e.weight.valid() ? e.weight.item() : 1.0;
  return w;
}

void validate_selection(const EdgeSelection& sel, int catalog_size) {
  if (sel.entries.empty()) throw std::invalid_argument("edge selection has no entries");
  Real total = 0.0;
  for (const auto& e : sel.entries) {
    if (e.catalog_index < 0 || e.catalog_index >= catalog_size)
      throw std::invalid_argument("edge selection index out of catalog range");
    const Real w = e.weight.valid() ? e.weight.item() : 1.0;
    if (!(w >= 0.0)) throw std::invalid_argument("edge selection weight is negative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12)
    throw std::invalid_argument("edge selection weights sum to " + std::to_string(total));
}

Tensor cell_forward(const CellTemplate& tmpl, const std::vector<EdgeSelection>& selections,
                    const std::vector<EdgeOps>& ops, const Tensor& in0, const Tensor& in1,
                    const std::string& where) {
  if (static_cast<int>(selections.size()) != tmpl.num_edges() ||
      static_cast<int>(ops.size()) != tmpl.num_edges())
    throw std::invalid_argument("cell_forward: selections/ops mismatch edge count");
  if (in0.shape() != in1.shape())
    throw std::invalid_argument("cell_forward: preprocessed inputs differ, " +
                                shape_string(in0.shape()) + " vs " + shape_string(in1.shape()) +
                                (where.empty() ? "" : " at " + where));

  std::vector<Tensor> nodes(static_cast<std::size_t>(2 + tmpl.num_intermediate));
  nodes[0] = in0;
  nodes[1] = in1;

  for (int e = 0; e < tmpl.num_edges(); ++e) {
    const auto [src, dst] = tmpl.edges[static_cast<std::size_t>(e)];
    const Tensor& x = nodes[static_cast<std::size_t>(src)];
    const std::string edge_name =
        (where.empty() ? std::string(cell_type_name(tmpl.type)) : where) + " edge(" +
        std::to_string(src) + "," + std::to_string(dst) + ")";
    for (const auto& entry : selections[static_cast<std::size_t>(e)].entries) {
      const OperationInstance* inst = nullptr;
      for (const auto& [idx, op] : ops[static_cast<std::size_t>(e)])
        if (idx == entry.catalog_index) {
          inst = &op;
          break;
        }
      if (!inst)
        throw std::invalid_argument("cell_forward: no instance for selected op at " + edge_name);
      Tensor y = apply(*inst, x, edge_name);
      if (entry.weight.valid()) y = mul_scalar(y, entry.weight);
      Tensor& acc = nodes[static_cast<std::size_t>(dst)];
      acc = acc.valid() ? add(acc, y) : y;
    }
  }

  std::vector<Tensor> outs(nodes.begin() + 2, nodes.end());
  return concat_channels(outs);
}

}  // namespace scnas
