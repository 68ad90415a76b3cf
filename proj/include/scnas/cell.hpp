#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "scnas/catalog.hpp"
#include "scnas/types.hpp"

namespace scnas {

enum class CellType : int { EncoderNormal = 0, Reduction, DecoderNormal, Expansion };
inline constexpr int kNumCellTypes = 4;

const char* cell_type_name(CellType t);

// DAG skeleton shared by all cells of one type. Nodes 0 and 1 are the two
// inputs, nodes 2..B+1 the intermediates; every (i, j) with i < j targeting an
// intermediate is an edge, listed in lexicographic (i, j) order.
struct CellTemplate {
  CellType type = CellType::EncoderNormal;
  int num_intermediate = 4;
  std::vector<std::pair<int, int>> edges;

  static CellTemplate make(CellType type, int num_intermediate);
  int num_edges() const { return static_cast<int>(edges.size()); }
};

// Per cell type, per edge: a logit vector over the catalog. These are the
// architecture variables alpha, leaves of the gradient graph.
struct ArchitectureParams {
  Catalog catalog;
  int num_intermediate = 4;
  std::array<std::vector<Tensor>, kNumCellTypes> logits;

  static ArchitectureParams init(const Catalog& catalog, int num_intermediate, Rng& rng);
  std::vector<Tensor> all() const;
  int num_edges() const { return static_cast<int>(logits[0].size()); }
};

// Which operations an edge evaluates and with what weight. A missing weight
// tensor means an exact weight of one (discrete case, no graph node spent).
struct EdgeSelection {
  struct Entry {
    int catalog_index = 0;
    Tensor weight;  // scalar tensor; invalid() => exactly 1
  };
  std::vector<Entry> entries;

  // Relaxed selection with fixed (constant) weights, mostly for tests.
  static EdgeSelection relaxed_constant(const std::vector<Real>& weights);
  static EdgeSelection discrete(int catalog_index);

  // Current numeric weights over the full catalog.
  std::vector<Real> dense_weights(int catalog_size) const;
};

// Throws unless weights are non-negative and sum to 1 within 1e-12.
void validate_selection(const EdgeSelection& sel, int catalog_size);

// Operations owned by one cell instance, per edge: (catalog index, instance).
using EdgeOps = std::vector<std::pair<int, OperationInstance>>;

// Evaluates one cell DAG. Inputs must already be preprocessed to the cell's
// working width and a common resolution; in a reduction cell the instances on
// input-node edges are expected to carry stride 2.
Tensor cell_forward(const CellTemplate& tmpl, const std::vector<EdgeSelection>& selections,
                    const std::vector<EdgeOps>& ops, const Tensor& in0, const Tensor& in1,
                    const std::string& where = "");

}  // namespace scnas
