#pragma once

#include <array>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "scnas/cell.hpp"
#include "scnas/genotype.hpp"

namespace scnas {

// Macro-skeleton description. The cell sequence is
//   stem -> [Reduction, EncoderNormal] x depth -> inter (EncoderNormal
//   structure) -> [Expansion, DecoderNormal] x depth -> out,
// with the reduction/expansion cells doubling/halving the working width.
struct NetworkSpec {
  int stem_channels = 8;
  int depth = 3;
  int num_intermediate = 4;
  int spatial_dims = 3;
  int input_channels = 1;
  int num_classes = 2;  // includes the background class
};

NetworkSpec scale_channels(const NetworkSpec& spec, int new_stem_channels);
NetworkSpec transferred(const NetworkSpec& spec, int input_channels, int num_classes);

// Per cell type, per edge, the operations an edge evaluates.
using SelectionMap = std::array<std::vector<EdgeSelection>, kNumCellTypes>;

// Full selection with identical constant weights 1/|O| on every op (the plain
// continuous relaxation).
SelectionMap uniform_selections(const Catalog& catalog, int num_intermediate);

class Network {
 public:
  // Relaxed search network: every edge owns one instance of every catalog op.
  static Network supernet(const NetworkSpec& spec, const Catalog& catalog, Rng& rng);
  // Discrete network: each edge owns exactly the genotype's operation.
  static Network discrete(const NetworkSpec& spec, const Genotype& genotype, Rng& rng);

  // Input is batch x channels x spatial; spatial extents must be divisible by
  // 2^depth with a bottleneck volume of at least 2. Supernets require
  // selections; discrete networks ignore them.
  Tensor forward(const Tensor& input, const SelectionMap* selections = nullptr,
                 std::ostream* trace = nullptr) const;

  std::vector<Tensor> parameters() const;
  const NetworkSpec& spec() const { return spec_; }
  bool is_supernet() const { return supernet_; }
  int num_cells() const { return static_cast<int>(cells_.size()); }
  std::int64_t flops(const Shape& input_spatial) const;

 private:
  struct Preproc {
    int delta = 0;  // dag level minus source level: -1 upsample, 0 same, +1 stride 2
    Tensor w, gamma, beta;
  };
  struct Cell {
    CellType type;                 // structural type (inter behaves as EncoderNormal)
    CellType alpha_type;           // which selection/logit block it reads
    int working_channels = 0;
    int out_level = 0;
    int in0_src = -1, in1_src = -1;  // producing cell index; -1 = stem
    int skip_src = -1;               // encoder cell summed into in0; -1 = none
    Preproc pre0, pre1;
    std::vector<EdgeOps> edge_ops;
  };

  void plan_skeleton(const NetworkSpec& spec);
  void init_parameters(const Catalog& catalog, const Genotype* genotype, Rng& rng);

  NetworkSpec spec_;
  bool supernet_ = false;
  std::array<CellTemplate, kNumCellTypes> templates_;
  Tensor stem_w_, stem_gamma_, stem_beta_;
  Tensor out_w_;
  std::vector<Cell> cells_;
};

// Total FLOPs of the discrete network on the given input spatial extents:
// catalog operation counts plus the stem, preprocessing and output blocks.
std::int64_t count_flops(const NetworkSpec& spec, const Genotype& genotype,
                         const Shape& input_spatial);

}  // namespace scnas
