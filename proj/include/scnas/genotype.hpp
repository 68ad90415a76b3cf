#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "scnas/cell.hpp"

namespace scnas {

// The discrete architecture: one operation kind per edge per cell type, plus
// provenance of the search run that produced it.
struct Genotype {
  std::string catalog_version;
  int num_intermediate = 4;
  std::array<std::vector<OperationKind>, kNumCellTypes> edge_kinds;

  std::uint64_t seed = 0;
  Real tau_final = 0.0;
  std::string source_task = "-";

  int num_edges() const { return static_cast<int>(edge_kinds[0].size()); }
  bool structurally_equal(const Genotype& other) const;
};

// Argmax of the logits on every edge; ties break toward the lowest catalog
// index. Deterministic, rng-free.
Genotype derive(const ArchitectureParams& params);

// Uniformly random kind per edge (baseline genotypes).
Genotype random_genotype(const Catalog& catalog, int num_intermediate, Rng& rng);

std::string serialize(const Genotype& g);
Genotype deserialize(const std::string& text);

void save_genotype(const Genotype& g, const std::string& path);
Genotype load_genotype(const std::string& path);

}  // namespace scnas
