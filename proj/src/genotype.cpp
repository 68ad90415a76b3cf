#include "scnas/genotype.hpp"

#include <fstream>
#include <sstream>

namespace scnas {

namespace {

std::string format_real(Real v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

bool Genotype::structurally_equal(const Genotype& other) const {
  return catalog_version == other.catalog_version && num_intermediate == other.num_intermediate &&
         edge_kinds == other.edge_kinds;
}

Genotype derive(const ArchitectureParams& params) {
  Genotype g;
  g.catalog_version = params.catalog.version();
  g.num_intermediate = params.num_intermediate;
  for (int t = 0; t < kNumCellTypes; ++t) {
    for (const Tensor& logits : params.logits[static_cast<std::size_t>(t)]) {
      if (!logits.all_finite())
        throw std::invalid_argument("derive: logits contain non-finite values");
      int best = 0;
      for (int i = 1; i < logits.size(); ++i)
        if (logits[i] > logits[best]) best = i;
      g.edge_kinds[static_cast<std::size_t>(t)].push_back(params.catalog.kind(best));
    }
  }
  return g;
}

Genotype random_genotype(const Catalog& catalog, int num_intermediate, Rng& rng) {
  Genotype g;
  g.catalog_version = catalog.version();
  g.num_intermediate = num_intermediate;
  const int edges = CellTemplate::make(CellType::EncoderNormal, num_intermediate).num_edges();
  for (int t = 0; t < kNumCellTypes; ++t)
    for (int e = 0; e < edges; ++e)
      g.edge_kinds[static_cast<std::size_t>(t)].push_back(
          catalog.kind(static_cast<int>(rng.uniform_int(catalog.size()))));
  return g;
}

std::string serialize(const Genotype& g) {
  std::ostringstream os;
  os << "scnas-genotype v1\n";
  os << "catalog " << g.catalog_version << '\n';
  os << "nodes " << g.num_intermediate << '\n';
  os << "seed " << g.seed << '\n';
  os << "tau_final " << format_real(g.tau_final) << '\n';
  os << "source " << (g.source_task.empty() ? "-" : g.source_task) << '\n';
  const CellTemplate tmpl = CellTemplate::make(CellType::EncoderNormal, g.num_intermediate);
  for (int t = 0; t < kNumCellTypes; ++t) {
    os << '[' << cell_type_name(static_cast<CellType>(t)) << "]\n";
    const auto& kinds = g.edge_kinds[static_cast<std::size_t>(t)];
    if (static_cast<int>(kinds.size()) != tmpl.num_edges())
      throw std::invalid_argument("serialize: genotype edge count mismatch");
    for (int e = 0; e < tmpl.num_edges(); ++e) {
      const auto [i, j] = tmpl.edges[static_cast<std::size_t>(e)];
      os << "edge " << i << ' ' << j << ' ' << op_name(kinds[static_cast<std::size_t>(e)])
         << '\n';
    }
  }
  return os.str();
}

Genotype deserialize(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& msg) {
    throw std::invalid_argument("genotype line " + std::to_string(line_no) + ": " + msg);
  };
  auto next_line = [&]() -> bool {
    while (std::getline(is, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) return true;
    }
    return false;
  };

  if (!next_line() || line != "scnas-genotype v1")
    fail("expected header 'scnas-genotype v1'");

  Genotype g;
  bool have_nodes = false;
  // Metadata lines until the first cell block.
  while (next_line() && line[0] != '[') {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    std::string rest;
    std::getline(ls, rest);
    if (!rest.empty() && rest[0] == ' ') rest.erase(0, 1);
    if (key == "catalog") {
      g.catalog_version = rest;
    } else if (key == "nodes") {
      g.num_intermediate = std::stoi(rest);
      have_nodes = true;
    } else if (key == "seed") {
      g.seed = std::stoull(rest);
    } else if (key == "tau_final") {
      g.tau_final = std::stod(rest);
    } else if (key == "source") {
      g.source_task = rest;
    } else {
      fail("unknown metadata key: " + key);
    }
  }
  if (g.catalog_version.empty()) fail("missing catalog line");
  if (!have_nodes) fail("missing nodes line");

  // The recorded catalog defines the valid kind names.
  Catalog catalog = Catalog::from_names(g.catalog_version);
  const CellTemplate tmpl = CellTemplate::make(CellType::EncoderNormal, g.num_intermediate);

  for (int t = 0; t < kNumCellTypes; ++t) {
    const std::string want = std::string("[") + cell_type_name(static_cast<CellType>(t)) + "]";
    if (line != want) fail("expected block header " + want);
    auto& kinds = g.edge_kinds[static_cast<std::size_t>(t)];
    kinds.assign(static_cast<std::size_t>(tmpl.num_edges()), OperationKind::Zero);
    std::vector<bool> seen(static_cast<std::size_t>(tmpl.num_edges()), false);
    bool block_done = false;
    while (next_line()) {
      if (line[0] == '[') {
        block_done = true;
        break;
      }
      std::istringstream ls(line);
      std::string tag, name;
      int i = -1, j = -1;
      ls >> tag >> i >> j >> name;
      if (tag != "edge" || !ls) fail("malformed edge line: " + line);
      auto kind = op_from_name(name);
      if (!kind) fail("unknown operation kind: " + name);
      if (catalog.index_of(*kind) < 0) fail("operation kind not in catalog: " + name);
      int edge_index = -1;
      for (int e = 0; e < tmpl.num_edges(); ++e)
        if (tmpl.edges[static_cast<std::size_t>(e)] == std::make_pair(i, j)) edge_index = e;
      if (edge_index < 0)
        fail("edge (" + std::to_string(i) + "," + std::to_string(j) + ") is not in the template");
      if (seen[static_cast<std::size_t>(edge_index)])
        fail("duplicate edge (" + std::to_string(i) + "," + std::to_string(j) + ")");
      seen[static_cast<std::size_t>(edge_index)] = true;
      kinds[static_cast<std::size_t>(edge_index)] = *kind;
    }
    for (int e = 0; e < tmpl.num_edges(); ++e)
      if (!seen[static_cast<std::size_t>(e)]) {
        const auto [i, j] = tmpl.edges[static_cast<std::size_t>(e)];
        fail("missing edge (" + std::to_string(i) + "," + std::to_string(j) + ") in " +
             cell_type_name(static_cast<CellType>(t)));
      }
    if (!block_done && t + 1 < kNumCellTypes)
      fail("unexpected end of file before all cell blocks");
  }
  return g;
}

void save_genotype(const Genotype& g, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << serialize(g);
}

Genotype load_genotype(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open genotype file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize(ss.str());
}

}  // namespace scnas
