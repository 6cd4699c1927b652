#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "graphex/dag.hpp"
#include "graphex/obo.hpp"

namespace graphex::synth {

// Tree in which node i > 0 hangs under node (i - 1) / branching. Each node's
// terminology is one word of its own; a child's definition is its parent's
// definition followed by that word. Words are drawn from a seeded shuffle so
// names carry no positional pattern.
struct TreeConfig {
  std::string name = "synthetic";
  int nodes = 200;
  int branching = 3;
  uint64_t seed = 0;
  std::vector<std::string> root_definition{"a", "generic", "entity"};
};

std::vector<obo::RawTerm> tree_terms(const TreeConfig& cfg);
dag::OntologyDag tree_dag(const TreeConfig& cfg);

}  // namespace graphex::synth
