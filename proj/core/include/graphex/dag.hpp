#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "graphex/obo.hpp"
#include "graphex/text.hpp"

namespace graphex::dag {

using NodeIndex = int32_t;

struct TermNode {
  NodeIndex index = 0;
  std::string term_id;
  std::string name;                        // raw terminology text
  std::optional<std::string> definition;   // first sentence of the curated definition
  text::Tokens terminology;                // n_t >= 1
  std::optional<text::Tokens> definition_tokens;
  std::vector<std::string> synonyms;
};

// Immutable DAG with coarse -> fine edges over dense node indices.
class OntologyDag {
 public:
  OntologyDag() = default;
  // Throws std::invalid_argument if an edge endpoint is out of range or the
  // edges contain a directed cycle.
  OntologyDag(std::string name, std::vector<TermNode> nodes,
              std::vector<std::pair<NodeIndex, NodeIndex>> edges);

  const std::string& name() const { return name_; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<TermNode>& nodes() const { return nodes_; }
  const TermNode& node(NodeIndex v) const { return nodes_.at(static_cast<std::size_t>(v)); }
  const std::vector<std::pair<NodeIndex, NodeIndex>>& edges() const { return edges_; }

  const std::vector<NodeIndex>& parents(NodeIndex v) const { return parents_[static_cast<std::size_t>(v)]; }
  const std::vector<NodeIndex>& children(NodeIndex v) const { return children_[static_cast<std::size_t>(v)]; }
  // Sorted union of parents and children.
  const std::vector<NodeIndex>& neighbors(NodeIndex v) const { return neighbors_[static_cast<std::size_t>(v)]; }

  std::vector<NodeIndex> roots() const;
  bool has_edge(NodeIndex parent, NodeIndex child) const;
  std::optional<NodeIndex> find(const std::string& term_id) const;

 private:
  std::string name_;
  std::vector<TermNode> nodes_;
  std::vector<std::pair<NodeIndex, NodeIndex>> edges_;
  std::vector<std::vector<NodeIndex>> parents_;
  std::vector<std::vector<NodeIndex>> children_;
  std::vector<std::vector<NodeIndex>> neighbors_;
  std::map<std::string, NodeIndex> by_id_;
};

// Keeps only terms with a curated definition. An is_a chain through dropped
// terms is contracted to a direct edge; cycles are broken by dropping back
// edges found by a DFS in node order.
OntologyDag build_dag(const std::string& name, const std::vector<obo::RawTerm>& terms);

// Kahn's algorithm. Throws if the graph is cyclic.
std::vector<NodeIndex> topological_order(const OntologyDag& g);

struct WalkConfig {
  int walks_per_node = 10;  // m
  int walk_length = 6;      // k
  uint64_t seed = 0;

  void validate() const;
};

struct WalkBatch {
  int walks_per_node = 0;
  int walk_length = 0;
  // Walk r of node i is paths[i * walks_per_node + r]; paths[...][0] == i.
  std::vector<std::vector<NodeIndex>> paths;
};

// Uniform random walks over the undirected view of the edges. Each start node
// uses its own generator seeded with seed + node index; a node without
// neighbors repeats itself.
WalkBatch sample_walks(const OntologyDag& g, const WalkConfig& cfg);

// Breadth-first distance over the undirected view; nullopt when unreachable.
std::optional<int> shortest_distance(const OntologyDag& g, NodeIndex a, NodeIndex b);

// Undirected BFS distances from one source; -1 marks unreachable nodes.
std::vector<int> distances_from(const OntologyDag& g, NodeIndex source);

// 1 + minimum directed distance from any root; roots have depth 1.
std::vector<int> depths(const OntologyDag& g);
int depth(const OntologyDag& g, NodeIndex v);

struct DataSplit {
  uint64_t seed = 0;
  std::vector<NodeIndex> train;
  std::vector<NodeIndex> valid;
  std::vector<NodeIndex> test;

  bool operator==(const DataSplit&) const = default;
};

inline constexpr std::size_t kMinSplitNodes = 10;

// 70/10/20 seeded split. Valid and test sizes are rounded, train takes the
// remainder. Throws std::invalid_argument for DAGs under kMinSplitNodes.
DataSplit make_split(const OntologyDag& g, uint64_t seed);

struct CorpusStats {
  std::size_t nodes = 0;
  std::size_t edges = 0;
  std::size_t roots = 0;
  std::map<int, std::size_t> depth_histogram;
  std::map<std::size_t, std::size_t> terminology_word_histogram;
  std::map<std::size_t, std::size_t> definition_word_histogram;
  double mean_terminology_words = 0.0;
  double mean_definition_words = 0.0;
};

// Word counts are whitespace-separated words of the raw terminology and of
// the first definition sentence.
CorpusStats corpus_stats(const OntologyDag& g);
std::size_t word_count(std::string_view text);

void save_dag(const OntologyDag& g, const std::filesystem::path& path);
OntologyDag load_dag(const std::filesystem::path& path);
void save_split(const DataSplit& split, const std::filesystem::path& path);
DataSplit load_split(const std::filesystem::path& path);

}  // namespace graphex::dag
