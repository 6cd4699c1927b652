#include "graphex/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <random>
#include <stdexcept>

namespace graphex::synth {

namespace {

std::string word_for(int k) {
  static constexpr const char* kSyllables[] = {"ka", "lo", "mi", "ne", "pu", "ra", "si", "to", "vu", "ze"};
  std::string w;
  do {
    w += kSyllables[k % 10];
    k /= 10;
  } while (k > 0);
  return w + "x";
}

}  // namespace

std::vector<obo::RawTerm> tree_terms(const TreeConfig& cfg) {
  if (cfg.nodes < 1 || cfg.branching < 1) throw std::invalid_argument("synthetic tree: nodes and branching must be positive");
  std::vector<int> words(static_cast<std::size_t>(cfg.nodes));
  std::iota(words.begin(), words.end(), 0);
  std::mt19937_64 rng(cfg.seed);
  std::shuffle(words.begin(), words.end(), rng);

  std::vector<obo::RawTerm> terms(static_cast<std::size_t>(cfg.nodes));
  std::vector<std::string> definitions(terms.size());
  for (int i = 0; i < cfg.nodes; ++i) {
    auto& t = terms[static_cast<std::size_t>(i)];
    char id[32];
    std::snprintf(id, sizeof(id), "SYN:%06d", i);
    t.term_id = id;
    t.name = word_for(words[static_cast<std::size_t>(i)]);
    t.source_graph = cfg.name;
    t.source_db = "obo";
    std::string def;
    if (i == 0) {
      for (const auto& w : cfg.root_definition) def += (def.empty() ? "" : " ") + w;
    } else {
      const int parent = (i - 1) / cfg.branching;
      def = definitions[static_cast<std::size_t>(parent)] + " " + t.name;
      t.is_a_parents.push_back(terms[static_cast<std::size_t>(parent)].term_id);
    }
    definitions[static_cast<std::size_t>(i)] = def;
    t.definition = def;
  }
  return terms;
}

dag::OntologyDag tree_dag(const TreeConfig& cfg) { return dag::build_dag(cfg.name, tree_terms(cfg)); }

}  // namespace graphex::synth
