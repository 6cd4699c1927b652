#include "graphex/dag.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "graphex/log.hpp"

namespace graphex::dag {

OntologyDag::OntologyDag(std::string name, std::vector<TermNode> nodes,
                         std::vector<std::pair<NodeIndex, NodeIndex>> edges)
    : name_(std::move(name)), nodes_(std::move(nodes)), edges_(std::move(edges)) {
  const auto n = static_cast<NodeIndex>(nodes_.size());
  parents_.resize(nodes_.size());
  children_.resize(nodes_.size());
  neighbors_.resize(nodes_.size());
  for (NodeIndex i = 0; i < n; ++i) {
    auto& node = nodes_[static_cast<std::size_t>(i)];
    node.index = i;
    if (node.terminology.empty()) {
      throw std::invalid_argument("node " + node.term_id + " has an empty terminology");
    }
    by_id_.emplace(node.term_id, i);
  }
  std::sort(edges_.begin(), edges_.end());
  edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
  for (auto [p, c] : edges_) {
    if (p < 0 || p >= n || c < 0 || c >= n) {
      throw std::invalid_argument("edge endpoint out of range in " + name_);
    }
    if (p == c) throw std::invalid_argument("self loop in " + name_);
    parents_[static_cast<std::size_t>(c)].push_back(p);
    children_[static_cast<std::size_t>(p)].push_back(c);
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    auto& nb = neighbors_[i];
    nb = parents_[i];
    nb.insert(nb.end(), children_[i].begin(), children_[i].end());
    std::sort(nb.begin(), nb.end());
    nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
    std::sort(parents_[i].begin(), parents_[i].end());
    std::sort(children_[i].begin(), children_[i].end());
  }
  (void)topological_order(*this);
}

std::vector<NodeIndex> OntologyDag::roots() const {
  std::vector<NodeIndex> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (parents_[i].empty()) out.push_back(static_cast<NodeIndex>(i));
  }
  return out;
}

bool OntologyDag::has_edge(NodeIndex parent, NodeIndex child) const {
  const auto& c = children_[static_cast<std::size_t>(parent)];
  return std::binary_search(c.begin(), c.end(), child);
}

std::optional<NodeIndex> OntologyDag::find(const std::string& term_id) const {
  auto it = by_id_.find(term_id);
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

std::vector<NodeIndex> topological_order(const OntologyDag& g) {
  const auto n = g.size();
  std::vector<std::size_t> indegree(n);
  std::deque<NodeIndex> ready;
  for (std::size_t i = 0; i < n; ++i) {
    indegree[i] = g.parents(static_cast<NodeIndex>(i)).size();
    if (indegree[i] == 0) ready.push_back(static_cast<NodeIndex>(i));
  }
  std::vector<NodeIndex> order;
  order.reserve(n);
  while (!ready.empty()) {
    const NodeIndex v = ready.front();
    ready.pop_front();
    order.push_back(v);
    for (NodeIndex c : g.children(v)) {
      if (--indegree[static_cast<std::size_t>(c)] == 0) ready.push_back(c);
    }
  }
  if (order.size() != n) throw std::invalid_argument("graph " + g.name() + " is cyclic");
  return order;
}

OntologyDag build_dag(const std::string& name, const std::vector<obo::RawTerm>& terms) {
  std::unordered_map<std::string, std::size_t> raw_index;
  for (std::size_t i = 0; i < terms.size(); ++i) raw_index.emplace(terms[i].term_id, i);

  std::vector<TermNode> nodes;
  std::unordered_map<std::string, NodeIndex> kept;
  for (const auto& t : terms) {
    if (!t.definition || kept.contains(t.term_id)) continue;
    TermNode node;
    node.term_id = t.term_id;
    node.name = t.name;
    node.definition = text::first_sentence(*t.definition);
    node.terminology = text::truncate(text::tokenize(t.name), text::kMaxTerminologyTokens);
    auto def_tokens = text::truncate(text::tokenize(*node.definition), text::kMaxDefinitionTokens);
    if (node.terminology.empty() || def_tokens.empty()) continue;
    node.definition_tokens = std::move(def_tokens);
    node.synonyms = t.synonyms;
    kept.emplace(t.term_id, static_cast<NodeIndex>(nodes.size()));
    nodes.push_back(std::move(node));
  }

  // Nearest kept ancestors of each raw term, contracting through dropped ones.
  std::vector<std::pair<NodeIndex, NodeIndex>> edges;
  for (const auto& t : terms) {
    auto child = kept.find(t.term_id);
    if (child == kept.end()) continue;
    std::unordered_set<std::string> seen{t.term_id};
    std::vector<std::string> frontier(t.is_a_parents.begin(), t.is_a_parents.end());
    while (!frontier.empty()) {
      std::string pid = std::move(frontier.back());
      frontier.pop_back();
      if (!seen.insert(pid).second) continue;
      if (auto p = kept.find(pid); p != kept.end()) {
        if (p->second != child->second) edges.emplace_back(p->second, child->second);
        continue;
      }
      auto raw = raw_index.find(pid);
      if (raw == raw_index.end()) continue;
      const auto& up = terms[raw->second].is_a_parents;
      frontier.insert(frontier.end(), up.begin(), up.end());
    }
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

  // Drop back edges found by an iterative DFS in node order.
  const auto n = nodes.size();
  std::vector<std::vector<NodeIndex>> children(n);
  for (auto [p, c] : edges) children[static_cast<std::size_t>(p)].push_back(c);
  std::set<std::pair<NodeIndex, NodeIndex>> back_edges;
  std::vector<int> state(n, 0);  // 0 unvisited, 1 on stack, 2 done
  for (std::size_t s = 0; s < n; ++s) {
    if (state[s] != 0) continue;
    std::vector<std::pair<NodeIndex, std::size_t>> stack{{static_cast<NodeIndex>(s), 0}};
    state[s] = 1;
    while (!stack.empty()) {
      auto& [v, next] = stack.back();
      const auto& ch = children[static_cast<std::size_t>(v)];
      if (next == ch.size()) {
        state[static_cast<std::size_t>(v)] = 2;
        stack.pop_back();
        continue;
      }
      const NodeIndex c = ch[next++];
      if (state[static_cast<std::size_t>(c)] == 1) {
        back_edges.emplace(v, c);
      } else if (state[static_cast<std::size_t>(c)] == 0) {
        state[static_cast<std::size_t>(c)] = 1;
        stack.emplace_back(c, 0);
      }
    }
  }
  if (!back_edges.empty()) {
    for (auto [p, c] : back_edges) {
      log::warn("cycle in ", name, ": dropping edge ", nodes[static_cast<std::size_t>(p)].term_id,
                " -> ", nodes[static_cast<std::size_t>(c)].term_id);
    }
    std::erase_if(edges, [&](const auto& e) { return back_edges.contains(e); });
  }
  return OntologyDag(name, std::move(nodes), std::move(edges));
}

void WalkConfig::validate() const {
  if (walks_per_node < 1) throw std::invalid_argument("walks_per_node must be >= 1");
  if (walk_length < 2) throw std::invalid_argument("walk_length must be >= 2");
}

WalkBatch sample_walks(const OntologyDag& g, const WalkConfig& cfg) {
  cfg.validate();
  if (g.size() == 0) throw std::invalid_argument("cannot sample walks on an empty graph");
  WalkBatch batch;
  batch.walks_per_node = cfg.walks_per_node;
  batch.walk_length = cfg.walk_length;
  batch.paths.reserve(g.size() * static_cast<std::size_t>(cfg.walks_per_node));
  for (std::size_t i = 0; i < g.size(); ++i) {
    std::mt19937_64 rng(cfg.seed + i);
    for (int r = 0; r < cfg.walks_per_node; ++r) {
      std::vector<NodeIndex> path;
      path.reserve(static_cast<std::size_t>(cfg.walk_length));
      NodeIndex v = static_cast<NodeIndex>(i);
      path.push_back(v);
      while (path.size() < static_cast<std::size_t>(cfg.walk_length)) {
        const auto& nb = g.neighbors(v);
        if (!nb.empty()) {
          std::uniform_int_distribution<std::size_t> pick(0, nb.size() - 1);
          v = nb[pick(rng)];
        }
        path.push_back(v);
      }
      batch.paths.push_back(std::move(path));
    }
  }
  return batch;
}

std::vector<int> distances_from(const OntologyDag& g, NodeIndex source) {
  std::vector<int> dist(g.size(), -1);
  std::deque<NodeIndex> queue{source};
  dist[static_cast<std::size_t>(source)] = 0;
  while (!queue.empty()) {
    const NodeIndex v = queue.front();
    queue.pop_front();
    for (NodeIndex w : g.neighbors(v)) {
      auto& d = dist[static_cast<std::size_t>(w)];
      if (d < 0) {
        d = dist[static_cast<std::size_t>(v)] + 1;
        queue.push_back(w);
      }
    }
  }
  return dist;
}

std::optional<int> shortest_distance(const OntologyDag& g, NodeIndex a, NodeIndex b) {
  if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= g.size() ||
      static_cast<std::size_t>(b) >= g.size()) {
    throw std::out_of_range("node index out of range");
  }
  const int d = distances_from(g, a)[static_cast<std::size_t>(b)];
  if (d < 0) return std::nullopt;
  return d;
}

std::vector<int> depths(const OntologyDag& g) {
  std::vector<int> depth(g.size(), 0);
  std::deque<NodeIndex> queue;
  for (NodeIndex r : g.roots()) {
    depth[static_cast<std::size_t>(r)] = 1;
    queue.push_back(r);
  }
  while (!queue.empty()) {
    const NodeIndex v = queue.front();
    queue.pop_front();
    for (NodeIndex c : g.children(v)) {
      auto& d = depth[static_cast<std::size_t>(c)];
      if (d == 0) {
        d = depth[static_cast<std::size_t>(v)] + 1;
        queue.push_back(c);
      }
    }
  }
  return depth;
}

int depth(const OntologyDag& g, NodeIndex v) { return depths(g).at(static_cast<std::size_t>(v)); }

DataSplit make_split(const OntologyDag& g, uint64_t seed) {
  std::vector<NodeIndex> defined;
  for (const auto& node : g.nodes()) {
    if (node.definition_tokens) defined.push_back(node.index);
  }
  if (defined.size() < kMinSplitNodes) {
    throw std::invalid_argument("graph " + g.name() + " has only " +
                                std::to_string(defined.size()) + " defined nodes");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(defined.begin(), defined.end(), rng);
  const auto n = static_cast<double>(defined.size());
  const auto n_valid = static_cast<std::size_t>(std::llround(0.1 * n));
  const auto n_test = static_cast<std::size_t>(std::llround(0.2 * n));
  const auto n_train = defined.size() - n_valid - n_test;

  DataSplit split;
  split.seed = seed;
  split.train.assign(defined.begin(), defined.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.valid.assign(defined.begin() + static_cast<std::ptrdiff_t>(n_train),
                     defined.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
  split.test.assign(defined.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), defined.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.valid.begin(), split.valid.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

std::size_t word_count(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::size_t n = 0;
  std::string w;
  while (in >> w) ++n;
  return n;
}

CorpusStats corpus_stats(const OntologyDag& g) {
  CorpusStats s;
  s.nodes = g.size();
  s.edges = g.edges().size();
  s.roots = g.roots().size();
  for (int d : depths(g)) ++s.depth_histogram[d];
  std::size_t term_words = 0;
  std::size_t def_words = 0;
  std::size_t defined = 0;
  for (const auto& node : g.nodes()) {
    const auto tw = word_count(node.name);
    term_words += tw;
    ++s.terminology_word_histogram[tw];
    if (node.definition) {
      const auto dw = word_count(*node.definition);
      def_words += dw;
      ++defined;
      ++s.definition_word_histogram[dw];
    }
  }
  if (s.nodes > 0) s.mean_terminology_words = static_cast<double>(term_words) / static_cast<double>(s.nodes);
  if (defined > 0) s.mean_definition_words = static_cast<double>(def_words) / static_cast<double>(defined);
  return s;
}

void save_dag(const OntologyDag& g, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["format"] = "graphex-dag";
  j["version"] = 1;
  j["name"] = g.name();
  j["num_nodes"] = g.size();
  j["num_edges"] = g.edges().size();
  auto& nodes = j["nodes"] = nlohmann::ordered_json::array();
  for (const auto& n : g.nodes()) {
    nlohmann::ordered_json jn;
    jn["index"] = n.index;
    jn["term_id"] = n.term_id;
    jn["name"] = n.name;
    jn["definition"] = n.definition ? nlohmann::ordered_json(*n.definition) : nlohmann::ordered_json();
    jn["terminology_tokens"] = n.terminology;
    jn["definition_tokens"] =
        n.definition_tokens ? nlohmann::ordered_json(*n.definition_tokens) : nlohmann::ordered_json();
    jn["synonyms"] = n.synonyms;
    nodes.push_back(std::move(jn));
  }
  auto& edges = j["edges"] = nlohmann::ordered_json::array();
  for (auto [p, c] : g.edges()) edges.push_back({p, c});
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write DAG snapshot: " + path.string());
  out << j.dump(1) << '\n';
}

OntologyDag load_dag(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read DAG snapshot: " + path.string());
  const auto j = nlohmann::json::parse(in);
  if (j.value("format", "") != "graphex-dag") {
    throw std::runtime_error("not a DAG snapshot: " + path.string());
  }
  std::vector<TermNode> nodes;
  for (const auto& jn : j.at("nodes")) {
    TermNode n;
    n.index = jn.at("index").get<NodeIndex>();
    n.term_id = jn.at("term_id").get<std::string>();
    n.name = jn.at("name").get<std::string>();
    if (!jn.at("definition").is_null()) n.definition = jn["definition"].get<std::string>();
    n.terminology = jn.at("terminology_tokens").get<text::Tokens>();
    if (!jn.at("definition_tokens").is_null()) {
      n.definition_tokens = jn["definition_tokens"].get<text::Tokens>();
    }
    n.synonyms = jn.value("synonyms", std::vector<std::string>{});
    nodes.push_back(std::move(n));
  }
  std::vector<std::pair<NodeIndex, NodeIndex>> edges;
  for (const auto& e : j.at("edges")) edges.emplace_back(e.at(0).get<NodeIndex>(), e.at(1).get<NodeIndex>());
  if (nodes.size() != j.at("num_nodes").get<std::size_t>() ||
      edges.size() != j.at("num_edges").get<std::size_t>()) {
    throw std::runtime_error("DAG snapshot header disagrees with its tables: " + path.string());
  }
  return OntologyDag(j.at("name").get<std::string>(), std::move(nodes), std::move(edges));
}

void save_split(const DataSplit& split, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["seed"] = split.seed;
  j["train"] = split.train;
  j["valid"] = split.valid;
  j["test"] = split.test;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write split: " + path.string());
  out << j.dump() << '\n';
}

DataSplit load_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read split: " + path.string());
  const auto j = nlohmann::json::parse(in);
  DataSplit s;
  s.seed = j.at("seed").get<uint64_t>();
  s.train = j.at("train").get<std::vector<NodeIndex>>();
  s.valid = j.at("valid").get<std::vector<NodeIndex>>();
  s.test = j.at("test").get<std::vector<NodeIndex>>();
  return s;
}

}  // namespace graphex::dag
