#include "graphex/analysis.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <unordered_map>

#include <json.hpp>

#include "graphex/metrics.hpp"
#include "graphex/stats.hpp"

namespace graphex::analysis {

double bag_cosine(const text::Tokens& a, const text::Tokens& b) {
  if (a.empty() || b.empty()) return 0.0;
  std::unordered_map<std::string, double> ca, cb;
  for (const auto& t : a) ca[t] += 1.0;
  for (const auto& t : b) cb[t] += 1.0;
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [t, v] : ca) {
    na += v * v;
    if (auto it = cb.find(t); it != cb.end()) dot += v * it->second;
  }
  for (const auto& [t, v] : cb) nb += v * v;
  return dot / std::sqrt(na * nb);
}

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

using Occurrence = std::pair<std::size_t, dag::NodeIndex>;

}  // namespace

ConsistencyResult curation_consistency(std::span<const dag::OntologyDag> dags) {
  std::map<std::string, std::vector<Occurrence>> by_name;
  for (std::size_t d = 0; d < dags.size(); ++d) {
    for (const auto& n : dags[d].nodes()) {
      if (n.definition_tokens) by_name[lower(n.name)].emplace_back(d, n.index);
    }
  }
  auto definition = [&](const Occurrence& o) -> const text::Tokens& {
    return *dags[o.first].node(o.second).definition_tokens;
  };

  ConsistencyResult out;
  double same_sum = 0.0;
  for (const auto& [name, occ] : by_name) {
    for (std::size_t i = 0; i < occ.size(); ++i) {
      for (std::size_t j = i + 1; j < occ.size(); ++j) {
        if (occ[i].first == occ[j].first) continue;
        same_sum += bag_cosine(definition(occ[i]), definition(occ[j]));
        ++out.same_term_pairs;
      }
    }
  }
  std::set<std::pair<Occurrence, Occurrence>> seen;
  double syn_sum = 0.0;
  for (const auto& [name, occ] : by_name) {
    for (const auto& a : occ) {
      for (const auto& syn : dags[a.first].node(a.second).synonyms) {
        const std::string key = lower(syn);
        if (key == name) continue;
        auto it = by_name.find(key);
        if (it == by_name.end()) continue;
        for (const auto& b : it->second) {
          if (b.first == a.first) continue;
          if (!seen.insert({std::min(a, b), std::max(a, b)}).second) continue;
          syn_sum += bag_cosine(definition(a), definition(b));
          ++out.synonym_pairs;
        }
      }
    }
  }
  if (out.same_term_pairs > 0) out.same_term = same_sum / static_cast<double>(out.same_term_pairs);
  if (out.synonym_pairs > 0) out.synonym = syn_sum / static_cast<double>(out.synonym_pairs);
  return out;
}

double symmetric_bleu(const text::Tokens& a, const text::Tokens& b, int order) {
  return 0.5 * (metrics::bleu_n(a, b, order) + metrics::bleu_n(b, a, order));
}

namespace {

std::optional<double> distance_correlation(const std::vector<DistanceBucket>& buckets, bool definitions) {
  std::vector<double> dist, sim;
  std::size_t populated = 0;
  for (const auto& b : buckets) {
    const auto& s = definitions ? b.definition_similarity : b.terminology_similarity;
    if (!s.empty()) ++populated;
    for (double v : s) {
      dist.push_back(b.distance);
      sim.push_back(v);
    }
  }
  if (populated < 2) return std::nullopt;
  if (std::all_of(sim.begin(), sim.end(), [&](double v) { return v == sim.front(); })) return 0.0;
  return stats::spearman(dist, sim);
}

}  // namespace

SimilarityProfile distance_similarity_profile(const dag::OntologyDag& g, const ProfileConfig& cfg,
                                              std::span<const dag::NodeIndex> nodes) {
  std::vector<dag::NodeIndex> pool(nodes.begin(), nodes.end());
  if (pool.empty()) {
    for (const auto& n : g.nodes()) pool.push_back(n.index);
  }
  std::sort(pool.begin(), pool.end());
  pool.erase(std::unique(pool.begin(), pool.end()), pool.end());

  std::mt19937_64 rng(cfg.seed);
  std::map<int, std::vector<std::pair<dag::NodeIndex, dag::NodeIndex>>> reservoir;
  std::map<int, std::size_t> seen;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto dist = dag::distances_from(g, pool[i]);
    for (std::size_t j = i + 1; j < pool.size(); ++j) {
      const int d = dist[static_cast<std::size_t>(pool[j])];
      if (d <= 0) continue;
      auto& bucket = reservoir[d];
      const std::size_t c = seen[d]++;
      if (bucket.size() < cfg.pair_budget) {
        bucket.emplace_back(pool[i], pool[j]);
      } else if (cfg.pair_budget > 0) {
        const std::size_t r = std::uniform_int_distribution<std::size_t>(0, c)(rng);
        if (r < cfg.pair_budget) bucket[r] = {pool[i], pool[j]};
      }
    }
  }

  SimilarityProfile out;
  out.graph = g.name();
  for (const auto& [d, pairs] : reservoir) {
    if (pairs.empty()) continue;
    DistanceBucket b;
    b.distance = d;
    for (const auto& [u, v] : pairs) {
      const auto& a = g.node(u);
      const auto& c = g.node(v);
      b.terminology_similarity.push_back(symmetric_bleu(a.terminology, c.terminology, cfg.bleu_order));
      if (a.definition_tokens && c.definition_tokens) {
        b.definition_similarity.push_back(symmetric_bleu(*a.definition_tokens, *c.definition_tokens, cfg.bleu_order));
      }
    }
    out.buckets.push_back(std::move(b));
  }
  out.terminology_correlation = distance_correlation(out.buckets, false);
  out.definition_correlation = distance_correlation(out.buckets, true);
  return out;
}

SimilarityProfile selection_profile(const dag::OntologyDag& g, const dag::DataSplit& split, const ProfileConfig& cfg) {
  if (split.train.empty()) throw std::invalid_argument("selection_profile: split has no training nodes");
  return distance_similarity_profile(g, cfg, split.train);
}

std::vector<std::string> select_graphs(std::span<const SimilarityProfile> profiles, double threshold) {
  std::vector<std::string> out;
  for (const auto& p : profiles) {
    if (p.definition_correlation && *p.definition_correlation <= threshold) out.push_back(p.graph);
  }
  return out;
}

std::string report_json(std::span<const SimilarityProfile> profiles, const std::optional<ConsistencyResult>& consistency,
                        double threshold) {
  using nlohmann::ordered_json;
  auto opt = [](const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); };
  auto mean = [](const std::vector<double>& v) {
    if (v.empty()) return ordered_json(nullptr);
    double s = 0.0;
    for (double x : v) s += x;
    return ordered_json(s / static_cast<double>(v.size()));
  };
  ordered_json j;
  if (consistency) {
    j["consistency"] = {{"same_term", opt(consistency->same_term)},
                        {"same_term_pairs", consistency->same_term_pairs},
                        {"synonym", opt(consistency->synonym)},
                        {"synonym_pairs", consistency->synonym_pairs}};
  }
  j["profiles"] = ordered_json::array();
  for (const auto& p : profiles) {
    ordered_json pj;
    pj["graph"] = p.graph;
    pj["terminology_correlation"] = opt(p.terminology_correlation);
    pj["definition_correlation"] = opt(p.definition_correlation);
    pj["buckets"] = ordered_json::array();
    for (const auto& b : p.buckets) {
      pj["buckets"].push_back({{"distance", b.distance},
                               {"pairs", b.terminology_similarity.size()},
                               {"terminology_mean", mean(b.terminology_similarity)},
                               {"definition_mean", mean(b.definition_similarity)},
                               {"terminology", b.terminology_similarity},
                               {"definition", b.definition_similarity}});
    }
    j["profiles"].push_back(std::move(pj));
  }
  j["threshold"] = threshold;
  j["selected"] = select_graphs(profiles, threshold);
  return j.dump(2);
}

}  // namespace graphex::analysis
