#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "graphex/dag.hpp"

namespace graphex::analysis {

// Cosine between bag-of-token count vectors; 0 when either side is empty.
double bag_cosine(const text::Tokens& a, const text::Tokens& b);

struct ConsistencyResult {
  std::optional<double> same_term;  // mean over cross-DAG pairs with identical names
  std::optional<double> synonym;    // mean over cross-DAG pairs linked by a synonym
  std::size_t same_term_pairs = 0;
  std::size_t synonym_pairs = 0;
};

// Names are compared case-insensitively. Absent means no qualifying pair.
ConsistencyResult curation_consistency(std::span<const dag::OntologyDag> dags);

struct DistanceBucket {
  int distance = 0;
  std::vector<double> terminology_similarity;
  std::vector<double> definition_similarity;
};

struct SimilarityProfile {
  std::string graph;
  std::vector<DistanceBucket> buckets;  // increasing distance, empty buckets omitted
  std::optional<double> terminology_correlation;
  std::optional<double> definition_correlation;
};

struct ProfileConfig {
  std::size_t pair_budget = 2000;  // per distance bucket
  int bleu_order = 4;
  uint64_t seed = 0;
};

// Mean of BLEU(a, b) and BLEU(b, a).
double symmetric_bleu(const text::Tokens& a, const text::Tokens& b, int order);

// Pairs are drawn among `nodes` (all nodes when empty) by reservoir sampling
// within each shortest-distance bucket. Definition similarity is only taken
// for pairs where both nodes carry a definition.
SimilarityProfile distance_similarity_profile(const dag::OntologyDag& g, const ProfileConfig& cfg,
                                              std::span<const dag::NodeIndex> nodes = {});

// Profile restricted to the training nodes of `split`.
SimilarityProfile selection_profile(const dag::OntologyDag& g, const dag::DataSplit& split, const ProfileConfig& cfg);

inline constexpr double kDefaultSelectionThreshold = -0.3;

// Graphs whose definition correlation is at or below the threshold.
std::vector<std::string> select_graphs(std::span<const SimilarityProfile> profiles,
                                       double threshold = kDefaultSelectionThreshold);

// Report JSON: consistency scores, one entry per profile, and the selection.
std::string report_json(std::span<const SimilarityProfile> profiles, const std::optional<ConsistencyResult>& consistency,
                        double threshold);

}  // namespace graphex::analysis
