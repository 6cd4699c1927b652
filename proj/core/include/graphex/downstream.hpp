#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "graphex/dag.hpp"

namespace graphex::downstream {

using dag::NodeIndex;
using Edge = std::pair<NodeIndex, NodeIndex>;

// Probability that a random positive outscores a random negative; ties count 1/2.
double roc_auc(std::span<const double> positive, std::span<const double> negative);
// Step-wise area under the precision-recall curve over distinct score thresholds.
double average_precision(std::span<const double> positive, std::span<const double> negative);

struct RankingScores {
  double auc = 0.0;
  double ap = 0.0;
};

struct LinkSplitConfig {
  double train_fraction = 0.85;
  double valid_fraction = 0.05;
  uint64_t seed = 0;
};

struct LinkSplit {
  uint64_t seed = 0;
  std::vector<Edge> train, valid, test;
  std::vector<Edge> train_negative, valid_negative, test_negative;
};

// Shuffled edge partition plus as many sampled non-edges (in neither
// direction, no self pairs, no repeats across partitions) per partition.
LinkSplit make_link_split(const dag::OntologyDag& g, const LinkSplitConfig& cfg = {});

enum class Scorer { kDot, kDistance };
const char* to_string(Scorer s);
Scorer scorer_from_string(const std::string& s);

// One vector per node; an empty vector marks a node without an embedding.
using NodeVectors = std::vector<Eigen::RowVectorXd>;

double link_score(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b, Scorer scorer);

RankingScores link_prediction_eval(const dag::OntologyDag& g, const NodeVectors& embeddings, const LinkSplit& split,
                                   Scorer scorer);

struct ShallowConfig {
  int dim = 64;
  int epochs = 200;
  double learning_rate = 0.05;
  uint64_t seed = 0;
};

// Free node vectors fitted by logistic loss on the training edges, with one
// fresh uniform negative per positive each epoch.
NodeVectors train_shallow_embeddings(const dag::OntologyDag& g, std::span<const Edge> train, const ShallowConfig& cfg);

inline constexpr int kMinLevel = 1;
inline constexpr int kMaxLevel = 17;

struct GranularityLabel {
  std::size_t dag = 0;
  NodeIndex node = 0;
  std::string term_id;
  int depth = 0;
  int level = 0;
};

struct Alignment {
  std::vector<int> offsets;     // per DAG
  std::vector<int> component;   // per DAG, id of its anchor-connected component
  std::vector<std::vector<GranularityLabel>> labels;  // per DAG, per node
  double residual = 0.0;        // sum of squared anchor residuals
};

// Anchors are node names shared across DAGs (the shallowest occurrence per DAG
// counts). Offsets minimize squared anchor residuals per component with the
// largest DAG of each component fixed at 0, then are rounded and refined by
// +-1 moves.
Alignment align_granularity(std::span<const dag::OntologyDag> dags);

// Sum of squared anchor residuals for a given offset assignment.
double alignment_residual(std::span<const dag::OntologyDag> dags, std::span<const int> offsets);

struct LeveledEmbedding {
  Eigen::RowVectorXd vector;
  int level = 0;
};

struct MlpConfig {
  int hidden = 256;
  int epochs = 50;
  int batch_size = 32;
  double learning_rate = 1e-3;
  uint64_t seed = 0;
};

// Pairs with distinct levels are formed within each set; training pairs are
// added in both orders. Label 1 when the first sentence is finer (deeper).
double relative_granularity_eval(std::span<const LeveledEmbedding> train, std::span<const LeveledEmbedding> test,
                                 const MlpConfig& cfg = {}, std::size_t max_pairs = 20000);

struct AbsoluteResult {
  double accuracy = 0.0;
  double spearman = 0.0;
  bool spearman_defined = true;  // false when predictions or labels are constant
};

AbsoluteResult absolute_granularity_eval(std::span<const LeveledEmbedding> train,
                                         std::span<const LeveledEmbedding> test, const MlpConfig& cfg = {});

}  // namespace graphex::downstream
