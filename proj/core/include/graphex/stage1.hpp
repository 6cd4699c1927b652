#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "graphex/autodiff.hpp"
#include "graphex/dag.hpp"
#include "graphex/nn.hpp"
#include "graphex/text.hpp"

namespace graphex::stage1 {

using ad::Matrix;
using ad::Tensor;
using dag::NodeIndex;

enum class LossMode { kFullSoftmax, kNegativeSampling };

const char* to_string(LossMode mode);

struct Stage1Config {
  int word_dim = 768;    // d_w
  int hidden_dim = 384;  // d_h; g = [w || u] has 2 * d_h entries
  dag::WalkConfig walks{};
  int epochs = 30;
  double learning_rate = 1e-3;
  int batch_nodes = 64;      // start nodes per optimizer step
  int patience = 3;          // epochs without relative improvement before stopping
  double min_improvement = 1e-4;
  int negatives = 5;         // s
  double noise_power = 0.75;
  int full_softmax_max_nodes = 5000;
  std::optional<LossMode> mode;  // unset: chosen from graph size
  int min_count = 1;             // word-table vocabulary cutoff
  uint64_t seed = 13;

  void validate() const;
  LossMode resolve_mode(std::size_t num_nodes) const;
};

// Word tables q, h and the shared forward/backward GRU pair.
class Stage1Model {
 public:
  Stage1Model(const Stage1Config& cfg, int vocab_size, uint64_t seed);

  nn::ParameterStore& store() { return store_; }
  const nn::ParameterStore& store() const { return store_; }
  int hidden_dim() const { return hidden_dim_; }

  // Encodes every sequence; returns (U, W), one row per sequence. Sequences
  // must be non-empty.
  std::pair<Tensor, Tensor> encode(std::span<const text::TokenIds> sequences) const;
  std::pair<Eigen::VectorXd, Eigen::VectorXd> encode_node(const text::TokenIds& tokens) const;

  const nn::Embedding& q() const { return q_; }
  const nn::Embedding& h() const { return h_; }
  const nn::GruCell& gru_forward() const { return fwd_; }
  const nn::GruCell& gru_backward() const { return bwd_; }

 private:
  int hidden_dim_;
  nn::ParameterStore store_;
  nn::Embedding q_;
  nn::Embedding h_;
  nn::GruCell fwd_;
  nn::GruCell bwd_;
};

// Softmax of u_k . w over all k, max-subtracted.
Eigen::VectorXd arrival_probabilities(const Matrix& U, const Eigen::VectorXd& w);
double arrival_probability(const Matrix& U, const Eigen::VectorXd& w, NodeIndex j);

// Noise distribution for negative sampling: walk-target frequencies raised to
// `power`, normalized.
std::vector<double> noise_distribution(const dag::WalkBatch& walks, std::size_t num_nodes, double power);

struct LossInputs {
  std::span<const text::TokenIds> sequences;  // one per node
  const dag::WalkBatch* walks = nullptr;
  std::span<const NodeIndex> starts;  // empty: every node
};

// Sum over the walks of `starts` of -log p(v_j | v_start), j = 2..k.
Tensor stage1_loss_full(const Stage1Model& model, const LossInputs& in);
// Negative-sampling estimator with s draws per (start, target) pair.
Tensor stage1_loss_negative(const Stage1Model& model, const LossInputs& in, const std::vector<double>& noise,
                            int negatives, std::mt19937_64& rng);

struct SideResult {
  text::Vocabulary vocab;
  Matrix w;  // N x d_h feature embeddings
  Matrix u;  // N x d_h context embeddings
  std::vector<double> epoch_losses;
  LossMode mode = LossMode::kFullSoftmax;
};

// Trains one side (terminology or definition text) and returns the final
// embeddings. Throws std::runtime_error if the loss becomes non-finite.
SideResult train_side(const std::vector<text::Tokens>& texts, const dag::WalkBatch& walks,
                      const Stage1Config& cfg, Stage1Model* model_out = nullptr);

struct NodeEmbeddingSet {
  int hidden_dim = 0;
  std::vector<std::string> term_ids;
  Matrix w, u;            // terminology side
  Matrix w_def, u_def;    // definition side
  std::vector<bool> bootstrap;  // definition side used d'_i

  std::size_t size() const { return term_ids.size(); }
  Matrix gt() const;  // [w || u]
  Matrix gd() const;  // [w' || u']
  Eigen::VectorXd gt(NodeIndex i) const;
  Eigen::VectorXd gd(NodeIndex i) const;
};

// Header "<num_nodes> <hidden_dim>", then per node:
// term_id, bootstrap flag, w, u, g^t, g^d as tab-separated fields.
void save_embeddings(const NodeEmbeddingSet& set, const std::filesystem::path& path);
NodeEmbeddingSet load_embeddings(const std::filesystem::path& path);

// Definition text per node: curated for nodes in `curated`, otherwise the
// supplied bootstrap text.
struct DefinitionSource {
  std::vector<text::Tokens> texts;
  std::vector<bool> bootstrap;
};

DefinitionSource definition_source(const dag::OntologyDag& g, std::span<const NodeIndex> curated,
                                   const std::map<NodeIndex, text::Tokens>& bootstrap);

struct Stage1Result {
  NodeEmbeddingSet embeddings;
  SideResult terminology;
  SideResult definition;
};

Stage1Result train_stage1(const dag::OntologyDag& g, const dag::WalkBatch& walks, const DefinitionSource& defs,
                          const Stage1Config& cfg);

}  // namespace graphex::stage1
