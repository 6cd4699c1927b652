#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "graphex/dag.hpp"
#include "graphex/metrics.hpp"
#include "graphex/seqgen.hpp"
#include "graphex/stage1.hpp"
#include "graphex/transformer.hpp"

namespace graphex::stage2 {

using gen::Example;

// Precomputed per-term local embeddings. File format: first line the
// dimension, then one "term_id<TAB>v1 v2 ... vd" row per term.
class LocalTable {
 public:
  LocalTable() = default;
  explicit LocalTable(int dim) : dim_(dim) {}

  static LocalTable load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  int dim() const { return dim_; }
  std::size_t size() const { return rows_.size(); }
  void set(const std::string& term_id, Eigen::RowVectorXd v);
  const Eigen::RowVectorXd* find(const std::string& term_id) const;

 private:
  int dim_ = 0;
  std::map<std::string, Eigen::RowVectorXd> rows_;
};

struct LocalEmbedding {
  Eigen::RowVectorXd vector;
  std::string provider;  // "lookup-file" or "trainable"
};

// Lookup row when `table` has the term, otherwise the trainable provider
// (mean of the model's token embeddings over the terminology).
LocalEmbedding local_embed(const LocalTable* table, const gen::TransformerGenerator& model, const Example& ex);

struct Stage2Config {
  gen::TransformerConfig transformer{};
  bool use_tg = true;
  bool use_dg = true;
  uint64_t seed = 1;
};

// Results-table row label for a flag combination.
std::string model_label(bool use_tg, bool use_dg);
std::string model_kind(bool use_tg, bool use_dg);

std::unique_ptr<gen::TransformerGenerator> make_model(const Stage2Config& cfg, int vocab_size, int global_dim,
                                                      int local_dim);

// Shared per-DAG vocabulary: every terminology (visible transductively) and
// the training definitions.
text::Vocabulary experiment_vocabulary(const dag::OntologyDag& g, const dag::DataSplit& split, int min_count = 2);

// One example per node with its curated definition as target/reference.
std::vector<Example> examples_for(const dag::OntologyDag& g, std::span<const dag::NodeIndex> nodes,
                                  const text::Vocabulary& vocab);

// Fills g^t, g^d and, when a table is given, l_i. Lookup misses keep l_i
// empty (trainable fallback) and are logged once per call.
void attach_embeddings(std::vector<Example>& examples, const stage1::NodeEmbeddingSet& emb,
                       const LocalTable* local);

// Teacher-forced summed negative log-likelihood over a batch.
ad::Tensor stage2_loss(gen::TransformerGenerator& model, std::span<const Example> batch);

GenerationRecord generate(const gen::TransformerGenerator& model, const Example& ex, const text::Vocabulary& vocab,
                          const gen::DecodeOptions& opts = {});

struct Stage2Data {
  const dag::OntologyDag* graph = nullptr;
  dag::DataSplit split;
  const text::Vocabulary* vocab = nullptr;
  const stage1::NodeEmbeddingSet* embeddings = nullptr;
  const LocalTable* local = nullptr;
};

struct AblationResult {
  metrics::MetricReport report;
  std::vector<GenerationRecord> generations;
  gen::TrainLog log;
  std::unique_ptr<gen::TransformerGenerator> model;
};

// Trains the variant selected by cfg.use_tg / cfg.use_dg on the training
// split, decodes the test split and scores it.
AblationResult run_ablation(const Stage2Data& data, const Stage2Config& cfg, const gen::TrainConfig& train,
                            const gen::DecodeOptions& decode = {});

}  // namespace graphex::stage2
