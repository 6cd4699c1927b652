#include "graphex/stage2.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "graphex/log.hpp"

namespace graphex::stage2 {

LocalTable LocalTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read local embedding table: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("local embedding table: missing header");
  LocalTable table;
  {
    std::istringstream hs(line);
    std::string extra;
    if (!(hs >> table.dim_) || table.dim_ < 1 || (hs >> extra)) {
      throw std::runtime_error("local embedding table: header must be a single positive dimension");
    }
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw std::runtime_error("local embedding table: line " + std::to_string(line_no) + " lacks term_id<TAB>values");
    }
    std::istringstream vs(line.substr(tab + 1));
    Eigen::RowVectorXd v(table.dim_);
    for (int k = 0; k < table.dim_; ++k) {
      if (!(vs >> v(k))) {
        throw std::runtime_error("local embedding table: line " + std::to_string(line_no) + " has too few values");
      }
    }
    std::string extra;
    if (vs >> extra) {
      throw std::runtime_error("local embedding table: line " + std::to_string(line_no) + " has too many values");
    }
    table.rows_[line.substr(0, tab)] = std::move(v);
  }
  return table;
}

void LocalTable::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write local embedding table: " + path.string());
  out << dim_ << '\n';
  char buf[32];
  for (const auto& [id, v] : rows_) {
    out << id << '\t';
    for (Eigen::Index k = 0; k < v.size(); ++k) {
      std::snprintf(buf, sizeof(buf), "%.17g", v(k));
      if (k > 0) out << ' ';
      out << buf;
    }
    out << '\n';
  }
}

void LocalTable::set(const std::string& term_id, Eigen::RowVectorXd v) {
  if (v.size() != dim_) throw std::invalid_argument("local embedding table: dimension mismatch");
  rows_[term_id] = std::move(v);
}

const Eigen::RowVectorXd* LocalTable::find(const std::string& term_id) const {
  auto it = rows_.find(term_id);
  return it == rows_.end() ? nullptr : &it->second;
}

LocalEmbedding local_embed(const LocalTable* table, const gen::TransformerGenerator& model, const Example& ex) {
  if (table != nullptr) {
    if (const auto* row = table->find(ex.term_id)) return {*row, "lookup-file"};
    log::warn("local embedding lookup miss for ", ex.term_id, "; using the trainable provider");
  }
  ad::NoGradGuard guard;
  return {model.trainable_local(ex.source).value().row(0), "trainable"};
}

std::string model_label(bool use_tg, bool use_dg) {
  if (use_tg && use_dg) return "Our Model";
  if (use_dg) return "Our Model w/o TG";
  if (use_tg) return "Our Model w/o DG";
  return "Our Model w/o TG+DG";
}

std::string model_kind(bool use_tg, bool use_dg) {
  if (use_tg && use_dg) return "graphex";
  if (use_dg) return "graphex-no-tg";
  if (use_tg) return "graphex-no-dg";
  return "graphex-local-only";
}

std::unique_ptr<gen::TransformerGenerator> make_model(const Stage2Config& cfg, int vocab_size, int global_dim,
                                                      int local_dim) {
  gen::PrefixConfig prefix;
  prefix.use_local = true;
  prefix.use_tg = cfg.use_tg;
  prefix.use_dg = cfg.use_dg;
  prefix.local_dim = local_dim;
  prefix.global_dim = global_dim;
  return std::make_unique<gen::TransformerGenerator>(model_kind(cfg.use_tg, cfg.use_dg), cfg.transformer, prefix,
                                                     vocab_size, cfg.seed);
}

text::Vocabulary experiment_vocabulary(const dag::OntologyDag& g, const dag::DataSplit& split, int min_count) {
  std::vector<text::Tokens> corpus;
  for (const auto& n : g.nodes()) corpus.push_back(text::truncate(n.terminology, text::kMaxTerminologyTokens));
  for (dag::NodeIndex v : split.train) {
    const auto& n = g.node(v);
    if (n.definition_tokens) corpus.push_back(text::truncate(*n.definition_tokens, text::kMaxDefinitionTokens));
  }
  return text::Vocabulary::build(corpus, min_count);
}

std::vector<Example> examples_for(const dag::OntologyDag& g, std::span<const dag::NodeIndex> nodes,
                                  const text::Vocabulary& vocab) {
  std::vector<Example> out;
  out.reserve(nodes.size());
  for (dag::NodeIndex v : nodes) {
    const auto& n = g.node(v);
    if (!n.definition_tokens) throw std::invalid_argument("examples_for: node without definition: " + n.term_id);
    out.push_back(gen::make_example(v, n.term_id, n.terminology, *n.definition_tokens, vocab));
  }
  return out;
}

void attach_embeddings(std::vector<Example>& examples, const stage1::NodeEmbeddingSet& emb, const LocalTable* local) {
  std::size_t misses = 0;
  const bool have_def = emb.w_def.rows() == static_cast<Eigen::Index>(emb.size());
  for (auto& ex : examples) {
    if (ex.node < 0 || static_cast<std::size_t>(ex.node) >= emb.size()) {
      throw std::invalid_argument("attach_embeddings: node outside the embedding set");
    }
    ex.gt = emb.gt(ex.node).transpose();
    if (have_def) ex.gd = emb.gd(ex.node).transpose();
    if (local != nullptr) {
      if (const auto* row = local->find(ex.term_id)) {
        ex.local = *row;
      } else {
        ++misses;
      }
    }
  }
  if (misses > 0) log::warn(misses, " local embedding lookup misses; those nodes use the trainable provider");
}

ad::Tensor stage2_loss(gen::TransformerGenerator& model, std::span<const Example> batch) {
  std::mt19937_64 unused(0);
  ad::Tensor total = ad::Tensor::scalar(0.0);
  for (const auto& ex : batch) total = ad::add(total, model.loss(ex, false, unused));
  return total;
}

GenerationRecord generate(const gen::TransformerGenerator& model, const Example& ex, const text::Vocabulary& vocab,
                          const gen::DecodeOptions& opts) {
  return gen::to_record(ex, model.decode(ex, opts), vocab, opts);
}

AblationResult run_ablation(const Stage2Data& data, const Stage2Config& cfg, const gen::TrainConfig& train,
                            const gen::DecodeOptions& decode) {
  if (data.graph == nullptr || data.vocab == nullptr || data.embeddings == nullptr) {
    throw std::invalid_argument("run_ablation: graph, vocabulary and embeddings are required");
  }
  const auto& emb = *data.embeddings;
  if (emb.size() != data.graph->size()) throw std::invalid_argument("run_ablation: embedding set does not match graph");
  if (cfg.use_dg) {
    const bool have_def = emb.w_def.rows() == static_cast<Eigen::Index>(emb.size());
    for (dag::NodeIndex v : data.split.test) {
      if (!have_def || !emb.bootstrap[static_cast<std::size_t>(v)]) {
        throw std::runtime_error(
            "run_ablation: g^d requested but test node " + data.graph->node(v).term_id +
            " has no bootstrap definition embedding; train the plain transformer, bootstrap d' for the "
            "held-out nodes, and rerun train-stage1 with those definitions (or disable use_dg)");
      }
    }
  }
  auto train_ex = examples_for(*data.graph, data.split.train, *data.vocab);
  auto valid_ex = examples_for(*data.graph, data.split.valid, *data.vocab);
  auto test_ex = examples_for(*data.graph, data.split.test, *data.vocab);
  attach_embeddings(train_ex, emb, data.local);
  attach_embeddings(valid_ex, emb, data.local);
  attach_embeddings(test_ex, emb, data.local);

  AblationResult result;
  result.model = make_model(cfg, data.vocab->size(), 2 * emb.hidden_dim, data.local ? data.local->dim() : 0);
  result.log = gen::train_generator(*result.model, train_ex, valid_ex, train);
  for (const auto& ex : test_ex) result.generations.push_back(generate(*result.model, ex, *data.vocab, decode));
  result.report = metrics::score_run(model_label(cfg.use_tg, cfg.use_dg), result.generations);
  return result;
}

}  // namespace graphex::stage2
