#include "graphex/stage1.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "graphex/log.hpp"

namespace graphex::stage1 {

const char* to_string(LossMode mode) {
  return mode == LossMode::kFullSoftmax ? "full-softmax" : "negative-sampling";
}

void Stage1Config::validate() const {
  if (word_dim < 1 || hidden_dim < 1) throw std::invalid_argument("stage1: dimensions must be positive");
  walks.validate();
  if (epochs < 0) throw std::invalid_argument("stage1: epochs must be non-negative");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("stage1: learning rate must be positive");
  if (batch_nodes < 1) throw std::invalid_argument("stage1: batch_nodes must be positive");
  if (negatives < 1) throw std::invalid_argument("stage1: negatives must be positive");
  if (min_count < 1) throw std::invalid_argument("stage1: min_count must be positive");
}

LossMode Stage1Config::resolve_mode(std::size_t num_nodes) const {
  if (mode) return *mode;
  return num_nodes <= static_cast<std::size_t>(full_softmax_max_nodes) ? LossMode::kFullSoftmax
                                                                        : LossMode::kNegativeSampling;
}

Stage1Model::Stage1Model(const Stage1Config& cfg, int vocab_size, uint64_t seed) : hidden_dim_(cfg.hidden_dim) {
  std::mt19937_64 rng(seed);
  q_ = nn::Embedding(store_, "q", vocab_size, cfg.word_dim, rng, 0.1);
  h_ = nn::Embedding(store_, "h", vocab_size, cfg.word_dim, rng, 0.1);
  fwd_ = nn::GruCell(store_, "gru_f", cfg.word_dim, cfg.hidden_dim, rng);
  bwd_ = nn::GruCell(store_, "gru_b", cfg.word_dim, cfg.hidden_dim, rng);
}

std::pair<Tensor, Tensor> Stage1Model::encode(std::span<const text::TokenIds> sequences) const {
  const auto B = static_cast<ad::Index>(sequences.size());
  if (B == 0) throw std::invalid_argument("encode: no sequences");
  std::size_t T = 0;
  for (const auto& s : sequences) {
    if (s.empty()) throw std::invalid_argument("encode: empty token sequence");
    T = std::max(T, s.size());
  }
  // Time-major layout: row t * B + i. The backward direction reads each
  // sequence reversed, aligned at its own last token.
  std::vector<int32_t> fwd_ids(T * static_cast<std::size_t>(B), text::Vocabulary::kPad);
  std::vector<int32_t> bwd_ids(fwd_ids.size(), text::Vocabulary::kPad);
  for (ad::Index i = 0; i < B; ++i) {
    const auto& s = sequences[static_cast<std::size_t>(i)];
    for (std::size_t t = 0; t < s.size(); ++t) {
      fwd_ids[t * static_cast<std::size_t>(B) + static_cast<std::size_t>(i)] = s[t];
      bwd_ids[t * static_cast<std::size_t>(B) + static_cast<std::size_t>(i)] = s[s.size() - 1 - t];
    }
  }
  const Tensor pq_f = fwd_.project(q_(fwd_ids));
  const Tensor ph_f = fwd_.project(h_(fwd_ids));
  const Tensor pq_b = bwd_.project(q_(bwd_ids));
  const Tensor ph_b = bwd_.project(h_(bwd_ids));

  // Both tables run through the same GRU pair as one batch of 2B rows:
  // rows [0, B) read q, rows [B, 2B) read h.
  auto run = [&](const nn::GruCell& cell, const Tensor& pq, const Tensor& ph) {
    std::vector<Tensor> states;
    states.reserve(T);
    Tensor h(Matrix::Zero(2 * B, hidden_dim_));
    for (std::size_t t = 0; t < T; ++t) {
      const auto start = static_cast<ad::Index>(t) * B;
      const Tensor parts[] = {ad::slice_rows(pq, start, B), ad::slice_rows(ph, start, B)};
      h = cell.step_projected(ad::concat_rows(parts), h);
      states.push_back(h);
    }
    return ad::concat_rows(states);
  };
  const Tensor F = run(fwd_, pq_f, ph_f);
  const Tensor Bk = run(bwd_, pq_b, ph_b);

  std::vector<ad::Index> idx_f;
  std::vector<ad::Index> idx_b;
  std::vector<std::vector<ad::Index>> segments(static_cast<std::size_t>(2 * B));
  for (ad::Index side = 0; side < 2; ++side) {
    for (ad::Index i = 0; i < B; ++i) {
      const ad::Index row = side * B + i;
      const auto len = static_cast<ad::Index>(sequences[static_cast<std::size_t>(i)].size());
      for (ad::Index p = 0; p < len; ++p) {
        segments[static_cast<std::size_t>(row)].push_back(static_cast<ad::Index>(idx_f.size()));
        idx_f.push_back(p * 2 * B + row);
        idx_b.push_back((len - 1 - p) * 2 * B + row);
      }
    }
  }
  const Tensor summed = ad::add(ad::gather_rows(F, idx_f), ad::gather_rows(Bk, idx_b));
  const Tensor pooled = ad::segment_max(summed, segments);
  return {ad::slice_rows(pooled, 0, B), ad::slice_rows(pooled, B, B)};
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> Stage1Model::encode_node(const text::TokenIds& tokens) const {
  ad::NoGradGuard guard;
  const text::TokenIds seqs[] = {tokens};
  auto [U, W] = encode(seqs);
  return {U.value().row(0).transpose(), W.value().row(0).transpose()};
}

Eigen::VectorXd arrival_probabilities(const Matrix& U, const Eigen::VectorXd& w) {
  if (U.cols() != w.size()) throw std::invalid_argument("arrival_probabilities: dimension mismatch");
  Eigen::VectorXd logits = U * w;
  const double m = logits.maxCoeff();
  Eigen::VectorXd p = (logits.array() - m).exp().matrix();
  return p / p.sum();
}

double arrival_probability(const Matrix& U, const Eigen::VectorXd& w, NodeIndex j) {
  return arrival_probabilities(U, w)(j);
}

std::vector<double> noise_distribution(const dag::WalkBatch& walks, std::size_t num_nodes, double power) {
  std::vector<double> counts(num_nodes, 0.0);
  for (const auto& path : walks.paths) {
    for (std::size_t j = 1; j < path.size(); ++j) counts[static_cast<std::size_t>(path[j])] += 1.0;
  }
  double total = 0.0;
  for (auto& c : counts) {
    c = std::pow(c, power);
    total += c;
  }
  if (total <= 0.0) {
    std::fill(counts.begin(), counts.end(), 1.0 / static_cast<double>(num_nodes));
    return counts;
  }
  for (auto& c : counts) c /= total;
  return counts;
}

namespace {

std::vector<NodeIndex> resolve_starts(const LossInputs& in) {
  if (!in.starts.empty()) return {in.starts.begin(), in.starts.end()};
  std::vector<NodeIndex> all(in.sequences.size());
  std::iota(all.begin(), all.end(), 0);
  return all;
}

const std::vector<NodeIndex>& walk(const dag::WalkBatch& walks, NodeIndex start, int r) {
  return walks.paths[static_cast<std::size_t>(start) * static_cast<std::size_t>(walks.walks_per_node) +
                     static_cast<std::size_t>(r)];
}

Tensor row_dot(const Tensor& a, const Tensor& b) {
  return ad::matmul(ad::mul(a, b), Tensor(Matrix::Ones(a.cols(), 1)));
}

}  // namespace

Tensor stage1_loss_full(const Stage1Model& model, const LossInputs& in) {
  if (in.walks == nullptr) throw std::invalid_argument("stage1_loss: walks required");
  const auto starts = resolve_starts(in);
  auto [U, W] = model.encode(in.sequences);
  const Tensor logits = ad::matmul_nt(ad::gather_rows(W, starts), U);
  const Tensor lsm = ad::log_softmax_rows(logits);
  std::vector<ad::Index> rows;
  std::vector<ad::Index> cols;
  for (std::size_t s = 0; s < starts.size(); ++s) {
    for (int r = 0; r < in.walks->walks_per_node; ++r) {
      const auto& path = walk(*in.walks, starts[s], r);
      for (std::size_t j = 1; j < path.size(); ++j) {
        rows.push_back(static_cast<ad::Index>(s));
        cols.push_back(path[j]);
      }
    }
  }
  return ad::negative_sum_entries(lsm, rows, cols);
}

Tensor stage1_loss_negative(const Stage1Model& model, const LossInputs& in, const std::vector<double>& noise,
                            int negatives, std::mt19937_64& rng) {
  if (in.walks == nullptr) throw std::invalid_argument("stage1_loss: walks required");
  const auto starts = resolve_starts(in);
  std::discrete_distribution<int> draw(noise.begin(), noise.end());

  std::vector<NodeIndex> pair_start;
  std::vector<NodeIndex> pair_target;
  for (NodeIndex s : starts) {
    for (int r = 0; r < in.walks->walks_per_node; ++r) {
      const auto& path = walk(*in.walks, s, r);
      for (std::size_t j = 1; j < path.size(); ++j) {
        pair_start.push_back(s);
        pair_target.push_back(path[j]);
      }
    }
  }
  std::vector<NodeIndex> neg_start;
  std::vector<NodeIndex> neg_node;
  for (NodeIndex s : pair_start) {
    for (int k = 0; k < negatives; ++k) {
      neg_start.push_back(s);
      neg_node.push_back(draw(rng));
    }
  }

  // Encode only the nodes that appear in this batch.
  std::unordered_map<NodeIndex, int32_t> local;
  std::vector<text::TokenIds> seqs;
  auto local_id = [&](NodeIndex v) {
    auto [it, inserted] = local.emplace(v, static_cast<int32_t>(seqs.size()));
    if (inserted) seqs.push_back(in.sequences[static_cast<std::size_t>(v)]);
    return it->second;
  };
  auto map_all = [&](const std::vector<NodeIndex>& nodes) {
    std::vector<int32_t> out;
    out.reserve(nodes.size());
    for (NodeIndex v : nodes) out.push_back(local_id(v));
    return out;
  };
  const auto ps = map_all(pair_start);
  const auto pt = map_all(pair_target);
  const auto ns = map_all(neg_start);
  const auto nn_ = map_all(neg_node);
  auto [U, W] = model.encode(seqs);

  const Tensor pos = ad::log_sigmoid(row_dot(ad::gather_rows(W, ps), ad::gather_rows(U, pt)));
  const Tensor neg = ad::log_sigmoid(ad::scale(row_dot(ad::gather_rows(W, ns), ad::gather_rows(U, nn_)), -1.0));
  return ad::scale(ad::add(ad::sum(pos), ad::sum(neg)), -1.0);
}

SideResult train_side(const std::vector<text::Tokens>& texts, const dag::WalkBatch& walks, const Stage1Config& cfg,
                      Stage1Model* model_out) {
  cfg.validate();
  const std::size_t N = texts.size();
  if (N == 0) throw std::invalid_argument("train_side: no nodes");
  if (walks.paths.size() != N * static_cast<std::size_t>(walks.walks_per_node)) {
    throw std::invalid_argument("train_side: walk batch does not match node count");
  }
  SideResult result;
  result.vocab = text::Vocabulary::build(texts, cfg.min_count);
  std::vector<text::TokenIds> seqs;
  seqs.reserve(N);
  for (const auto& t : texts) {
    if (t.empty()) throw std::invalid_argument("train_side: empty text");
    seqs.push_back(result.vocab.numericalize(text::truncate(t, text::kMaxDefinitionTokens)));
  }
  result.mode = cfg.resolve_mode(N);

  Stage1Model model(cfg, result.vocab.size(), cfg.seed);
  nn::Adam opt(model.store(), {.learning_rate = cfg.learning_rate});
  std::mt19937_64 rng(cfg.seed ^ 0x5eed5eedULL);
  const auto noise = result.mode == LossMode::kNegativeSampling
                         ? noise_distribution(walks, N, cfg.noise_power)
                         : std::vector<double>{};

  std::vector<NodeIndex> order(N);
  std::iota(order.begin(), order.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  int stalled = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < N; b += static_cast<std::size_t>(cfg.batch_nodes)) {
      const std::size_t e = std::min(N, b + static_cast<std::size_t>(cfg.batch_nodes));
      LossInputs in{seqs, &walks, std::span<const NodeIndex>(order.data() + b, e - b)};
      const Tensor loss = result.mode == LossMode::kFullSoftmax
                              ? stage1_loss_full(model, in)
                              : stage1_loss_negative(model, in, noise, cfg.negatives, rng);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        std::ostringstream msg;
        msg << "stage1 diverged: non-finite loss at epoch " << epoch << ", batch starting " << b
            << "; try a smaller learning rate (current " << cfg.learning_rate << ")";
        throw std::runtime_error(msg.str());
      }
      epoch_loss += value;
      loss.backward();
      opt.step();
    }
    result.epoch_losses.push_back(epoch_loss);
    log::debug("stage1 epoch ", epoch, " loss ", epoch_loss);
    if (epoch_loss < best * (1.0 - cfg.min_improvement)) {
      best = epoch_loss;
      stalled = 0;
    } else if (++stalled >= cfg.patience) {
      log::info("stage1 early stop after epoch ", epoch);
      break;
    }
  }

  {
    ad::NoGradGuard guard;
    auto [U, W] = model.encode(seqs);
    result.u = U.value();
    result.w = W.value();
  }
  if (model_out != nullptr) *model_out = std::move(model);
  return result;
}

Matrix NodeEmbeddingSet::gt() const {
  Matrix out(w.rows(), w.cols() + u.cols());
  out << w, u;
  return out;
}

Matrix NodeEmbeddingSet::gd() const {
  Matrix out(w_def.rows(), w_def.cols() + u_def.cols());
  out << w_def, u_def;
  return out;
}

Eigen::VectorXd NodeEmbeddingSet::gt(NodeIndex i) const {
  Eigen::VectorXd v(2 * hidden_dim);
  v << w.row(i).transpose(), u.row(i).transpose();
  return v;
}

Eigen::VectorXd NodeEmbeddingSet::gd(NodeIndex i) const {
  Eigen::VectorXd v(2 * hidden_dim);
  v << w_def.row(i).transpose(), u_def.row(i).transpose();
  return v;
}

namespace {

void write_row(std::ostream& out, const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  char buf[32];
  for (Eigen::Index k = 0; k < row.size(); ++k) {
    std::snprintf(buf, sizeof(buf), "%.17g", row(k));
    if (k > 0) out << ' ';
    out << buf;
  }
}

Eigen::RowVectorXd parse_row(const std::string& field, int expected) {
  std::istringstream in(field);
  Eigen::RowVectorXd row(expected);
  for (int k = 0; k < expected; ++k) {
    if (!(in >> row(k))) throw std::runtime_error("embedding file: short row");
  }
  std::string extra;
  if (in >> extra) throw std::runtime_error("embedding file: long row");
  return row;
}

}  // namespace

void save_embeddings(const NodeEmbeddingSet& set, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write embeddings: " + path.string());
  out << set.size() << ' ' << set.hidden_dim << '\n';
  const Matrix gt = set.gt();
  const Matrix gd = set.gd();
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out << set.term_ids[i] << '\t' << (set.bootstrap[i] ? 1 : 0) << '\t';
    write_row(out, set.w.row(r));
    out << '\t';
    write_row(out, set.u.row(r));
    out << '\t';
    write_row(out, gt.row(r));
    out << '\t';
    write_row(out, gd.row(r));
    out << '\n';
  }
}

NodeEmbeddingSet load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read embeddings: " + path.string());
  std::size_t n = 0;
  NodeEmbeddingSet set;
  std::string header;
  std::getline(in, header);
  std::istringstream hs(header);
  if (!(hs >> n >> set.hidden_dim) || set.hidden_dim < 1) throw std::runtime_error("embedding file: bad header");
  const int d = set.hidden_dim;
  set.w.resize(static_cast<Eigen::Index>(n), d);
  set.u.resize(static_cast<Eigen::Index>(n), d);
  set.w_def.resize(static_cast<Eigen::Index>(n), d);
  set.u_def.resize(static_cast<Eigen::Index>(n), d);
  std::string line;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw std::runtime_error("embedding file: missing rows");
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, '\t');) fields.push_back(f);
    if (fields.size() != 6) throw std::runtime_error("embedding file: expected 6 fields per row");
    const auto r = static_cast<Eigen::Index>(i);
    set.term_ids.push_back(fields[0]);
    set.bootstrap.push_back(fields[1] == "1");
    set.w.row(r) = parse_row(fields[2], d);
    set.u.row(r) = parse_row(fields[3], d);
    const auto gd = parse_row(fields[5], 2 * d);
    set.w_def.row(r) = gd.head(d);
    set.u_def.row(r) = gd.tail(d);
  }
  return set;
}

DefinitionSource definition_source(const dag::OntologyDag& g, std::span<const NodeIndex> curated,
                                   const std::map<NodeIndex, text::Tokens>& bootstrap) {
  DefinitionSource src;
  src.texts.resize(g.size());
  src.bootstrap.assign(g.size(), true);
  std::vector<bool> filled(g.size(), false);
  for (NodeIndex v : curated) {
    const auto& node = g.node(v);
    if (!node.definition_tokens || node.definition_tokens->empty()) {
      throw std::invalid_argument("definition_source: curated node without definition: " + node.term_id);
    }
    src.texts[static_cast<std::size_t>(v)] = *node.definition_tokens;
    src.bootstrap[static_cast<std::size_t>(v)] = false;
    filled[static_cast<std::size_t>(v)] = true;
  }
  for (const auto& [v, tokens] : bootstrap) {
    if (filled[static_cast<std::size_t>(v)]) continue;
    if (tokens.empty()) throw std::invalid_argument("definition_source: empty bootstrap definition");
    src.texts[static_cast<std::size_t>(v)] = tokens;
    filled[static_cast<std::size_t>(v)] = true;
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!filled[i]) {
      throw std::invalid_argument("definition_source: node has neither a curated nor a bootstrap definition: " +
                                  g.nodes()[i].term_id);
    }
  }
  return src;
}

Stage1Result train_stage1(const dag::OntologyDag& g, const dag::WalkBatch& walks, const DefinitionSource& defs,
                          const Stage1Config& cfg) {
  if (defs.texts.size() != g.size()) throw std::invalid_argument("train_stage1: definition count mismatch");
  std::vector<text::Tokens> terms;
  terms.reserve(g.size());
  for (const auto& n : g.nodes()) terms.push_back(text::truncate(n.terminology, text::kMaxTerminologyTokens));

  Stage1Result out;
  out.terminology = train_side(terms, walks, cfg);
  Stage1Config def_cfg = cfg;
  def_cfg.seed = cfg.seed + 1;
  out.definition = train_side(defs.texts, walks, def_cfg);

  auto& e = out.embeddings;
  e.hidden_dim = cfg.hidden_dim;
  for (const auto& n : g.nodes()) e.term_ids.push_back(n.term_id);
  e.w = out.terminology.w;
  e.u = out.terminology.u;
  e.w_def = out.definition.w;
  e.u_def = out.definition.u;
  e.bootstrap = defs.bootstrap;
  return out;
}

}  // namespace graphex::stage1
