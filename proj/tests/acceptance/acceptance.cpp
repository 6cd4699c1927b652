// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "gradcheck.hpp"
#include "graphex/baselines.hpp"
#include "graphex/downstream.hpp"
#include "graphex/log.hpp"
#include "graphex/metrics.hpp"
#include "graphex/obo.hpp"
#include "graphex/pipeline.hpp"
#include "graphex/stage1.hpp"
#include "graphex/stage2.hpp"
#include "graphex/synthetic.hpp"

using namespace graphex;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = GRAPHEX_FIXTURE_DIR;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

text::Tokens words(const std::string& s) {
  text::Tokens out;
  std::istringstream in(s);
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// 1. Metric parity against the reference scorer table and the hand cases.
Outcome metric_parity() {
  Outcome o;
  std::ifstream in(kFixtures / "metric_pairs.tsv");
  std::string line;
  std::getline(in, line);
  double worst = 0.0;
  int rows = 0;
  while (std::getline(in, line)) {
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, '\t');) cols.push_back(c);
    if (cols.size() != 7) continue;
    ++rows;
    const auto cand = words(cols[0]);
    const auto ref = words(cols[1]);
    for (int n = 1; n <= 4; ++n) {
      worst = std::max(worst, std::abs(metrics::bleu_n(cand, ref, n) - std::stod(cols[static_cast<std::size_t>(1 + n)])));
    }
    worst = std::max(worst, std::abs(metrics::meteor(cand, ref) - std::stod(cols[6])));
  }
  o.require(rows == 50, "fixture has " + std::to_string(rows) + " pairs");
  o.require(worst <= 1e-3, "max deviation " + fmt("%.3g", worst));
  o.require(std::abs(metrics::bleu_n(words("the cat"), words("the cat sat"), 1) - std::exp(-0.5)) < 1e-15 &&
                std::abs(std::exp(-0.5) - 0.6065) < 1e-4,
            "BLEU1 brevity case");
  o.require(metrics::meteor(words("cell"), words("cell")) == 0.5, "METEOR single token");
  o.require(metrics::meteor(words("a b c d"), words("a b c d")) == 0.9921875, "METEOR four tokens");
  if (o.pass) o.detail = "50 pairs, max deviation " + fmt("%.2e", worst) + ", hand cases exact";
  return o;
}

dag::OntologyDag chain(int n) {
  std::vector<dag::TermNode> nodes;
  std::vector<std::pair<dag::NodeIndex, dag::NodeIndex>> edges;
  for (int i = 0; i < n; ++i) {
    dag::TermNode t;
    t.index = i;
    t.term_id = "N:" + std::to_string(i);
    t.name = "node " + std::to_string(i);
    t.terminology = {"node", "t" + std::to_string(i)};
    t.definition = "def";
    t.definition_tokens = text::Tokens{"def", "d" + std::to_string(i)};
    nodes.push_back(t);
    if (i > 0) edges.emplace_back(i - 1, i);
  }
  return dag::OntologyDag("chain", nodes, edges);
}

std::vector<text::TokenIds> token_sequences(int n, int vocab, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<text::TokenIds> seqs;
  for (int i = 0; i < n; ++i) {
    text::TokenIds s;
    const int len = 1 + static_cast<int>(rng() % 4);
    for (int k = 0; k < len; ++k) s.push_back(4 + static_cast<int32_t>(rng() % static_cast<uint64_t>(vocab - 4)));
    seqs.push_back(s);
  }
  return seqs;
}

stage1::Stage1Config stage1_toy(int dim) {
  stage1::Stage1Config cfg;
  cfg.word_dim = dim;
  cfg.hidden_dim = dim;
  cfg.walks = {4, 4, 7};
  cfg.seed = 3;
  return cfg;
}

Eigen::RowVectorXd gaussian_row(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  Eigen::RowVectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = d(rng);
  return v;
}

gen::TransformerConfig toy_transformer(int dim, int layers) {
  gen::TransformerConfig c;
  c.encoder_layers = layers;
  c.decoder_layers = layers;
  c.dim = dim;
  c.heads = 2;
  c.ff_dim = 2 * dim;
  c.dropout = 0.0;
  return c;
}

// 2. Finite-difference checks of both training losses.
Outcome gradient_checks() {
  Outcome o;
  double worst = 0.0;
  const auto g = chain(5);
  for (int dim : {8, 32}) {
    auto cfg = stage1_toy(dim);
    const auto walks = dag::sample_walks(g, cfg.walks);
    stage1::Stage1Model m(cfg, 9, 11);
    const auto seqs = token_sequences(5, 9, 12);
    worst = std::max(worst, testing::max_relative_error(testing::check_gradients(
                                [&] { return stage1::stage1_loss_full(m, {seqs, &walks, {}}); }, m.store())));
    const auto noise = stage1::noise_distribution(walks, 5, 0.75);
    worst = std::max(worst, testing::max_relative_error(testing::check_gradients(
                                [&] {
                                  std::mt19937_64 draws(99);
                                  return stage1::stage1_loss_negative(m, {seqs, &walks, {}}, noise, 5, draws);
                                },
                                m.store())));
  }
  std::mt19937_64 rng(4);
  stage2::Stage2Config sc;
  sc.transformer = toy_transformer(16, 2);
  sc.seed = 5;
  auto model = stage2::make_model(sc, 5, 8, 5);
  std::vector<gen::Example> batch(2);
  for (int i = 0; i < 2; ++i) {
    batch[i].node = i;
    batch[i].term_id = "T:" + std::to_string(i);
    batch[i].source = {4, 4};
    batch[i].target = i == 0 ? text::TokenIds{4, 4, 4} : text::TokenIds{4};
    batch[i].gt = gaussian_row(8, rng);
    batch[i].gd = gaussian_row(8, rng);
  }
  batch[0].local = gaussian_row(5, rng);
  worst = std::max(worst, testing::max_relative_error(
                              testing::check_gradients([&] { return stage2::stage2_loss(*model, batch); }, model->store())));
  o.require(worst < 1e-4, "max relative error " + fmt("%.3g", worst));
  if (o.pass) o.detail = "max relative error " + fmt("%.2e", worst);
  return o;
}

// 3. Arrival probabilities and the zero-initialized loss.
Outcome softmax_suite() {
  Outcome o;
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 3.0);
  ad::Matrix R(40, 5);
  for (Eigen::Index i = 0; i < R.size(); ++i) R.data()[i] = n(rng);
  Eigen::VectorXd v(5);
  for (Eigen::Index i = 0; i < 5; ++i) v(i) = n(rng);
  const auto p = stage1::arrival_probabilities(R, v);
  o.require(std::abs(p.sum() - 1.0) < 1e-9, "sum " + fmt("%.17g", p.sum()));

  const ad::Matrix logits = (R * v).transpose();
  const ad::Matrix shifted = ad::softmax_rows(ad::Tensor((logits.array() + 57.0).matrix())).value();
  o.require((shifted.transpose() - p).cwiseAbs().maxCoeff() < 1e-12, "shift changed probabilities");

  const auto uniform = stage1::arrival_probabilities(ad::Matrix::Zero(7, 3), Eigen::VectorXd::Zero(3));
  o.require((uniform.array() - 1.0 / 7.0).abs().maxCoeff() < 1e-15, "zero init is not uniform");

  const auto g = chain(9);
  const auto cfg = stage1_toy(8);
  const auto walks = dag::sample_walks(g, cfg.walks);
  stage1::Stage1Model m(cfg, 12, 1);
  for (auto& param : m.store().parameters()) param.tensor.mutable_value().setZero();
  const double loss = stage1::stage1_loss_full(m, {token_sequences(9, 12, 1), &walks, {}}).item();
  const double targets = 9.0 * cfg.walks.walks_per_node * (cfg.walks.walk_length - 1);
  const double expected = targets * std::log(9.0);
  o.require(std::abs(loss - expected) <= 1e-12 * expected, "zero-init loss " + fmt("%.17g", loss));
  if (o.pass) o.detail = "sum-1 error " + fmt("%.1e", std::abs(p.sum() - 1.0)) + ", zero-init loss " + fmt("%.6f", loss);
  return o;
}

struct ModelScores {
  double transformer = 0, full = 0, no_tg = 0, no_dg = 0;
};

ModelScores directional_run(uint64_t seed) {
  const auto g = synth::tree_dag({});
  const auto split = dag::make_split(g, seed);
  const auto vocab = stage2::experiment_vocabulary(g, split, 2);

  stage1::Stage1Config s1;
  s1.word_dim = 32;
  s1.hidden_dim = 32;
  s1.walks.seed = seed;
  s1.seed = 13 + seed;
  s1.epochs = 30;
  s1.learning_rate = 1e-2;
  gen::TransformerConfig tc = toy_transformer(64, 2);
  tc.heads = 4;
  tc.dropout = 0.1;
  gen::TrainConfig tr;
  tr.epochs = 60;
  tr.learning_rate = 1e-3;
  tr.batch_size = 8;
  tr.patience = 10;
  tr.seed = seed;

  const auto walks = dag::sample_walks(g, s1.walks);
  std::vector<text::Tokens> terms;
  for (const auto& node : g.nodes()) terms.push_back(node.terminology);
  const auto term_side = stage1::train_side(terms, walks, s1);

  const auto train_ex = stage2::examples_for(g, split.train, vocab);
  const auto valid_ex = stage2::examples_for(g, split.valid, vocab);
  gen::BaselineConfig bc;
  bc.transformer = tc;
  bc.seed = seed;
  auto plain = gen::make_baseline(bc, vocab.size());
  gen::train_generator(*plain, train_ex, valid_ex, tr);
  std::vector<GenerationRecord> records;
  for (const auto& ex : stage2::examples_for(g, split.test, vocab)) {
    records.push_back(gen::to_record(ex, plain->decode(ex, {}), vocab, {}));
  }
  ModelScores s;
  s.transformer = 100.0 * metrics::score_run("Transformer", records).bleu[0];

  std::vector<dag::NodeIndex> held(split.valid);
  held.insert(held.end(), split.test.begin(), split.test.end());
  const auto boot = gen::bootstrap_definitions(*plain, vocab, g, held);
  const auto defs = stage1::definition_source(g, split.train, boot.definitions);
  auto s1d = s1;
  s1d.seed = s1.seed + 1;
  const auto def_side = stage1::train_side(defs.texts, walks, s1d);
  stage1::NodeEmbeddingSet emb;
  emb.hidden_dim = s1.hidden_dim;
  for (const auto& node : g.nodes()) emb.term_ids.push_back(node.term_id);
  emb.w = term_side.w;
  emb.u = term_side.u;
  emb.w_def = def_side.w;
  emb.u_def = def_side.u;
  emb.bootstrap = defs.bootstrap;

  const stage2::Stage2Data data{&g, split, &vocab, &emb, nullptr};
  for (auto [tg, dg, out] : {std::tuple{true, true, &s.full}, {false, true, &s.no_tg}, {true, false, &s.no_dg}}) {
    stage2::Stage2Config c;
    c.transformer = tc;
    c.use_tg = tg;
    c.use_dg = dg;
    c.seed = seed;
    *out = 100.0 * stage2::run_ablation(data, c, tr).report.bleu[0];
  }
  return s;
}

// 4. Ordering of full model, ablations and the plain Transformer on the synthetic tree.
Outcome directional() {
  Outcome o;
  int wins = 0;
  std::string detail;
  for (uint64_t seed = 1; seed <= 3; ++seed) {
    const auto s = directional_run(seed);
    const auto between = [&](double x) { return (x >= s.transformer && x <= s.full) || x == s.full; };
    const bool ok = s.full >= s.transformer + 2.0 && between(s.no_tg) && between(s.no_dg);
    wins += ok ? 1 : 0;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%sseed %d: transformer %.2f full %.2f no-tg %.2f no-dg %.2f%s",
                  detail.empty() ? "" : "; ", static_cast<int>(seed), s.transformer, s.full, s.no_tg, s.no_dg,
                  ok ? "" : " (order violated)");
    detail += buf;
  }
  o.require(wins >= 2, std::to_string(wins) + "/3 seeds");
  o.detail = (o.pass ? std::to_string(wins) + "/3 seeds; " : o.detail + "; ") + detail;
  return o;
}

// 5. Every generator memorizes five pairs.
Outcome memorization() {
  Outcome o;
  std::mt19937_64 rng(8);
  std::vector<gen::Example> data;
  const std::vector<std::pair<text::TokenIds, text::TokenIds>> pairs{
      {{4, 5}, {10, 11, 12}}, {{6}, {13, 14}}, {{7, 8}, {15, 10, 16, 17}}, {{9}, {11, 18}}, {{5, 6, 7}, {19, 12, 14}}};
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    gen::Example ex;
    ex.node = static_cast<dag::NodeIndex>(i);
    ex.term_id = "M:" + std::to_string(i);
    ex.source = pairs[i].first;
    ex.target = pairs[i].second;
    ex.gt = gaussian_row(8, rng);
    ex.gd = gaussian_row(8, rng);
    data.push_back(ex);
  }
  constexpr int kVocab = 20;
  gen::TrainConfig tc;
  tc.epochs = 400;
  tc.learning_rate = 1e-2;
  tc.batch_size = 5;
  tc.patience = tc.epochs;

  std::vector<std::pair<std::string, std::unique_ptr<gen::Generator>>> models;
  for (auto kind : {gen::BaselineKind::kSeq2Seq, gen::BaselineKind::kCvae, gen::BaselineKind::kTransformer}) {
    gen::BaselineConfig bc;
    bc.kind = kind;
    bc.word_dim = 16;
    bc.hidden_dim = 32;
    bc.latent_dim = kind == gen::BaselineKind::kCvae ? 4 : 0;
    bc.transformer = toy_transformer(32, 1);
    bc.seed = 3;
    models.emplace_back(gen::to_string(kind), gen::make_baseline(bc, kVocab));
  }
  stage2::Stage2Config sc;
  sc.transformer = toy_transformer(32, 1);
  sc.seed = 3;
  models.emplace_back("graphex", stage2::make_model(sc, kVocab, 8, 0));

  std::string detail;
  for (auto& [name, m] : models) {
    gen::train_generator(*m, data, {}, tc);
    const double loss = gen::evaluate_loss(*m, data);
    bool exact = true;
    for (const auto& ex : data) exact = exact && m->decode(ex, {}).tokens == ex.target;
    o.require(loss < 0.01 && exact, name + (exact ? "" : " decode mismatch") + " loss " + fmt("%.2e", loss));
    detail += (detail.empty() ? "" : ", ") + name + " " + fmt("%.1e", loss);
  }
  if (o.pass) o.detail = "losses " + detail;
  return o;
}

double brute_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double wins = 0.0;
  for (double p : pos) {
    for (double n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  }
  return wins / static_cast<double>(pos.size() * neg.size());
}

double brute_ap(const std::vector<double>& pos, const std::vector<double>& neg) {
  std::set<double, std::greater<>> thresholds(pos.begin(), pos.end());
  thresholds.insert(neg.begin(), neg.end());
  double ap = 0.0, prev = 0.0;
  for (double t : thresholds) {
    const double tp = static_cast<double>(std::count_if(pos.begin(), pos.end(), [&](double s) { return s >= t; }));
    const double fp = static_cast<double>(std::count_if(neg.begin(), neg.end(), [&](double s) { return s >= t; }));
    if (tp + fp == 0.0) continue;
    const double recall = tp / static_cast<double>(pos.size());
    ap += (recall - prev) * tp / (tp + fp);
    prev = recall;
  }
  return ap;
}

// 6. Link-prediction ranking metrics.
Outcome link_prediction() {
  Outcome o;
  const std::vector<std::pair<std::vector<double>, std::vector<double>>> hand{
      {{0.9, 0.7, 0.4, 0.4}, {0.8, 0.4, 0.3, 0.1}},
      {{0.9, 0.7, 0.6}, {0.8}},
      {{1, 1, 2}, {1, 2, 2, 0}},
      {{0.5}, {0.5}},
  };
  for (const auto& [pos, neg] : hand) {
    o.require(std::abs(downstream::roc_auc(pos, neg) - brute_auc(pos, neg)) < 1e-14, "AUC differs from enumeration");
    o.require(std::abs(downstream::average_precision(pos, neg) - brute_ap(pos, neg)) < 1e-14,
              "AP differs from enumeration");
  }
  std::vector<double> pos, neg;
  for (int i = 0; i < 50; ++i) {
    pos.push_back(10.0 + i);
    neg.push_back(0.1 * i);
  }
  o.require(downstream::roc_auc(pos, neg) == 1.0 && downstream::average_precision(pos, neg) == 1.0,
            "separable scores not perfect");

  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> scores(1000);
  for (auto& s : scores) s = u(rng);
  std::vector<int> labels(1000, 0);
  std::fill(labels.begin(), labels.begin() + 500, 1);
  std::shuffle(labels.begin(), labels.end(), rng);
  std::vector<double> sp, sn;
  for (std::size_t i = 0; i < scores.size(); ++i) (labels[i] ? sp : sn).push_back(scores[i]);
  const double auc = downstream::roc_auc(sp, sn);
  o.require(auc >= 0.45 && auc <= 0.55, "shuffled AUC " + fmt("%.4f", auc));
  if (o.pass) o.detail = "hand fixtures exact, separable 1/1, shuffled AUC " + fmt("%.4f", auc);
  return o;
}

dag::OntologyDag anchored_chain(const std::string& graph, int length, int anchor_index, const std::string& anchor) {
  std::vector<dag::TermNode> nodes;
  std::vector<std::pair<dag::NodeIndex, dag::NodeIndex>> edges;
  for (int i = 0; i < length; ++i) {
    dag::TermNode t;
    t.index = i;
    t.term_id = graph + ":" + std::to_string(i);
    t.name = i == anchor_index ? anchor : graph + " node " + std::to_string(i);
    t.terminology = text::tokenize(t.name);
    nodes.push_back(t);
    if (i > 0) edges.emplace_back(i - 1, i);
  }
  return dag::OntologyDag(graph, nodes, edges);
}

// 7. Depth alignment and granularity classifiers.
Outcome granularity() {
  Outcome o;
  const std::vector<dag::OntologyDag> dags{anchored_chain("a", 8, 1, "shared"), anchored_chain("b", 8, 4, "shared")};
  const auto depth_a = dag::depths(dags[0]);
  for (int i = 0; i < 8; ++i) o.require(depth_a[static_cast<std::size_t>(i)] == i + 1, "chain depth");
  const auto a = downstream::align_granularity(dags);
  o.require(a.offsets == std::vector<int>{0, -3}, "offsets");
  o.require(a.residual == 0.0, "residual");
  for (int i = 0; i < 8; ++i) {
    o.require(a.labels[1][static_cast<std::size_t>(i)].level == std::max(1, i + 1 - 3), "aligned level");
  }

  std::mt19937_64 rng(1);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_int_distribution<int> lvl(1, 17);
  auto leveled = [&](int n) {
    std::vector<downstream::LeveledEmbedding> out;
    for (int i = 0; i < n; ++i) {
      downstream::LeveledEmbedding e;
      e.level = lvl(rng);
      e.vector.resize(6);
      for (int k = 0; k < 5; ++k) e.vector(k) = noise(rng);
      e.vector(5) = e.level;
      out.push_back(e);
    }
    return out;
  };
  const auto train = leveled(120);
  const auto test = leveled(60);
  const double rel = downstream::relative_granularity_eval(train, test, {.seed = 3}, 4000);
  o.require(rel >= 0.99, "relative accuracy " + fmt("%.4f", rel));

  std::vector<downstream::LeveledEmbedding> items;
  for (int level = 1; level <= 17; ++level) {
    downstream::LeveledEmbedding e;
    e.level = level;
    e.vector.resize(8);
    for (int k = 0; k < 8; ++k) e.vector(k) = noise(rng);
    items.push_back(e);
  }
  const auto abs = downstream::absolute_granularity_eval(items, items, {.epochs = 200, .batch_size = 17, .learning_rate = 1e-2});
  o.require(abs.accuracy == 1.0, "absolute accuracy " + fmt("%.4f", abs.accuracy));
  o.require(abs.spearman_defined && std::abs(abs.spearman - 1.0) < 1e-12, "absolute spearman " + fmt("%.4f", abs.spearman));
  if (o.pass) o.detail = "offsets {0,-3}, relative " + fmt("%.4f", rel) + ", absolute 1.0 / spearman 1.0";
  return o;
}

// 8. OBO round trip, merging and corpus statistics on the fixtures.
Outcome ingestion() {
  Outcome o;
  const fs::path dir = kFixtures / "obo";
  std::map<std::string, std::set<std::string>> defined_inputs;  // graph -> defined term ids
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.path().extension() != ".obo") continue;
    const auto graph = obo::normalize_graph_name(entry.path().filename().string());
    const auto db = obo::database_from_string(entry.path().parent_path().filename().string());
    const auto first = obo::parse_obo_file(entry.path(), graph, db);
    std::ostringstream canon;
    obo::write_obo(canon, first.terms);
    std::istringstream in(canon.str());
    o.require(obo::parse_obo(in, graph, db).terms == first.terms, "round trip of " + entry.path().filename().string());
    for (const auto& t : first.terms) {
      if (t.definition) defined_inputs[graph].insert(t.term_id);
    }
  }

  const auto result = obo::ingest_directory(dir);
  o.require(result.graphs.size() < result.input_graph_count, "no duplicate-named graphs merged");
  std::size_t lost = 0;
  double term_words = 0, def_words = 0;
  std::size_t nodes = 0, defined = 0;
  bool stats_match = true;
  for (const auto& g : result.graphs) {
    std::map<std::string, const obo::RawTerm*> by_id;
    for (const auto& t : g.terms) by_id[t.term_id] = &t;
    for (const auto& id : defined_inputs[g.manifest.graph_name]) {
      if (!by_id.contains(id) || !by_id[id]->definition) ++lost;
    }
    const auto d = dag::build_dag(g.manifest.graph_name, g.terms);
    const auto s = dag::corpus_stats(d);
    double tw = 0, dw = 0;
    std::size_t nd = 0;
    for (const auto& node : d.nodes()) {
      tw += static_cast<double>(words(node.name).size());
      if (node.definition) {
        dw += static_cast<double>(words(*node.definition).size());
        ++nd;
      }
    }
    stats_match = stats_match && s.mean_terminology_words == tw / static_cast<double>(d.size()) &&
                  s.mean_definition_words == dw / static_cast<double>(nd);
    term_words += tw;
    def_words += dw;
    nodes += d.size();
    defined += nd;
  }
  o.require(lost == 0, std::to_string(lost) + " defined terms lost in merging");
  o.require(stats_match, "mean word counts differ from direct counts");
  if (o.pass) {
    o.detail = std::to_string(result.input_graph_count) + " inputs merged into " + std::to_string(result.graphs.size()) +
               " graphs, means " + fmt("%.3f", term_words / static_cast<double>(nodes)) + " / " +
               fmt("%.3f", def_words / static_cast<double>(defined)) + " words";
  }
  return o;
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), root).generic_string();
    // The ledger records wall-clock step times.
    if (rel == "ledger.json") continue;
    out[rel] = pipeline::file_sha256(entry.path());
  }
  return out;
}

// 9. Two pipeline runs with the same config give identical artifacts.
Outcome determinism() {
  Outcome o;
  const fs::path root = fs::temp_directory_path() / "graphex_acceptance_determinism";
  fs::remove_all(root);
  std::istringstream in(R"(
input.synthetic_nodes = 200
stage1.word_dim = 16
stage1.hidden_dim = 16
stage1.epochs = 3
transformer.encoder_layers = 1
transformer.decoder_layers = 1
transformer.dim = 32
transformer.heads = 2
transformer.ff_dim = 64
train.epochs = 3
baseline.word_dim = 16
baseline.hidden_dim = 16
cvae.latent_dim = 4
)");
  auto cfg = pipeline::parse_config(in);
  cfg.output_dir = root / "run";
  ::unsetenv("GRAPHEX_OUTPUT_ROOT");
  pipeline::run_pipeline(cfg);
  const auto first = snapshot(cfg.output_dir);
  fs::remove_all(cfg.output_dir);
  const auto ledger = pipeline::run_pipeline(cfg);
  const auto second = snapshot(cfg.output_dir);
  o.require(ledger.executed() == ledger.steps.size(), "second run reused cached steps");
  o.require(!first.empty() && first == second, "artifacts differ between runs");
  if (!o.pass) {
    for (const auto& [rel, hash] : first) {
      if (!second.contains(rel) || second.at(rel) != hash) o.detail += " " + rel;
    }
  } else {
    o.detail = std::to_string(first.size()) + " artifacts byte-identical";
  }
  fs::remove_all(root);
  return o;
}

}  // namespace

int main() {
  if (std::getenv("GRAPHEX_LOG") == nullptr) ::setenv("GRAPHEX_LOG", "warn", 1);
  const std::vector<std::tuple<int, const char*, double, std::function<Outcome()>>> criteria{
      {1, "metric oracle parity", 5, metric_parity},
      {2, "gradient checks", 60, gradient_checks},
      {3, "softmax and normalization", 0, softmax_suite},
      {4, "directional ablation ordering", 1800, directional},
      {5, "memorization", 300, memorization},
      {6, "link-prediction harness", 0, link_prediction},
      {7, "granularity machinery", 0, granularity},
      {8, "ingestion fidelity", 0, ingestion},
      {9, "pipeline determinism", 0, determinism},
  };
  int failures = 0;
  for (const auto& [id, name, budget, run] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (budget > 0 && secs >= budget) o.require(false, "took " + fmt("%.1f", secs) + " s, budget " + fmt("%.0f", budget) + " s");
    failures += o.pass ? 0 : 1;
    std::printf("criterion %d %s: %s (%.1f s) %s\n", id, name, o.pass ? "PASS" : "FAIL", secs, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
