#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "graphex/downstream.hpp"
#include "graphex/stats.hpp"

using namespace graphex;
using namespace graphex::downstream;

namespace {

double brute_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double wins = 0.0;
  for (double p : pos) {
    for (double n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  }
  return wins / static_cast<double>(pos.size() * neg.size());
}

// Precision/recall evaluated at every distinct score used as a threshold.
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

dag::TermNode term(int i, const std::string& name) {
  dag::TermNode t;
  t.index = i;
  t.term_id = "X:" + std::to_string(i);
  t.name = name;
  t.terminology = text::tokenize(name);
  return t;
}

// Chain 0 -> 1 -> ... with names prefix+i, except the anchor position.
dag::OntologyDag chain(const std::string& graph, int length, int anchor_index, const std::string& anchor) {
  std::vector<dag::TermNode> nodes;
  std::vector<std::pair<dag::NodeIndex, dag::NodeIndex>> edges;
  for (int i = 0; i < length; ++i) {
    nodes.push_back(term(i, i == anchor_index ? anchor : graph + " node " + std::to_string(i)));
    if (i > 0) edges.emplace_back(i - 1, i);
  }
  return dag::OntologyDag(graph, nodes, edges);
}

dag::OntologyDag random_tree(int n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<dag::TermNode> nodes;
  std::vector<std::pair<dag::NodeIndex, dag::NodeIndex>> edges;
  for (int i = 0; i < n; ++i) {
    nodes.push_back(term(i, "t " + std::to_string(i)));
    if (i > 0) edges.emplace_back(std::uniform_int_distribution<int>(0, i - 1)(rng), i);
  }
  return dag::OntologyDag("tree", nodes, edges);
}

}  // namespace

TEST_CASE("AUC and AP match pair enumeration on a hand-ranked list") {
  const std::vector<double> pos{0.9, 0.7, 0.4, 0.4};
  const std::vector<double> neg{0.8, 0.4, 0.3, 0.1};
  CHECK(roc_auc(pos, neg) == brute_auc(pos, neg));
  CHECK(roc_auc(pos, neg) == doctest::Approx(12.0 / 16.0));
  CHECK(average_precision(pos, neg) == doctest::Approx(brute_ap(pos, neg)).epsilon(1e-15));
  // Without ties AP is the mean precision at each positive's rank: ranks 1,3,4 of 0.9,0.8,0.7,0.6.
  CHECK(average_precision(std::vector<double>{0.9, 0.7, 0.6}, std::vector<double>{0.8}) ==
        doctest::Approx((1.0 + 2.0 / 3.0 + 3.0 / 4.0) / 3.0));
}

TEST_CASE("AUC and AP agree with the oracles on random tied scores") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> coarse(0, 6);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> pos(1 + trial % 7), neg(1 + trial % 5);
    for (auto& s : pos) s = coarse(rng);
    for (auto& s : neg) s = coarse(rng);
    CHECK(roc_auc(pos, neg) == doctest::Approx(brute_auc(pos, neg)).epsilon(1e-14));
    CHECK(average_precision(pos, neg) == doctest::Approx(brute_ap(pos, neg)).epsilon(1e-14));
  }
}

TEST_CASE("separable and shuffled scores") {
  std::vector<double> pos, neg;
  for (int i = 0; i < 50; ++i) {
    pos.push_back(10.0 + i);
    neg.push_back(i * 0.1);
  }
  CHECK(roc_auc(pos, neg) == 1.0);
  CHECK(average_precision(pos, neg) == 1.0);

  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> rp, rn;
  for (int i = 0; i < 500; ++i) {
    rp.push_back(u(rng));
    rn.push_back(u(rng));
  }
  const double auc = roc_auc(rp, rn);
  CHECK(auc >= 0.45);
  CHECK(auc <= 0.55);

  std::vector<double> tp, tn;
  for (double s : rp) tp.push_back(std::exp(3.0 * s) - 7.0);
  for (double s : rn) tn.push_back(std::exp(3.0 * s) - 7.0);
  CHECK(roc_auc(tp, tn) == doctest::Approx(auc).epsilon(1e-15));
}

TEST_CASE("link split partitions and negatives") {
  const auto g = random_tree(120, 4);
  const auto s = make_link_split(g, {.seed = 9});
  CHECK(s.train.size() + s.valid.size() + s.test.size() == g.edges().size());
  CHECK(s.train.size() == 101);
  CHECK(s.valid.size() == 5);
  CHECK(s.test.size() == 13);
  std::set<Edge> all;
  for (const auto* part : {&s.train, &s.valid, &s.test}) {
    for (const auto& e : *part) CHECK(all.insert(e).second);
  }
  CHECK(s.train_negative.size() == s.train.size());
  CHECK(s.valid_negative.size() == s.valid.size());
  CHECK(s.test_negative.size() == s.test.size());
  std::set<Edge> neg;
  for (const auto* part : {&s.train_negative, &s.valid_negative, &s.test_negative}) {
    for (const auto& [a, b] : *part) {
      CHECK(a != b);
      CHECK_FALSE(g.has_edge(a, b));
      CHECK_FALSE(g.has_edge(b, a));
      CHECK(neg.insert({std::min(a, b), std::max(a, b)}).second);
    }
  }
  const auto again = make_link_split(g, {.seed = 9});
  CHECK(again.test == s.test);
  CHECK(again.test_negative == s.test_negative);
}

TEST_CASE("link prediction evaluation") {
  const auto g = random_tree(60, 5);
  const auto s = make_link_split(g, {.seed = 1});
  NodeVectors emb(g.size(), Eigen::RowVectorXd::Zero(3));
  const auto r = link_prediction_eval(g, emb, s, Scorer::kDot);
  CHECK(r.auc == 0.5);
  emb[static_cast<std::size_t>(s.test.front().first)].resize(0);
  try {
    link_prediction_eval(g, emb, s, Scorer::kDot);
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find(g.node(s.test.front().first).term_id) != std::string::npos);
  }
  CHECK(scorer_from_string("distance") == Scorer::kDistance);
  CHECK_THROWS(scorer_from_string("cosine"));

  const auto shallow = train_shallow_embeddings(g, s.train, {.dim = 16, .epochs = 100, .seed = 2});
  CHECK(shallow.size() == g.size());
  const auto fitted = link_prediction_eval(g, shallow, s, Scorer::kDot);
  CHECK(std::isfinite(fitted.auc));
  CHECK(std::isfinite(fitted.ap));
}

TEST_CASE("alignment of a single DAG keeps depths") {
  const std::vector<dag::OntologyDag> dags{random_tree(30, 6)};
  const auto a = align_granularity(dags);
  CHECK(a.offsets == std::vector<int>{0});
  const auto depth = dag::depths(dags[0]);
  for (const auto& l : a.labels[0]) {
    CHECK(l.depth == depth[static_cast<std::size_t>(l.node)]);
    CHECK(l.level == std::clamp(l.depth, 1, 17));
  }
}

TEST_CASE("two chains sharing one anchor") {
  // Anchor sits at depth 2 in the reference chain and depth 5 in the other.
  const std::vector<dag::OntologyDag> dags{chain("a", 8, 1, "shared"), chain("b", 8, 4, "shared")};
  const auto a = align_granularity(dags);
  CHECK(a.offsets == std::vector<int>{0, -3});
  CHECK(a.residual == 0.0);
  CHECK(a.component[0] == a.component[1]);
  CHECK(a.labels[0][1].level == a.labels[1][4].level);
  CHECK(a.labels[1][0].level == 1);  // depth 1 - 3 clamps to 1
  CHECK(a.labels[1][7].level == 5);

  // The larger DAG is the reference regardless of order.
  const std::vector<dag::OntologyDag> swapped{chain("b", 8, 4, "shared"), chain("a", 9, 1, "shared")};
  CHECK(align_granularity(swapped).offsets == std::vector<int>{-3, 0});
}

TEST_CASE("anchor-free DAGs align independently") {
  const std::vector<dag::OntologyDag> dags{chain("a", 4, 0, "only a"), chain("b", 6, 0, "only b")};
  const auto a = align_granularity(dags);
  CHECK(a.offsets == std::vector<int>{0, 0});
  CHECK(a.component[0] != a.component[1]);
}

TEST_CASE("levels clamp to seventeen") {
  const std::vector<dag::OntologyDag> dags{chain("long", 25, 0, "root")};
  const auto a = align_granularity(dags);
  CHECK(a.labels[0][16].level == 17);
  CHECK(a.labels[0][24].level == 17);
}

TEST_CASE("aligned offsets are locally optimal") {
  // Three chains with conflicting anchors; the least-squares optimum is fractional.
  std::vector<dag::OntologyDag> dags;
  for (int d = 0; d < 3; ++d) {
    std::vector<dag::TermNode> nodes;
    std::vector<std::pair<dag::NodeIndex, dag::NodeIndex>> edges;
    for (int i = 0; i < 10 - d; ++i) {
      std::string name = "g" + std::to_string(d) + " " + std::to_string(i);
      if (i == 1 + 2 * d) name = "alpha";
      if (i == 3 + d * d) name = "beta";
      if (d > 0 && i == 2) name = "gamma";
      nodes.push_back(term(i, name));
      if (i > 0) edges.emplace_back(i - 1, i);
    }
    dags.emplace_back("g" + std::to_string(d), nodes, edges);
  }
  const auto a = align_granularity(dags);
  CHECK(a.offsets[0] == 0);
  CHECK(a.residual == alignment_residual(dags, a.offsets));
  for (std::size_t d = 1; d < dags.size(); ++d) {
    for (int step : {-1, 1}) {
      auto o = a.offsets;
      o[d] += step;
      CHECK(alignment_residual(dags, o) >= a.residual);
    }
  }
  // Exhaustive search over a window confirms the global optimum.
  double best = 1e300;
  for (int x = -8; x <= 8; ++x) {
    for (int y = -8; y <= 8; ++y) best = std::min(best, alignment_residual(dags, std::vector<int>{0, x, y}));
  }
  CHECK(a.residual == best);
}

TEST_CASE("spearman with average ranks") {
  CHECK(*stats::spearman(std::vector<double>{1, 2, 3, 4, 5}, std::vector<double>{5, 6, 7, 8, 7}) ==
        doctest::Approx(0.8207826816681233).epsilon(1e-12));
  CHECK(stats::average_ranks(std::vector<double>{3, 1, 3, 2}) == std::vector<double>{3.5, 1, 3.5, 2});
  CHECK_FALSE(stats::spearman(std::vector<double>{1, 2, 3}, std::vector<double>{4, 4, 4}));
}

namespace {

std::vector<LeveledEmbedding> leveled(int n, bool encode_level, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_int_distribution<int> lvl(1, 17);
  std::vector<LeveledEmbedding> out;
  for (int i = 0; i < n; ++i) {
    LeveledEmbedding e;
    e.level = lvl(rng);
    e.vector.resize(6);
    for (int k = 0; k < 5; ++k) e.vector(k) = noise(rng);
    e.vector(5) = encode_level ? e.level : noise(rng);
    out.push_back(e);
  }
  return out;
}

}  // namespace

TEST_CASE("relative granularity on separable embeddings") {
  const auto train = leveled(120, true, 1);
  const auto test = leveled(60, true, 2);
  const double acc = relative_granularity_eval(train, test, {.seed = 3}, 4000);
  MESSAGE("separable relative accuracy " << acc);
  CHECK(acc >= 0.99);
}

TEST_CASE("relative granularity with uninformative embeddings") {
  const auto train = leveled(80, false, 4);
  const auto test = leveled(80, false, 5);
  const double acc = relative_granularity_eval(train, test, {.epochs = 10, .seed = 3}, 2000);
  MESSAGE("null relative accuracy " << acc);
  CHECK(acc > 0.35);
  CHECK(acc < 0.65);
}

TEST_CASE("relative granularity needs distinct levels") {
  std::vector<LeveledEmbedding> same(5, {Eigen::RowVectorXd::Ones(3), 4});
  CHECK_THROWS(relative_granularity_eval(same, same));
}

TEST_CASE("absolute granularity memorizes one example per level") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<LeveledEmbedding> items;
  for (int level = 1; level <= 17; ++level) {
    LeveledEmbedding e;
    e.level = level;
    e.vector.resize(8);
    for (int k = 0; k < 8; ++k) e.vector(k) = noise(rng);
    items.push_back(e);
  }
  const auto r = absolute_granularity_eval(items, items, {.epochs = 200, .batch_size = 17, .learning_rate = 1e-2});
  CHECK(r.accuracy == 1.0);
  CHECK(r.spearman_defined);
  CHECK(r.spearman == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("constant predictions leave spearman undefined") {
  const auto train = leveled(20, true, 9);
  std::vector<LeveledEmbedding> test;
  for (int level = 1; level <= 5; ++level) test.push_back({Eigen::RowVectorXd::Ones(6), level});
  const auto r = absolute_granularity_eval(train, test, {.epochs = 5});
  CHECK_FALSE(r.spearman_defined);
  CHECK(r.spearman == 0.0);
}
