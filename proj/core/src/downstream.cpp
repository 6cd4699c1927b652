#include "graphex/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

#include "graphex/autodiff.hpp"
#include "graphex/log.hpp"
#include "graphex/nn.hpp"
#include "graphex/stats.hpp"

namespace graphex::downstream {

double roc_auc(std::span<const double> positive, std::span<const double> negative) {
  if (positive.empty() || negative.empty()) throw std::invalid_argument("roc_auc: need positives and negatives");
  std::vector<double> all(positive.begin(), positive.end());
  all.insert(all.end(), negative.begin(), negative.end());
  const auto ranks = stats::average_ranks(all);
  const double p = static_cast<double>(positive.size());
  const double n = static_cast<double>(negative.size());
  const double rank_sum = std::accumulate(ranks.begin(), ranks.begin() + static_cast<std::ptrdiff_t>(positive.size()), 0.0);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

double average_precision(std::span<const double> positive, std::span<const double> negative) {
  if (positive.empty()) throw std::invalid_argument("average_precision: need positives");
  std::vector<std::pair<double, bool>> items;
  for (double s : positive) items.emplace_back(s, true);
  for (double s : negative) items.emplace_back(s, false);
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  const double total = static_cast<double>(positive.size());
  double tp = 0.0, fp = 0.0, prev_recall = 0.0, ap = 0.0;
  for (std::size_t i = 0; i < items.size();) {
    std::size_t j = i;
    for (; j < items.size() && items[j].first == items[i].first; ++j) (items[j].second ? tp : fp) += 1.0;
    const double recall = tp / total;
    ap += (recall - prev_recall) * tp / (tp + fp);
    prev_recall = recall;
    i = j;
  }
  return ap;
}

LinkSplit make_link_split(const dag::OntologyDag& g, const LinkSplitConfig& cfg) {
  if (cfg.train_fraction <= 0.0 || cfg.valid_fraction < 0.0 || cfg.train_fraction + cfg.valid_fraction >= 1.0) {
    throw std::invalid_argument("make_link_split: fractions must leave a non-empty test share");
  }
  const auto n = static_cast<NodeIndex>(g.size());
  std::vector<Edge> edges(g.edges().begin(), g.edges().end());
  std::sort(edges.begin(), edges.end());
  const std::size_t possible = static_cast<std::size_t>(n) * static_cast<std::size_t>(n - 1) / 2;
  if (edges.size() < 3 || possible < 2 * edges.size()) {
    throw std::invalid_argument("make_link_split: graph " + g.name() + " is too small or too dense to sample negatives");
  }
  std::mt19937_64 rng(cfg.seed);
  std::shuffle(edges.begin(), edges.end(), rng);
  const auto m = edges.size();
  const auto n_train = static_cast<std::size_t>(std::floor(cfg.train_fraction * static_cast<double>(m)));
  const auto n_valid = static_cast<std::size_t>(std::floor(cfg.valid_fraction * static_cast<double>(m)));
  LinkSplit s;
  s.seed = cfg.seed;
  s.train.assign(edges.begin(), edges.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.valid.assign(edges.begin() + static_cast<std::ptrdiff_t>(n_train),
                 edges.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
  s.test.assign(edges.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), edges.end());

  std::set<Edge> used;
  std::uniform_int_distribution<NodeIndex> pick(0, n - 1);
  auto sample = [&](std::size_t count) {
    std::vector<Edge> out;
    while (out.size() < count) {
      const NodeIndex a = pick(rng);
      const NodeIndex b = pick(rng);
      if (a == b || g.has_edge(a, b) || g.has_edge(b, a)) continue;
      if (!used.insert({std::min(a, b), std::max(a, b)}).second) continue;
      out.emplace_back(a, b);
    }
    return out;
  };
  s.train_negative = sample(s.train.size());
  s.valid_negative = sample(s.valid.size());
  s.test_negative = sample(s.test.size());
  return s;
}

const char* to_string(Scorer s) { return s == Scorer::kDot ? "dot" : "distance"; }

Scorer scorer_from_string(const std::string& s) {
  if (s == "dot") return Scorer::kDot;
  if (s == "distance") return Scorer::kDistance;
  throw std::invalid_argument("unknown scorer '" + s + "' (expected dot or distance)");
}

double link_score(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b, Scorer scorer) {
  if (a.size() != b.size()) throw std::invalid_argument("link_score: dimension mismatch");
  return scorer == Scorer::kDot ? a.dot(b) : -(a - b).norm();
}

RankingScores link_prediction_eval(const dag::OntologyDag& g, const NodeVectors& embeddings, const LinkSplit& split,
                                   Scorer scorer) {
  if (embeddings.size() != g.size()) throw std::invalid_argument("link_prediction_eval: one vector per node required");
  auto score = [&](const Edge& e) {
    for (NodeIndex v : {e.first, e.second}) {
      if (embeddings[static_cast<std::size_t>(v)].size() == 0) {
        throw std::runtime_error("link_prediction_eval: no embedding for node " + g.node(v).term_id);
      }
    }
    return link_score(embeddings[static_cast<std::size_t>(e.first)], embeddings[static_cast<std::size_t>(e.second)],
                      scorer);
  };
  std::vector<double> pos, neg;
  for (const auto& e : split.test) pos.push_back(score(e));
  for (const auto& e : split.test_negative) neg.push_back(score(e));
  return {roc_auc(pos, neg), average_precision(pos, neg)};
}

NodeVectors train_shallow_embeddings(const dag::OntologyDag& g, std::span<const Edge> train, const ShallowConfig& cfg) {
  const auto n = static_cast<NodeIndex>(g.size());
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> init(0.0, 0.1);
  ad::Matrix x(n, cfg.dim);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = init(rng);
  std::vector<Edge> order(train.begin(), train.end());
  std::uniform_int_distribution<NodeIndex> pick(0, n - 1);
  auto update = [&](NodeIndex a, NodeIndex b, double label) {
    const double p = 1.0 / (1.0 + std::exp(-x.row(a).dot(x.row(b))));
    const double gscale = cfg.learning_rate * (label - p);
    const Eigen::RowVectorXd xa = x.row(a);
    x.row(a) += gscale * x.row(b);
    x.row(b) += gscale * xa;
  };
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (const auto& [a, b] : order) {
      update(a, b, 1.0);
      NodeIndex c = pick(rng);
      while (c == a || g.has_edge(a, c) || g.has_edge(c, a)) c = pick(rng);
      update(a, c, 0.0);
    }
  }
  NodeVectors out(static_cast<std::size_t>(n));
  for (NodeIndex i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = x.row(i);
  return out;
}

namespace {

struct AnchorEquation {
  std::size_t a, b;
  int delta;  // depth_b - depth_a; wants offset_a - offset_b == delta
};

std::vector<AnchorEquation> anchor_equations(std::span<const dag::OntologyDag> dags,
                                             const std::vector<std::vector<int>>& depth) {
  std::map<std::string, std::map<std::size_t, int>> shallowest;
  for (std::size_t d = 0; d < dags.size(); ++d) {
    for (const auto& node : dags[d].nodes()) {
      const int dv = depth[d][static_cast<std::size_t>(node.index)];
      auto [it, inserted] = shallowest[node.name].emplace(d, dv);
      if (!inserted) it->second = std::min(it->second, dv);
    }
  }
  std::vector<AnchorEquation> eqs;
  for (const auto& [name, per_dag] : shallowest) {
    for (auto i = per_dag.begin(); i != per_dag.end(); ++i) {
      for (auto j = std::next(i); j != per_dag.end(); ++j) eqs.push_back({i->first, j->first, j->second - i->second});
    }
  }
  return eqs;
}

double residual_of(const std::vector<AnchorEquation>& eqs, std::span<const int> offsets) {
  double r = 0.0;
  for (const auto& e : eqs) {
    const double v = static_cast<double>(offsets[e.a] - offsets[e.b] - e.delta);
    r += v * v;
  }
  return r;
}

std::vector<std::vector<int>> all_depths(std::span<const dag::OntologyDag> dags) {
  std::vector<std::vector<int>> out;
  for (const auto& g : dags) out.push_back(dag::depths(g));
  return out;
}

}  // namespace

double alignment_residual(std::span<const dag::OntologyDag> dags, std::span<const int> offsets) {
  if (offsets.size() != dags.size()) throw std::invalid_argument("alignment_residual: one offset per DAG required");
  return residual_of(anchor_equations(dags, all_depths(dags)), offsets);
}

Alignment align_granularity(std::span<const dag::OntologyDag> dags) {
  if (dags.empty()) throw std::invalid_argument("align_granularity: no DAGs");
  const std::size_t k = dags.size();
  const auto depth = all_depths(dags);
  const auto eqs = anchor_equations(dags, depth);

  std::vector<std::size_t> parent(k);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& e : eqs) parent[find(e.a)] = find(e.b);

  Alignment out;
  out.offsets.assign(k, 0);
  out.component.assign(k, -1);
  std::map<std::size_t, std::vector<std::size_t>> members;
  for (std::size_t d = 0; d < k; ++d) members[find(d)].push_back(d);
  int next_id = 0;
  for (auto& [root, group] : members) {
    for (std::size_t d : group) out.component[d] = next_id;
    ++next_id;
    std::size_t ref = group.front();
    for (std::size_t d : group) {
      if (dags[d].size() > dags[ref].size()) ref = d;
    }
    if (group.size() == 1) continue;
    // Normal equations of the anchor least-squares problem with `ref` pinned.
    std::map<std::size_t, Eigen::Index> slot;
    for (std::size_t d : group) {
      if (d != ref) slot.emplace(d, static_cast<Eigen::Index>(slot.size()));
    }
    Eigen::MatrixXd lap = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(slot.size()), static_cast<Eigen::Index>(slot.size()));
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(slot.size()));
    for (const auto& e : eqs) {
      if (find(e.a) != root) continue;
      const bool ha = e.a != ref, hb = e.b != ref;
      if (ha) {
        lap(slot[e.a], slot[e.a]) += 1.0;
        rhs(slot[e.a]) += e.delta;
      }
      if (hb) {
        lap(slot[e.b], slot[e.b]) += 1.0;
        rhs(slot[e.b]) -= e.delta;
      }
      if (ha && hb) {
        lap(slot[e.a], slot[e.b]) -= 1.0;
        lap(slot[e.b], slot[e.a]) -= 1.0;
      }
    }
    const Eigen::VectorXd real = lap.ldlt().solve(rhs);
    for (const auto& [d, i] : slot) out.offsets[d] = static_cast<int>(std::lround(real(i)));
    double best = residual_of(eqs, out.offsets);
    for (bool improved = true; improved;) {
      improved = false;
      for (const auto& [d, i] : slot) {
        for (int step : {-1, 1}) {
          out.offsets[d] += step;
          const double r = residual_of(eqs, out.offsets);
          if (r < best) {
            best = r;
            improved = true;
          } else {
            out.offsets[d] -= step;
          }
        }
      }
    }
  }
  if (members.size() > 1 && k > 1) {
    log::info("granularity alignment: ", members.size(), " anchor-connected components aligned independently");
  }
  out.residual = residual_of(eqs, out.offsets);
  out.labels.resize(k);
  for (std::size_t d = 0; d < k; ++d) {
    for (const auto& node : dags[d].nodes()) {
      const int dv = depth[d][static_cast<std::size_t>(node.index)];
      out.labels[d].push_back({d, node.index, node.term_id, dv, std::clamp(dv + out.offsets[d], kMinLevel, kMaxLevel)});
    }
  }
  return out;
}

namespace {

// One-hidden-layer ReLU classifier over standardized features.
class Mlp {
 public:
  Mlp(Eigen::Index in, int classes, const MlpConfig& cfg)
      : rng_(cfg.seed),
        hidden_(store_, "hidden", in, cfg.hidden, rng_),
        out_(store_, "out", cfg.hidden, classes, rng_),
        cfg_(cfg) {}

  void fit(const ad::Matrix& x, const std::vector<int32_t>& y) {
    mean_ = x.colwise().mean();
    scale_ = ((x.rowwise() - mean_).array().square().colwise().mean()).sqrt();
    for (Eigen::Index j = 0; j < scale_.size(); ++j) {
      if (scale_(j) < 1e-12) scale_(j) = 1.0;
    }
    const ad::Matrix z = standardize(x);
    nn::Adam opt(store_, {.learning_rate = cfg_.learning_rate});
    std::vector<Eigen::Index> order(static_cast<std::size_t>(z.rows()));
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng_);
      for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg_.batch_size)) {
        const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg_.batch_size));
        ad::Matrix xb(static_cast<Eigen::Index>(e - b), z.cols());
        std::vector<int32_t> yb;
        for (std::size_t i = b; i < e; ++i) {
          xb.row(static_cast<Eigen::Index>(i - b)) = z.row(order[i]);
          yb.push_back(y[static_cast<std::size_t>(order[i])]);
        }
        const auto loss = ad::scale(ad::cross_entropy_sum(logits(ad::Tensor(xb)), yb), 1.0 / static_cast<double>(e - b));
        loss.backward();
        opt.step();
      }
    }
  }

  std::vector<int32_t> predict(const ad::Matrix& x) const {
    ad::NoGradGuard guard;
    const ad::Matrix l = logits(ad::Tensor(standardize(x))).value();
    std::vector<int32_t> out;
    for (Eigen::Index i = 0; i < l.rows(); ++i) {
      Eigen::Index best = 0;
      l.row(i).maxCoeff(&best);
      out.push_back(static_cast<int32_t>(best));
    }
    return out;
  }

 private:
  ad::Matrix standardize(const ad::Matrix& x) const {
    return (x.rowwise() - mean_).array().rowwise() / scale_.array();
  }
  ad::Tensor logits(const ad::Tensor& x) const { return out_(ad::relu(hidden_(x))); }

  std::mt19937_64 rng_;
  nn::ParameterStore store_;
  nn::Linear hidden_;
  nn::Linear out_;
  MlpConfig cfg_;
  Eigen::RowVectorXd mean_;
  Eigen::RowVectorXd scale_;
};

Eigen::Index common_dim(std::span<const LeveledEmbedding> a, std::span<const LeveledEmbedding> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("granularity: empty train or test set");
  const Eigen::Index d = a.front().vector.size();
  for (auto set : {a, b}) {
    for (const auto& e : set) {
      if (e.vector.size() != d) throw std::invalid_argument("granularity: inconsistent embedding dimensions");
      if (e.level < kMinLevel || e.level > kMaxLevel) throw std::invalid_argument("granularity: level outside [1, 17]");
    }
  }
  return d;
}

std::vector<std::pair<std::size_t, std::size_t>> level_pairs(std::span<const LeveledEmbedding> items,
                                                             std::size_t max_pairs, std::mt19937_64& rng) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < items.size(); ++i) {
    for (std::size_t j = i + 1; j < items.size(); ++j) {
      if (items[i].level != items[j].level) pairs.emplace_back(i, j);
    }
  }
  if (pairs.size() > max_pairs) {
    std::shuffle(pairs.begin(), pairs.end(), rng);
    pairs.resize(max_pairs);
  }
  return pairs;
}

}  // namespace

double relative_granularity_eval(std::span<const LeveledEmbedding> train, std::span<const LeveledEmbedding> test,
                                 const MlpConfig& cfg, std::size_t max_pairs) {
  const Eigen::Index d = common_dim(train, test);
  std::mt19937_64 rng(cfg.seed ^ 0x5bd1e995ULL);
  const auto train_pairs = level_pairs(train, max_pairs, rng);
  const auto test_pairs = level_pairs(test, max_pairs, rng);
  if (train_pairs.empty() || test_pairs.empty()) {
    throw std::invalid_argument("relative_granularity_eval: every sentence has the same level");
  }
  ad::Matrix x(static_cast<Eigen::Index>(2 * train_pairs.size()), 2 * d);
  std::vector<int32_t> y;
  Eigen::Index r = 0;
  for (const auto& [i, j] : train_pairs) {
    x.row(r) << train[i].vector, train[j].vector;
    y.push_back(train[i].level > train[j].level ? 1 : 0);
    ++r;
    x.row(r) << train[j].vector, train[i].vector;
    y.push_back(train[j].level > train[i].level ? 1 : 0);
    ++r;
  }
  Mlp mlp(2 * d, 2, cfg);
  mlp.fit(x, y);
  ad::Matrix xt(static_cast<Eigen::Index>(test_pairs.size()), 2 * d);
  for (std::size_t p = 0; p < test_pairs.size(); ++p) {
    xt.row(static_cast<Eigen::Index>(p)) << test[test_pairs[p].first].vector, test[test_pairs[p].second].vector;
  }
  const auto pred = mlp.predict(xt);
  std::size_t correct = 0;
  for (std::size_t p = 0; p < test_pairs.size(); ++p) {
    const int truth = test[test_pairs[p].first].level > test[test_pairs[p].second].level ? 1 : 0;
    if (pred[p] == truth) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test_pairs.size());
}

AbsoluteResult absolute_granularity_eval(std::span<const LeveledEmbedding> train,
                                         std::span<const LeveledEmbedding> test, const MlpConfig& cfg) {
  const Eigen::Index d = common_dim(train, test);
  ad::Matrix x(static_cast<Eigen::Index>(train.size()), d);
  std::vector<int32_t> y;
  for (std::size_t i = 0; i < train.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = train[i].vector;
    y.push_back(train[i].level - kMinLevel);
  }
  Mlp mlp(d, kMaxLevel - kMinLevel + 1, cfg);
  mlp.fit(x, y);
  ad::Matrix xt(static_cast<Eigen::Index>(test.size()), d);
  for (std::size_t i = 0; i < test.size(); ++i) xt.row(static_cast<Eigen::Index>(i)) = test[i].vector;
  const auto pred = mlp.predict(xt);
  AbsoluteResult out;
  std::vector<double> p, t;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const int level = pred[i] + kMinLevel;
    if (level == test[i].level) ++correct;
    p.push_back(level);
    t.push_back(test[i].level);
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
  const auto rho = stats::spearman(p, t);
  out.spearman_defined = rho.has_value();
  out.spearman = rho.value_or(0.0);
  return out;
}

}  // namespace graphex::downstream
