#include "graphex/seqgen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "graphex/log.hpp"

namespace graphex::gen {

using text::Vocabulary;

Example make_example(int32_t node, const std::string& term_id, const text::Tokens& terminology,
                     const text::Tokens& definition, const text::Vocabulary& vocab) {
  if (terminology.empty()) throw std::invalid_argument("make_example: empty terminology for " + term_id);
  Example ex;
  ex.node = node;
  ex.term_id = term_id;
  ex.terminology = text::truncate(terminology, text::kMaxTerminologyTokens);
  ex.reference = definition;
  ex.source = vocab.numericalize(ex.terminology);
  ex.target = vocab.numericalize(text::truncate(definition, text::kMaxDefinitionTokens - 1));
  return ex;
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void block_reserved(Eigen::VectorXd& lp) {
  lp(Vocabulary::kPad) = kNegInf;
  lp(Vocabulary::kBos) = kNegInf;
}

}  // namespace

Decoded greedy_decode(const StepFunction& step, const DecodeOptions& opts) {
  Decoded out;
  while (static_cast<int>(out.tokens.size()) < opts.max_length) {
    Eigen::VectorXd lp = step(out.tokens);
    block_reserved(lp);
    Eigen::Index best = 0;
    lp.maxCoeff(&best);  // first maximum on ties
    out.logprobs.push_back(lp(best));
    if (best == Vocabulary::kEos) {
      out.ended_with_eos = true;
      break;
    }
    out.tokens.push_back(static_cast<int32_t>(best));
  }
  return out;
}

Decoded beam_decode(const StepFunction& step, const DecodeOptions& opts) {
  if (opts.beam < 1) throw std::invalid_argument("beam width must be positive");
  struct Hyp {
    text::TokenIds tokens;
    std::vector<double> logprobs;
    double total = 0.0;
    bool eos = false;
  };
  auto normalized = [](const Hyp& h) {
    const auto len = static_cast<double>(h.logprobs.size());
    return len == 0.0 ? 0.0 : h.total / len;
  };
  std::vector<Hyp> alive{Hyp{}};
  std::vector<Hyp> finished;
  auto best_of = [&](const std::vector<Hyp>& hs) {
    double b = -std::numeric_limits<double>::infinity();
    for (const auto& h : hs) b = std::max(b, normalized(h));
    return b;
  };
  for (int t = 0; t < opts.max_length && !alive.empty(); ++t) {
    // Stop once enough hypotheses have ended and none still open ranks above them.
    if (static_cast<int>(finished.size()) >= opts.beam && best_of(finished) >= best_of(alive)) break;
    struct Candidate {
      std::size_t hyp;
      int32_t token;
      double total;
      double lp;
    };
    std::vector<Candidate> cands;
    for (std::size_t h = 0; h < alive.size(); ++h) {
      Eigen::VectorXd lp = step(alive[h].tokens);
      block_reserved(lp);
      for (Eigen::Index k = 0; k < lp.size(); ++k) {
        if (std::isinf(lp(k)) && lp(k) < 0) continue;
        cands.push_back({h, static_cast<int32_t>(k), alive[h].total + lp(k), lp(k)});
      }
    }
    const auto keep = std::min<std::size_t>(cands.size(), static_cast<std::size_t>(opts.beam));
    // Candidates are enumerated in (hypothesis, token) order, so a stable
    // ranking breaks ties toward the lower token index.
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Candidate& a, const Candidate& b) { return a.total > b.total; });
    std::vector<Hyp> next;
    for (std::size_t c = 0; c < keep; ++c) {
      Hyp h = alive[cands[c].hyp];
      h.total = cands[c].total;
      h.logprobs.push_back(cands[c].lp);
      if (cands[c].token == Vocabulary::kEos) {
        h.eos = true;
        finished.push_back(std::move(h));
      } else {
        h.tokens.push_back(cands[c].token);
        next.push_back(std::move(h));
      }
    }
    alive = std::move(next);
  }
  for (auto& h : alive) finished.push_back(std::move(h));
  std::size_t best = 0;
  for (std::size_t i = 1; i < finished.size(); ++i) {
    if (normalized(finished[i]) > normalized(finished[best])) best = i;
  }
  Decoded out;
  out.tokens = finished[best].tokens;
  out.logprobs = finished[best].logprobs;
  out.ended_with_eos = finished[best].eos;
  return out;
}

Decoded decode_with(const StepFunction& step, const DecodeOptions& opts) {
  return opts.beam <= 1 ? greedy_decode(step, opts) : beam_decode(step, opts);
}

double evaluate_loss(Generator& model, std::span<const Example> examples, uint64_t seed) {
  if (examples.empty()) return 0.0;
  ad::NoGradGuard guard;
  std::mt19937_64 rng(seed);
  double total = 0.0;
  for (const auto& ex : examples) total += model.loss(ex, false, rng).item();
  return total / static_cast<double>(examples.size());
}

TrainLog train_generator(Generator& model, std::span<const Example> train, std::span<const Example> valid,
                         const TrainConfig& cfg) {
  if (train.empty()) throw std::invalid_argument("train_generator: no training examples");
  if (cfg.batch_size < 1) throw std::invalid_argument("train_generator: batch_size must be positive");
  auto& store = model.store();
  nn::Adam opt(store, {.learning_rate = cfg.learning_rate, .clip_norm = cfg.clip_norm});
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  TrainLog log;
  double best = std::numeric_limits<double>::infinity();
  std::vector<ad::Matrix> snapshot;
  auto take_snapshot = [&] {
    snapshot.clear();
    for (const auto& p : store.parameters()) snapshot.push_back(p.tensor.value());
  };
  take_snapshot();
  int stalled = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    model.set_epoch(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0.0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      const double inv = 1.0 / static_cast<double>(e - b);
      for (std::size_t i = b; i < e; ++i) {
        const Tensor l = model.loss(train[order[i]], true, rng);
        const double v = l.item();
        if (!std::isfinite(v)) {
          std::ostringstream msg;
          msg << model.kind() << " diverged: non-finite loss at epoch " << epoch << " on " << train[order[i]].term_id
              << "; lower the learning rate (current " << cfg.learning_rate << ")";
          throw std::runtime_error(msg.str());
        }
        epoch_total += v;
        ad::scale(l, inv).backward();
      }
      opt.step();
    }
    log.train_loss.push_back(epoch_total / static_cast<double>(train.size()));
    const double monitored = valid.empty() ? evaluate_loss(model, train, cfg.seed) : evaluate_loss(model, valid, cfg.seed);
    log.valid_loss.push_back(monitored);
    log::debug(model.kind(), " epoch ", epoch, " train ", log.train_loss.back(), " monitored ", monitored);
    if (monitored < best) {
      best = monitored;
      log.best_epoch = epoch;
      take_snapshot();
      stalled = 0;
    } else if (++stalled >= cfg.patience) {
      log::info(model.kind(), " early stop after epoch ", epoch);
      break;
    }
  }
  for (std::size_t i = 0; i < snapshot.size(); ++i) store.parameters()[i].tensor.mutable_value() = snapshot[i];
  return log;
}

GenerationRecord to_record(const Example& ex, const Decoded& d, const text::Vocabulary& vocab,
                           const DecodeOptions& opts) {
  GenerationRecord r;
  r.node = ex.node;
  r.term_id = ex.term_id;
  r.terminology = text::detokenize(ex.terminology);
  r.reference = ex.reference;
  r.generated = vocab.denumericalize(d.tokens);
  r.token_logprobs = d.logprobs;
  r.decode_mode = opts.beam <= 1 ? "greedy" : "beam" + std::to_string(opts.beam);
  r.ended_with_eos = d.ended_with_eos;
  return r;
}

std::size_t copy_matching(nn::ParameterStore& dst, const nn::ParameterStore& src) {
  std::size_t copied = 0;
  for (auto& p : dst.parameters()) {
    for (const auto& q : src.parameters()) {
      if (q.name == p.name && q.tensor.rows() == p.tensor.rows() && q.tensor.cols() == p.tensor.cols()) {
        p.tensor.mutable_value() = q.tensor.value();
        ++copied;
        break;
      }
    }
  }
  return copied;
}

}  // namespace graphex::gen
