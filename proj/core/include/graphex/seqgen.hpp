#pragma once

// Shared plumbing for terminology -> definition generators: examples,
// decoding, the training loop, and checkpoints.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "graphex/autodiff.hpp"
#include "graphex/generation.hpp"
#include "graphex/nn.hpp"
#include "graphex/text.hpp"

namespace graphex::gen {

using ad::Tensor;

inline constexpr int kMaxDecodeLength = 64;

struct Example {
  int32_t node = -1;
  std::string term_id;
  text::Tokens terminology;      // surface tokens
  text::Tokens reference;        // surface tokens of the curated definition (may be empty)
  text::TokenIds source;         // terminology ids, non-empty
  text::TokenIds target;         // definition ids without BOS/EOS
  Eigen::RowVectorXd local;      // precomputed l_i; empty selects the trainable provider
  Eigen::RowVectorXd gt;         // empty when unused
  Eigen::RowVectorXd gd;
};

// Builds examples with ids from `vocab`; terminology truncated to 16 tokens,
// definitions to 63 so that EOS fits in 64 decoder positions.
Example make_example(int32_t node, const std::string& term_id, const text::Tokens& terminology,
                     const text::Tokens& definition, const text::Vocabulary& vocab);

struct DecodeOptions {
  int beam = 1;  // 1 = greedy
  int max_length = kMaxDecodeLength;
};

struct Decoded {
  text::TokenIds tokens;         // EOS excluded
  std::vector<double> logprobs;  // per emitted token, EOS included when emitted
  bool ended_with_eos = false;
};

// Next-token log-probabilities given the decoded prefix (without BOS).
using StepFunction = std::function<Eigen::VectorXd(const text::TokenIds& prefix)>;

// PAD and BOS are never emitted. Ties go to the lowest token index.
Decoded greedy_decode(const StepFunction& step, const DecodeOptions& opts);
// Keeps `beam` hypotheses ranked by log-probability / length.
Decoded beam_decode(const StepFunction& step, const DecodeOptions& opts);
Decoded decode_with(const StepFunction& step, const DecodeOptions& opts);

class Generator {
 public:
  virtual ~Generator() = default;

  virtual std::string kind() const = 0;
  virtual nn::ParameterStore& store() = 0;
  // Summed token negative log-likelihood plus any regularizer, one example.
  virtual Tensor loss(const Example& ex, bool training, std::mt19937_64& rng) = 0;
  virtual Decoded decode(const Example& ex, const DecodeOptions& opts) const = 0;
  // JSON object describing the architecture; enough to rebuild the model.
  virtual std::string config_json() const = 0;
  virtual void set_epoch(int epoch) { (void)epoch; }
};

struct TrainConfig {
  int epochs = 30;
  double learning_rate = 1e-3;
  int batch_size = 16;
  int patience = 5;  // epochs without validation improvement
  double clip_norm = 1.0;
  uint64_t seed = 1;
};

struct TrainLog {
  std::vector<double> train_loss;  // mean per example, training mode
  std::vector<double> valid_loss;  // mean per example, inference mode
  int best_epoch = -1;
};

// Mean per-example loss without dropout or sampling noise.
double evaluate_loss(Generator& model, std::span<const Example> examples, uint64_t seed = 0);

// Adam over shuffled minibatches; keeps the parameters of the epoch with the
// best validation loss (training loss when `valid` is empty). Throws on a
// non-finite loss.
TrainLog train_generator(Generator& model, std::span<const Example> train, std::span<const Example> valid,
                         const TrainConfig& cfg);

GenerationRecord to_record(const Example& ex, const Decoded& d, const text::Vocabulary& vocab,
                           const DecodeOptions& opts);

// Copies values of identically named and shaped parameters; returns the count.
std::size_t copy_matching(nn::ParameterStore& dst, const nn::ParameterStore& src);

}  // namespace graphex::gen
