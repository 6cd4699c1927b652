#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <string>

#include "graphex/dag.hpp"
#include "graphex/seqgen.hpp"
#include "graphex/transformer.hpp"

namespace graphex::gen {

// GRU encoder-decoder with multiplicative (bilinear) attention:
//   score(s_t, h_j) = s_t A h_j^T, context c_t = softmax(score) H,
//   output = W_o tanh(W_c [c_t ; s_t]).
class Seq2SeqGenerator : public Generator {
 public:
  Seq2SeqGenerator(int vocab_size, int word_dim, int hidden_dim, uint64_t seed);

  std::string kind() const override { return "seq2seq"; }
  nn::ParameterStore& store() override { return store_; }
  Tensor loss(const Example& ex, bool training, std::mt19937_64& rng) override;
  Decoded decode(const Example& ex, const DecodeOptions& opts) const override;
  std::string config_json() const override;

  // Attention weights (decoder steps x source positions) under teacher forcing.
  ad::Matrix attention_weights(const Example& ex) const;

 protected:
  struct Encoded {
    Tensor states;  // Ts x H
    Tensor last;    // 1 x H
  };
  Encoded encode(const text::TokenIds& ids) const;
  // Returns logits (T x |C|); `attention` receives the weights when non-null.
  Tensor decode_teacher(const Encoded& enc, const Tensor& s0, const text::TokenIds& input, Tensor* attention) const;
  Decoded decode_from(const Encoded& enc, const Tensor& s0, const DecodeOptions& opts) const;

  int vocab_size_;
  int word_dim_;
  int hidden_dim_;
  uint64_t seed_;
  nn::ParameterStore store_;
  nn::Embedding emb_;
  nn::GruCell enc_;
  nn::GruCell dec_;
  nn::Linear attn_;
  nn::Linear combine_;
  nn::Linear out_;
};

struct CvaeOptions {
  int latent_dim = 64;
  int anneal_epochs = 10;          // KL weight rises linearly to 1 over these epochs
  double fixed_kl_weight = -1.0;   // >= 0 overrides the schedule
  bool deterministic_latent = false;  // z = posterior mean during training
  uint64_t latent_seed = 7;        // prior sampling at generation
};

// Seq2Seq plus a Gaussian latent: prior p(z|x), posterior q(z|x,y), and the
// decoder state initialized as h_x + W_z z.
class CvaeGenerator : public Seq2SeqGenerator {
 public:
  CvaeGenerator(int vocab_size, int word_dim, int hidden_dim, const CvaeOptions& opts, uint64_t seed);

  std::string kind() const override { return "cvae"; }
  Tensor loss(const Example& ex, bool training, std::mt19937_64& rng) override;
  Decoded decode(const Example& ex, const DecodeOptions& opts) const override;
  std::string config_json() const override;
  void set_epoch(int epoch) override { epoch_ = epoch; }

  double kl_weight() const;
  // KL(q || p) for one example, from posterior and prior statistics.
  Tensor kl_term(const Example& ex) const;
  CvaeOptions& options() { return opts_; }

 private:
  struct Gaussian {
    Tensor mean;
    Tensor logvar;
  };
  Gaussian prior(const Tensor& hx) const;
  Gaussian posterior(const Tensor& hx, const Tensor& hy) const;

  CvaeOptions opts_;
  int epoch_ = 0;
  nn::Linear prior_;
  nn::Linear posterior_;
  nn::Linear latent_;
};

// Gaussian KL(q || p) summed over dimensions.
Tensor gaussian_kl(const Tensor& mean_q, const Tensor& logvar_q, const Tensor& mean_p, const Tensor& logvar_p);

enum class BaselineKind { kSeq2Seq, kCvae, kTransformer };

const char* to_string(BaselineKind kind);
BaselineKind baseline_kind_from_string(const std::string& s);

struct BaselineConfig {
  BaselineKind kind = BaselineKind::kTransformer;
  int word_dim = 768;
  int hidden_dim = 768;
  int latent_dim = 0;  // required (> 0) iff kind == kCvae
  TransformerConfig transformer{};
  uint64_t seed = 1;

  void validate() const;
};

std::unique_ptr<Generator> make_baseline(const BaselineConfig& cfg, int vocab_size);

// Rebuilds a generator from its config_json().
std::unique_ptr<Generator> generator_from_config(const std::string& config_json);
void save_generator(const std::filesystem::path& path, Generator& model);
std::unique_ptr<Generator> load_generator(const std::filesystem::path& path);

struct BootstrapResult {
  std::map<dag::NodeIndex, text::Tokens> definitions;
  std::set<dag::NodeIndex> fallback;  // decoder produced nothing; terminology used instead
};

// Greedy-decodes a placeholder definition for each node in `nodes` from its
// terminology with a transformer trained on the other nodes' pairs.
BootstrapResult bootstrap_definitions(const Generator& model, const text::Vocabulary& vocab,
                                      const dag::OntologyDag& g, std::span<const dag::NodeIndex> nodes);

}  // namespace graphex::gen
