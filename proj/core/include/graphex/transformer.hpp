#pragma once

#include <memory>
#include <string>
#include <vector>

#include "graphex/seqgen.hpp"

namespace graphex::gen {

struct TransformerConfig {
  int encoder_layers = 3;
  int decoder_layers = 3;
  int dim = 768;
  int heads = 8;
  int ff_dim = 2048;
  double dropout = 0.1;

  void validate() const;
};

// Encoder-decoder transformer whose encoder input may be preceded by prefix
// slots holding projected conditioning vectors: l_i, then g^t_i, then g^d_i.
// With every slot disabled it is the plain Transformer baseline.
struct PrefixConfig {
  bool use_local = false;
  bool use_tg = false;
  bool use_dg = false;
  int local_dim = 0;   // > 0 when precomputed l_i vectors are supplied
  int global_dim = 0;  // width of g^t and g^d (2 * d_h)

  int slots() const { return int(use_local) + int(use_tg) + int(use_dg); }
};

class TransformerGenerator : public Generator {
 public:
  TransformerGenerator(std::string kind, const TransformerConfig& cfg, const PrefixConfig& prefix, int vocab_size,
                       uint64_t seed);

  std::string kind() const override { return kind_; }
  nn::ParameterStore& store() override { return store_; }
  Tensor loss(const Example& ex, bool training, std::mt19937_64& rng) override;
  Decoded decode(const Example& ex, const DecodeOptions& opts) const override;
  std::string config_json() const override;

  const TransformerConfig& config() const { return cfg_; }
  const PrefixConfig& prefix() const { return prefix_; }
  int vocab_size() const { return vocab_size_; }

  // Prefix rows (slots x dim) followed by terminology positions.
  Tensor encoder_input(const Example& ex, bool training, std::mt19937_64* rng) const;
  Tensor encode(const Example& ex, bool training, std::mt19937_64* rng) const;
  // Logits (T x |C|) for decoder inputs BOS + prefix.
  Tensor decoder_logits(const Tensor& memory, const text::TokenIds& decoder_input, bool training,
                        std::mt19937_64* rng) const;
  // Trainable local provider: mean of the terminology token embeddings.
  Tensor trainable_local(const text::TokenIds& source) const;

  const nn::Linear& output_projection() const { return out_; }

 private:
  struct EncoderLayer {
    nn::LayerNorm ln1, ln2;
    nn::MultiHeadAttention attn;
    nn::FeedForward ff;
  };
  struct DecoderLayer {
    nn::LayerNorm ln1, ln2, ln3;
    nn::MultiHeadAttention self_attn, cross_attn;
    nn::FeedForward ff;
  };

  Tensor embed(const text::TokenIds& ids, ad::Index position_offset) const;
  Tensor maybe_dropout(const Tensor& x, bool training, std::mt19937_64* rng) const;

  std::string kind_;
  TransformerConfig cfg_;
  PrefixConfig prefix_;
  int vocab_size_;
  uint64_t seed_;
  nn::ParameterStore store_;
  nn::Embedding tokens_;
  nn::Linear local_lookup_proj_, local_trainable_proj_, tg_proj_, dg_proj_;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  nn::LayerNorm enc_norm_, dec_norm_;
  nn::Linear out_;
};

}  // namespace graphex::gen
