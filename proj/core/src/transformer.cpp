#include "graphex/transformer.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace graphex::gen {

using ad::Matrix;
using text::Vocabulary;

void TransformerConfig::validate() const {
  if (encoder_layers < 0 || decoder_layers < 1) throw std::invalid_argument("transformer: bad layer counts");
  if (dim < 1 || heads < 1 || dim % heads != 0) throw std::invalid_argument("transformer: dim must divide into heads");
  if (ff_dim < 1) throw std::invalid_argument("transformer: ff_dim must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("transformer: dropout must be in [0, 1)");
}

TransformerGenerator::TransformerGenerator(std::string kind, const TransformerConfig& cfg, const PrefixConfig& prefix,
                                           int vocab_size, uint64_t seed)
    : kind_(std::move(kind)), cfg_(cfg), prefix_(prefix), vocab_size_(vocab_size), seed_(seed) {
  cfg_.validate();
  if ((prefix_.use_tg || prefix_.use_dg) && prefix_.global_dim < 1) {
    throw std::invalid_argument("transformer: global_dim required when g^t or g^d is used");
  }
  std::mt19937_64 rng(seed);
  const int d = cfg_.dim;
  tokens_ = nn::Embedding(store_, "tokens", vocab_size, d, rng, 1.0 / std::sqrt(static_cast<double>(d)));
  if (prefix_.use_local) {
    local_trainable_proj_ = nn::Linear(store_, "prefix.local_trainable", d, d, rng);
    if (prefix_.local_dim > 0) local_lookup_proj_ = nn::Linear(store_, "prefix.local_lookup", prefix_.local_dim, d, rng);
  }
  if (prefix_.use_tg) tg_proj_ = nn::Linear(store_, "prefix.tg", prefix_.global_dim, d, rng);
  if (prefix_.use_dg) dg_proj_ = nn::Linear(store_, "prefix.dg", prefix_.global_dim, d, rng);
  for (int l = 0; l < cfg_.encoder_layers; ++l) {
    const std::string p = "enc" + std::to_string(l);
    encoder_.push_back({nn::LayerNorm(store_, p + ".ln1", d), nn::LayerNorm(store_, p + ".ln2", d),
                        nn::MultiHeadAttention(store_, p + ".attn", d, cfg_.heads, rng),
                        nn::FeedForward(store_, p + ".ff", d, cfg_.ff_dim, rng)});
  }
  for (int l = 0; l < cfg_.decoder_layers; ++l) {
    const std::string p = "dec" + std::to_string(l);
    decoder_.push_back({nn::LayerNorm(store_, p + ".ln1", d), nn::LayerNorm(store_, p + ".ln2", d),
                        nn::LayerNorm(store_, p + ".ln3", d),
                        nn::MultiHeadAttention(store_, p + ".self", d, cfg_.heads, rng),
                        nn::MultiHeadAttention(store_, p + ".cross", d, cfg_.heads, rng),
                        nn::FeedForward(store_, p + ".ff", d, cfg_.ff_dim, rng)});
  }
  enc_norm_ = nn::LayerNorm(store_, "enc.norm", d);
  dec_norm_ = nn::LayerNorm(store_, "dec.norm", d);
  out_ = nn::Linear(store_, "out", d, vocab_size, rng);
}

Tensor TransformerGenerator::maybe_dropout(const Tensor& x, bool training, std::mt19937_64* rng) const {
  if (!training || cfg_.dropout == 0.0 || rng == nullptr) return x;
  return ad::dropout(x, cfg_.dropout, *rng);
}

Tensor TransformerGenerator::embed(const text::TokenIds& ids, ad::Index position_offset) const {
  const auto n = static_cast<ad::Index>(ids.size());
  const Matrix pe = nn::positional_encoding(position_offset + n, cfg_.dim).bottomRows(n);
  return ad::add(ad::scale(tokens_(ids), std::sqrt(static_cast<double>(cfg_.dim))), Tensor(pe));
}

Tensor TransformerGenerator::trainable_local(const text::TokenIds& source) const {
  return ad::mean_rows(tokens_(source));
}

namespace {

Tensor row_tensor(const Eigen::RowVectorXd& v, int expected, const char* what) {
  if (v.size() != expected) {
    throw std::invalid_argument(std::string("transformer: ") + what + " has dimension " + std::to_string(v.size()) +
                                ", expected " + std::to_string(expected));
  }
  return Tensor(Matrix(v));
}

}  // namespace

Tensor TransformerGenerator::encoder_input(const Example& ex, bool training, std::mt19937_64* rng) const {
  if (ex.source.empty()) throw std::invalid_argument("transformer: empty terminology");
  std::vector<Tensor> rows;
  if (prefix_.use_local) {
    if (prefix_.local_dim > 0 && ex.local.size() > 0) {
      rows.push_back(local_lookup_proj_(row_tensor(ex.local, prefix_.local_dim, "l_i")));
    } else {
      rows.push_back(local_trainable_proj_(trainable_local(ex.source)));
    }
  }
  if (prefix_.use_tg) rows.push_back(tg_proj_(row_tensor(ex.gt, prefix_.global_dim, "g^t")));
  if (prefix_.use_dg) rows.push_back(dg_proj_(row_tensor(ex.gd, prefix_.global_dim, "g^d")));
  rows.push_back(embed(ex.source, static_cast<ad::Index>(prefix_.slots())));
  return maybe_dropout(ad::concat_rows(rows), training, rng);
}

Tensor TransformerGenerator::encode(const Example& ex, bool training, std::mt19937_64* rng) const {
  Tensor x = encoder_input(ex, training, rng);
  const Matrix no_mask;
  for (const auto& layer : encoder_) {
    const Tensor h = layer.ln1(x);
    x = ad::add(x, maybe_dropout(layer.attn(h, h, no_mask), training, rng));
    x = ad::add(x, maybe_dropout(layer.ff(layer.ln2(x)), training, rng));
  }
  return enc_norm_(x);
}

Tensor TransformerGenerator::decoder_logits(const Tensor& memory, const text::TokenIds& decoder_input, bool training,
                                            std::mt19937_64* rng) const {
  Tensor y = maybe_dropout(embed(decoder_input, 0), training, rng);
  const Matrix causal = nn::causal_mask(static_cast<ad::Index>(decoder_input.size()));
  const Matrix no_mask;
  for (const auto& layer : decoder_) {
    const Tensor h = layer.ln1(y);
    y = ad::add(y, maybe_dropout(layer.self_attn(h, h, causal), training, rng));
    y = ad::add(y, maybe_dropout(layer.cross_attn(layer.ln2(y), memory, no_mask), training, rng));
    y = ad::add(y, maybe_dropout(layer.ff(layer.ln3(y)), training, rng));
  }
  return out_(dec_norm_(y));
}

Tensor TransformerGenerator::loss(const Example& ex, bool training, std::mt19937_64& rng) {
  const Tensor memory = encode(ex, training, &rng);
  text::TokenIds input{Vocabulary::kBos};
  input.insert(input.end(), ex.target.begin(), ex.target.end());
  text::TokenIds targets(ex.target.begin(), ex.target.end());
  targets.push_back(Vocabulary::kEos);
  return ad::cross_entropy_sum(decoder_logits(memory, input, training, &rng), targets);
}

Decoded TransformerGenerator::decode(const Example& ex, const DecodeOptions& opts) const {
  ad::NoGradGuard guard;
  const Tensor memory = encode(ex, false, nullptr);
  const StepFunction step = [&](const text::TokenIds& prefix) {
    text::TokenIds input{Vocabulary::kBos};
    input.insert(input.end(), prefix.begin(), prefix.end());
    const Tensor logits = decoder_logits(memory, input, false, nullptr);
    const Tensor lsm = ad::log_softmax_rows(ad::slice_rows(logits, logits.rows() - 1, 1));
    return Eigen::VectorXd(lsm.value().row(0).transpose());
  };
  return decode_with(step, opts);
}

std::string TransformerGenerator::config_json() const {
  nlohmann::ordered_json j;
  j["kind"] = kind_;
  j["vocab_size"] = vocab_size_;
  j["seed"] = seed_;
  j["encoder_layers"] = cfg_.encoder_layers;
  j["decoder_layers"] = cfg_.decoder_layers;
  j["dim"] = cfg_.dim;
  j["heads"] = cfg_.heads;
  j["ff_dim"] = cfg_.ff_dim;
  j["dropout"] = cfg_.dropout;
  j["use_local"] = prefix_.use_local;
  j["use_tg"] = prefix_.use_tg;
  j["use_dg"] = prefix_.use_dg;
  j["local_dim"] = prefix_.local_dim;
  j["global_dim"] = prefix_.global_dim;
  return j.dump();
}

}  // namespace graphex::gen
