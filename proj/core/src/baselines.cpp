#include "graphex/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "graphex/log.hpp"

namespace graphex::gen {

using ad::Matrix;
using text::Vocabulary;

// ---------------------------------------------------------------- Seq2Seq

Seq2SeqGenerator::Seq2SeqGenerator(int vocab_size, int word_dim, int hidden_dim, uint64_t seed)
    : vocab_size_(vocab_size), word_dim_(word_dim), hidden_dim_(hidden_dim), seed_(seed) {
  if (vocab_size < Vocabulary::kNumReserved || word_dim < 1 || hidden_dim < 1) {
    throw std::invalid_argument("seq2seq: dimensions must be positive");
  }
  std::mt19937_64 rng(seed);
  emb_ = nn::Embedding(store_, "emb", vocab_size, word_dim, rng, 0.1);
  enc_ = nn::GruCell(store_, "enc", word_dim, hidden_dim, rng);
  dec_ = nn::GruCell(store_, "dec", word_dim, hidden_dim, rng);
  attn_ = nn::Linear(store_, "attn", hidden_dim, hidden_dim, rng, false);
  combine_ = nn::Linear(store_, "combine", 2 * hidden_dim, hidden_dim, rng);
  out_ = nn::Linear(store_, "out", hidden_dim, vocab_size, rng);
}

Seq2SeqGenerator::Encoded Seq2SeqGenerator::encode(const text::TokenIds& ids) const {
  if (ids.empty()) throw std::invalid_argument("seq2seq: empty input sequence");
  Encoded e;
  e.states = enc_.run(emb_(ids), Tensor(Matrix::Zero(1, hidden_dim_)));
  e.last = ad::slice_rows(e.states, e.states.rows() - 1, 1);
  return e;
}

Tensor Seq2SeqGenerator::decode_teacher(const Encoded& enc, const Tensor& s0, const text::TokenIds& input,
                                        Tensor* attention) const {
  const Tensor S = dec_.run(emb_(input), s0);
  const Tensor weights = ad::softmax_rows(ad::matmul_nt(attn_(S), enc.states));
  if (attention != nullptr) *attention = weights;
  const Tensor context = ad::matmul(weights, enc.states);
  const Tensor parts[] = {context, S};
  return out_(ad::tanh(combine_(ad::concat_cols(parts))));
}

Tensor Seq2SeqGenerator::loss(const Example& ex, bool /*training*/, std::mt19937_64& /*rng*/) {
  const Encoded enc = encode(ex.source);
  text::TokenIds input{Vocabulary::kBos};
  input.insert(input.end(), ex.target.begin(), ex.target.end());
  text::TokenIds targets(ex.target.begin(), ex.target.end());
  targets.push_back(Vocabulary::kEos);
  return ad::cross_entropy_sum(decode_teacher(enc, enc.last, input, nullptr), targets);
}

Decoded Seq2SeqGenerator::decode_from(const Encoded& enc, const Tensor& s0, const DecodeOptions& opts) const {
  const StepFunction step = [&](const text::TokenIds& prefix) {
    text::TokenIds input{Vocabulary::kBos};
    input.insert(input.end(), prefix.begin(), prefix.end());
    const Tensor logits = decode_teacher(enc, s0, input, nullptr);
    const Tensor lsm = ad::log_softmax_rows(ad::slice_rows(logits, logits.rows() - 1, 1));
    return Eigen::VectorXd(lsm.value().row(0).transpose());
  };
  return decode_with(step, opts);
}

Decoded Seq2SeqGenerator::decode(const Example& ex, const DecodeOptions& opts) const {
  ad::NoGradGuard guard;
  const Encoded enc = encode(ex.source);
  return decode_from(enc, enc.last, opts);
}

Matrix Seq2SeqGenerator::attention_weights(const Example& ex) const {
  ad::NoGradGuard guard;
  const Encoded enc = encode(ex.source);
  text::TokenIds input{Vocabulary::kBos};
  input.insert(input.end(), ex.target.begin(), ex.target.end());
  Tensor weights;
  decode_teacher(enc, enc.last, input, &weights);
  return weights.value();
}

std::string Seq2SeqGenerator::config_json() const {
  nlohmann::ordered_json j;
  j["kind"] = "seq2seq";
  j["vocab_size"] = vocab_size_;
  j["seed"] = seed_;
  j["word_dim"] = word_dim_;
  j["hidden_dim"] = hidden_dim_;
  j["recurrent_cell"] = "gru";
  return j.dump();
}

// ---------------------------------------------------------------- CVAE

Tensor gaussian_kl(const Tensor& mean_q, const Tensor& logvar_q, const Tensor& mean_p, const Tensor& logvar_p) {
  // 0.5 * sum(logvar_p - logvar_q + (exp(logvar_q) + (mean_q - mean_p)^2) / exp(logvar_p) - 1)
  const Tensor ratio =
      ad::mul(ad::add(ad::exp(logvar_q), ad::square(ad::sub(mean_q, mean_p))), ad::exp(ad::scale(logvar_p, -1.0)));
  const Tensor inner = ad::add_scalar(ad::add(ad::sub(logvar_p, logvar_q), ratio), -1.0);
  return ad::scale(ad::sum(inner), 0.5);
}

CvaeGenerator::CvaeGenerator(int vocab_size, int word_dim, int hidden_dim, const CvaeOptions& opts, uint64_t seed)
    : Seq2SeqGenerator(vocab_size, word_dim, hidden_dim, seed), opts_(opts) {
  if (opts_.latent_dim < 1) throw std::invalid_argument("cvae: latent_dim must be positive");
  std::mt19937_64 rng(seed ^ 0xc0ffeeULL);
  prior_ = nn::Linear(store_, "prior", hidden_dim, 2 * opts_.latent_dim, rng);
  posterior_ = nn::Linear(store_, "posterior", 2 * hidden_dim, 2 * opts_.latent_dim, rng);
  latent_ = nn::Linear(store_, "latent", opts_.latent_dim, hidden_dim, rng, false);
}

double CvaeGenerator::kl_weight() const {
  if (opts_.fixed_kl_weight >= 0.0) return opts_.fixed_kl_weight;
  if (opts_.anneal_epochs <= 0) return 1.0;
  return std::min(1.0, static_cast<double>(epoch_) / static_cast<double>(opts_.anneal_epochs));
}

CvaeGenerator::Gaussian CvaeGenerator::prior(const Tensor& hx) const {
  const Tensor p = prior_(hx);
  return {ad::slice_cols(p, 0, opts_.latent_dim), ad::slice_cols(p, opts_.latent_dim, opts_.latent_dim)};
}

CvaeGenerator::Gaussian CvaeGenerator::posterior(const Tensor& hx, const Tensor& hy) const {
  const Tensor parts[] = {hx, hy};
  const Tensor p = posterior_(ad::concat_cols(parts));
  return {ad::slice_cols(p, 0, opts_.latent_dim), ad::slice_cols(p, opts_.latent_dim, opts_.latent_dim)};
}

namespace {

text::TokenIds with_eos(const text::TokenIds& ids) {
  text::TokenIds out(ids);
  out.push_back(Vocabulary::kEos);
  return out;
}

}  // namespace

Tensor CvaeGenerator::kl_term(const Example& ex) const {
  const Encoded x = encode(ex.source);
  const Encoded y = encode(with_eos(ex.target));
  const Gaussian q = posterior(x.last, y.last);
  const Gaussian p = prior(x.last);
  return gaussian_kl(q.mean, q.logvar, p.mean, p.logvar);
}

Tensor CvaeGenerator::loss(const Example& ex, bool training, std::mt19937_64& rng) {
  const Encoded x = encode(ex.source);
  const Encoded y = encode(with_eos(ex.target));
  const Gaussian q = posterior(x.last, y.last);
  const Gaussian p = prior(x.last);

  Tensor z = q.mean;
  if (training && !opts_.deterministic_latent) {
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix eps(1, opts_.latent_dim);
    for (ad::Index i = 0; i < eps.size(); ++i) eps.data()[i] = n(rng);
    z = ad::add(q.mean, ad::mul(ad::exp(ad::scale(q.logvar, 0.5)), Tensor(eps)));
  }
  const Tensor s0 = ad::add(x.last, latent_(z));
  text::TokenIds input{Vocabulary::kBos};
  input.insert(input.end(), ex.target.begin(), ex.target.end());
  const Tensor rec = ad::cross_entropy_sum(decode_teacher(x, s0, input, nullptr), with_eos(ex.target));
  const double w = kl_weight();
  if (w == 0.0) return rec;
  return ad::add(rec, ad::scale(gaussian_kl(q.mean, q.logvar, p.mean, p.logvar), w));
}

Decoded CvaeGenerator::decode(const Example& ex, const DecodeOptions& opts) const {
  ad::NoGradGuard guard;
  const Encoded x = encode(ex.source);
  const Gaussian p = prior(x.last);
  // One latent draw per node, reproducible from the latent seed.
  std::mt19937_64 rng(opts_.latent_seed ^ (static_cast<uint64_t>(static_cast<uint32_t>(ex.node)) * 0x9e3779b97f4a7c15ULL));
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix eps(1, opts_.latent_dim);
  for (ad::Index i = 0; i < eps.size(); ++i) eps.data()[i] = n(rng);
  const Matrix z = p.mean.value() + ((0.5 * p.logvar.value().array()).exp() * eps.array()).matrix();
  const Tensor s0 = ad::add(x.last, latent_(Tensor(z)));
  return decode_from(x, s0, opts);
}

std::string CvaeGenerator::config_json() const {
  nlohmann::ordered_json j;
  j["kind"] = "cvae";
  j["vocab_size"] = vocab_size_;
  j["seed"] = seed_;
  j["word_dim"] = word_dim_;
  j["hidden_dim"] = hidden_dim_;
  j["recurrent_cell"] = "gru";
  j["latent_dim"] = opts_.latent_dim;
  j["anneal_epochs"] = opts_.anneal_epochs;
  j["latent_seed"] = opts_.latent_seed;
  return j.dump();
}

// ---------------------------------------------------------------- factory

const char* to_string(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::kSeq2Seq:
      return "seq2seq";
    case BaselineKind::kCvae:
      return "cvae";
    case BaselineKind::kTransformer:
      return "transformer";
  }
  return "?";
}

BaselineKind baseline_kind_from_string(const std::string& s) {
  if (s == "seq2seq") return BaselineKind::kSeq2Seq;
  if (s == "cvae") return BaselineKind::kCvae;
  if (s == "transformer") return BaselineKind::kTransformer;
  throw std::invalid_argument("unknown baseline kind: " + s);
}

void BaselineConfig::validate() const {
  if (word_dim < 1 || hidden_dim < 1) throw std::invalid_argument("baseline: dimensions must be positive");
  if (kind == BaselineKind::kCvae && latent_dim < 1) throw std::invalid_argument("baseline: cvae needs latent_dim > 0");
  if (kind != BaselineKind::kCvae && latent_dim != 0) {
    throw std::invalid_argument("baseline: latent_dim applies only to cvae");
  }
  if (kind == BaselineKind::kTransformer) transformer.validate();
}

std::unique_ptr<Generator> make_baseline(const BaselineConfig& cfg, int vocab_size) {
  cfg.validate();
  switch (cfg.kind) {
    case BaselineKind::kSeq2Seq:
      return std::make_unique<Seq2SeqGenerator>(vocab_size, cfg.word_dim, cfg.hidden_dim, cfg.seed);
    case BaselineKind::kCvae: {
      CvaeOptions opts;
      opts.latent_dim = cfg.latent_dim;
      return std::make_unique<CvaeGenerator>(vocab_size, cfg.word_dim, cfg.hidden_dim, opts, cfg.seed);
    }
    case BaselineKind::kTransformer:
      return std::make_unique<TransformerGenerator>("transformer", cfg.transformer, PrefixConfig{}, vocab_size,
                                                    cfg.seed);
  }
  throw std::logic_error("unreachable");
}

std::unique_ptr<Generator> generator_from_config(const std::string& config_json) {
  const auto j = nlohmann::json::parse(config_json);
  const auto kind = j.at("kind").get<std::string>();
  const int vocab = j.at("vocab_size").get<int>();
  const auto seed = j.at("seed").get<uint64_t>();
  if (kind == "seq2seq") {
    return std::make_unique<Seq2SeqGenerator>(vocab, j.at("word_dim").get<int>(), j.at("hidden_dim").get<int>(), seed);
  }
  if (kind == "cvae") {
    CvaeOptions opts;
    opts.latent_dim = j.at("latent_dim").get<int>();
    opts.anneal_epochs = j.at("anneal_epochs").get<int>();
    opts.latent_seed = j.at("latent_seed").get<uint64_t>();
    return std::make_unique<CvaeGenerator>(vocab, j.at("word_dim").get<int>(), j.at("hidden_dim").get<int>(), opts,
                                           seed);
  }
  if (j.contains("encoder_layers")) {
    TransformerConfig tc;
    tc.encoder_layers = j.at("encoder_layers").get<int>();
    tc.decoder_layers = j.at("decoder_layers").get<int>();
    tc.dim = j.at("dim").get<int>();
    tc.heads = j.at("heads").get<int>();
    tc.ff_dim = j.at("ff_dim").get<int>();
    tc.dropout = j.at("dropout").get<double>();
    PrefixConfig pc;
    pc.use_local = j.at("use_local").get<bool>();
    pc.use_tg = j.at("use_tg").get<bool>();
    pc.use_dg = j.at("use_dg").get<bool>();
    pc.local_dim = j.at("local_dim").get<int>();
    pc.global_dim = j.at("global_dim").get<int>();
    return std::make_unique<TransformerGenerator>(kind, tc, pc, vocab, seed);
  }
  throw std::invalid_argument("checkpoint config has unknown model kind: " + kind);
}

void save_generator(const std::filesystem::path& path, Generator& model) {
  nn::save_checkpoint(path, model.config_json(), model.store());
}

std::unique_ptr<Generator> load_generator(const std::filesystem::path& path) {
  auto model = generator_from_config(nn::read_checkpoint_config(path));
  nn::load_checkpoint(path, model->store());
  return model;
}

BootstrapResult bootstrap_definitions(const Generator& model, const text::Vocabulary& vocab,
                                      const dag::OntologyDag& g, std::span<const dag::NodeIndex> nodes) {
  BootstrapResult out;
  for (dag::NodeIndex v : nodes) {
    const auto& node = g.node(v);
    const Example ex = make_example(v, node.term_id, node.terminology, {}, vocab);
    const Decoded d = model.decode(ex, {});
    text::Tokens tokens = vocab.denumericalize(d.tokens);
    if (tokens.empty()) {
      tokens = ex.terminology;
      out.fallback.insert(v);
      log::warn("bootstrap: empty decode for ", node.term_id, "; using its terminology");
    }
    out.definitions.emplace(v, std::move(tokens));
  }
  return out;
}

}  // namespace graphex::gen
