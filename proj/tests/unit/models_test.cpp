#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "gradcheck.hpp"
#include "graphex/baselines.hpp"
#include "graphex/stage2.hpp"

using namespace graphex;
using ad::Matrix;
using gen::Example;

namespace {

gen::TransformerConfig tiny_transformer(int dim = 16, int layers = 1) {
  gen::TransformerConfig c;
  c.encoder_layers = layers;
  c.decoder_layers = layers;
  c.dim = dim;
  c.heads = 2;
  c.ff_dim = 2 * dim;
  c.dropout = 0.0;
  return c;
}

Eigen::RowVectorXd random_row(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  Eigen::RowVectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = d(rng);
  return v;
}

Example toy_example(int node, text::TokenIds source, text::TokenIds target, int global_dim, std::mt19937_64& rng) {
  Example ex;
  ex.node = node;
  ex.term_id = "T:" + std::to_string(node);
  ex.source = std::move(source);
  ex.target = std::move(target);
  ex.gt = random_row(global_dim, rng);
  ex.gd = random_row(global_dim, rng);
  return ex;
}

std::unique_ptr<gen::TransformerGenerator> graphex_model(bool tg, bool dg, int vocab, int global_dim, int dim = 16,
                                                         int layers = 1, int local_dim = 0) {
  stage2::Stage2Config cfg;
  cfg.transformer = tiny_transformer(dim, layers);
  cfg.use_tg = tg;
  cfg.use_dg = dg;
  cfg.seed = 5;
  return stage2::make_model(cfg, vocab, global_dim, local_dim);
}

void check_grads(const std::function<ad::Tensor()>& build, nn::ParameterStore& store) {
  const auto errors = testing::check_gradients(build, store);
  for (const auto& e : errors) {
    INFO(e.name);
    CHECK(e.relative < 1e-4);
  }
}

}  // namespace

TEST_CASE("forced decode with a single content token") {
  // Step function that always prefers token 4 over EOS.
  const gen::StepFunction step = [](const text::TokenIds&) {
    Eigen::VectorXd lp = Eigen::VectorXd::Constant(5, -10.0);
    lp(4) = -0.1;
    return lp;
  };
  const auto d = gen::greedy_decode(step, {.beam = 1, .max_length = 64});
  CHECK(d.tokens.size() == 64);
  CHECK_FALSE(d.ended_with_eos);
  for (int32_t t : d.tokens) CHECK(t == 4);
  const auto b = gen::beam_decode(step, {.beam = 3, .max_length = 64});
  CHECK(b.tokens == d.tokens);
}

TEST_CASE("ties break toward the lowest token index") {
  const gen::StepFunction step = [](const text::TokenIds& prefix) {
    Eigen::VectorXd lp = Eigen::VectorXd::Constant(8, std::log(0.1));
    lp(5) = lp(6) = std::log(0.3);
    if (prefix.size() >= 2) lp(text::Vocabulary::kEos) = 0.0;
    return lp;
  };
  const auto d = gen::greedy_decode(step, {});
  CHECK(d.tokens == text::TokenIds{5, 5});
  CHECK(d.ended_with_eos);
  CHECK(gen::beam_decode(step, {.beam = 1}).tokens == d.tokens);
}

TEST_CASE("greedy equals beam of width one on a random transformer") {
  std::mt19937_64 rng(1);
  auto m = graphex_model(true, true, 12, 6);
  for (int i = 0; i < 4; ++i) {
    const Example ex = toy_example(i, {4, static_cast<int32_t>(5 + i)}, {}, 6, rng);
    const auto g = m->decode(ex, {.beam = 1, .max_length = 12});
    const auto b = gen::beam_decode(
        [&](const text::TokenIds& prefix) {
          ad::NoGradGuard guard;
          const auto memory = m->encode(ex, false, nullptr);
          text::TokenIds input{text::Vocabulary::kBos};
          input.insert(input.end(), prefix.begin(), prefix.end());
          const auto logits = m->decoder_logits(memory, input, false, nullptr);
          return Eigen::VectorXd(
              ad::log_softmax_rows(ad::slice_rows(logits, logits.rows() - 1, 1)).value().row(0).transpose());
        },
        {.beam = 1, .max_length = 12});
    CHECK(g.tokens == b.tokens);
    CHECK(g.logprobs == b.logprobs);
  }
}

TEST_CASE("zeroed output projection gives log|C| per token") {
  std::mt19937_64 rng(2);
  const int vocab = 11;
  auto m = graphex_model(true, true, vocab, 6);
  m->store().get("out.weight").node()->value.setZero();
  m->store().get("out.bias").node()->value.setZero();
  const Example ex = toy_example(0, {4, 5, 6}, {7, 8, 9, 10}, 6, rng);
  std::mt19937_64 r(0);
  CHECK(m->loss(ex, false, r).item() == doctest::Approx(5.0 * std::log(vocab)).epsilon(1e-12));
}

TEST_CASE("prefix slots follow the flags") {
  std::mt19937_64 rng(3);
  const Example ex = toy_example(0, {4, 5, 6, 7}, {8}, 6, rng);
  CHECK(graphex_model(true, true, 12, 6)->encoder_input(ex, false, nullptr).rows() == 3 + 4);
  CHECK(graphex_model(false, true, 12, 6)->encoder_input(ex, false, nullptr).rows() == 2 + 4);
  CHECK(graphex_model(true, false, 12, 6)->encoder_input(ex, false, nullptr).rows() == 2 + 4);
  auto local_only = graphex_model(false, false, 12, 6);
  CHECK(local_only->encoder_input(ex, false, nullptr).rows() == 1 + 4);
  CHECK(local_only->prefix().slots() == 1);
  gen::BaselineConfig plain;
  plain.transformer = tiny_transformer();
  auto baseline = gen::make_baseline(plain, 12);
  CHECK(dynamic_cast<gen::TransformerGenerator&>(*baseline).encoder_input(ex, false, nullptr).rows() == 4);

  // Disabled slots have no parameters and ignore whatever vectors are attached.
  for (const auto& p : local_only->store().parameters()) {
    CHECK_FALSE(p.name.starts_with("prefix.tg"));
    CHECK_FALSE(p.name.starts_with("prefix.dg"));
  }
  Example bare = ex;
  bare.gt.resize(0);
  bare.gd.resize(0);
  std::mt19937_64 r(0);
  CHECK(local_only->loss(ex, false, r).item() == local_only->loss(bare, false, r).item());
}

TEST_CASE("local-only variant equals a transformer with one l_i prefix slot") {
  std::mt19937_64 rng(13);
  auto variant = graphex_model(false, false, 12, 6);
  gen::PrefixConfig one_slot;
  one_slot.use_local = true;
  gen::TransformerGenerator oracle("conditioned-transformer", tiny_transformer(), one_slot, 12, 99);
  CHECK(gen::copy_matching(oracle.store(), variant->store()) == oracle.store().parameters().size());
  CHECK(oracle.store().parameters().size() == variant->store().parameters().size());
  std::mt19937_64 r(0);
  for (int i = 0; i < 3; ++i) {
    const Example ex = toy_example(i, {4, static_cast<int32_t>(5 + i)}, {7, 8, 9}, 6, rng);
    CHECK(oracle.loss(ex, false, r).item() == variant->loss(ex, false, r).item());
  }
}

TEST_CASE("stage-2 gradients pass finite differences") {
  std::mt19937_64 rng(4);
  auto m = graphex_model(true, true, 9, 6, 32, 2, 5);
  Example a = toy_example(0, {4, 5}, {6, 7, 8}, 6, rng);
  a.local = random_row(5, rng);
  const Example b = toy_example(1, {5, 6, 7}, {4}, 6, rng);  // trainable local provider
  const std::vector<Example> batch{a, b};
  check_grads([&] { return stage2::stage2_loss(*m, batch); }, m->store());
}

TEST_CASE("stage-2 loss decomposes over the batch") {
  std::mt19937_64 rng(5);
  auto m = graphex_model(true, true, 10, 6);
  std::vector<Example> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(toy_example(i, {4, static_cast<int32_t>(5 + i)}, {6, 7}, 6, rng));
  const double whole = stage2::stage2_loss(*m, batch).item();
  double parts = 0.0;
  for (const auto& ex : batch) parts += stage2::stage2_loss(*m, std::span<const Example>(&ex, 1)).item();
  CHECK(whole == doctest::Approx(parts).epsilon(1e-12));
  std::reverse(batch.begin(), batch.end());
  CHECK(stage2::stage2_loss(*m, batch).item() == doctest::Approx(whole).epsilon(1e-12));
}

TEST_CASE("local embedding providers") {
  std::mt19937_64 rng(6);
  auto m = graphex_model(true, true, 12, 6, 16, 1, 3);
  const Example single = toy_example(0, {7}, {}, 6, rng);
  const auto l = stage2::local_embed(nullptr, *m, single);
  CHECK(l.provider == "trainable");
  CHECK(l.vector == Eigen::RowVectorXd(m->store().get("tokens.table").value().row(7)));

  Example twin = toy_example(1, {7}, {}, 6, rng);
  CHECK(stage2::local_embed(nullptr, *m, twin).vector == l.vector);

  stage2::LocalTable table(3);
  Eigen::RowVectorXd row(3);
  row << 0.25, -1.5, 3.0;
  table.set("T:0", row);
  const auto hit = stage2::local_embed(&table, *m, single);
  CHECK(hit.provider == "lookup-file");
  CHECK(hit.vector == row);
  CHECK(stage2::local_embed(&table, *m, twin).provider == "trainable");

  const auto path = std::filesystem::temp_directory_path() / "graphex_local.tsv";
  table.save(path);
  const auto back = stage2::LocalTable::load(path);
  CHECK(back.dim() == 3);
  CHECK(*back.find("T:0") == row);
  {
    std::ofstream bad(path);
    bad << "3\nT:0\t1 2\n";
  }
  CHECK_THROWS(stage2::LocalTable::load(path));
  {
    std::ofstream bad(path);
    bad << "x\n";
  }
  CHECK_THROWS(stage2::LocalTable::load(path));
  std::filesystem::remove(path);
}

TEST_CASE("dimension mismatch is fatal") {
  std::mt19937_64 rng(7);
  auto m = graphex_model(true, true, 12, 6);
  const Example ex = toy_example(0, {4}, {5}, 4, rng);
  std::mt19937_64 r(0);
  CHECK_THROWS(m->loss(ex, false, r));
}

TEST_CASE("single pair memorization") {
  std::mt19937_64 rng(8);
  auto m = graphex_model(true, true, 10, 6, 16, 1);
  const std::vector<Example> data{toy_example(0, {4, 5}, {6, 7, 8, 9}, 6, rng)};
  gen::TrainConfig tc;
  tc.epochs = 300;
  tc.learning_rate = 1e-2;
  tc.batch_size = 1;
  tc.patience = 300;
  gen::train_generator(*m, data, {}, tc);
  CHECK(gen::evaluate_loss(*m, data) < 0.01);
  CHECK(m->decode(data[0], {}).tokens == data[0].target);
}

TEST_CASE("seq2seq attention rows sum to one") {
  gen::Seq2SeqGenerator s(12, 8, 8, 3);
  Example ex;
  ex.source = {4, 5, 6};
  ex.target = {7, 8};
  const Matrix a = s.attention_weights(ex);
  CHECK(a.rows() == 3);
  CHECK(a.cols() == 3);
  for (Eigen::Index i = 0; i < a.rows(); ++i) CHECK(std::abs(a.row(i).sum() - 1.0) < 1e-12);
}

TEST_CASE("baseline gradients pass finite differences") {
  Example ex;
  ex.source = {4, 5, 6};
  ex.target = {7, 8, 4};
  SUBCASE("seq2seq") {
    gen::Seq2SeqGenerator s(10, 6, 8, 1);
    std::mt19937_64 r(0);
    check_grads([&] { return s.loss(ex, true, r); }, s.store());
  }
  SUBCASE("cvae with fixed noise") {
    gen::CvaeOptions opts;
    opts.latent_dim = 4;
    opts.fixed_kl_weight = 0.7;
    gen::CvaeGenerator c(10, 6, 8, opts, 2);
    check_grads(
        [&] {
          std::mt19937_64 r(11);
          return c.loss(ex, true, r);
        },
        c.store());
  }
}

TEST_CASE("CVAE KL term") {
  std::mt19937_64 rng(9);
  const ad::Tensor m(Matrix(random_row(5, rng)));
  const ad::Tensor lv(Matrix(random_row(5, rng)));
  CHECK(std::abs(gen::gaussian_kl(m, lv, m, lv).item()) < 1e-12);
  for (int i = 0; i < 50; ++i) {
    const ad::Tensor a(Matrix(random_row(5, rng)));
    const ad::Tensor b(Matrix(random_row(5, rng)));
    const ad::Tensor c(Matrix(random_row(5, rng)));
    const ad::Tensor d(Matrix(random_row(5, rng)));
    CHECK(gen::gaussian_kl(a, b, c, d).item() >= 0.0);
  }
  gen::CvaeOptions opts;
  opts.latent_dim = 3;
  gen::CvaeGenerator cvae(10, 6, 8, opts, 2);
  Example ex;
  ex.source = {4, 5};
  ex.target = {6, 7};
  CHECK(cvae.kl_term(ex).item() >= 0.0);
  CHECK(cvae.kl_weight() == 0.0);
  cvae.set_epoch(5);
  CHECK(cvae.kl_weight() == doctest::Approx(0.5));
  cvae.set_epoch(20);
  CHECK(cvae.kl_weight() == 1.0);
}

TEST_CASE("degenerate CVAE reduces to the seq2seq objective") {
  gen::Seq2SeqGenerator s(12, 6, 8, 4);
  gen::CvaeOptions opts;
  opts.latent_dim = 3;
  opts.fixed_kl_weight = 0.0;
  opts.deterministic_latent = true;
  gen::CvaeGenerator c(12, 6, 8, opts, 9);
  CHECK(gen::copy_matching(c.store(), s.store()) == s.store().parameters().size());
  c.store().get("latent.weight").node()->value.setZero();
  std::mt19937_64 r(0);
  for (const auto& [src, tgt] : std::vector<std::pair<text::TokenIds, text::TokenIds>>{
           {{4, 5}, {6, 7, 8}}, {{9}, {10, 11}}, {{4, 4, 4}, {5}}}) {
    Example ex;
    ex.source = src;
    ex.target = tgt;
    CHECK(std::abs(c.loss(ex, true, r).item() - s.loss(ex, true, r).item()) < 1e-5);
  }
}

TEST_CASE("generation is reproducible and checkpoints round-trip") {
  const auto dir = std::filesystem::temp_directory_path();
  Example ex;
  ex.node = 3;
  ex.source = {4, 5};
  gen::CvaeOptions opts;
  opts.latent_dim = 3;
  gen::CvaeGenerator c(12, 6, 8, opts, 2);
  CHECK(c.decode(ex, {.max_length = 10}).tokens == c.decode(ex, {.max_length = 10}).tokens);

  gen::save_generator(dir / "graphex_cvae.ckpt", c);
  auto loaded = gen::load_generator(dir / "graphex_cvae.ckpt");
  CHECK(loaded->kind() == "cvae");
  CHECK(loaded->decode(ex, {.max_length = 10}).tokens == c.decode(ex, {.max_length = 10}).tokens);

  std::mt19937_64 rng(1);
  auto g = graphex_model(true, false, 12, 6);
  Example gx = toy_example(0, {4, 5}, {}, 6, rng);
  gen::save_generator(dir / "graphex_tf.ckpt", *g);
  auto g2 = gen::load_generator(dir / "graphex_tf.ckpt");
  CHECK(g2->kind() == "graphex-no-dg");
  CHECK(g2->decode(gx, {.max_length = 10}).logprobs == g->decode(gx, {.max_length = 10}).logprobs);
  std::filesystem::remove(dir / "graphex_cvae.ckpt");
  std::filesystem::remove(dir / "graphex_tf.ckpt");
}

TEST_CASE("baseline config validation") {
  gen::BaselineConfig c;
  c.kind = gen::BaselineKind::kCvae;
  CHECK_THROWS(c.validate());
  c.latent_dim = 8;
  CHECK_NOTHROW(c.validate());
  c.kind = gen::BaselineKind::kSeq2Seq;
  CHECK_THROWS(c.validate());
  CHECK(gen::baseline_kind_from_string("transformer") == gen::BaselineKind::kTransformer);
  CHECK_THROWS(gen::baseline_kind_from_string("lstm"));
}

TEST_CASE("bootstrap definitions cover exactly the requested nodes") {
  std::vector<dag::TermNode> nodes;
  std::vector<std::pair<dag::NodeIndex, dag::NodeIndex>> edges;
  for (int i = 0; i < 6; ++i) {
    dag::TermNode t;
    t.index = i;
    t.term_id = "B:" + std::to_string(i);
    t.name = "term " + std::to_string(i);
    t.terminology = {"term", std::to_string(i)};
    t.definition = "a thing";
    t.definition_tokens = text::Tokens{"a", "thing"};
    nodes.push_back(t);
    if (i > 0) edges.emplace_back(0, i);
  }
  const dag::OntologyDag g("boot", nodes, edges);
  const auto vocab = text::Vocabulary::build(std::vector<text::Tokens>{{"term", "a", "thing"}}, 1);
  gen::BaselineConfig cfg;
  cfg.transformer = tiny_transformer();
  auto model = gen::make_baseline(cfg, vocab.size());
  const std::vector<dag::NodeIndex> held{2, 5};
  const auto r = gen::bootstrap_definitions(*model, vocab, g, held);
  CHECK(r.definitions.size() == 2);
  CHECK(r.definitions.count(2) == 1);
  CHECK(r.definitions.count(5) == 1);
  CHECK(r.definitions.count(0) == 0);
  for (const auto& [v, d] : r.definitions) CHECK_FALSE(d.empty());

  // A model that always emits EOS first falls back to the terminology.
  model->store().get("out.weight").node()->value.setZero();
  Matrix bias = Matrix::Constant(1, vocab.size(), -5.0);
  bias(0, text::Vocabulary::kEos) = 5.0;
  model->store().get("out.bias").node()->value = bias;
  const auto fb = gen::bootstrap_definitions(*model, vocab, g, held);
  CHECK(fb.fallback.size() == 2);
  CHECK(fb.definitions.at(2) == text::Tokens{"term", "2"});
}
