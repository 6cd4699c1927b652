#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <random>

#include "graphex/analysis.hpp"
#include "graphex/baselines.hpp"
#include "graphex/downstream.hpp"
#include "graphex/log.hpp"
#include "graphex/metrics.hpp"
#include "graphex/obo.hpp"
#include "graphex/pipeline.hpp"
#include "graphex/stage2.hpp"

namespace fs = std::filesystem;
using namespace graphex;
using nlohmann::ordered_json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStep = 3;

// Model and training options shared by the training subcommands, expressed
// with the pipeline's configuration keys.
struct Settings {
  std::string config;
  std::vector<std::string> overrides;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "key = value configuration file");
    app->add_option("--set", overrides, "override one configuration key (key=value)");
  }

  pipeline::ExperimentConfig resolve() const {
    auto cfg = config.empty() ? pipeline::ExperimentConfig{} : pipeline::load_config(config);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw pipeline::ConfigError("--set expects key=value, got '" + kv + "'");
      pipeline::set_option(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
  }
};

void write_json(const fs::path& path, const ordered_json& j) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

fs::path vocab_path_for(const fs::path& ckpt) { return fs::path(ckpt.string() + ".vocab"); }

std::vector<gen::Example> examples(const dag::OntologyDag& g, const std::vector<dag::NodeIndex>& nodes,
                                   const text::Vocabulary& vocab) {
  return stage2::examples_for(g, nodes, vocab);
}

void save_train_log(const fs::path& path, const gen::TrainLog& log) {
  write_json(path, {{"best_epoch", log.best_epoch}, {"train_loss", log.train_loss}, {"valid_loss", log.valid_loss}});
}

std::map<dag::NodeIndex, text::Tokens> read_bootstrap(const fs::path& path, const dag::OntologyDag& g) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::map<dag::NodeIndex, text::Tokens> out;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const auto t1 = line.find('\t'), t2 = line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw std::runtime_error("malformed bootstrap line: " + line);
    const auto v = g.find(line.substr(0, t1));
    if (!v) throw std::runtime_error("unknown term in bootstrap file: " + line.substr(0, t1));
    std::istringstream ts(line.substr(t2 + 1));
    text::Tokens tokens;
    for (std::string w; ts >> w;) tokens.push_back(w);
    out[*v] = tokens;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"graphex: ontology definition generation with graph-aware conditioning"};
  app.require_subcommand(1);

  // ingest
  std::string in_dir, out_path, rejects_path;
  auto* ingest = app.add_subcommand("ingest", "parse and merge OBO files into a corpus JSONL");
  ingest->add_option("--input", in_dir, "directory of .obo files (optionally under obo/, bioportal/, ols/)")->required();
  ingest->add_option("--out", out_path, "corpus JSONL")->required();
  ingest->add_option("--rejects", rejects_path, "rejected stanzas JSONL");

  // build-dag
  std::string corpus_path, graph_name;
  auto* build = app.add_subcommand("build-dag", "build DAG snapshots from a corpus JSONL");
  build->add_option("--corpus", corpus_path)->required();
  build->add_option("--graph", graph_name, "graph to build (default: all)");
  build->add_option("--out", out_path, "output file (one graph) or directory (all graphs)")->required();

  // stats
  std::string dag_path;
  auto* stats = app.add_subcommand("stats", "corpus statistics of a DAG");
  stats->add_option("--dag", dag_path)->required();
  stats->add_option("--out", out_path);

  // split
  uint64_t seed = 0;
  auto* split_cmd = app.add_subcommand("split", "seeded train/valid/test node split");
  split_cmd->add_option("--dag", dag_path)->required();
  split_cmd->add_option("--seed", seed);
  split_cmd->add_option("--out", out_path)->required();

  // analyze
  std::vector<std::string> dag_paths, split_paths;
  double threshold = analysis::kDefaultSelectionThreshold;
  std::size_t budget = 2000;
  auto* analyze = app.add_subcommand("analyze", "distance/similarity profiles, selection and consistency");
  analyze->add_option("--dag", dag_paths)->required();
  analyze->add_option("--split", split_paths, "one split per DAG; profiles then use training definitions only");
  analyze->add_option("--threshold", threshold);
  analyze->add_option("--pair-budget", budget);
  analyze->add_option("--seed", seed);
  analyze->add_option("--out", out_path);

  // train-stage1
  std::string split_path, bootstrap_path;
  Settings s1_settings;
  auto* train1 = app.add_subcommand("train-stage1", "learn g^t (and g^d when bootstrap definitions are given)");
  train1->add_option("--dag", dag_path)->required();
  train1->add_option("--split", split_path)->required();
  train1->add_option("--bootstrap", bootstrap_path, "d' for held-out nodes (term_id<TAB>flag<TAB>tokens)");
  train1->add_option("--out", out_path)->required();
  s1_settings.attach(train1);

  // train-baseline
  std::string kind = "transformer";
  Settings base_settings;
  auto* train_base = app.add_subcommand("train-baseline", "train Seq2Seq, CVAE or the plain Transformer");
  train_base->add_option("--dag", dag_path)->required();
  train_base->add_option("--split", split_path)->required();
  train_base->add_option("--kind", kind)->check(CLI::IsMember({"seq2seq", "cvae", "transformer"}));
  train_base->add_option("--out", out_path, "checkpoint; the vocabulary is written next to it")->required();
  base_settings.attach(train_base);

  // bootstrap
  std::string ckpt_path;
  auto* boot = app.add_subcommand("bootstrap", "decode placeholder definitions for held-out nodes");
  boot->add_option("--ckpt", ckpt_path)->required();
  boot->add_option("--dag", dag_path)->required();
  boot->add_option("--split", split_path)->required();
  boot->add_option("--out", out_path)->required();

  // train-stage2
  std::string emb_path, local_path;
  bool no_tg = false, no_dg = false;
  Settings s2_settings;
  auto* train2 = app.add_subcommand("train-stage2", "train the graph-conditioned generator");
  train2->add_option("--dag", dag_path)->required();
  train2->add_option("--split", split_path)->required();
  train2->add_option("--emb", emb_path, "stage-1 embeddings")->required();
  train2->add_option("--local", local_path, "local embedding lookup table");
  train2->add_flag("--no-tg", no_tg);
  train2->add_flag("--no-dg", no_dg);
  train2->add_option("--out", out_path)->required();
  s2_settings.attach(train2);

  // generate
  int beam = 1;
  auto* generate = app.add_subcommand("generate", "decode definitions for the test split");
  generate->add_option("--ckpt", ckpt_path)->required();
  generate->add_option("--dag", dag_path)->required();
  generate->add_option("--split", split_path)->required();
  generate->add_option("--emb", emb_path, "stage-1 embeddings (graph-conditioned models)");
  generate->add_option("--local", local_path);
  generate->add_option("--beam", beam);
  generate->add_option("--out", out_path)->required();

  // evaluate
  std::string gens_path, model_label = "model", csv_path, synonyms_path;
  int nist_order = 5;
  auto* evaluate = app.add_subcommand("evaluate", "BLEU-1..4, METEOR and NIST for a generations file");
  evaluate->add_option("--generations", gens_path)->required();
  evaluate->add_option("--model", model_label);
  evaluate->add_option("--synonyms", synonyms_path);
  evaluate->add_option("--nist-order", nist_order);
  evaluate->add_option("--out", out_path)->required();
  evaluate->add_option("--csv", csv_path, "per-example scores");

  // linkpred
  std::string scorer = "dot";
  int dim = 64;
  auto* linkpred = app.add_subcommand("linkpred", "link prediction AUC/AP");
  linkpred->add_option("--dag", dag_path)->required();
  linkpred->add_option("--emb", emb_path, "stage-1 embeddings; omit to fit shallow node vectors");
  linkpred->add_option("--scorer", scorer)->check(CLI::IsMember({"dot", "distance"}));
  linkpred->add_option("--dim", dim, "shallow embedding size");
  linkpred->add_option("--seed", seed);
  linkpred->add_option("--out", out_path);

  // granularity
  std::string dags_dir, task = "rel";
  double test_fraction = 0.2;
  auto* gran = app.add_subcommand("granularity", "relative or absolute granularity prediction");
  gran->add_option("--dags", dags_dir, "directory of DAG snapshots (*.json)")->required();
  gran->add_option("--emb", emb_path, "sentence embedding table keyed by term id")->required();
  gran->add_option("--task", task)->check(CLI::IsMember({"rel", "abs"}));
  gran->add_option("--test-fraction", test_fraction);
  gran->add_option("--seed", seed);
  gran->add_option("--out", out_path);

  // pipeline
  std::string config_path;
  std::vector<std::string> overrides;
  auto* pipe = app.add_subcommand("pipeline", "run the full experiment from a config file");
  pipe->add_option("--config", config_path)->required();
  pipe->add_option("--set", overrides, "override one configuration key (key=value)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest) {
      auto r = obo::ingest_directory(in_dir);
      std::ofstream out(out_path);
      obo::write_corpus_jsonl(out, r.graphs);
      if (!rejects_path.empty()) {
        std::ofstream rej(rejects_path);
        obo::write_rejects_jsonl(rej, r.rejects);
      }
      log::info("ingested ", r.input_graph_count, " input graphs into ", r.graphs.size(), " merged graphs; ",
                r.rejects.size(), " stanzas rejected");
    } else if (*build) {
      const auto graphs = obo::read_corpus_jsonl(fs::path(corpus_path));
      if (!graph_name.empty()) {
        const auto it = std::find_if(graphs.begin(), graphs.end(),
                                     [&](const auto& g) { return g.manifest.graph_name == graph_name; });
        if (it == graphs.end()) throw std::runtime_error("no graph named " + graph_name + " in " + corpus_path);
        dag::save_dag(dag::build_dag(it->manifest.graph_name, it->terms), out_path);
      } else {
        fs::create_directories(out_path);
        for (const auto& g : graphs) {
          dag::save_dag(dag::build_dag(g.manifest.graph_name, g.terms), fs::path(out_path) / (g.manifest.graph_name + ".json"));
        }
      }
    } else if (*stats) {
      const auto s = dag::corpus_stats(dag::load_dag(dag_path));
      ordered_json j{{"nodes", s.nodes},
                     {"edges", s.edges},
                     {"roots", s.roots},
                     {"mean_terminology_words", s.mean_terminology_words},
                     {"mean_definition_words", s.mean_definition_words}};
      for (const auto& [d, c] : s.depth_histogram) j["depth_histogram"][std::to_string(d)] = c;
      for (const auto& [w, c] : s.terminology_word_histogram) j["terminology_word_histogram"][std::to_string(w)] = c;
      for (const auto& [w, c] : s.definition_word_histogram) j["definition_word_histogram"][std::to_string(w)] = c;
      write_json(out_path, j);
    } else if (*split_cmd) {
      dag::save_split(dag::make_split(dag::load_dag(dag_path), seed), out_path);
    } else if (*analyze) {
      if (!split_paths.empty() && split_paths.size() != dag_paths.size()) {
        throw pipeline::ConfigError("analyze: give one --split per --dag");
      }
      std::vector<dag::OntologyDag> graphs;
      std::vector<analysis::SimilarityProfile> profiles;
      for (std::size_t i = 0; i < dag_paths.size(); ++i) {
        graphs.push_back(dag::load_dag(dag_paths[i]));
        const analysis::ProfileConfig pc{.pair_budget = budget, .seed = seed};
        profiles.push_back(split_paths.empty()
                               ? analysis::distance_similarity_profile(graphs.back(), pc)
                               : analysis::selection_profile(graphs.back(), dag::load_split(split_paths[i]), pc));
      }
      std::optional<analysis::ConsistencyResult> consistency;
      if (graphs.size() > 1) consistency = analysis::curation_consistency(graphs);
      const auto text = analysis::report_json(profiles, consistency, threshold);
      write_json(out_path, ordered_json::parse(text));
    } else if (*train1) {
      const auto cfg = s1_settings.resolve();
      cfg.stage1.validate();
      const auto g = dag::load_dag(dag_path);
      const auto split = dag::load_split(split_path);
      const auto walks = dag::sample_walks(g, cfg.stage1.walks);
      std::vector<text::Tokens> terms;
      for (const auto& n : g.nodes()) terms.push_back(n.terminology);
      stage1::NodeEmbeddingSet e;
      e.hidden_dim = cfg.stage1.hidden_dim;
      for (const auto& n : g.nodes()) e.term_ids.push_back(n.term_id);
      const auto term_side = stage1::train_side(terms, walks, cfg.stage1);
      e.w = term_side.w;
      e.u = term_side.u;
      if (bootstrap_path.empty()) {
        log::warn("no --bootstrap given: definition-side embeddings are left at zero");
        e.w_def = stage1::Matrix::Zero(e.w.rows(), e.w.cols());
        e.u_def = e.w_def;
        e.bootstrap.assign(g.size(), false);
      } else {
        const auto defs = stage1::definition_source(g, split.train, read_bootstrap(bootstrap_path, g));
        auto def_cfg = cfg.stage1;
        def_cfg.seed = cfg.stage1.seed + 1;
        const auto def_side = stage1::train_side(defs.texts, walks, def_cfg);
        e.w_def = def_side.w;
        e.u_def = def_side.u;
        e.bootstrap = defs.bootstrap;
      }
      stage1::save_embeddings(e, out_path);
    } else if (*train_base) {
      const auto cfg = base_settings.resolve();
      const auto g = dag::load_dag(dag_path);
      const auto split = dag::load_split(split_path);
      const auto vocab = stage2::experiment_vocabulary(g, split, cfg.vocab_min_count);
      gen::BaselineConfig bc;
      bc.kind = gen::baseline_kind_from_string(kind);
      bc.word_dim = cfg.baseline_word_dim;
      bc.hidden_dim = cfg.baseline_hidden_dim;
      bc.latent_dim = bc.kind == gen::BaselineKind::kCvae ? cfg.cvae_latent_dim : 0;
      bc.transformer = cfg.transformer;
      bc.seed = cfg.seed;
      auto model = gen::make_baseline(bc, vocab.size());
      const auto log = gen::train_generator(*model, examples(g, split.train, vocab), examples(g, split.valid, vocab),
                                            cfg.train);
      gen::save_generator(out_path, *model);
      vocab.save(vocab_path_for(out_path));
      save_train_log(out_path + ".log.json", log);
    } else if (*boot) {
      const auto g = dag::load_dag(dag_path);
      const auto split = dag::load_split(split_path);
      const auto model = gen::load_generator(ckpt_path);
      std::vector<dag::NodeIndex> held(split.valid);
      held.insert(held.end(), split.test.begin(), split.test.end());
      const auto r = gen::bootstrap_definitions(*model, text::Vocabulary::load(vocab_path_for(ckpt_path)), g, held);
      std::ofstream out(out_path);
      for (const auto& [v, tokens] : r.definitions) {
        out << g.node(v).term_id << '\t' << (r.fallback.contains(v) ? 1 : 0) << '\t' << text::detokenize(tokens) << '\n';
      }
    } else if (*train2) {
      const auto cfg = s2_settings.resolve();
      const auto g = dag::load_dag(dag_path);
      const auto split = dag::load_split(split_path);
      const auto vocab = stage2::experiment_vocabulary(g, split, cfg.vocab_min_count);
      const auto emb = stage1::load_embeddings(emb_path);
      std::optional<stage2::LocalTable> local;
      if (!local_path.empty()) local = stage2::LocalTable::load(local_path);
      stage2::Stage2Config sc;
      sc.transformer = cfg.transformer;
      sc.use_tg = !no_tg;
      sc.use_dg = !no_dg;
      sc.seed = cfg.seed;
      if (sc.use_dg && std::none_of(emb.bootstrap.begin(), emb.bootstrap.end(), [](bool b) { return b; })) {
        throw std::runtime_error(
            "g^d requested but the embeddings carry no bootstrap definitions for held-out nodes; run "
            "train-baseline --kind transformer, bootstrap, then train-stage1 --bootstrap (or pass --no-dg)");
      }
      auto train_ex = examples(g, split.train, vocab);
      auto valid_ex = examples(g, split.valid, vocab);
      stage2::attach_embeddings(train_ex, emb, local ? &*local : nullptr);
      stage2::attach_embeddings(valid_ex, emb, local ? &*local : nullptr);
      auto model = stage2::make_model(sc, vocab.size(), 2 * emb.hidden_dim, local ? local->dim() : 0);
      const auto log = gen::train_generator(*model, train_ex, valid_ex, cfg.train);
      gen::save_generator(out_path, *model);
      vocab.save(vocab_path_for(out_path));
      save_train_log(out_path + ".log.json", log);
    } else if (*generate) {
      const auto g = dag::load_dag(dag_path);
      const auto split = dag::load_split(split_path);
      const auto vocab = text::Vocabulary::load(vocab_path_for(ckpt_path));
      const auto model = gen::load_generator(ckpt_path);
      auto test_ex = examples(g, split.test, vocab);
      if (!emb_path.empty()) {
        std::optional<stage2::LocalTable> local;
        if (!local_path.empty()) local = stage2::LocalTable::load(local_path);
        stage2::attach_embeddings(test_ex, stage1::load_embeddings(emb_path), local ? &*local : nullptr);
      }
      const gen::DecodeOptions opts{.beam = beam};
      std::vector<GenerationRecord> records;
      for (const auto& ex : test_ex) records.push_back(gen::to_record(ex, model->decode(ex, opts), vocab, opts));
      write_generations_jsonl(fs::path(out_path), records);
    } else if (*evaluate) {
      metrics::ScoreOptions opts;
      opts.nist_order = nist_order;
      metrics::SynonymTable synonyms;
      if (!synonyms_path.empty()) {
        synonyms = metrics::SynonymTable::load(synonyms_path);
        opts.synonyms = &synonyms;
      }
      const auto r = metrics::score_run(model_label, read_generations_jsonl(fs::path(gens_path)), opts);
      metrics::save_report(out_path, r);
      if (!csv_path.empty()) metrics::save_report_csv(csv_path, r);
    } else if (*linkpred) {
      const auto g = dag::load_dag(dag_path);
      const auto split = downstream::make_link_split(g, {.seed = seed});
      downstream::NodeVectors vectors;
      std::string embedder;
      if (emb_path.empty()) {
        embedder = "shallow";
        vectors = downstream::train_shallow_embeddings(g, split.train, {.dim = dim, .seed = seed});
      } else {
        embedder = "stage1-gt";
        const auto emb = stage1::load_embeddings(emb_path);
        if (emb.size() != g.size()) throw std::runtime_error("embedding file does not match the DAG");
        for (std::size_t i = 0; i < g.size(); ++i) {
          vectors.push_back(emb.gt(static_cast<dag::NodeIndex>(i)).transpose());
        }
      }
      const auto r = downstream::link_prediction_eval(g, vectors, split, downstream::scorer_from_string(scorer));
      write_json(out_path, {{"graph", g.name()},
                            {"embedder", embedder},
                            {"scorer", scorer},
                            {"seed", seed},
                            {"test_positives", split.test.size()},
                            {"auc", r.auc},
                            {"ap", r.ap}});
    } else if (*gran) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(dags_dir)) {
        if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      std::vector<dag::OntologyDag> graphs;
      for (const auto& f : files) graphs.push_back(dag::load_dag(f));
      const auto alignment = downstream::align_granularity(graphs);
      const auto table = stage2::LocalTable::load(emb_path);
      std::vector<downstream::LeveledEmbedding> items;
      std::size_t missing = 0;
      for (const auto& per_dag : alignment.labels) {
        for (const auto& l : per_dag) {
          if (const auto* v = table.find(l.term_id)) {
            items.push_back({*v, l.level});
          } else {
            ++missing;
          }
        }
      }
      if (missing > 0) log::warn(missing, " nodes have no sentence embedding and are skipped");
      std::mt19937_64 rng(seed);
      std::shuffle(items.begin(), items.end(), rng);
      const auto n_test = static_cast<std::size_t>(test_fraction * static_cast<double>(items.size()));
      const std::span<const downstream::LeveledEmbedding> test(items.data(), n_test);
      const std::span<const downstream::LeveledEmbedding> train(items.data() + n_test, items.size() - n_test);
      ordered_json j{{"task", task}, {"graphs", graphs.size()}, {"sentences", items.size()}, {"offsets", alignment.offsets}};
      if (task == "rel") {
        j["accuracy"] = downstream::relative_granularity_eval(train, test, {.seed = seed});
      } else {
        const auto r = downstream::absolute_granularity_eval(train, test, {.seed = seed});
        j["accuracy"] = r.accuracy;
        j["spearman"] = r.spearman;
        j["spearman_defined"] = r.spearman_defined;
      }
      write_json(out_path, j);
    } else if (*pipe) {
      auto cfg = pipeline::load_config(config_path);
      for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw pipeline::ConfigError("--set expects key=value, got '" + kv + "'");
        pipeline::set_option(cfg, kv.substr(0, eq), kv.substr(eq + 1));
      }
      const auto ledger = pipeline::run_pipeline(cfg);
      const auto root = pipeline::output_root(cfg);
      for (const auto& d : ledger.dags) {
        std::cout << "## " << d << "\n\n"
                  << pipeline::report_table(ledger, root, d, cfg.models, pipeline::TableFormat::kMarkdown) << '\n';
      }
    }
  } catch (const pipeline::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const pipeline::StepError& e) {
    std::cerr << "step failed: " << e.what() << '\n';
    return kExitStep;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
