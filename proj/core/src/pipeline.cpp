#include "graphex/pipeline.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "graphex/analysis.hpp"
#include "graphex/baselines.hpp"
#include "graphex/log.hpp"
#include "graphex/metrics.hpp"
#include "graphex/obo.hpp"
#include "graphex/stage2.hpp"
#include "graphex/synthetic.hpp"

namespace graphex::pipeline {

using nlohmann::ordered_json;

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
  return out.str();
}

std::string file_sha256(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return sha256_hex(buf.str());
}

ModelRow model_row(const std::string& kind) {
  if (kind == "seq2seq") return {kind, "Seq2Seq", false, false};
  if (kind == "cvae") return {kind, "CVAE", false, false};
  if (kind == "transformer") return {kind, "Transformer", false, false};
  if (kind == "graphex-no-tg") return {kind, stage2::model_label(false, true), false, true};
  if (kind == "graphex-no-dg") return {kind, stage2::model_label(true, false), true, false};
  if (kind == "graphex") return {kind, stage2::model_label(true, true), true, true};
  if (kind == "graphex-local-only") return {kind, stage2::model_label(false, false), false, false};
  throw ConfigError("unknown model '" + kind + "'");
}

namespace {

bool is_graphex(const std::string& kind) { return kind.starts_with("graphex"); }

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  T out{};
  std::string rest;
  if (!(in >> out) || (in >> rest)) throw ConfigError(key + ": cannot parse '" + v + "'");
  if constexpr (std::is_unsigned_v<T>) {
    if (v.find('-') != std::string::npos) throw ConfigError(key + ": must be non-negative");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

fs::path resolve(const fs::path& base, const std::string& v) {
  if (v.empty()) return {};
  fs::path p(v);
  return p.is_relative() && !base.empty() ? base / p : p;
}

struct Field {
  const char* key;
  std::function<void(ExperimentConfig&, const std::string&, const fs::path&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define GRAPHEX_INT_FIELD(name, member, T)                                                                \
  Field {                                                                                                 \
    name, [](ExperimentConfig& c, const std::string& v, const fs::path&) { c.member = parse_number<T>(name, v); }, \
        [](const ExperimentConfig& c) { return std::to_string(c.member); }                              \
  }
#define GRAPHEX_REAL_FIELD(name, member)                                                                       \
  Field {                                                                                                      \
    name, [](ExperimentConfig& c, const std::string& v, const fs::path&) { c.member = parse_number<double>(name, v); }, \
        [](const ExperimentConfig& c) { return format_double(c.member); }                                    \
  }
#define GRAPHEX_PATH_FIELD(name, member)                                                                         \
  Field {                                                                                                        \
    name, [](ExperimentConfig& c, const std::string& v, const fs::path& base) { c.member = resolve(base, v); }, \
        [](const ExperimentConfig& c) { return c.member.string(); }                                            \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      GRAPHEX_PATH_FIELD("output_dir", output_dir),
      Field{"input.dags",
            [](ExperimentConfig& c, const std::string& v, const fs::path& base) {
              c.dag_files.clear();
              for (const auto& item : split_list(v)) c.dag_files.push_back(resolve(base, item));
            },
            [](const ExperimentConfig& c) {
              std::string out;
              for (const auto& p : c.dag_files) out += (out.empty() ? "" : ",") + p.string();
              return out;
            }},
      GRAPHEX_PATH_FIELD("input.obo_dir", obo_dir),
      GRAPHEX_INT_FIELD("input.synthetic_nodes", synthetic_nodes, int),
      GRAPHEX_INT_FIELD("input.synthetic_branching", synthetic_branching, int),
      GRAPHEX_INT_FIELD("input.synthetic_seed", synthetic_seed, uint64_t),
      GRAPHEX_PATH_FIELD("input.local_embeddings", local_embeddings),
      GRAPHEX_PATH_FIELD("metrics.synonyms", synonyms),
      GRAPHEX_INT_FIELD("metrics.nist_order", nist_order, int),
      Field{"analysis.select",
            [](ExperimentConfig& c, const std::string& v, const fs::path&) {
              c.select_graphs = parse_bool("analysis.select", v);
            },
            [](const ExperimentConfig& c) { return std::string(c.select_graphs ? "true" : "false"); }},
      GRAPHEX_REAL_FIELD("analysis.threshold", selection_threshold),
      GRAPHEX_INT_FIELD("analysis.pair_budget", pair_budget, std::size_t),
      GRAPHEX_INT_FIELD("analysis.bleu_order", similarity_bleu_order, int),
      GRAPHEX_INT_FIELD("split.seed", split_seed, uint64_t),
      GRAPHEX_INT_FIELD("vocab.min_count", vocab_min_count, int),
      GRAPHEX_INT_FIELD("stage1.word_dim", stage1.word_dim, int),
      GRAPHEX_INT_FIELD("stage1.hidden_dim", stage1.hidden_dim, int),
      GRAPHEX_INT_FIELD("stage1.walks_per_node", stage1.walks.walks_per_node, int),
      GRAPHEX_INT_FIELD("stage1.walk_length", stage1.walks.walk_length, int),
      GRAPHEX_INT_FIELD("stage1.walk_seed", stage1.walks.seed, uint64_t),
      GRAPHEX_INT_FIELD("stage1.epochs", stage1.epochs, int),
      GRAPHEX_REAL_FIELD("stage1.learning_rate", stage1.learning_rate),
      GRAPHEX_INT_FIELD("stage1.batch_nodes", stage1.batch_nodes, int),
      GRAPHEX_INT_FIELD("stage1.patience", stage1.patience, int),
      GRAPHEX_REAL_FIELD("stage1.min_improvement", stage1.min_improvement),
      GRAPHEX_INT_FIELD("stage1.negatives", stage1.negatives, int),
      GRAPHEX_REAL_FIELD("stage1.noise_power", stage1.noise_power),
      GRAPHEX_INT_FIELD("stage1.full_softmax_max_nodes", stage1.full_softmax_max_nodes, int),
      Field{"stage1.mode",
            [](ExperimentConfig& c, const std::string& v, const fs::path&) {
              if (v == "auto") {
                c.stage1.mode.reset();
              } else if (v == "full-softmax") {
                c.stage1.mode = stage1::LossMode::kFullSoftmax;
              } else if (v == "negative-sampling") {
                c.stage1.mode = stage1::LossMode::kNegativeSampling;
              } else {
                throw ConfigError("stage1.mode: expected auto, full-softmax or negative-sampling");
              }
            },
            [](const ExperimentConfig& c) {
              return std::string(c.stage1.mode ? stage1::to_string(*c.stage1.mode) : "auto");
            }},
      GRAPHEX_INT_FIELD("stage1.min_count", stage1.min_count, int),
      GRAPHEX_INT_FIELD("stage1.seed", stage1.seed, uint64_t),
      GRAPHEX_INT_FIELD("transformer.encoder_layers", transformer.encoder_layers, int),
      GRAPHEX_INT_FIELD("transformer.decoder_layers", transformer.decoder_layers, int),
      GRAPHEX_INT_FIELD("transformer.dim", transformer.dim, int),
      GRAPHEX_INT_FIELD("transformer.heads", transformer.heads, int),
      GRAPHEX_INT_FIELD("transformer.ff_dim", transformer.ff_dim, int),
      GRAPHEX_REAL_FIELD("transformer.dropout", transformer.dropout),
      GRAPHEX_INT_FIELD("train.epochs", train.epochs, int),
      GRAPHEX_REAL_FIELD("train.learning_rate", train.learning_rate),
      GRAPHEX_INT_FIELD("train.batch_size", train.batch_size, int),
      GRAPHEX_INT_FIELD("train.patience", train.patience, int),
      GRAPHEX_REAL_FIELD("train.clip_norm", train.clip_norm),
      GRAPHEX_INT_FIELD("train.seed", train.seed, uint64_t),
      GRAPHEX_INT_FIELD("baseline.word_dim", baseline_word_dim, int),
      GRAPHEX_INT_FIELD("baseline.hidden_dim", baseline_hidden_dim, int),
      GRAPHEX_INT_FIELD("cvae.latent_dim", cvae_latent_dim, int),
      Field{"models",
            [](ExperimentConfig& c, const std::string& v, const fs::path&) { c.models = split_list(v); },
            [](const ExperimentConfig& c) {
              std::string out;
              for (const auto& m : c.models) out += (out.empty() ? "" : ",") + m;
              return out;
            }},
      GRAPHEX_INT_FIELD("decode.beam", beam, int),
      GRAPHEX_INT_FIELD("seed", seed, uint64_t),
  };
  return table;
}

#undef GRAPHEX_INT_FIELD
#undef GRAPHEX_REAL_FIELD
#undef GRAPHEX_PATH_FIELD

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.key);
  return out;
}

void set_option(ExperimentConfig& cfg, const std::string& key, const std::string& value, const fs::path& base_dir) {
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(cfg, value, base_dir);
      return;
    }
  }
  throw ConfigError("unknown configuration key '" + key + "'");
}

ExperimentConfig parse_config(std::istream& in, const fs::path& base_dir) {
  ExperimentConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    try {
      set_option(cfg, key, trim(line.substr(eq + 1)), base_dir);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  return parse_config(in, path.parent_path());
}

std::string ExperimentConfig::canonical() const {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
  return out;
}

void ExperimentConfig::validate() const {
  const int sources = (dag_files.empty() ? 0 : 1) + (obo_dir.empty() ? 0 : 1) + (synthetic_nodes > 0 ? 1 : 0);
  if (sources != 1) {
    throw ConfigError("exactly one of input.dags, input.obo_dir, input.synthetic_nodes must be set");
  }
  for (const auto& p : dag_files) {
    if (!fs::is_regular_file(p)) throw ConfigError("input.dags: no such file " + p.string());
  }
  if (!obo_dir.empty() && !fs::is_directory(obo_dir)) throw ConfigError("input.obo_dir: no such directory " + obo_dir.string());
  if (!local_embeddings.empty() && !fs::is_regular_file(local_embeddings)) {
    throw ConfigError("input.local_embeddings: no such file " + local_embeddings.string());
  }
  if (!synonyms.empty() && !fs::is_regular_file(synonyms)) throw ConfigError("metrics.synonyms: no such file " + synonyms.string());
  if (synthetic_branching < 1) throw ConfigError("input.synthetic_branching must be positive");
  if (nist_order < 1) throw ConfigError("metrics.nist_order must be positive");
  if (similarity_bleu_order < 1 || similarity_bleu_order > 4) throw ConfigError("analysis.bleu_order must be in 1..4");
  if (vocab_min_count < 1) throw ConfigError("vocab.min_count must be positive");
  if (beam < 1) throw ConfigError("decode.beam must be positive");
  if (baseline_word_dim < 1 || baseline_hidden_dim < 1 || cvae_latent_dim < 1) {
    throw ConfigError("baseline dimensions must be positive");
  }
  if (models.empty()) throw ConfigError("models: at least one model required");
  for (const auto& m : models) model_row(m);
  try {
    stage1.validate();
    transformer.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (train.epochs < 1 || train.batch_size < 1 || !(train.learning_rate > 0.0)) {
    throw ConfigError("train: epochs, batch_size and learning_rate must be positive");
  }
}

const StepRecord* RunLedger::find(const std::string& dag, const std::string& step) const {
  for (const auto& s : steps) {
    if (s.dag == dag && s.step == step) return &s;
  }
  return nullptr;
}

std::size_t RunLedger::executed() const {
  return static_cast<std::size_t>(std::count_if(steps.begin(), steps.end(), [](const auto& s) { return !s.cached; }));
}

void save_ledger(const RunLedger& ledger, const fs::path& path) {
  ordered_json j;
  j["config_hash"] = ledger.config_hash;
  j["dags"] = ledger.dags;
  j["steps"] = ordered_json::array();
  for (const auto& s : ledger.steps) {
    j["steps"].push_back({{"dag", s.dag},
                          {"step", s.step},
                          {"key", s.key},
                          {"inputs", s.inputs},
                          {"outputs", s.outputs},
                          {"seconds", s.seconds},
                          {"cached", s.cached}});
  }
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write ledger " + tmp.string());
    out << j.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

RunLedger load_ledger(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read ledger " + path.string());
  const auto j = nlohmann::json::parse(in);
  RunLedger l;
  l.config_hash = j.at("config_hash").get<std::string>();
  l.dags = j.at("dags").get<std::vector<std::string>>();
  for (const auto& s : j.at("steps")) {
    StepRecord r;
    r.dag = s.at("dag").get<std::string>();
    r.step = s.at("step").get<std::string>();
    r.key = s.at("key").get<std::string>();
    r.inputs = s.at("inputs").get<std::map<std::string, std::string>>();
    r.outputs = s.at("outputs").get<std::map<std::string, std::string>>();
    r.seconds = s.at("seconds").get<double>();
    r.cached = s.at("cached").get<bool>();
    l.steps.push_back(std::move(r));
  }
  return l;
}

fs::path output_root(const ExperimentConfig& cfg) {
  if (const char* env = std::getenv("GRAPHEX_OUTPUT_ROOT"); env != nullptr && *env != '\0') return fs::path(env);
  return cfg.output_dir;
}

namespace {

std::string dir_name(const std::string& graph) {
  std::string out;
  for (char c : graph) {
    const auto u = static_cast<unsigned char>(c);
    out.push_back(std::isalnum(u) || c == '-' || c == '_' ? static_cast<char>(std::tolower(u)) : '_');
  }
  return out.empty() ? "graph" : out;
}

// Config lines whose key starts with one of the prefixes.
std::string settings(const ExperimentConfig& cfg, std::initializer_list<std::string_view> prefixes) {
  std::string out;
  for (const auto& f : fields()) {
    const std::string_view key = f.key;
    for (auto p : prefixes) {
      if (key == p || (p.ends_with('.') && key.starts_with(p))) {
        out += std::string(key) + " = " + f.get(cfg) + "\n";
        break;
      }
    }
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_train_log(const fs::path& path, const gen::TrainLog& log) {
  ordered_json j;
  j["best_epoch"] = log.best_epoch;
  j["train_loss"] = log.train_loss;
  j["valid_loss"] = log.valid_loss;
  write_text(path, j.dump(2) + "\n");
}

// Copy of g without the definitions of `hidden` nodes.
dag::OntologyDag without_definitions(const dag::OntologyDag& g, std::span<const dag::NodeIndex> hidden) {
  std::vector<dag::TermNode> nodes(g.nodes().begin(), g.nodes().end());
  for (dag::NodeIndex v : hidden) {
    nodes[static_cast<std::size_t>(v)].definition.reset();
    nodes[static_cast<std::size_t>(v)].definition_tokens.reset();
  }
  return dag::OntologyDag(g.name(), std::move(nodes), g.edges());
}

void save_bootstrap(const fs::path& path, const dag::OntologyDag& g, const gen::BootstrapResult& r) {
  std::ostringstream out;
  for (const auto& [v, tokens] : r.definitions) {
    out << g.node(v).term_id << '\t' << (r.fallback.contains(v) ? 1 : 0) << '\t';
    for (std::size_t i = 0; i < tokens.size(); ++i) out << (i ? " " : "") << tokens[i];
    out << '\n';
  }
  write_text(path, out.str());
}

std::map<dag::NodeIndex, text::Tokens> load_bootstrap(const fs::path& path, const dag::OntologyDag& g) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::map<dag::NodeIndex, text::Tokens> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos) throw std::runtime_error("malformed bootstrap line: " + line);
    const auto v = g.find(line.substr(0, t1));
    if (!v) throw std::runtime_error("bootstrap file names unknown term " + line.substr(0, t1));
    text::Tokens tokens;
    std::istringstream ts(line.substr(t2 + 1));
    for (std::string w; ts >> w;) tokens.push_back(w);
    out[*v] = std::move(tokens);
  }
  return out;
}

std::vector<dag::NodeIndex> concat(const std::vector<dag::NodeIndex>& a, const std::vector<dag::NodeIndex>& b) {
  std::vector<dag::NodeIndex> out(a);
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

class Runner {
 public:
  Runner(const ExperimentConfig& cfg, fs::path root, RunLedger previous)
      : cfg_(cfg), root_(std::move(root)), previous_(std::move(previous)) {
    ledger_.config_hash = sha256_hex(cfg.canonical());
  }

  RunLedger& ledger() { return ledger_; }
  const fs::path& root() const { return root_; }

  // Runs `body` unless a previous record with the same key still has intact
  // outputs. `body` returns the paths it wrote.
  void step(const std::string& dag, const std::string& name, const std::string& setting_text,
            const std::vector<fs::path>& inputs, const std::function<std::vector<fs::path>()>& body) {
    StepRecord rec;
    rec.dag = dag;
    rec.step = name;
    std::string key_text = name + "\n" + setting_text;
    for (const auto& p : inputs) {
      if (!fs::exists(p)) throw StepError(label(dag, name), "missing input " + p.string());
      const std::string rel = relative(p);
      const std::string h = file_sha256(p);
      rec.inputs[rel] = h;
      key_text += rel + " " + h + "\n";
    }
    rec.key = sha256_hex(key_text);

    if (const auto* prev = previous_.find(dag, name); prev && prev->key == rec.key && outputs_intact(*prev)) {
      rec.outputs = prev->outputs;
      rec.seconds = prev->seconds;
      rec.cached = true;
      log::debug("cached ", label(dag, name));
      ledger_.steps.push_back(std::move(rec));
      return;
    }
    log::info("running ", label(dag, name));
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<fs::path> outputs;
    try {
      outputs = body();
    } catch (const std::exception& e) {
      save();
      throw StepError(label(dag, name), e.what());
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (const auto& p : outputs) rec.outputs[relative(p)] = file_sha256(p);
    ledger_.steps.push_back(std::move(rec));
    save();
  }

  void save() const { save_ledger(ledger_, root_ / "ledger.json"); }

 private:
  static std::string label(const std::string& dag, const std::string& name) {
    return dag.empty() ? name : dag + "/" + name;
  }
  std::string relative(const fs::path& p) const {
    const auto rel = fs::relative(p, root_);
    return rel.empty() || rel.string().starts_with("..") ? fs::absolute(p).lexically_normal().string()
                                                         : rel.generic_string();
  }
  bool outputs_intact(const StepRecord& r) const {
    for (const auto& [rel, hash] : r.outputs) {
      const fs::path p = fs::path(rel).is_absolute() ? fs::path(rel) : root_ / rel;
      if (!fs::exists(p) || file_sha256(p) != hash) return false;
    }
    return true;
  }

  const ExperimentConfig& cfg_;
  fs::path root_;
  RunLedger previous_;
  RunLedger ledger_;
};

// Writes one DAG snapshot per input graph; returns the directory names.
std::vector<std::string> ingest(const ExperimentConfig& cfg, Runner& run) {
  std::vector<fs::path> inputs;
  if (!cfg.dag_files.empty()) inputs = cfg.dag_files;
  if (!cfg.obo_dir.empty()) {
    for (const auto& e : fs::recursive_directory_iterator(cfg.obo_dir)) {
      if (e.is_regular_file() && e.path().extension() == ".obo") inputs.push_back(e.path());
    }
    std::sort(inputs.begin(), inputs.end());
  }
  const fs::path list = run.root() / "dags.txt";
  run.step("", "ingest", settings(cfg, {"input.dags", "input.obo_dir", "input.synthetic_"}), inputs, [&] {
    std::vector<dag::OntologyDag> graphs;
    if (cfg.synthetic_nodes > 0) {
      graphs.push_back(synth::tree_dag(
          {.nodes = cfg.synthetic_nodes, .branching = cfg.synthetic_branching, .seed = cfg.synthetic_seed}));
    }
    for (const auto& p : cfg.dag_files) graphs.push_back(dag::load_dag(p));
    if (!cfg.obo_dir.empty()) {
      auto ingested = obo::ingest_directory(cfg.obo_dir);
      for (const auto& gr : ingested.graphs) {
        auto g = dag::build_dag(gr.manifest.graph_name, gr.terms);
        if (g.size() > 0) graphs.push_back(std::move(g));
      }
    }
    std::vector<fs::path> written{list};
    std::string names;
    std::set<std::string> seen;
    for (const auto& g : graphs) {
      std::string name = dir_name(g.name());
      if (!seen.insert(name).second) throw std::runtime_error("two input graphs map to directory " + name);
      fs::create_directories(run.root() / name);
      dag::save_dag(g, run.root() / name / "dag.json");
      written.push_back(run.root() / name / "dag.json");
      names += name + "\n";
    }
    write_text(list, names);
    return written;
  });
  std::vector<std::string> out;
  std::ifstream in(list);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

void run_dag(const ExperimentConfig& cfg, Runner& run, const std::string& name) {
  const fs::path dir = run.root() / name;
  const fs::path full = dir / "dag.json", visible = dir / "visible.json", split_path = dir / "split.json";
  const fs::path vocab_path = dir / "vocab.tsv", analysis_path = dir / "analysis.json";
  const fs::path term_emb = dir / "stage1_term.emb", emb_path = dir / "embeddings.emb";
  const fs::path boot_path = dir / "bootstrap.tsv";
  const fs::path transformer_ckpt = dir / "transformer.ckpt";

  // Training-side snapshot without test definitions.
  run.step(name, "split", settings(cfg, {"split.seed"}), {full}, [&]() -> std::vector<fs::path> {
    const auto g = dag::load_dag(full);
    const auto split = dag::make_split(g, cfg.split_seed);
    dag::save_split(split, split_path);
    dag::save_dag(without_definitions(g, split.test), visible);
    return {split_path, visible};
  });

  run.step(name, "analysis", settings(cfg, {"analysis."}), {visible, split_path}, [&]() -> std::vector<fs::path> {
    const auto g = dag::load_dag(visible);
    const auto split = dag::load_split(split_path);
    const auto profile = analysis::selection_profile(
        g, split, {.pair_budget = cfg.pair_budget, .bleu_order = cfg.similarity_bleu_order, .seed = cfg.split_seed});
    write_text(analysis_path,
               analysis::report_json(std::span(&profile, 1), std::nullopt, cfg.selection_threshold) + "\n");
    return {analysis_path};
  });
  if (cfg.select_graphs) {
    std::ifstream in(analysis_path);
    const auto j = nlohmann::json::parse(in);
    if (j.at("selected").empty()) {
      log::info(name, ": not selected (definition similarity does not decay with distance); skipping");
      return;
    }
  }

  run.step(name, "vocab", settings(cfg, {"vocab."}), {visible, split_path}, [&]() -> std::vector<fs::path> {
    const auto g = dag::load_dag(visible);
    stage2::experiment_vocabulary(g, dag::load_split(split_path), cfg.vocab_min_count).save(vocab_path);
    return {vocab_path};
  });

  run.step(name, "stage1-term", settings(cfg, {"stage1."}), {visible}, [&]() -> std::vector<fs::path> {
    const auto g = dag::load_dag(visible);
    const auto walks = dag::sample_walks(g, cfg.stage1.walks);
    std::vector<text::Tokens> terms;
    for (const auto& n : g.nodes()) terms.push_back(text::truncate(n.terminology, text::kMaxTerminologyTokens));
    const auto side = stage1::train_side(terms, walks, cfg.stage1);
    stage1::NodeEmbeddingSet e;
    e.hidden_dim = cfg.stage1.hidden_dim;
    for (const auto& n : g.nodes()) e.term_ids.push_back(n.term_id);
    e.w = side.w;
    e.u = side.u;
    e.w_def = stage1::Matrix::Zero(side.w.rows(), side.w.cols());
    e.u_def = e.w_def;
    e.bootstrap.assign(g.size(), false);
    stage1::save_embeddings(e, term_emb);
    return {term_emb};
  });

  const auto examples = [&](const fs::path& dag_path, const std::vector<dag::NodeIndex>& nodes) {
    return stage2::examples_for(dag::load_dag(dag_path), nodes, text::Vocabulary::load(vocab_path));
  };

  const std::string model_settings = settings(cfg, {"transformer.", "train.", "seed"});
  run.step(name, "train-transformer", model_settings, {visible, split_path, vocab_path},
           [&]() -> std::vector<fs::path> {
             const auto split = dag::load_split(split_path);
             const auto vocab = text::Vocabulary::load(vocab_path);
             gen::BaselineConfig bc;
             bc.kind = gen::BaselineKind::kTransformer;
             bc.transformer = cfg.transformer;
             bc.seed = cfg.seed;
             auto model = gen::make_baseline(bc, vocab.size());
             const auto log = gen::train_generator(*model, examples(visible, split.train),
                                                   examples(visible, split.valid), cfg.train);
             gen::save_generator(transformer_ckpt, *model);
             write_train_log(dir / "transformer.log.json", log);
             return {transformer_ckpt, dir / "transformer.log.json"};
           });

  run.step(name, "bootstrap", "", {transformer_ckpt, visible, split_path, vocab_path}, [&]() -> std::vector<fs::path> {
    const auto g = dag::load_dag(visible);
    const auto split = dag::load_split(split_path);
    const auto model = gen::load_generator(transformer_ckpt);
    const auto held = concat(split.valid, split.test);
    save_bootstrap(boot_path, g, gen::bootstrap_definitions(*model, text::Vocabulary::load(vocab_path), g, held));
    return {boot_path};
  });

  run.step(name, "stage1-def", settings(cfg, {"stage1."}), {visible, split_path, boot_path, term_emb},
           [&]() -> std::vector<fs::path> {
             const auto g = dag::load_dag(visible);
             const auto split = dag::load_split(split_path);
             const auto defs = stage1::definition_source(g, split.train, load_bootstrap(boot_path, g));
             const auto walks = dag::sample_walks(g, cfg.stage1.walks);
             auto def_cfg = cfg.stage1;
             def_cfg.seed = cfg.stage1.seed + 1;
             const auto side = stage1::train_side(defs.texts, walks, def_cfg);
             auto e = stage1::load_embeddings(term_emb);
             e.w_def = side.w;
             e.u_def = side.u;
             e.bootstrap = defs.bootstrap;
             stage1::save_embeddings(e, emb_path);
             return {emb_path};
           });

  std::vector<fs::path> local_inputs;
  if (!cfg.local_embeddings.empty()) local_inputs.push_back(cfg.local_embeddings);
  std::optional<stage2::LocalTable> local;
  auto local_table = [&]() -> const stage2::LocalTable* {
    if (cfg.local_embeddings.empty()) return nullptr;
    if (!local) local = stage2::LocalTable::load(cfg.local_embeddings);
    return &*local;
  };

  std::vector<fs::path> reports;
  for (const auto& kind : cfg.models) {
    const auto row = model_row(kind);
    const fs::path ckpt = kind == "transformer" ? transformer_ckpt : dir / (kind + ".ckpt");
    std::vector<fs::path> extra;
    if (is_graphex(kind)) {
      extra = local_inputs;
      extra.insert(extra.begin(), emb_path);
    }

    if (is_graphex(kind)) {
      auto inputs = std::vector<fs::path>{visible, split_path, vocab_path};
      inputs.insert(inputs.end(), extra.begin(), extra.end());
      run.step(name, "train-" + kind, model_settings, inputs, [&]() -> std::vector<fs::path> {
        const auto split = dag::load_split(split_path);
        const auto vocab = text::Vocabulary::load(vocab_path);
        const auto emb = stage1::load_embeddings(emb_path);
        auto train_ex = examples(visible, split.train);
        auto valid_ex = examples(visible, split.valid);
        stage2::attach_embeddings(train_ex, emb, local_table());
        stage2::attach_embeddings(valid_ex, emb, local_table());
        stage2::Stage2Config sc;
        sc.transformer = cfg.transformer;
        sc.use_tg = row.tg;
        sc.use_dg = row.dg;
        sc.seed = cfg.seed;
        if (kind == "graphex-local-only") sc.use_tg = sc.use_dg = false;
        auto model = stage2::make_model(sc, vocab.size(), 2 * emb.hidden_dim, local_table() ? local_table()->dim() : 0);
        const auto log = gen::train_generator(*model, train_ex, valid_ex, cfg.train);
        gen::save_generator(ckpt, *model);
        write_train_log(dir / (kind + ".log.json"), log);
        return {ckpt, dir / (kind + ".log.json")};
      });
    } else if (kind != "transformer") {
      run.step(name, "train-" + kind, model_settings + settings(cfg, {"baseline.", "cvae."}),
               {visible, split_path, vocab_path}, [&]() -> std::vector<fs::path> {
                 const auto split = dag::load_split(split_path);
                 const auto vocab = text::Vocabulary::load(vocab_path);
                 gen::BaselineConfig bc;
                 bc.kind = gen::baseline_kind_from_string(kind);
                 bc.word_dim = cfg.baseline_word_dim;
                 bc.hidden_dim = cfg.baseline_hidden_dim;
                 bc.latent_dim = bc.kind == gen::BaselineKind::kCvae ? cfg.cvae_latent_dim : 0;
                 bc.seed = cfg.seed;
                 auto model = gen::make_baseline(bc, vocab.size());
                 const auto log = gen::train_generator(*model, examples(visible, split.train),
                                                       examples(visible, split.valid), cfg.train);
                 gen::save_generator(ckpt, *model);
                 write_train_log(dir / (kind + ".log.json"), log);
                 return {ckpt, dir / (kind + ".log.json")};
               });
    }

    const fs::path gens = dir / (kind + ".generations.jsonl");
    auto gen_inputs = std::vector<fs::path>{ckpt, full, split_path, vocab_path};
    gen_inputs.insert(gen_inputs.end(), extra.begin(), extra.end());
    run.step(name, "generate-" + kind, settings(cfg, {"decode."}), gen_inputs, [&]() -> std::vector<fs::path> {
      const auto split = dag::load_split(split_path);
      const auto vocab = text::Vocabulary::load(vocab_path);
      auto test_ex = examples(full, split.test);
      const auto model = gen::load_generator(ckpt);
      if (is_graphex(kind)) stage2::attach_embeddings(test_ex, stage1::load_embeddings(emb_path), local_table());
      const gen::DecodeOptions opts{.beam = cfg.beam};
      std::vector<GenerationRecord> records;
      for (const auto& ex : test_ex) records.push_back(gen::to_record(ex, model->decode(ex, opts), vocab, opts));
      write_generations_jsonl(gens, records);
      return {gens};
    });

    const fs::path report = dir / (kind + ".report.json"), csv = dir / (kind + ".examples.csv");
    std::vector<fs::path> eval_inputs{gens};
    if (!cfg.synonyms.empty()) eval_inputs.push_back(cfg.synonyms);
    run.step(name, "evaluate-" + kind, settings(cfg, {"metrics."}), eval_inputs, [&]() -> std::vector<fs::path> {
      metrics::ScoreOptions opts;
      opts.nist_order = cfg.nist_order;
      metrics::SynonymTable synonyms;
      if (!cfg.synonyms.empty()) {
        synonyms = metrics::SynonymTable::load(cfg.synonyms);
        opts.synonyms = &synonyms;
      }
      auto r = metrics::score_run(row.label, read_generations_jsonl(gens), opts);
      if (kind == "seq2seq" || kind == "cvae") r.model_notes["recurrent_cell"] = "gru";
      metrics::save_report(report, r);
      metrics::save_report_csv(csv, r);
      return {report, csv};
    });
    reports.push_back(report);
  }

  run.step(name, "report", "", reports, [&]() -> std::vector<fs::path> {
    const fs::path md = dir / "table.md", csv = dir / "table.csv";
    write_text(md, report_table(run.ledger(), run.root(), name, cfg.models, TableFormat::kMarkdown));
    write_text(csv, report_table(run.ledger(), run.root(), name, cfg.models, TableFormat::kCsv));
    return {md, csv};
  });
}

}  // namespace

RunLedger run_pipeline(const ExperimentConfig& cfg) {
  cfg.validate();
  const fs::path root = output_root(cfg);
  fs::create_directories(root);
  RunLedger previous;
  if (fs::exists(root / "ledger.json")) previous = load_ledger(root / "ledger.json");
  write_text(root / "config.resolved", cfg.canonical());

  Runner run(cfg, root, std::move(previous));
  run.ledger().dags = ingest(cfg, run);
  run.save();
  for (const auto& name : run.ledger().dags) run_dag(cfg, run, name);
  run.save();
  log::info("pipeline finished: ", run.ledger().executed(), " steps run, ",
            run.ledger().steps.size() - run.ledger().executed(), " reused");
  return run.ledger();
}

std::string report_table(const RunLedger& ledger, const fs::path& run_dir, const std::string& dag,
                         const std::vector<std::string>& models, TableFormat format) {
  std::vector<std::string> order;
  for (const auto& kind : kAllModels) {
    if (std::find(models.begin(), models.end(), kind) != models.end()) order.push_back(kind);
  }
  for (const auto& kind : models) {
    if (std::find(order.begin(), order.end(), kind) == order.end()) order.push_back(kind);
  }
  std::ostringstream out;
  const bool md = format == TableFormat::kMarkdown;
  if (md) {
    out << "| Model | TG | DG | BLEU1 | BLEU2 | BLEU3 | BLEU4 | METEOR | NIST |\n";
    out << "|---|---|---|---|---|---|---|---|---|\n";
  } else {
    out << "model,tg,dg,bleu1,bleu2,bleu3,bleu4,meteor,nist\n";
  }
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), md ? "%.4f" : "%.17g", v);
    return std::string(buf);
  };
  for (const auto& kind : order) {
    const auto row = model_row(kind);
    const fs::path path = run_dir / dag / (kind + ".report.json");
    const bool done = ledger.find(dag, "evaluate-" + kind) != nullptr && fs::exists(path);
    std::vector<std::string> cells{row.label, row.tg ? "true" : "false", row.dg ? "true" : "false"};
    if (done) {
      const auto r = metrics::load_report(path);
      for (double b : r.bleu) cells.push_back(num(b));
      cells.push_back(num(r.meteor));
      cells.push_back(num(r.nist));
    } else {
      cells.insert(cells.end(), 6, "pending");
    }
    if (md) {
      out << "|";
      for (const auto& c : cells) out << ' ' << c << " |";
    } else {
      for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace graphex::pipeline
