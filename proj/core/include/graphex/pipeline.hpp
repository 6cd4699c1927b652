#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "graphex/stage1.hpp"
#include "graphex/seqgen.hpp"
#include "graphex/transformer.hpp"

namespace graphex::pipeline {

namespace fs = std::filesystem;

// Bad or inconsistent configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A pipeline step failed; the ledger written so far is kept (CLI exit code 3).
class StepError : public std::runtime_error {
 public:
  StepError(const std::string& step, const std::string& what)
      : std::runtime_error(step + ": " + what), step_(step) {}
  const std::string& step() const { return step_; }

 private:
  std::string step_;
};

std::string sha256_hex(std::string_view bytes);
std::string file_sha256(const fs::path& path);

// Model kinds in table order.
inline const std::vector<std::string> kAllModels{"seq2seq",       "cvae",          "transformer",
                                                 "graphex-no-tg", "graphex-no-dg", "graphex"};

struct ModelRow {
  std::string kind;
  std::string label;
  bool tg = false;
  bool dg = false;
};
// Display row for a model kind; throws ConfigError for unknown kinds.
ModelRow model_row(const std::string& kind);

struct ExperimentConfig {
  fs::path output_dir = "graphex-run";

  // Exactly one input source.
  std::vector<fs::path> dag_files;
  fs::path obo_dir;
  int synthetic_nodes = 0;
  int synthetic_branching = 3;
  uint64_t synthetic_seed = 0;

  fs::path local_embeddings;  // optional lookup table for l_i
  fs::path synonyms;          // optional METEOR synonym groups
  int nist_order = 5;

  bool select_graphs = false;
  double selection_threshold = -0.3;
  std::size_t pair_budget = 2000;
  int similarity_bleu_order = 4;

  uint64_t split_seed = 0;
  int vocab_min_count = 2;
  stage1::Stage1Config stage1{};
  gen::TransformerConfig transformer{};
  gen::TrainConfig train{};
  int baseline_word_dim = 768;
  int baseline_hidden_dim = 768;
  int cvae_latent_dim = 64;
  std::vector<std::string> models = kAllModels;
  int beam = 1;
  uint64_t seed = 1;  // model initialization

  // Checks ranges, input paths and model names; throws ConfigError.
  void validate() const;
  // Every key as "key = value", one per line, in a fixed order.
  std::string canonical() const;
};

// "key = value" lines; '#' starts a comment. Relative paths resolve against
// `base_dir`. Unknown keys and malformed values throw ConfigError.
ExperimentConfig parse_config(std::istream& in, const fs::path& base_dir = {});
ExperimentConfig load_config(const fs::path& path);
void set_option(ExperimentConfig& cfg, const std::string& key, const std::string& value, const fs::path& base_dir = {});
std::vector<std::string> config_keys();

struct StepRecord {
  std::string dag;  // empty for corpus-level steps
  std::string step;
  std::string key;  // hash of step name, settings and input hashes
  std::map<std::string, std::string> inputs;   // path relative to the run dir -> sha256
  std::map<std::string, std::string> outputs;  // idem
  double seconds = 0.0;
  bool cached = false;
};

struct RunLedger {
  std::string config_hash;
  std::vector<std::string> dags;  // DAG directories in processing order
  std::vector<StepRecord> steps;

  const StepRecord* find(const std::string& dag, const std::string& step) const;
  std::size_t executed() const;  // steps run in this invocation (not cached)
};

void save_ledger(const RunLedger& ledger, const fs::path& path);
RunLedger load_ledger(const fs::path& path);

// Resolved output directory: GRAPHEX_OUTPUT_ROOT overrides cfg.output_dir.
fs::path output_root(const ExperimentConfig& cfg);

// Runs every step per DAG, skipping steps whose recorded key and output
// hashes still match. The ledger is rewritten after each step.
RunLedger run_pipeline(const ExperimentConfig& cfg);

enum class TableFormat { kMarkdown, kCsv };

// Model rows in table order for one DAG of a run; missing reports show as pending.
std::string report_table(const RunLedger& ledger, const fs::path& run_dir, const std::string& dag,
                         const std::vector<std::string>& models, TableFormat format);

}  // namespace graphex::pipeline
