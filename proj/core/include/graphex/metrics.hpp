#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "graphex/generation.hpp"
#include "graphex/text.hpp"

namespace graphex::metrics {

using text::Tokens;

inline constexpr double kBleuEpsilon = 1e-9;

// Clipped n-gram statistics for one candidate/reference pair.
struct BleuStats {
  std::array<int64_t, 4> matches{};
  std::array<int64_t, 4> totals{};  // candidate n-gram counts
  int64_t candidate_length = 0;
  int64_t reference_length = 0;

  BleuStats& operator+=(const BleuStats& o);
};

BleuStats bleu_stats(const Tokens& candidate, const Tokens& reference);

// Sentence BLEU with uniform weights over orders 1..n and add-epsilon smoothing
// of zero-match orders. Returns 0 when no unigram matches.
double bleu_n(const Tokens& candidate, const Tokens& reference, int n, double epsilon = kBleuEpsilon);
// Corpus BLEU from aggregated counts, unsmoothed.
double corpus_bleu(const BleuStats& totals, int n);

std::string porter_stem(std::string_view word);

// word -> set of synonyms; symmetric lookups are the caller's business.
class SynonymTable {
 public:
  void add(const std::string& a, const std::string& b);
  bool synonyms(const std::string& a, const std::string& b) const;
  bool empty() const { return table_.empty(); }
  // One group per line, whitespace separated words that are mutual synonyms.
  static SynonymTable load(const std::filesystem::path& path);

 private:
  std::unordered_map<std::string, std::set<std::string>> table_;
};

struct MeteorResult {
  double score = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double fmean = 0.0;
  double penalty = 0.0;
  int matches = 0;
  int chunks = 0;
};

MeteorResult meteor_detail(const Tokens& candidate, const Tokens& reference,
                           const SynonymTable* synonyms = nullptr);
double meteor(const Tokens& candidate, const Tokens& reference, const SynonymTable* synonyms = nullptr);

// Information weights built once from a reference corpus.
class NistInfo {
 public:
  NistInfo() = default;
  NistInfo(const std::vector<Tokens>& references, int max_n = 5);

  double info(const Tokens& ngram) const;
  int max_n() const { return max_n_; }

 private:
  int max_n_ = 5;
  int64_t total_words_ = 0;
  std::map<Tokens, int64_t> counts_;
};

// Numerator/denominator per order plus lengths; summable across a corpus.
struct NistStats {
  std::vector<double> info_sum;
  std::vector<int64_t> totals;
  int64_t candidate_length = 0;
  int64_t reference_length = 0;
};

NistStats nist_stats(const Tokens& candidate, const Tokens& reference, const NistInfo& info);
double nist_length_penalty(double candidate_length, double reference_length);
double nist_from_stats(const std::vector<NistStats>& stats);
double nist(const Tokens& candidate, const Tokens& reference, const NistInfo& info);

struct ExampleScore {
  int32_t node = -1;
  std::string term_id;
  std::array<double, 4> bleu{};
  double meteor = 0.0;
  double nist = 0.0;
};

struct MetricReport {
  std::string model;
  std::array<double, 4> bleu{};
  double meteor = 0.0;
  double nist = 0.0;
  std::size_t example_count = 0;
  std::string tokenizer_version;
  std::string smoothing;
  std::map<std::string, std::string> model_notes;  // e.g. recurrent_cell for the RNN baselines
  std::vector<ExampleScore> examples;
};

struct ScoreOptions {
  int nist_order = 5;
  const SynonymTable* synonyms = nullptr;
};

MetricReport score_run(const std::string& model, const std::vector<GenerationRecord>& generations,
                       const ScoreOptions& options = {});

std::string report_to_json(const MetricReport& report);
MetricReport report_from_json(const std::string& json);
void save_report(const std::filesystem::path& json_path, const MetricReport& report);
MetricReport load_report(const std::filesystem::path& json_path);
// Per-example CSV with a header row.
void save_report_csv(const std::filesystem::path& csv_path, const MetricReport& report);

}  // namespace graphex::metrics
