#include "graphex/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace graphex::metrics {
namespace {

using NgramCounts = std::map<Tokens, int64_t>;

NgramCounts ngram_counts(const Tokens& tokens, int n) {
  NgramCounts out;
  if (static_cast<int>(tokens.size()) < n) return out;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
    ++out[Tokens(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                 tokens.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  }
  return out;
}

int64_t ngram_total(const Tokens& tokens, int n) {
  return std::max<int64_t>(0, static_cast<int64_t>(tokens.size()) - n + 1);
}

double bleu_brevity(int64_t c, int64_t r) {
  if (c > r) return 1.0;
  if (c == 0) return 0.0;
  return std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
}

void check_order(int n) {
  if (n < 1 || n > 4) throw std::invalid_argument("BLEU order must be in 1..4");
}

}  // namespace

BleuStats& BleuStats::operator+=(const BleuStats& o) {
  for (std::size_t i = 0; i < 4; ++i) {
    matches[i] += o.matches[i];
    totals[i] += o.totals[i];
  }
  candidate_length += o.candidate_length;
  reference_length += o.reference_length;
  return *this;
}

BleuStats bleu_stats(const Tokens& candidate, const Tokens& reference) {
  BleuStats s;
  s.candidate_length = static_cast<int64_t>(candidate.size());
  s.reference_length = static_cast<int64_t>(reference.size());
  for (int n = 1; n <= 4; ++n) {
    const auto cand = ngram_counts(candidate, n);
    const auto ref = ngram_counts(reference, n);
    int64_t m = 0;
    for (const auto& [gram, count] : cand) {
      auto it = ref.find(gram);
      if (it != ref.end()) m += std::min(count, it->second);
    }
    s.matches[static_cast<std::size_t>(n - 1)] = m;
    s.totals[static_cast<std::size_t>(n - 1)] = ngram_total(candidate, n);
  }
  return s;
}

double bleu_n(const Tokens& candidate, const Tokens& reference, int n, double epsilon) {
  check_order(n);
  if (candidate.empty()) return 0.0;
  const BleuStats s = bleu_stats(candidate, reference);
  if (s.matches[0] == 0) return 0.0;
  double log_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    // Orders longer than the candidate count as one empty slot.
    const double denom = static_cast<double>(std::max<int64_t>(1, s.totals[k]));
    const double num = s.matches[k] == 0 ? epsilon : static_cast<double>(s.matches[k]);
    log_sum += std::log(num / denom) / n;
  }
  return bleu_brevity(s.candidate_length, s.reference_length) * std::exp(log_sum);
}

double corpus_bleu(const BleuStats& totals, int n) {
  check_order(n);
  if (totals.candidate_length == 0) return 0.0;
  double log_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (totals.matches[k] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(totals.matches[k]) / static_cast<double>(totals.totals[k])) / n;
  }
  return bleu_brevity(totals.candidate_length, totals.reference_length) * std::exp(log_sum);
}

// ---------------------------------------------------------------- METEOR

void SynonymTable::add(const std::string& a, const std::string& b) {
  table_[a].insert(b);
  table_[b].insert(a);
}

bool SynonymTable::synonyms(const std::string& a, const std::string& b) const {
  auto it = table_.find(a);
  return it != table_.end() && it->second.count(b) > 0;
}

SynonymTable SynonymTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read synonym table: " + path.string());
  SynonymTable table;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::vector<std::string> group;
    for (std::string w; ls >> w;) {
      std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return std::tolower(c); });
      group.push_back(std::move(w));
    }
    for (std::size_t i = 0; i < group.size(); ++i) {
      for (std::size_t j = i + 1; j < group.size(); ++j) table.add(group[i], group[j]);
    }
  }
  return table;
}

namespace {

struct Indexed {
  int position;
  std::string word;
};

using Match = std::pair<int, int>;  // (candidate position, reference position)

// Greedy stage alignment: candidates from last to first, each taking the last
// unmatched reference position that satisfies `same`.
template <typename Same>
void align_stage(std::vector<Indexed>& cand, std::vector<Indexed>& ref, std::vector<Match>& out, Same same) {
  for (int i = static_cast<int>(cand.size()) - 1; i >= 0; --i) {
    for (int j = static_cast<int>(ref.size()) - 1; j >= 0; --j) {
      if (same(cand[static_cast<std::size_t>(i)].word, ref[static_cast<std::size_t>(j)].word)) {
        out.emplace_back(cand[static_cast<std::size_t>(i)].position, ref[static_cast<std::size_t>(j)].position);
        cand.erase(cand.begin() + i);
        ref.erase(ref.begin() + j);
        break;
      }
    }
  }
}

std::vector<Indexed> indexed(const Tokens& tokens) {
  std::vector<Indexed> out;
  out.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    std::string w = tokens[i];
    std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return std::tolower(c); });
    out.push_back({static_cast<int>(i), std::move(w)});
  }
  return out;
}

int count_chunks(const std::vector<Match>& matches) {
  if (matches.empty()) return 0;
  int chunks = 1;
  for (std::size_t i = 0; i + 1 < matches.size(); ++i) {
    const bool adjacent =
        matches[i + 1].first == matches[i].first + 1 && matches[i + 1].second == matches[i].second + 1;
    if (!adjacent) ++chunks;
  }
  return chunks;
}

}  // namespace

MeteorResult meteor_detail(const Tokens& candidate, const Tokens& reference, const SynonymTable* synonyms) {
  MeteorResult r;
  if (candidate.empty() || reference.empty()) return r;
  auto cand = indexed(candidate);
  auto ref = indexed(reference);
  std::vector<Match> matches;
  align_stage(cand, ref, matches, [](const std::string& a, const std::string& b) { return a == b; });

  for (auto& c : cand) c.word = porter_stem(c.word);
  for (auto& c : ref) c.word = porter_stem(c.word);
  align_stage(cand, ref, matches, [](const std::string& a, const std::string& b) { return a == b; });

  if (synonyms != nullptr && !synonyms->empty()) {
    // Synonym lookups use the surface forms of what is still unmatched.
    for (auto& c : cand) c.word = candidate[static_cast<std::size_t>(c.position)];
    for (auto& c : ref) c.word = reference[static_cast<std::size_t>(c.position)];
    align_stage(cand, ref, matches,
                [synonyms](const std::string& a, const std::string& b) { return synonyms->synonyms(a, b); });
  }

  std::sort(matches.begin(), matches.end(), [](const Match& a, const Match& b) { return a.first < b.first; });
  r.matches = static_cast<int>(matches.size());
  if (r.matches == 0) return r;
  r.precision = static_cast<double>(r.matches) / static_cast<double>(candidate.size());
  r.recall = static_cast<double>(r.matches) / static_cast<double>(reference.size());
  r.fmean = r.precision * r.recall / (0.9 * r.precision + 0.1 * r.recall);
  r.chunks = count_chunks(matches);
  const double frag = static_cast<double>(r.chunks) / static_cast<double>(r.matches);
  r.penalty = 0.5 * frag * frag * frag;
  r.score = r.fmean * (1.0 - r.penalty);
  return r;
}

double meteor(const Tokens& candidate, const Tokens& reference, const SynonymTable* synonyms) {
  return meteor_detail(candidate, reference, synonyms).score;
}

// ---------------------------------------------------------------- NIST

NistInfo::NistInfo(const std::vector<Tokens>& references, int max_n) : max_n_(max_n) {
  if (max_n < 1) throw std::invalid_argument("NIST order must be positive");
  for (const auto& ref : references) {
    total_words_ += static_cast<int64_t>(ref.size());
    for (int n = 1; n <= max_n; ++n) {
      for (const auto& [gram, count] : ngram_counts(ref, n)) counts_[gram] += count;
    }
  }
}

double NistInfo::info(const Tokens& ngram) const {
  auto it = counts_.find(ngram);
  if (it == counts_.end() || ngram.empty()) return 0.0;
  int64_t numerator = total_words_;
  if (ngram.size() > 1) {
    auto prefix = counts_.find(Tokens(ngram.begin(), ngram.end() - 1));
    if (prefix != counts_.end()) numerator = prefix->second;
  }
  return std::log2(static_cast<double>(numerator) / static_cast<double>(it->second));
}

NistStats nist_stats(const Tokens& candidate, const Tokens& reference, const NistInfo& info) {
  NistStats s;
  const int max_n = info.max_n();
  s.info_sum.assign(static_cast<std::size_t>(max_n), 0.0);
  s.totals.assign(static_cast<std::size_t>(max_n), 0);
  s.candidate_length = static_cast<int64_t>(candidate.size());
  s.reference_length = static_cast<int64_t>(reference.size());
  for (int n = 1; n <= max_n; ++n) {
    const auto k = static_cast<std::size_t>(n - 1);
    const auto cand = ngram_counts(candidate, n);
    const auto ref = ngram_counts(reference, n);
    for (const auto& [gram, count] : cand) {
      auto it = ref.find(gram);
      if (it != ref.end()) s.info_sum[k] += info.info(gram) * static_cast<double>(std::min(count, it->second));
    }
    s.totals[k] = ngram_total(candidate, n);
  }
  return s;
}

double nist_length_penalty(double candidate_length, double reference_length) {
  if (reference_length <= 0.0) return candidate_length > 0.0 ? 1.0 : 0.0;
  const double ratio = candidate_length / reference_length;
  if (ratio <= 0.0) return 0.0;
  if (ratio >= 1.0) return 1.0;
  const double beta = std::log(0.5) / std::pow(std::log(1.5), 2.0);
  return std::exp(beta * std::pow(std::log(ratio), 2.0));
}

double nist_from_stats(const std::vector<NistStats>& stats) {
  if (stats.empty()) return 0.0;
  const std::size_t orders = stats.front().info_sum.size();
  std::vector<double> num(orders, 0.0);
  std::vector<double> den(orders, 0.0);
  double c = 0.0;
  double r = 0.0;
  for (const auto& s : stats) {
    for (std::size_t k = 0; k < orders; ++k) {
      num[k] += s.info_sum[k];
      den[k] += static_cast<double>(s.totals[k]);
    }
    c += static_cast<double>(s.candidate_length);
    r += static_cast<double>(s.reference_length);
  }
  if (c == 0.0) return 0.0;
  double score = 0.0;
  for (std::size_t k = 0; k < orders; ++k) {
    if (den[k] > 0.0) score += num[k] / den[k];
  }
  return score * nist_length_penalty(c, r);
}

double nist(const Tokens& candidate, const Tokens& reference, const NistInfo& info) {
  if (candidate.empty()) return 0.0;
  return nist_from_stats({nist_stats(candidate, reference, info)});
}

// ---------------------------------------------------------------- reports

MetricReport score_run(const std::string& model, const std::vector<GenerationRecord>& generations,
                       const ScoreOptions& options) {
  if (generations.empty()) throw std::invalid_argument("score_run: empty run");
  std::vector<Tokens> refs;
  refs.reserve(generations.size());
  for (const auto& g : generations) {
    if (g.reference.empty()) throw std::invalid_argument("score_run: record without reference: " + g.term_id);
    refs.push_back(g.reference);
  }
  const NistInfo info(refs, options.nist_order);

  MetricReport report;
  report.model = model;
  report.example_count = generations.size();
  report.tokenizer_version = text::kTokenizerVersion;
  report.smoothing = "sentence: add-epsilon 1e-9; corpus: none";

  BleuStats corpus;
  std::vector<NistStats> nist_all;
  double meteor_sum = 0.0;
  for (const auto& g : generations) {
    ExampleScore e;
    e.node = g.node;
    e.term_id = g.term_id;
    for (int n = 1; n <= 4; ++n) e.bleu[static_cast<std::size_t>(n - 1)] = bleu_n(g.generated, g.reference, n);
    e.meteor = meteor(g.generated, g.reference, options.synonyms);
    const NistStats ns = nist_stats(g.generated, g.reference, info);
    e.nist = g.generated.empty() ? 0.0 : nist_from_stats({ns});
    corpus += bleu_stats(g.generated, g.reference);
    nist_all.push_back(ns);
    meteor_sum += e.meteor;
    report.examples.push_back(std::move(e));
  }
  for (int n = 1; n <= 4; ++n) report.bleu[static_cast<std::size_t>(n - 1)] = corpus_bleu(corpus, n);
  report.meteor = meteor_sum / static_cast<double>(generations.size());
  report.nist = nist_from_stats(nist_all);
  return report;
}

std::string report_to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["model"] = r.model;
  j["bleu1"] = r.bleu[0];
  j["bleu2"] = r.bleu[1];
  j["bleu3"] = r.bleu[2];
  j["bleu4"] = r.bleu[3];
  j["meteor"] = r.meteor;
  j["nist"] = r.nist;
  j["example_count"] = r.example_count;
  j["config"] = {{"tokenizer_version", r.tokenizer_version}, {"smoothing", r.smoothing}};
  for (const auto& [k, v] : r.model_notes) j["config"][k] = v;
  auto& ex = j["examples"] = nlohmann::ordered_json::array();
  for (const auto& e : r.examples) {
    ex.push_back({{"node", e.node},
                  {"term_id", e.term_id},
                  {"bleu", e.bleu},
                  {"meteor", e.meteor},
                  {"nist", e.nist}});
  }
  return j.dump(2);
}

MetricReport report_from_json(const std::string& json) {
  const auto j = nlohmann::json::parse(json);
  MetricReport r;
  r.model = j.at("model").get<std::string>();
  r.bleu = {j.at("bleu1").get<double>(), j.at("bleu2").get<double>(), j.at("bleu3").get<double>(),
            j.at("bleu4").get<double>()};
  r.meteor = j.at("meteor").get<double>();
  r.nist = j.at("nist").get<double>();
  r.example_count = j.at("example_count").get<std::size_t>();
  r.tokenizer_version = j.at("config").at("tokenizer_version").get<std::string>();
  r.smoothing = j.at("config").at("smoothing").get<std::string>();
  for (const auto& [k, v] : j.at("config").items()) {
    if (k != "tokenizer_version" && k != "smoothing") r.model_notes[k] = v.get<std::string>();
  }
  for (const auto& e : j.at("examples")) {
    ExampleScore s;
    s.node = e.at("node").get<int32_t>();
    s.term_id = e.at("term_id").get<std::string>();
    s.bleu = e.at("bleu").get<std::array<double, 4>>();
    s.meteor = e.at("meteor").get<double>();
    s.nist = e.at("nist").get<double>();
    r.examples.push_back(std::move(s));
  }
  return r;
}

void save_report(const std::filesystem::path& json_path, const MetricReport& report) {
  std::ofstream out(json_path);
  if (!out) throw std::runtime_error("cannot write report: " + json_path.string());
  out << report_to_json(report) << '\n';
}

MetricReport load_report(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw std::runtime_error("cannot read report: " + json_path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return report_from_json(ss.str());
}

void save_report_csv(const std::filesystem::path& csv_path, const MetricReport& report) {
  std::ofstream out(csv_path);
  if (!out) throw std::runtime_error("cannot write report: " + csv_path.string());
  out.precision(17);
  out << "node,term_id,bleu1,bleu2,bleu3,bleu4,meteor,nist\n";
  for (const auto& e : report.examples) {
    out << e.node << ',' << e.term_id << ',' << e.bleu[0] << ',' << e.bleu[1] << ',' << e.bleu[2] << ','
        << e.bleu[3] << ',' << e.meteor << ',' << e.nist << '\n';
  }
}

}  // namespace graphex::metrics
