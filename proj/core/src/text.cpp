#include "graphex/text.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <map>
#include <stdexcept>

namespace graphex::text {
namespace {

bool is_word_byte(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u >= 0x80 || std::isalnum(u) != 0;
}

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

bool is_upper(char c) { return std::isupper(static_cast<unsigned char>(c)) != 0; }

bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

constexpr std::array<std::string_view, 14> kAbbreviations = {
    "e.g.", "i.e.", "spp.", "sp.", "etc.", "vs.", "cf.", "al.",
    "approx.", "ca.", "fig.", "no.", "st.", "var."};

// The word (whitespace-delimited) that ends at position `end` inclusive.
std::string_view word_ending_at(std::string_view s, std::size_t end) {
  std::size_t start = end;
  while (start > 0 && !is_space(s[start - 1])) --start;
  return s.substr(start, end - start + 1);
}

bool is_guarded(std::string_view word) {
  std::string lowered(word);
  std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  // Strip opening brackets that may precede the abbreviation.
  while (!lowered.empty() && (lowered.front() == '(' || lowered.front() == '[')) {
    lowered.erase(lowered.begin());
  }
  for (auto abbrev : kAbbreviations) {
    if (lowered == abbrev) return true;
  }
  // Single capital initial ("E." in "E. Coli").
  return word.size() == 2 && is_upper(word[0]) && word[1] == '.';
}

}  // namespace

std::string first_sentence(std::string_view definition) {
  for (std::size_t i = 0; i < definition.size(); ++i) {
    const char c = definition[i];
    if (c != '.' && c != '?' && c != '!') continue;

    std::size_t next = i + 1;
    if (next < definition.size() && !is_space(definition[next])) continue;
    while (next < definition.size() && is_space(definition[next])) ++next;
    const bool at_end = next == definition.size();
    if (!at_end && !is_upper(definition[next])) continue;
    if (c == '.' && is_guarded(word_ending_at(definition, i))) continue;
    return std::string(definition.substr(0, i + 1));
  }
  std::size_t end = definition.size();
  while (end > 0 && is_space(definition[end - 1])) --end;
  return std::string(definition.substr(0, end));
}

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (is_space(c)) {
      flush();
      continue;
    }
    if (is_word_byte(c)) {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
      continue;
    }
    const bool prev_word = !current.empty() && is_word_byte(text[i - 1]);
    const bool next_word = i + 1 < text.size() && is_word_byte(text[i + 1]);
    if (c == '-' && prev_word && next_word) {
      current.push_back(c);
      continue;
    }
    if ((c == '.' || c == ',') && !current.empty() && is_digit(text[i - 1]) &&
        i + 1 < text.size() && is_digit(text[i + 1])) {
      current.push_back(c);
      continue;
    }
    flush();
    out.emplace_back(1, c);
  }
  flush();
  return out;
}

Tokens truncate(Tokens tokens, std::size_t limit) {
  if (tokens.size() > limit) tokens.resize(limit);
  return tokens;
}

std::string detokenize(std::span<const std::string> tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

Vocabulary::Vocabulary() {
  add("<pad>", 0);
  add("<unk>", 0);
  add("<bos>", 0);
  add("<eos>", 0);
}

void Vocabulary::add(std::string token, int64_t count) {
  index_.emplace(token, static_cast<int32_t>(tokens_.size()));
  tokens_.push_back(std::move(token));
  counts_.push_back(count);
}

Vocabulary Vocabulary::build(std::span<const Tokens> corpus, int min_count) {
  if (min_count < 1) throw std::invalid_argument("min_count must be >= 1");
  std::map<std::string, int64_t> freq;
  for (const auto& seq : corpus) {
    for (const auto& tok : seq) ++freq[tok];
  }
  std::vector<std::pair<std::string, int64_t>> kept;
  for (auto& [tok, n] : freq) {
    if (n >= min_count) kept.emplace_back(tok, n);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary vocab;
  for (auto& [tok, n] : kept) {
    if (vocab.contains(tok)) continue;
    vocab.add(tok, n);
  }
  return vocab;
}

int32_t Vocabulary::index(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int32_t index) const {
  return tokens_.at(static_cast<std::size_t>(index));
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.contains(std::string(token));
}

TokenIds Vocabulary::numericalize(std::span<const std::string> tokens) const {
  TokenIds ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(index(t));
  return ids;
}

Tokens Vocabulary::denumericalize(std::span<const int32_t> ids) const {
  Tokens out;
  out.reserve(ids.size());
  for (int32_t id : ids) {
    if (id == kPad || id == kBos || id == kEos) continue;
    out.push_back(id == kUnk ? std::string("UNK") : token(id));
  }
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocabulary: " + path.string());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    out << tokens_[i] << '\t' << counts_[i] << '\n';
  }
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read vocabulary: " + path.string());
  Vocabulary vocab;
  std::string line;
  int32_t row = 0;
  while (std::getline(in, line)) {
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw std::runtime_error("malformed vocabulary line: " + line);
    std::string tok = line.substr(0, tab);
    const int64_t n = std::stoll(line.substr(tab + 1));
    if (row < kNumReserved) {
      if (tok != vocab.tokens_[static_cast<std::size_t>(row)]) {
        throw std::runtime_error("vocabulary file missing reserved token " +
                                 vocab.tokens_[static_cast<std::size_t>(row)]);
      }
    } else {
      vocab.add(std::move(tok), n);
    }
    ++row;
  }
  return vocab;
}

}  // namespace graphex::text
