#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace graphex::text {

using Tokens = std::vector<std::string>;
using TokenIds = std::vector<int32_t>;

inline constexpr std::size_t kMaxDefinitionTokens = 64;
inline constexpr std::size_t kMaxTerminologyTokens = 16;
inline constexpr const char* kTokenizerVersion = "graphex-tok-1";

// Returns the first sentence of a definition. A sentence ends at '.', '?' or
// '!' followed by whitespace and an uppercase letter, or by end of text.
// Common abbreviations ("e.g.", "i.e.", "spp.", "etc.", single capital
// initials as in "E. coli") never terminate.
std::string first_sentence(std::string_view definition);

// Lowercases, splits on whitespace, and separates punctuation into its own
// tokens. Hyphens between word characters and decimal points between digits
// stay inside the token.
Tokens tokenize(std::string_view text);

// Truncates to at most `limit` tokens.
Tokens truncate(Tokens tokens, std::size_t limit);

std::string detokenize(std::span<const std::string> tokens);

class Vocabulary {
 public:
  static constexpr int32_t kPad = 0;
  static constexpr int32_t kUnk = 1;
  static constexpr int32_t kBos = 2;
  static constexpr int32_t kEos = 3;
  static constexpr int32_t kNumReserved = 4;

  Vocabulary();

  // Tokens with frequency >= min_count, ordered by (frequency desc, token asc),
  // appended after the reserved symbols.
  static Vocabulary build(std::span<const Tokens> corpus, int min_count = 2);

  int32_t size() const { return static_cast<int32_t>(tokens_.size()); }
  int32_t index(std::string_view token) const;
  const std::string& token(int32_t index) const;
  int64_t count(int32_t index) const { return counts_.at(static_cast<std::size_t>(index)); }
  bool contains(std::string_view token) const;

  TokenIds numericalize(std::span<const std::string> tokens) const;
  // Reserved symbols other than UNK are dropped from the output.
  Tokens denumericalize(std::span<const int32_t> ids) const;

  // One "token<TAB>count" line per entry, reserved symbols first.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  void add(std::string token, int64_t count);

  std::vector<std::string> tokens_;
  std::vector<int64_t> counts_;
  std::unordered_map<std::string, int32_t> index_;
};

}  // namespace graphex::text
