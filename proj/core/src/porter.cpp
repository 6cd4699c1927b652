// Porter (1980) suffix stripper, original rule set.

#include <string>
#include <string_view>
#include <utility>

#include "graphex/metrics.hpp"

namespace graphex::metrics {
namespace {

bool is_vowel_char(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u'; }

bool consonant(const std::string& w, std::size_t i) {
  const char c = w[i];
  if (is_vowel_char(c)) return false;
  if (c == 'y') return i == 0 ? true : !consonant(w, i - 1);
  return true;
}

// m in [C](VC){m}[V]
int measure(const std::string& stem) {
  int m = 0;
  bool prev_vowel = false;
  for (std::size_t i = 0; i < stem.size(); ++i) {
    const bool c = consonant(stem, i);
    if (c && prev_vowel) ++m;
    prev_vowel = !c;
  }
  return m;
}

bool has_vowel(const std::string& stem) {
  for (std::size_t i = 0; i < stem.size(); ++i) {
    if (!consonant(stem, i)) return true;
  }
  return false;
}

bool ends_double_consonant(const std::string& w) {
  const std::size_t n = w.size();
  return n >= 2 && w[n - 1] == w[n - 2] && consonant(w, n - 1);
}

bool ends_cvc(const std::string& w) {
  const std::size_t n = w.size();
  if (n < 3) return false;
  const char last = w[n - 1];
  return consonant(w, n - 3) && !consonant(w, n - 2) && consonant(w, n - 1) && last != 'w' &&
         last != 'x' && last != 'y';
}

bool ends_with(const std::string& w, std::string_view suffix) {
  return w.size() >= suffix.size() && w.compare(w.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string drop(const std::string& w, std::size_t n) { return w.substr(0, w.size() - n); }

using Rule = std::pair<std::string_view, std::string_view>;

// First rule whose suffix matches decides; the rule fires only if the stem
// measure exceeds min_measure.
std::string apply_rules(const std::string& w, std::initializer_list<Rule> rules, int min_measure) {
  for (const auto& [suffix, replacement] : rules) {
    if (!ends_with(w, suffix)) continue;
    std::string stem = drop(w, suffix.size());
    if (measure(stem) > min_measure) return stem + std::string(replacement);
    return w;
  }
  return w;
}

std::string step1a(const std::string& w) {
  if (ends_with(w, "sses")) return drop(w, 2);
  if (ends_with(w, "ies")) return drop(w, 2);
  if (ends_with(w, "ss")) return w;
  if (ends_with(w, "s")) return drop(w, 1);
  return w;
}

std::string step1b(const std::string& w) {
  if (ends_with(w, "eed")) {
    std::string stem = drop(w, 3);
    return measure(stem) > 0 ? stem + "ee" : w;
  }
  std::string stem;
  if (ends_with(w, "ed") && has_vowel(drop(w, 2))) {
    stem = drop(w, 2);
  } else if (ends_with(w, "ing") && has_vowel(drop(w, 3))) {
    stem = drop(w, 3);
  } else {
    return w;
  }
  if (ends_with(stem, "at") || ends_with(stem, "bl") || ends_with(stem, "iz")) return stem + "e";
  if (ends_double_consonant(stem)) {
    const char last = stem.back();
    if (last != 'l' && last != 's' && last != 'z') stem.pop_back();
    return stem;
  }
  if (measure(stem) == 1 && ends_cvc(stem)) return stem + "e";
  return stem;
}

std::string step1c(const std::string& w) {
  if (ends_with(w, "y") && has_vowel(drop(w, 1))) return drop(w, 1) + "i";
  return w;
}

std::string step2(const std::string& w) {
  return apply_rules(w,
                     {{"ational", "ate"}, {"tional", "tion"}, {"enci", "ence"},   {"anci", "ance"},
                      {"izer", "ize"},    {"abli", "able"},   {"alli", "al"},     {"entli", "ent"},
                      {"eli", "e"},       {"ousli", "ous"},   {"ization", "ize"}, {"ation", "ate"},
                      {"ator", "ate"},    {"alism", "al"},    {"iveness", "ive"}, {"fulness", "ful"},
                      {"ousness", "ous"}, {"aliti", "al"},    {"iviti", "ive"},   {"biliti", "ble"}},
                     0);
}

std::string step3(const std::string& w) {
  return apply_rules(w,
                     {{"icate", "ic"},
                      {"ative", ""},
                      {"alize", "al"},
                      {"iciti", "ic"},
                      {"ical", "ic"},
                      {"ful", ""},
                      {"ness", ""}},
                     0);
}

std::string step4(const std::string& w) {
  static constexpr std::string_view kSuffixes[] = {"al",  "ance", "ence", "er",  "ic",  "able", "ible",
                                                   "ant", "ement", "ment", "ent", "ion", "ou",  "ism",
                                                   "ate", "iti",  "ous",  "ive", "ize"};
  for (const auto suffix : kSuffixes) {
    if (!ends_with(w, suffix)) continue;
    std::string stem = drop(w, suffix.size());
    if (measure(stem) <= 1) return w;
    if (suffix == "ion" && !(ends_with(stem, "s") || ends_with(stem, "t"))) return w;
    return stem;
  }
  return w;
}

std::string step5a(const std::string& w) {
  if (!ends_with(w, "e")) return w;
  std::string stem = drop(w, 1);
  const int m = measure(stem);
  if (m > 1 || (m == 1 && !ends_cvc(stem))) return stem;
  return w;
}

std::string step5b(const std::string& w) {
  if (measure(w) > 1 && ends_double_consonant(w) && w.back() == 'l') return drop(w, 1);
  return w;
}

}  // namespace

std::string porter_stem(std::string_view word) {
  std::string w;
  w.reserve(word.size());
  for (char c : word) w.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  w = step1a(w);
  w = step1b(w);
  w = step1c(w);
  w = step2(w);
  w = step3(w);
  w = step4(w);
  w = step5a(w);
  w = step5b(w);
  return w;
}

}  // namespace graphex::metrics
