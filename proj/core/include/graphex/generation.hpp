#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "graphex/text.hpp"

namespace graphex {

// One decoded definition together with its reference.
struct GenerationRecord {
  int32_t node = -1;
  std::string term_id;
  std::string terminology;
  text::Tokens reference;
  text::Tokens generated;
  std::vector<double> token_logprobs;  // one per generated token, EOS included when emitted
  std::string decode_mode = "greedy";
  bool ended_with_eos = false;

  bool operator==(const GenerationRecord&) const = default;
};

void write_generations_jsonl(std::ostream& out, const std::vector<GenerationRecord>& records);
void write_generations_jsonl(const std::filesystem::path& path, const std::vector<GenerationRecord>& records);
std::vector<GenerationRecord> read_generations_jsonl(std::istream& in);
std::vector<GenerationRecord> read_generations_jsonl(const std::filesystem::path& path);

}  // namespace graphex
