#include "graphex/generation.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace graphex {

void write_generations_jsonl(std::ostream& out, const std::vector<GenerationRecord>& records) {
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["node"] = r.node;
    j["term_id"] = r.term_id;
    j["terminology"] = r.terminology;
    j["reference"] = text::detokenize(r.reference);
    j["generated"] = text::detokenize(r.generated);
    j["reference_tokens"] = r.reference;
    j["generated_tokens"] = r.generated;
    j["token_logprobs"] = r.token_logprobs;
    j["decode_mode"] = r.decode_mode;
    j["ended_with_eos"] = r.ended_with_eos;
    out << j.dump() << '\n';
  }
}

void write_generations_jsonl(const std::filesystem::path& path, const std::vector<GenerationRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write generations: " + path.string());
  write_generations_jsonl(out, records);
}

std::vector<GenerationRecord> read_generations_jsonl(std::istream& in) {
  std::vector<GenerationRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    GenerationRecord r;
    r.node = j.value("node", -1);
    r.term_id = j.value("term_id", std::string());
    r.terminology = j.value("terminology", std::string());
    if (j.contains("reference_tokens")) {
      r.reference = j["reference_tokens"].get<text::Tokens>();
    } else {
      r.reference = text::tokenize(j.at("reference").get<std::string>());
    }
    if (j.contains("generated_tokens")) {
      r.generated = j["generated_tokens"].get<text::Tokens>();
    } else {
      r.generated = text::tokenize(j.at("generated").get<std::string>());
    }
    r.token_logprobs = j.value("token_logprobs", std::vector<double>{});
    r.decode_mode = j.value("decode_mode", std::string("greedy"));
    r.ended_with_eos = j.value("ended_with_eos", false);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<GenerationRecord> read_generations_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read generations: " + path.string());
  return read_generations_jsonl(in);
}

}  // namespace graphex
