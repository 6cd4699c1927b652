#include <doctest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "graphex/obo.hpp"

using namespace graphex::obo;

namespace {

const std::filesystem::path kOboDir = std::filesystem::path(GRAPHEX_FIXTURE_DIR) / "obo";

ParseResult parse_text(const std::string& text, Database db = Database::kObo) {
  std::istringstream in(text);
  return parse_obo(in, "g", db);
}

const RawTerm* find_term(const Graph& g, const std::string& id) {
  for (const auto& t : g.terms) {
    if (t.term_id == id) return &t;
  }
  return nullptr;
}

}  // namespace

TEST_CASE("parse_obo maps stanza fields") {
  const auto r = parse_text(
      "[Term]\nid: X:1\nname: foo\ndef: \"a foo thing\" [PMID:1]\nis_a: X:0 ! bar\n");
  REQUIRE(r.terms.size() == 1);
  const auto& t = r.terms[0];
  CHECK(t.term_id == "X:1");
  CHECK(t.name == "foo");
  REQUIRE(t.definition.has_value());
  CHECK(*t.definition == "a foo thing");
  CHECK(t.is_a_parents == std::vector<std::string>{"X:0"});
  CHECK(t.source_graph == "g");
  CHECK(t.source_db == "obo");
  CHECK(r.rejects.empty());
}

TEST_CASE("parse_obo handles absent definitions, obsolete stanzas and rejects") {
  const auto r = parse_text(
      "[Term]\nid: X:1\nname: foo\n\n"
      "[Term]\nid: X:2\nname: gone\nis_obsolete: true\n\n"
      "[Term]\nid: X:3\n\n"
      "[Term]\nname: no id\n\n"
      "[Typedef]\nid: part_of\nname: part of\n");
  REQUIRE(r.terms.size() == 1);
  CHECK_FALSE(r.terms[0].definition.has_value());
  REQUIRE(r.rejects.size() == 2);
  CHECK(r.rejects[0].reason == "missing name");
  CHECK(r.rejects[0].line == 10);
  CHECK(r.rejects[1].reason == "missing id");
}

TEST_CASE("parse_obo resolves escapes and ignores non is_a relations") {
  const auto r = parse_text(
      "[Term]\nid: X:1\nname: foo\ndef: \"say \\\"hi\\\" [x]\" [REF:1]\n"
      "relationship: part_of X:9\nis_a: X:5 {source=\"y\"} ! five\n");
  REQUIRE(r.terms.size() == 1);
  CHECK(*r.terms[0].definition == "say \"hi\" [x]");
  CHECK(r.terms[0].is_a_parents == std::vector<std::string>{"X:5"});
}

TEST_CASE("unreadable stream is fatal") {
  std::istringstream in("[Term]\n");
  in.setstate(std::ios::badbit);
  CHECK_THROWS_AS(parse_obo(in, "g", Database::kObo), std::runtime_error);
  CHECK_THROWS(parse_obo_file("/nonexistent/file.obo", "g", Database::kObo));
}

TEST_CASE("parse, write canonical, parse again is idempotent") {
  for (const char* file : {"obo/CellType.obo", "bioportal/celltype.obo", "ols/envo.obo"}) {
    const auto first = parse_obo_file(kOboDir / file, "g", Database::kObo);
    std::ostringstream canon;
    write_obo(canon, first.terms);
    std::istringstream in(canon.str());
    const auto second = parse_obo(in, "g", Database::kObo);
    CHECK(second.terms == first.terms);
    CHECK(second.rejects.empty());
  }
}

TEST_CASE("round trip holds for generated terms") {
  std::mt19937 rng(11);
  const std::string chars = "abc \"\\![]{}:-.";
  auto random_text = [&](int min_len) {
    std::string s;
    const int len = min_len + static_cast<int>(rng() % 12);
    for (int i = 0; i < len; ++i) s.push_back(chars[rng() % chars.size()]);
    // Tag values are whitespace-trimmed on read.
    while (!s.empty() && s.back() == ' ') s.back() = 'x';
    while (!s.empty() && s.front() == ' ') s.front() = 'x';
    return s;
  };
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<RawTerm> terms;
    const int n = 1 + static_cast<int>(rng() % 5);
    for (int i = 0; i < n; ++i) {
      RawTerm t;
      t.term_id = "T:" + std::to_string(trial) + "_" + std::to_string(i);
      t.name = "name " + std::to_string(i) + "x";
      if (rng() % 2) t.definition = random_text(1);
      if (rng() % 2) t.synonyms.push_back(random_text(1));
      if (i > 0) t.is_a_parents.push_back("T:" + std::to_string(trial) + "_0");
      t.source_graph = "g";
      t.source_db = "obo";
      terms.push_back(t);
    }
    std::ostringstream out;
    write_obo(out, terms);
    std::istringstream in(out.str());
    REQUIRE(parse_obo(in, "g", Database::kObo).terms == terms);
  }
}

TEST_CASE("normalize_graph_name lowercases and strips extension") {
  CHECK(normalize_graph_name("CellType.obo") == "celltype");
  CHECK(normalize_graph_name("dir/ENVO.obo") == "envo");
  CHECK(normalize_graph_name("chebi") == "chebi");
}

TEST_CASE("merge unions disjoint graphs with the same name") {
  Graph a;
  a.manifest.graph_name = "Cell.obo";
  a.terms = {{"C:1", "one", "d1", {}, {}, "cell", "obo"}};
  Graph b;
  b.manifest.graph_name = "cell";
  b.terms = {{"C:2", "two", "d2", {}, {"C:1"}, "cell", "ols"}};
  const auto merged = merge_graphs({a, b});
  REQUIRE(merged.size() == 1);
  CHECK(merged[0].terms.size() == 2);
  CHECK(merged[0].manifest.graph_name == "cell");
  CHECK(merged[0].manifest.term_count == 2);
}

TEST_CASE("merge keeps the defined record and the higher priority definition") {
  Graph ols;
  ols.manifest.graph_name = "x";
  ols.terms = {{"C:1", "one", "from ols", {}, {"C:0"}, "x", "ols"},
               {"C:2", "two", "defined in ols", {}, {}, "x", "ols"}};
  Graph obo;
  obo.manifest.graph_name = "x";
  obo.terms = {{"C:1", "one", "from obo", {}, {"C:9"}, "x", "obo"},
               {"C:2", "two", std::nullopt, {}, {}, "x", "obo"}};
  const auto merged = merge_graphs({ols, obo});
  REQUIRE(merged.size() == 1);
  const auto* c1 = find_term(merged[0], "C:1");
  const auto* c2 = find_term(merged[0], "C:2");
  REQUIRE(c1 != nullptr);
  REQUIRE(c2 != nullptr);
  CHECK(*c1->definition == "from obo");
  CHECK(c1->is_a_parents == std::vector<std::string>{"C:9", "C:0"});
  REQUIRE(c2->definition.has_value());
  CHECK(*c2->definition == "defined in ols");
}

TEST_CASE("ingest_directory merges duplicate graphs without losing defined terms") {
  const auto result = ingest_directory(kOboDir);
  CHECK(result.input_graph_count == 3);
  REQUIRE(result.graphs.size() == 2);
  CHECK(result.rejects.size() == 2);

  const auto& cell = result.graphs[0].manifest.graph_name == "celltype" ? result.graphs[0]
                                                                        : result.graphs[1];
  CHECK(cell.manifest.graph_name == "celltype");
  CHECK(cell.terms.size() == 5);
  CHECK(cell.manifest.source_files.size() == 2);

  // Every term defined in any input is defined after merging.
  for (const char* id : {"CL:0000000", "CL:0000003", "CL:0000004", "CL:0000010", "CL:0000020"}) {
    const auto* t = find_term(cell, id);
    REQUIRE(t != nullptr);
    CHECK(t->definition.has_value());
  }
  CHECK(*find_term(cell, "CL:0000003")->definition == "A cell that is found in a natural setting.");

  for (const auto& g : result.graphs) {
    const auto recount = summarize(g.manifest.graph_name, {}, g.terms);
    CHECK(g.manifest.defined_fraction == recount.defined_fraction);
    CHECK(g.manifest.term_count == g.terms.size());
    std::vector<std::string> ids;
    for (const auto& t : g.terms) ids.push_back(t.term_id);
    std::sort(ids.begin(), ids.end());
    CHECK(std::adjacent_find(ids.begin(), ids.end()) == ids.end());
  }
}

TEST_CASE("corpus JSONL round trip") {
  const auto result = ingest_directory(kOboDir);
  std::stringstream buf;
  write_corpus_jsonl(buf, result.graphs);
  const auto back = read_corpus_jsonl(buf);
  REQUIRE(back.size() == result.graphs.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].terms == result.graphs[i].terms);
    CHECK(back[i].manifest.defined_fraction == result.graphs[i].manifest.defined_fraction);
  }
}
