#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace graphex::obo {

// Conflict resolution order when the same graph is published by several
// databases. Lower value wins.
enum class Database { kObo = 0, kBioPortal = 1, kOls = 2 };

std::string to_string(Database db);
Database database_from_string(std::string_view name);

struct RawTerm {
  std::string term_id;
  std::string name;
  std::optional<std::string> definition;
  std::vector<std::string> synonyms;
  std::vector<std::string> is_a_parents;
  std::string source_graph;
  std::string source_db;

  bool operator==(const RawTerm&) const = default;
};

struct Reject {
  std::string source;
  int line = 0;  // line of the stanza header
  std::string reason;
};

struct ParseResult {
  std::vector<RawTerm> terms;
  std::vector<Reject> rejects;
};

// Parses OBO flat-file text. Only [Term] stanzas are read; obsolete stanzas
// are dropped and stanzas missing `id:` or `name:` go to the rejects list.
ParseResult parse_obo(std::istream& in, const std::string& graph, Database db,
                      const std::string& source_name = "<stream>");

ParseResult parse_obo_file(const std::filesystem::path& path, const std::string& graph,
                           Database db);

// Writes terms back as canonical [Term] stanzas (id, name, def, synonym, is_a).
void write_obo(std::ostream& out, const std::vector<RawTerm>& terms);

struct GraphManifest {
  std::string graph_name;
  std::vector<std::string> source_files;
  std::size_t term_count = 0;
  double defined_fraction = 0.0;
};

struct Graph {
  GraphManifest manifest;
  std::vector<RawTerm> terms;
};

// Lowercases and strips a trailing file extension.
std::string normalize_graph_name(std::string_view name);

// Recounts term_count and defined_fraction from the terms.
GraphManifest summarize(std::string graph_name, std::vector<std::string> source_files,
                        const std::vector<RawTerm>& terms);

// Unions graphs whose normalized names match. Duplicate term ids collapse to
// one record: a defined record beats an undefined one, otherwise database
// priority then input order decides. Parents and synonyms are unioned.
std::vector<Graph> merge_graphs(std::vector<Graph> graphs);

struct IngestResult {
  std::vector<Graph> graphs;
  std::vector<Reject> rejects;
  std::size_t input_graph_count = 0;
};

// Reads every *.obo file below `dir`. A file at `dir/<db>/<graph>.obo` is
// attributed to database <db> (obo, bioportal, ols); files directly in `dir`
// are attributed to OBO.
IngestResult ingest_directory(const std::filesystem::path& dir);

void write_corpus_jsonl(std::ostream& out, const std::vector<Graph>& graphs);
std::vector<Graph> read_corpus_jsonl(std::istream& in);
std::vector<Graph> read_corpus_jsonl(const std::filesystem::path& path);
void write_rejects_jsonl(std::ostream& out, const std::vector<Reject>& rejects);

}  // namespace graphex::obo
