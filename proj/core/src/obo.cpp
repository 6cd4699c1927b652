#include "graphex/obo.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "graphex/log.hpp"

namespace graphex::obo {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Reads a double-quoted OBO string starting at s[0] == '"'. Backslash escapes
// are resolved. Returns nullopt if the closing quote is missing.
std::optional<std::string> quoted_payload(std::string_view s) {
  if (s.empty() || s.front() != '"') return std::nullopt;
  std::string out;
  for (std::size_t i = 1; i < s.size(); ++i) {
    const char c = s[i];
    if (c == '\\' && i + 1 < s.size()) {
      const char e = s[++i];
      out.push_back(e == 'n' ? '\n' : e == 't' ? '\t' : e);
      continue;
    }
    if (c == '"') return out;
    out.push_back(c);
  }
  return std::nullopt;
}

std::string escape_quoted(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out.push_back(c);
  }
  return out;
}

// `is_a: X:0 ! comment {qualifier}` -> "X:0"
std::string is_a_target(std::string_view value) {
  if (auto bang = value.find('!'); bang != std::string_view::npos) value = value.substr(0, bang);
  value = trim(value);
  if (auto sp = value.find_first_of(" \t{"); sp != std::string_view::npos) value = value.substr(0, sp);
  return std::string(value);
}

struct Stanza {
  int line = 0;
  bool is_term = false;
  bool obsolete = false;
  RawTerm term;
};

template <typename T>
void append_unique(std::vector<T>& dst, const std::vector<T>& src) {
  for (const auto& v : src) {
    if (std::find(dst.begin(), dst.end(), v) == dst.end()) dst.push_back(v);
  }
}

}  // namespace

std::string to_string(Database db) {
  switch (db) {
    case Database::kObo: return "obo";
    case Database::kBioPortal: return "bioportal";
    case Database::kOls: return "ols";
  }
  return "obo";
}

Database database_from_string(std::string_view name) {
  std::string lowered(name);
  std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lowered == "obo") return Database::kObo;
  if (lowered == "bioportal") return Database::kBioPortal;
  if (lowered == "ols") return Database::kOls;
  throw std::invalid_argument("unknown ontology database: " + std::string(name));
}

ParseResult parse_obo(std::istream& in, const std::string& graph, Database db,
                      const std::string& source_name) {
  if (!in) throw std::runtime_error("unreadable OBO stream: " + source_name);
  ParseResult result;
  std::optional<Stanza> current;

  auto finish = [&] {
    if (!current || !current->is_term) {
      current.reset();
      return;
    }
    Stanza& st = *current;
    if (st.term.term_id.empty() || st.term.name.empty()) {
      result.rejects.push_back(
          {source_name, st.line, st.term.term_id.empty() ? "missing id" : "missing name"});
    } else if (!st.obsolete) {
      st.term.source_graph = graph;
      st.term.source_db = to_string(db);
      result.terms.push_back(std::move(st.term));
    }
    current.reset();
  };

  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '!') continue;
    if (line.front() == '[') {
      finish();
      current.emplace();
      current->line = line_no;
      current->is_term = line == "[Term]";
      continue;
    }
    if (!current || !current->is_term) continue;

    const auto colon = line.find(':');
    if (colon == std::string_view::npos) continue;
    const std::string_view tag = trim(line.substr(0, colon));
    const std::string_view value = trim(line.substr(colon + 1));
    RawTerm& term = current->term;
    if (tag == "id") {
      term.term_id = std::string(value);
    } else if (tag == "name") {
      term.name = std::string(value);
    } else if (tag == "def") {
      if (auto payload = quoted_payload(value)) {
        term.definition = std::move(*payload);
      } else if (!value.empty()) {
        term.definition = std::string(value);
      }
    } else if (tag == "synonym") {
      if (auto payload = quoted_payload(value)) term.synonyms.push_back(std::move(*payload));
    } else if (tag == "is_a") {
      auto target = is_a_target(value);
      if (!target.empty()) term.is_a_parents.push_back(std::move(target));
    } else if (tag == "is_obsolete") {
      current->obsolete = value == "true";
    }
  }
  if (in.bad()) throw std::runtime_error("read error in OBO stream: " + source_name);
  finish();
  return result;
}

ParseResult parse_obo_file(const std::filesystem::path& path, const std::string& graph,
                           Database db) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open OBO file: " + path.string());
  return parse_obo(in, graph, db, path.string());
}

void write_obo(std::ostream& out, const std::vector<RawTerm>& terms) {
  bool first = true;
  for (const auto& t : terms) {
    if (!first) out << '\n';
    first = false;
    out << "[Term]\n";
    out << "id: " << t.term_id << '\n';
    out << "name: " << t.name << '\n';
    if (t.definition) out << "def: \"" << escape_quoted(*t.definition) << "\" []\n";
    for (const auto& s : t.synonyms) out << "synonym: \"" << escape_quoted(s) << "\" EXACT []\n";
    for (const auto& p : t.is_a_parents) out << "is_a: " << p << '\n';
  }
}

std::string normalize_graph_name(std::string_view name) {
  std::string s(name);
  if (auto slash = s.find_last_of("/\\"); slash != std::string::npos) s = s.substr(slash + 1);
  if (auto dot = s.rfind('.'); dot != std::string::npos && dot > 0) s = s.substr(0, dot);
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

GraphManifest summarize(std::string graph_name, std::vector<std::string> source_files,
                        const std::vector<RawTerm>& terms) {
  GraphManifest m;
  m.graph_name = std::move(graph_name);
  m.source_files = std::move(source_files);
  m.term_count = terms.size();
  const auto defined = std::count_if(terms.begin(), terms.end(),
                                     [](const RawTerm& t) { return t.definition.has_value(); });
  m.defined_fraction =
      terms.empty() ? 0.0 : static_cast<double>(defined) / static_cast<double>(terms.size());
  return m;
}

std::vector<Graph> merge_graphs(std::vector<Graph> graphs) {
  // Stable grouping by normalized name, ordered by first appearance.
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    const auto key = normalize_graph_name(graphs[i].manifest.graph_name);
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(i);
  }

  auto priority = [&](std::size_t gi) {
    const auto& terms = graphs[gi].terms;
    return terms.empty() ? 0 : static_cast<int>(database_from_string(terms.front().source_db));
  };

  std::vector<Graph> merged;
  merged.reserve(order.size());
  for (const auto& key : order) {
    auto members = groups[key];
    std::stable_sort(members.begin(), members.end(),
                     [&](std::size_t a, std::size_t b) { return priority(a) < priority(b); });

    std::vector<RawTerm> terms;
    std::unordered_map<std::string, std::size_t> by_id;
    std::vector<std::string> sources;
    for (std::size_t gi : members) {
      append_unique(sources, graphs[gi].manifest.source_files);
      for (auto& t : graphs[gi].terms) {
        t.source_graph = key;
        auto it = by_id.find(t.term_id);
        if (it == by_id.end()) {
          by_id.emplace(t.term_id, terms.size());
          terms.push_back(std::move(t));
          continue;
        }
        RawTerm& kept = terms[it->second];
        if (!kept.definition && t.definition) {
          kept.definition = t.definition;
          kept.source_db = t.source_db;
        } else if (kept.definition && t.definition && *kept.definition != *t.definition) {
          log::warn("definition conflict for ", t.term_id, " in ", key, ": keeping ",
                    kept.source_db, " over ", t.source_db);
        }
        append_unique(kept.is_a_parents, t.is_a_parents);
        append_unique(kept.synonyms, t.synonyms);
      }
    }
    Graph g;
    g.manifest = summarize(key, std::move(sources), terms);
    g.terms = std::move(terms);
    merged.push_back(std::move(g));
  }
  return merged;
}

IngestResult ingest_directory(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());

  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".obo") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  IngestResult result;
  std::vector<Graph> graphs;
  for (const auto& file : files) {
    const auto rel = fs::relative(file, dir);
    Database db = Database::kObo;
    if (rel.has_parent_path()) db = database_from_string(rel.begin()->string());
    const auto graph_name = normalize_graph_name(file.filename().string());
    auto parsed = parse_obo_file(file, graph_name, db);
    for (auto& r : parsed.rejects) result.rejects.push_back(std::move(r));
    Graph g;
    g.manifest = summarize(graph_name, {file.string()}, parsed.terms);
    g.terms = std::move(parsed.terms);
    graphs.push_back(std::move(g));
  }
  result.input_graph_count = graphs.size();
  result.graphs = merge_graphs(std::move(graphs));
  return result;
}

void write_corpus_jsonl(std::ostream& out, const std::vector<Graph>& graphs) {
  for (const auto& g : graphs) {
    for (const auto& t : g.terms) {
      nlohmann::ordered_json j;
      j["id"] = t.term_id;
      j["name"] = t.name;
      j["def"] = t.definition ? nlohmann::ordered_json(*t.definition) : nlohmann::ordered_json();
      j["synonyms"] = t.synonyms;
      j["parents"] = t.is_a_parents;
      j["graph"] = t.source_graph;
      j["db"] = t.source_db;
      out << j.dump() << '\n';
    }
  }
}

std::vector<Graph> read_corpus_jsonl(std::istream& in) {
  std::vector<Graph> graphs;
  std::unordered_map<std::string, std::size_t> index;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error("corpus line " + std::to_string(line_no) + ": " + e.what());
    }
    RawTerm t;
    t.term_id = j.at("id").get<std::string>();
    t.name = j.at("name").get<std::string>();
    if (j.contains("def") && !j["def"].is_null()) t.definition = j["def"].get<std::string>();
    t.synonyms = j.value("synonyms", std::vector<std::string>{});
    t.is_a_parents = j.value("parents", std::vector<std::string>{});
    t.source_graph = j.at("graph").get<std::string>();
    t.source_db = j.value("db", std::string("obo"));
    auto [it, inserted] = index.try_emplace(t.source_graph, graphs.size());
    if (inserted) {
      graphs.emplace_back();
      graphs.back().manifest.graph_name = t.source_graph;
    }
    graphs[it->second].terms.push_back(std::move(t));
  }
  for (auto& g : graphs) g.manifest = summarize(g.manifest.graph_name, {}, g.terms);
  return graphs;
}

std::vector<Graph> read_corpus_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus: " + path.string());
  return read_corpus_jsonl(in);
}

void write_rejects_jsonl(std::ostream& out, const std::vector<Reject>& rejects) {
  for (const auto& r : rejects) {
    nlohmann::ordered_json j;
    j["source"] = r.source;
    j["line"] = r.line;
    j["reason"] = r.reason;
    out << j.dump() << '\n';
  }
}

}  // namespace graphex::obo
