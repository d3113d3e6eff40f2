#pragma once

#include <optional>
#include <string>
#include <vector>

#include "refalign/errors.hpp"
#include "refalign/feature_io.hpp"
#include "refalign/json_util.hpp"

namespace refalign {

struct Token {
  int index = 0;
  std::string text;
  int head = -1;  // index of the governor; -1 marks the root
  std::string deprel;
};

struct DependencyGraph {
  std::string query_id;
  std::vector<Token> tokens;
  std::optional<FeatureMatrix> embeddings;  // l x D_t, one row per token

  int token_count() const { return static_cast<int>(tokens.size()); }

  int root_index() const {
    for (const auto& t : tokens) {
      if (t.head < 0) return t.index;
    }
    return -1;
  }
};

// Single root, in-range heads, no self-loops, acyclic: a tree.
inline void validate_dependency_graph(const DependencyGraph& g, const std::string& path = "dep") {
  const int l = g.token_count();
  if (l < 1) throw DataError(path + ".tokens: at least one token required");
  int roots = 0;
  for (int i = 0; i < l; ++i) {
    const auto& t = g.tokens[static_cast<std::size_t>(i)];
    const std::string tpath = path + ".tokens[" + std::to_string(i) + "]";
    if (t.index != i) throw DataError(tpath + ": token index out of order");
    if (t.head < 0) {
      ++roots;
    } else {
      if (t.head >= l) throw DataError(tpath + ".head: index out of range");
      if (t.head == i) throw DataError(tpath + ".head: self-loop");
    }
  }
  if (roots == 0) throw DataError(path + ".tokens: no root");
  if (roots > 1) throw DataError(path + ".tokens: multiple roots");
  // Walk each head chain; a chain longer than l tokens must contain a cycle.
  for (int i = 0; i < l; ++i) {
    int cur = i;
    int steps = 0;
    while (g.tokens[static_cast<std::size_t>(cur)].head >= 0) {
      cur = g.tokens[static_cast<std::size_t>(cur)].head;
      if (++steps > l) throw DataError(path + ".tokens: cycle in head links");
    }
  }
  if (g.embeddings && static_cast<int>(g.embeddings->rows) != l) {
    throw DataError(path + ".embeddings: embedding row-count mismatch (" +
                    std::to_string(g.embeddings->rows) + " rows for " + std::to_string(l) + " tokens)");
  }
}

// File layout: {query_id, tokens: [{text, head, rel}]}
inline DependencyGraph load_dependency_graph(const std::string& path) {
  const detail::json doc = detail::parse_file(path);
  DependencyGraph g;
  g.query_id = detail::string_field(doc, "query_id", path);
  const auto& tokens = detail::array_field(doc, "tokens", path);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string tpath = path + ".tokens[" + std::to_string(i) + "]";
    Token t;
    t.index = static_cast<int>(i);
    t.text = detail::string_field(tokens[i], "text", tpath);
    t.head = detail::int_field(tokens[i], "head", tpath);
    t.deprel = detail::string_field(tokens[i], "rel", tpath);
    g.tokens.push_back(std::move(t));
  }
  validate_dependency_graph(g, path);
  return g;
}

inline void save_dependency_graph(const DependencyGraph& g, const std::string& path) {
  detail::json doc;
  doc["query_id"] = g.query_id;
  doc["tokens"] = detail::json::array();
  for (const auto& t : g.tokens) {
    doc["tokens"].push_back({{"text", t.text}, {"head", t.head}, {"rel", t.deprel}});
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError(path + ": cannot open file for writing");
  out << doc.dump() << '\n';
}

inline void attach_token_embeddings(DependencyGraph& g, FeatureMatrix fm) {
  if (static_cast<int>(fm.rows) != g.token_count()) {
    throw DataError("embeddings for query " + g.query_id + ": embedding row-count mismatch (" +
                    std::to_string(fm.rows) + " rows for " + std::to_string(g.token_count()) + " tokens)");
  }
  g.embeddings = std::move(fm);
}

}  // namespace refalign
