#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "refalign/errors.hpp"
#include "refalign/json_util.hpp"
#include "refalign/llm.hpp"
#include "refalign/scene_graph.hpp"

namespace refalign::corpus {

// A labeled object reference as it appears in prompts and raw query text:
// the label plus a 1-based disambiguation suffix when the image holds
// several objects of the same label ("person2"); suffix 0 means none.
struct ObjectRef {
  std::string label;
  int suffix = 0;

  std::string render() const { return suffix >= 1 ? label + std::to_string(suffix) : label; }
  bool operator==(const ObjectRef&) const = default;
};

struct Triplet {
  ObjectRef subject;
  std::string predicate;
  ObjectRef object;
};

// ---- predicate lexicon -----------------------------------------------

// Predicate -> verb phrase. The verb phrase carries its own copula
// ("holding" -> "is holding") so the sentence template stays trivial.
class Lexicon {
 public:
  static Lexicon defaults() {
    Lexicon lex;
    for (const auto& [pred, phrase] : default_entries()) lex.phrases_.emplace(pred, phrase);
    return lex;
  }

  static const std::vector<std::pair<std::string, std::string>>& default_entries() {
    static const std::vector<std::pair<std::string, std::string>> entries{
        {"above", "is above"},
        {"behind", "is behind"},
        {"beside", "is beside"},
        {"carrying", "is carrying"},
        {"covering", "is covering"},
        {"holding", "is holding"},
        {"in", "is in"},
        {"in front of", "is in front of"},
        {"leaning on", "is leaning on"},
        {"looking at", "is looking at"},
        {"lying on", "is lying on"},
        {"near", "is near"},
        {"next to", "is next to"},
        {"on", "is on"},
        {"riding", "is riding"},
        {"sitting on", "is sitting on"},
        {"standing on", "is standing on"},
        {"touching", "is touching"},
        {"under", "is under"},
        {"wearing", "is wearing"},
    };
    return entries;
  }

  void set(const std::string& predicate, const std::string& phrase) {
    phrases_[predicate] = phrase;
  }

  bool contains(const std::string& predicate) const { return phrases_.count(predicate) > 0; }

  const std::string& verb_phrase(const std::string& predicate) const {
    const auto it = phrases_.find(predicate);
    if (it == phrases_.end()) {
      throw DataError("lexicon: unknown predicate \"" + predicate + "\"");
    }
    return it->second;
  }

  std::size_t size() const { return phrases_.size(); }

 private:
  std::map<std::string, std::string> phrases_;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace detail

// Text format: one "predicate = verb phrase" per line, '#' comments.
inline Lexicon load_lexicon(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open file");
  Lexicon lex;
  std::string line;
  int line_no = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError(where + ": expected \"predicate = phrase\"");
    const std::string pred = detail::trim(line.substr(0, eq));
    const std::string phrase = detail::trim(line.substr(eq + 1));
    if (pred.empty()) throw DataError(where + ": empty predicate");
    if (phrase.empty()) throw DataError(where + ": empty verb phrase");
    if (!seen.insert(pred).second) throw DataError(where + ": duplicate predicate \"" + pred + "\"");
    lex.set(pred, phrase);
  }
  return lex;
}

// ---- candidate filtering ---------------------------------------------

// Object ids whose total relation degree (subject or object occurrences)
// reaches min_relations, ascending.
inline std::vector<int> filter_candidates(const SceneGraph& scene, int min_relations = 2) {
  std::map<int, int> degree;
  for (const auto& r : scene.relations) {
    ++degree[r.subject_id];
    ++degree[r.object_id];
  }
  std::vector<int> out;
  for (const auto& o : scene.objects) {
    const auto it = degree.find(o.id);
    if (it != degree.end() && it->second >= min_relations) out.push_back(o.id);
  }
  return out;
}

// ---- sentence rendering ----------------------------------------------

inline std::string triplet_to_sentence(const Triplet& t, const Lexicon& lexicon) {
  return "the " + t.subject.render() + " " + lexicon.verb_phrase(t.predicate) + " the " +
         t.object.render();
}

inline std::vector<std::string> triplets_to_sentences(const std::vector<Triplet>& triplets,
                                                      const Lexicon& lexicon) {
  std::vector<std::string> out;
  out.reserve(triplets.size());
  for (const auto& t : triplets) out.push_back(triplet_to_sentence(t, lexicon));
  return out;
}

// ---- prompt assembly ---------------------------------------------------

struct PromptBundle {
  std::string opening;
  std::string target;
  std::vector<std::string> sentences;
};

// The instruction block placed before every request. Frozen wording: the
// golden prompt fixtures depend on these exact bytes.
inline std::string default_opening(int max_words = 20) {
  std::ostringstream os;
  os << "You are given a target object in an image and a list of relation sentences\n"
        "describing how the target relates to other objects in the same image.\n"
        "Rewrite the relations as one natural referring expression that uniquely\n"
        "identifies the target object.\n"
        "\n"
        "Requirements:\n"
        "- Mention every listed relation exactly once.\n"
        "- Keep every numeric suffix attached to an object name (such as \"person2\")\n"
        "  exactly as written.\n"
        "- Use at most "
     << max_words
     << " words.\n"
        "- Write exactly one sentence, starting with \"the\" followed by the target.\n"
        "- Do not mention objects or relations that are not listed.\n"
        "\n"
        "Example:\n"
        "Target: person\n"
        "Relations:\n"
        "- the person is holding the cup\n"
        "- the person is leaning on the wall\n"
        "- the table is next to the person\n"
        "Output: the person is next to the table, holding the cup and leaning on the wall.";
  return os.str();
}

inline std::string build_prompt(const PromptBundle& bundle) {
  if (bundle.sentences.empty()) throw DataError("prompt: empty sentence list");
  for (const auto& s : bundle.sentences) {
    if (s.find(bundle.target) == std::string::npos) {
      throw DataError("prompt: sentence does not mention target \"" + bundle.target + "\": " + s);
    }
  }
  std::string out = bundle.opening;
  out += "\n\nTarget: " + bundle.target + "\nRelations:\n";
  for (const auto& s : bundle.sentences) out += "- " + s + "\n";
  out += "Output:";
  return out;
}

// ---- offline generator --------------------------------------------------

// Deterministic stand-in for the hosted model: parses the final
// Target/Relations block out of the prompt and splices the relation
// sentences into one sentence. Clauses where the target is the grammatical
// object come first (inverted so the target leads), then subject clauses,
// keeping input order within each group; clauses after the first drop the
// leading copula and are joined with commas and a final "and".
class OfflineClient : public llm::LlmClient {
 public:
  std::string complete(const std::string& prompt) override {
    const Block block = parse_block(prompt);
    std::vector<std::string> object_clauses;
    std::vector<std::string> subject_clauses;
    for (const auto& s : block.sentences) {
      const std::string subject_lead = "the " + block.target + " ";
      const std::string object_tail = " the " + block.target;
      if (s.rfind(subject_lead, 0) == 0) {
        subject_clauses.push_back(s.substr(subject_lead.size()));
      } else if (s.size() > object_tail.size() &&
                 s.compare(s.size() - object_tail.size(), object_tail.size(), object_tail) == 0) {
        object_clauses.push_back(invert(s.substr(0, s.size() - object_tail.size())));
      } else {
        throw llm::ApiError("offline generator: relation does not lead or trail with the target: " +
                            s);
      }
    }
    std::vector<std::string> clauses = std::move(object_clauses);
    clauses.insert(clauses.end(), subject_clauses.begin(), subject_clauses.end());

    std::string out = "the " + block.target + " " + clauses.front();
    for (std::size_t i = 1; i < clauses.size(); ++i) {
      std::string clause = clauses[i];
      if (clause.rfind("is ", 0) == 0) clause.erase(0, 3);
      out += (i + 1 == clauses.size()) ? " and " : ", ";
      out += clause;
    }
    out += ".";
    return out;
  }

 private:
  struct Block {
    std::string target;
    std::vector<std::string> sentences;
  };

  // "the {other} {vp}" -> "{vp} the {other}"
  static std::string invert(const std::string& head) {
    if (head.rfind("the ", 0) != 0) {
      throw llm::ApiError("offline generator: cannot parse relation sentence: " + head);
    }
    const std::string rest = head.substr(4);
    const auto is_pos = rest.find(" is ");
    if (is_pos == std::string::npos) {
      throw llm::ApiError("offline generator: cannot parse relation sentence: " + head);
    }
    const std::string other = rest.substr(0, is_pos);
    const std::string vp = rest.substr(is_pos + 1);
    return vp + " the " + other;
  }

  static Block parse_block(const std::string& prompt) {
    // The opening's in-context example carries its own Target block, so
    // only the last one counts.
    std::size_t tpos = prompt.rfind("Target: ");
    while (tpos != std::string::npos && tpos != 0 && prompt[tpos - 1] != '\n') {
      tpos = tpos == 0 ? std::string::npos : prompt.rfind("Target: ", tpos - 1);
    }
    if (tpos == std::string::npos) {
      throw llm::ApiError("offline generator: prompt has no Target block");
    }
    Block block;
    const std::size_t target_start = tpos + 8;
    const std::size_t target_end = prompt.find('\n', target_start);
    if (target_end == std::string::npos) {
      throw llm::ApiError("offline generator: prompt has no relation list");
    }
    block.target = prompt.substr(target_start, target_end - target_start);
    const std::string relations_header = "Relations:\n";
    std::size_t pos = prompt.find(relations_header, target_end);
    if (pos == std::string::npos) {
      throw llm::ApiError("offline generator: prompt has no relation list");
    }
    pos += relations_header.size();
    while (pos < prompt.size() && prompt.compare(pos, 2, "- ") == 0) {
      const std::size_t eol = prompt.find('\n', pos);
      const std::size_t end = eol == std::string::npos ? prompt.size() : eol;
      block.sentences.push_back(prompt.substr(pos + 2, end - pos - 2));
      if (eol == std::string::npos) break;
      pos = eol + 1;
    }
    if (block.sentences.empty()) {
      throw llm::ApiError("offline generator: prompt has no relation list");
    }
    return block;
  }
};

inline std::string generate_query(const std::string& prompt, llm::LlmClient& client) {
  const std::string text = client.complete(prompt);
  if (text.empty()) throw llm::ApiError("empty completion");
  return text;
}

// ---- suffix rewriting ---------------------------------------------------

inline std::string pluralize(const std::string& word) {
  static const std::map<std::string, std::string> irregular{
      {"child", "children"}, {"deer", "deer"},   {"fish", "fish"},      {"foot", "feet"},
      {"goose", "geese"},    {"knife", "knives"}, {"leaf", "leaves"},   {"loaf", "loaves"},
      {"man", "men"},        {"mouse", "mice"},  {"ox", "oxen"},        {"person", "people"},
      {"sheep", "sheep"},    {"shelf", "shelves"}, {"tooth", "teeth"},  {"wolf", "wolves"},
      {"woman", "women"},
  };
  std::string lower = word;
  for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  const auto it = irregular.find(lower);
  if (it != irregular.end()) {
    std::string out = it->second;
    if (!word.empty() && std::isupper(static_cast<unsigned char>(word[0]))) {
      out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
    }
    return out;
  }
  const auto ends_with = [&](const char* suffix) {
    const std::size_t n = std::string(suffix).size();
    return lower.size() >= n && lower.compare(lower.size() - n, n, suffix) == 0;
  };
  const auto vowel = [](char c) {
    return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u';
  };
  if (ends_with("s") || ends_with("x") || ends_with("z") || ends_with("ch") || ends_with("sh")) {
    return word + "es";
  }
  if (lower.size() >= 2 && lower.back() == 'y' && !vowel(lower[lower.size() - 2])) {
    return word.substr(0, word.size() - 1) + "ies";
  }
  return word + "s";
}

namespace detail {

struct TokenStream {
  std::vector<std::string> seps;   // seps.size() == words.size() + 1
  std::vector<std::string> words;  // maximal [A-Za-z0-9]+ runs
};

inline bool word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

inline TokenStream tokenize_words(const std::string& text) {
  TokenStream ts;
  std::size_t i = 0;
  std::string sep;
  while (i < text.size()) {
    if (word_char(text[i])) {
      std::size_t j = i;
      while (j < text.size() && word_char(text[j])) ++j;
      ts.seps.push_back(sep);
      sep.clear();
      ts.words.push_back(text.substr(i, j - i));
      i = j;
    } else {
      std::size_t j = i;
      while (j < text.size() && !word_char(text[j])) ++j;
      sep = text.substr(i, j - i);
      i = j;
    }
  }
  ts.seps.push_back(sep);
  return ts;
}

struct SuffixRef {
  std::string label;   // as written
  std::string digits;  // suffix digits, non-empty
};

inline std::optional<SuffixRef> parse_suffix_ref(const std::string& word) {
  std::size_t k = word.size();
  while (k > 0 && std::isdigit(static_cast<unsigned char>(word[k - 1]))) --k;
  if (k == 0 || k == word.size()) return std::nullopt;
  for (std::size_t i = 0; i < k; ++i) {
    if (!std::isalpha(static_cast<unsigned char>(word[i]))) return std::nullopt;
  }
  return SuffixRef{word.substr(0, k), word.substr(k)};
}

inline std::string to_lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline bool is_article(const std::string& w) {
  const std::string l = to_lower(w);
  return l == "the" || l == "a" || l == "an";
}

inline bool whitespace_sep(const std::string& s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(),
                     [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; });
}

// Comma plus optional whitespace, nothing else.
inline bool comma_sep(const std::string& s) {
  bool comma = false;
  for (const char c : s) {
    if (c == ',') {
      if (comma) return false;
      comma = true;
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      return false;
    }
  }
  return comma;
}

inline std::string match_case(const std::string& text, const std::string& original) {
  std::string out = text;
  if (!original.empty() && std::isupper(static_cast<unsigned char>(original[0])) && !out.empty()) {
    out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  }
  return out;
}

}  // namespace detail

// Strips the numeric disambiguation suffixes from generated text.
// - three or more same-label references in one comma/"and" list collapse
//   to "multiple {plural}";
// - a label appearing with several distinct suffixes becomes "the {label}"
//   at first mention and "another {label}" for each newly seen suffix
//   (re-mentions of a seen suffix go back to "the {label}");
// - a label with a single suffix in the whole text just loses the digits.
// An article directly before a rewritten reference is absorbed into the
// new determiner; otherwise the determiner is inserted.
inline std::string rewrite_suffixes(const std::string& text) {
  detail::TokenStream ts = detail::tokenize_words(text);
  const std::size_t n = ts.words.size();

  enum class Action { keep, drop, replace };
  std::vector<Action> act(n, Action::keep);
  std::vector<std::string> repl(n);

  // census of distinct suffixes per (lowercased) label
  std::map<std::string, std::set<std::string>> census;
  for (const auto& w : ts.words) {
    if (const auto ref = detail::parse_suffix_ref(w)) {
      census[detail::to_lower(ref->label)].insert(ref->digits);
    }
  }
  if (census.empty()) return text;  // nothing suffixed, pass through

  struct LabelState {
    std::set<std::string> standalone_seen;
    bool collapsed = false;
  };
  std::map<std::string, LabelState> state;

  // ---- list collapse pass
  // element := [article] ref ; list := element ("," element)* ","? "and" element
  struct Element {
    std::size_t first = 0;  // article or ref index
    std::size_t ref = 0;
    detail::SuffixRef parsed;
  };
  const auto parse_element = [&](std::size_t j, std::optional<Element>& out) {
    out.reset();
    if (j >= n) return;
    std::size_t r = j;
    if (detail::is_article(ts.words[j]) && j + 1 < n && detail::whitespace_sep(ts.seps[j + 1])) {
      r = j + 1;
    }
    const auto ref = detail::parse_suffix_ref(ts.words[r]);
    if (!ref) return;
    out = Element{j, r, *ref};
  };

  std::size_t i = 0;
  while (i < n) {
    std::optional<Element> first;
    parse_element(i, first);
    if (!first) {
      ++i;
      continue;
    }
    std::vector<Element> elements{*first};
    const std::string label_lower = detail::to_lower(first->parsed.label);
    bool complete = false;
    std::size_t cursor = first->ref;
    while (!complete) {
      if (cursor + 1 >= n) break;
      const std::string& sep = ts.seps[cursor + 1];
      if (detail::comma_sep(sep)) {
        // either another plain element, or ", and element"
        std::optional<Element> next;
        parse_element(cursor + 1, next);
        if (next && detail::to_lower(next->parsed.label) == label_lower) {
          elements.push_back(*next);
          cursor = next->ref;
          continue;
        }
      }
      if ((detail::comma_sep(sep) || detail::whitespace_sep(sep)) &&
          detail::to_lower(ts.words[cursor + 1]) == "and" && cursor + 2 <= n) {
        std::optional<Element> last;
        if (cursor + 2 < n && detail::whitespace_sep(ts.seps[cursor + 2])) {
          parse_element(cursor + 2, last);
        }
        if (last && detail::to_lower(last->parsed.label) == label_lower) {
          elements.push_back(*last);
          cursor = last->ref;
          complete = true;
          continue;
        }
      }
      break;
    }
    if (!complete || elements.size() < 3) {
      ++i;
      continue;
    }
    // Replace the first covered word, drop the rest of the span.
    const std::size_t span_first = elements.front().first;
    const std::size_t span_last = elements.back().ref;
    act[span_first] = Action::replace;
    repl[span_first] = detail::match_case("multiple " + pluralize(detail::to_lower(elements.front().parsed.label)),
                                          ts.words[span_first]);
    for (std::size_t k = span_first + 1; k <= span_last; ++k) act[k] = Action::drop;
    state[label_lower].collapsed = true;
    i = span_last + 1;
  }

  // ---- standalone reference pass
  for (std::size_t k = 0; k < n; ++k) {
    if (act[k] != Action::keep) continue;
    const auto ref = detail::parse_suffix_ref(ts.words[k]);
    if (!ref) continue;
    const std::string label_lower = detail::to_lower(ref->label);
    LabelState& st = state[label_lower];

    if (census[label_lower].size() == 1 && !st.collapsed) {
      act[k] = Action::replace;  // singleton suffix: just drop the digits
      repl[k] = ref->label;
      continue;
    }

    std::string determiner;
    if (st.standalone_seen.count(ref->digits) > 0) {
      determiner = "the";
    } else if (st.standalone_seen.empty() && !st.collapsed) {
      determiner = "the";
    } else {
      determiner = "another";
    }
    st.standalone_seen.insert(ref->digits);

    const bool can_absorb = k > 0 && act[k - 1] == Action::keep &&
                            detail::is_article(ts.words[k - 1]) &&
                            detail::whitespace_sep(ts.seps[k]);
    if (can_absorb) {
      act[k - 1] = Action::replace;
      repl[k - 1] = detail::match_case(determiner, ts.words[k - 1]);
      act[k] = Action::replace;
      repl[k] = ref->label;
    } else {
      act[k] = Action::replace;
      repl[k] = detail::match_case(determiner, ts.words[k]) + " " +
                (std::isupper(static_cast<unsigned char>(ts.words[k][0]))
                     ? detail::to_lower(ref->label)
                     : ref->label);
    }
  }

  std::string out = ts.seps[0];
  for (std::size_t k = 0; k < n; ++k) {
    if (k > 0 && act[k] != Action::drop) out += ts.seps[k];
    if (act[k] == Action::keep) {
      out += ts.words[k];
    } else if (act[k] == Action::replace) {
      out += repl[k];
    }
  }
  out += ts.seps[n];
  return out;
}

// ---- generated queries ----------------------------------------------

struct GeneratedQuery {
  std::string query_id;
  std::string image_id;
  int target_object_id = -1;
  std::string raw;    // model output, suffixes intact
  std::string final;  // suffixes rewritten
  bool flagged_for_review = false;
};

inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

inline nlohmann::json generated_query_to_json(const GeneratedQuery& q) {
  return nlohmann::json{{"query_id", q.query_id},
                        {"image_id", q.image_id},
                        {"target_object_id", q.target_object_id},
                        {"raw", q.raw},
                        {"final", q.final},
                        {"flagged_for_review", q.flagged_for_review}};
}

inline GeneratedQuery generated_query_from_json(const nlohmann::json& j, const std::string& path) {
  GeneratedQuery q;
  q.query_id = refalign::detail::string_field(j, "query_id", path);
  q.image_id = refalign::detail::string_field(j, "image_id", path);
  q.target_object_id = refalign::detail::int_field(j, "target_object_id", path);
  q.raw = refalign::detail::string_field(j, "raw", path);
  q.final = refalign::detail::string_field(j, "final", path);
  const auto& flag = refalign::detail::member(j, "flagged_for_review", path);
  if (!flag.is_boolean()) throw DataError(path + ".flagged_for_review: expected a boolean");
  q.flagged_for_review = flag.get<bool>();
  return q;
}

inline void save_generated(const std::vector<GeneratedQuery>& queries, std::ostream& out) {
  for (const auto& q : queries) out << generated_query_to_json(q).dump() << '\n';
}

inline void save_generated(const std::vector<GeneratedQuery>& queries, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError(path + ": cannot open file for writing");
  save_generated(queries, out);
  if (!out) throw DataError(path + ": write failed");
}

inline std::vector<GeneratedQuery> load_generated(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open file");
  std::vector<GeneratedQuery> out;
  std::set<std::string> ids;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (refalign::corpus::detail::trim(line).empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    const auto j = refalign::detail::parse_line(line, where);
    GeneratedQuery q = generated_query_from_json(j, where);
    if (!ids.insert(q.query_id).second) {
      throw DataError(where + ": duplicate query_id " + q.query_id);
    }
    out.push_back(std::move(q));
  }
  return out;
}

// ---- statistics --------------------------------------------------------

struct CorpusStats {
  std::size_t image_count = 0;
  std::size_t query_count = 0;
  double avg_query_length = 0.0;       // whitespace tokens of final text
  double avg_objects_per_query = 0.0;  // distinct scene labels mentioned
};

namespace detail {

inline std::vector<std::string> alnum_words_lower(const std::string& text) {
  const TokenStream ts = tokenize_words(text);
  std::vector<std::string> out;
  out.reserve(ts.words.size());
  for (const auto& w : ts.words) out.push_back(to_lower(w));
  return out;
}

inline bool contains_sequence(const std::vector<std::string>& haystack,
                              const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > haystack.size()) return false;
  for (std::size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
    bool all = true;
    for (std::size_t j = 0; j < needle.size(); ++j) {
      if (haystack[i + j] != needle[j]) {
        all = false;
        break;
      }
    }
    if (all) return true;
  }
  return false;
}

// Label (possibly multi-word) mentioned as a word sequence, singular or
// with its last word pluralized.
inline bool mentions_label(const std::vector<std::string>& text_words, const std::string& label) {
  std::vector<std::string> needle = alnum_words_lower(label);
  if (needle.empty()) return false;
  if (contains_sequence(text_words, needle)) return true;
  needle.back() = to_lower(pluralize(needle.back()));
  return contains_sequence(text_words, needle);
}

}  // namespace detail

inline CorpusStats corpus_stats(const std::vector<GeneratedQuery>& queries,
                                const std::map<std::string, SceneGraph>& scenes) {
  CorpusStats stats;
  stats.query_count = queries.size();
  if (queries.empty()) return stats;

  std::set<std::string> images;
  std::size_t word_total = 0;
  std::size_t object_total = 0;
  for (const auto& q : queries) {
    images.insert(q.image_id);
    word_total += split_words(q.final).size();

    const auto scene_it = scenes.find(q.image_id);
    if (scene_it == scenes.end()) continue;  // unknown image contributes zero objects
    const auto text_words = detail::alnum_words_lower(q.final);
    std::set<std::string> labels;
    for (const auto& o : scene_it->second.objects) labels.insert(detail::to_lower(o.label));
    for (const auto& label : labels) {
      if (detail::mentions_label(text_words, label)) ++object_total;
    }
  }
  stats.image_count = images.size();
  stats.avg_query_length = static_cast<double>(word_total) / static_cast<double>(queries.size());
  stats.avg_objects_per_query =
      static_cast<double>(object_total) / static_cast<double>(queries.size());
  return stats;
}

inline nlohmann::json stats_to_json(const CorpusStats& s) {
  return nlohmann::json{{"image_count", s.image_count},
                        {"query_count", s.query_count},
                        {"avg_query_length", s.avg_query_length},
                        {"avg_objects_per_query", s.avg_objects_per_query}};
}

// ---- review round-trip ---------------------------------------------

struct ReviewRecord {
  std::string query_id;
  std::string raw;
  std::string final;
  std::string decision;
};

inline void export_review(const std::vector<GeneratedQuery>& queries, const std::string& path) {
  std::vector<const GeneratedQuery*> ordered;
  ordered.reserve(queries.size());
  for (const auto& q : queries) ordered.push_back(&q);
  std::sort(ordered.begin(), ordered.end(),
            [](const GeneratedQuery* a, const GeneratedQuery* b) { return a->query_id < b->query_id; });
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError(path + ": cannot open file for writing");
  for (const GeneratedQuery* q : ordered) {
    out << nlohmann::json{{"query_id", q->query_id},
                          {"raw", q->raw},
                          {"final", q->final},
                          {"decision", ""}}
               .dump()
        << '\n';
  }
  if (!out) throw DataError(path + ": write failed");
}

inline std::vector<ReviewRecord> import_review(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open file");
  std::vector<ReviewRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    const auto j = refalign::detail::parse_line(line, where);
    ReviewRecord r;
    r.query_id = refalign::detail::string_field(j, "query_id", where);
    r.raw = refalign::detail::string_field(j, "raw", where);
    r.final = refalign::detail::string_field(j, "final", where);
    r.decision = refalign::detail::string_field(j, "decision", where);
    out.push_back(std::move(r));
  }
  return out;
}

// ---- full pipeline -------------------------------------------------

struct BuildOptions {
  int min_relations = 2;
  int max_words = 20;
  int concurrency = 4;
};

namespace detail {

inline std::map<int, ObjectRef> suffix_assignment(const SceneGraph& scene) {
  std::map<std::string, std::vector<int>> by_label;
  for (const auto& o : scene.objects) by_label[o.label].push_back(o.id);
  std::map<int, ObjectRef> refs;
  for (auto& [label, ids] : by_label) {
    std::sort(ids.begin(), ids.end());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      refs[ids[i]] = ObjectRef{label, ids.size() > 1 ? static_cast<int>(i + 1) : 0};
    }
  }
  return refs;
}

// Sorted relation fingerprint of one object; two same-label objects with
// equal fingerprints cannot be told apart by their relations alone.
inline std::vector<std::string> relation_fingerprint(const SceneGraph& scene, int object_id) {
  std::vector<std::string> fp;
  for (const auto& r : scene.relations) {
    if (r.subject_id == object_id) {
      fp.push_back("S|" + r.predicate + "|" +
                   scene.objects[static_cast<std::size_t>(r.object_id)].label);
    }
    if (r.object_id == object_id) {
      fp.push_back("O|" + r.predicate + "|" +
                   scene.objects[static_cast<std::size_t>(r.subject_id)].label);
    }
  }
  std::sort(fp.begin(), fp.end());
  return fp;
}

inline std::string padded_query_id(const std::string& image_id, int object_id) {
  std::string num = std::to_string(object_id);
  if (num.size() < 2) num.insert(num.begin(), 2 - num.size(), '0');
  return image_id + ":" + num;
}

}  // namespace detail

// Runs the whole generation pipeline over a scene collection. Output is
// ordered by (image_id, object id) which matches query_id order.
inline std::vector<GeneratedQuery> build_corpus(const std::map<std::string, SceneGraph>& scenes,
                                                const Lexicon& lexicon, llm::LlmClient& client,
                                                const BuildOptions& options = {}) {
  struct Pending {
    const SceneGraph* scene = nullptr;
    int object_id = -1;
    std::string query_id;
    std::string image_id;
  };
  std::vector<Pending> pending;
  std::vector<std::string> prompts;

  for (const auto& [image_id, scene] : scenes) {
    validate_scene_graph(scene);
    const auto refs = detail::suffix_assignment(scene);
    for (const int candidate : filter_candidates(scene, options.min_relations)) {
      std::vector<Triplet> triplets;
      for (const auto& r : scene.relations) {
        if (r.subject_id != candidate && r.object_id != candidate) continue;
        triplets.push_back(Triplet{refs.at(r.subject_id), r.predicate, refs.at(r.object_id)});
      }
      PromptBundle bundle;
      bundle.opening = default_opening(options.max_words);
      bundle.target = refs.at(candidate).render();
      bundle.sentences = triplets_to_sentences(triplets, lexicon);
      prompts.push_back(build_prompt(bundle));
      pending.push_back(Pending{&scene, candidate, detail::padded_query_id(image_id, candidate),
                                image_id});
    }
  }

  const std::vector<std::string> raws = llm::complete_all(client, prompts, options.concurrency);

  std::vector<GeneratedQuery> out;
  out.reserve(pending.size());
  for (std::size_t i = 0; i < pending.size(); ++i) {
    const Pending& p = pending[i];
    GeneratedQuery q;
    q.query_id = p.query_id;
    q.image_id = p.image_id;
    q.target_object_id = p.object_id;
    q.raw = raws[i];
    q.final = rewrite_suffixes(q.raw);

    const auto fp = detail::relation_fingerprint(*p.scene, p.object_id);
    const std::string& label = p.scene->objects[static_cast<std::size_t>(p.object_id)].label;
    bool ambiguous = false;
    for (const auto& o : p.scene->objects) {
      if (o.id == p.object_id || o.label != label) continue;
      if (detail::relation_fingerprint(*p.scene, o.id) == fp) {
        ambiguous = true;
        break;
      }
    }
    const bool over_long = split_words(q.final).size() > static_cast<std::size_t>(options.max_words);
    q.flagged_for_review = ambiguous || over_long;
    out.push_back(std::move(q));
  }
  return out;
}

}  // namespace refalign::corpus
