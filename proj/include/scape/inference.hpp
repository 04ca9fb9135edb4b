#pragma once

// Style/content attribute inference per headline through a pluggable chat
// backend, with a deterministic rule-based mock and a JSONL response cache.

#include <algorithm>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "scape/common.hpp"
#include "scape/corpus.hpp"
#include "scape/http.hpp"

namespace scape {

// =========================================================================
// Prompt templates
// =========================================================================

struct PromptTemplate {
  std::string name;
  std::string text;  // must contain "{headline}" exactly once

  void validate() const {
    const std::string slot = "{headline}";
    const auto first = text.find(slot);
    if (first == std::string::npos)
      throw ValidationError("prompt template \"" + name + "\" lacks the {headline} slot");
    if (text.find(slot, first + 1) != std::string::npos)
      throw ValidationError("prompt template \"" + name + "\" has multiple {headline} slots");
  }
};

// The default prompts put the headline on its own line; the mock backend
// relies on that layout to recover the headline from the prompt.
inline PromptTemplate default_style_prompt() {
  return {"style",
          "Describe the writing style (form, tone, rhetorical devices) of this headline "
          "in one sentence:\n{headline}"};
}
inline PromptTemplate default_content_prompt() {
  return {"content",
          "List the main content topics and entities of this headline "
          "in one short phrase:\n{headline}"};
}

// single-pass substitution at the template's slot; the headline itself is
// inserted verbatim, even if it happens to contain "{headline}"
inline std::string render_prompt(const PromptTemplate& tmpl, const std::string& headline) {
  tmpl.validate();
  std::string out = tmpl.text;
  const auto pos = out.find("{headline}");
  out.replace(pos, std::string("{headline}").size(), headline);
  return out;
}

// =========================================================================
// Rule-based style tagging (shared with the synthetic checks and the
// oracle judge)
// =========================================================================

// all matching of: trailing "?" -> question; any "!" -> exclamation;
// leading integer or an "N <word>s" pair -> numbered-list; ":" before
// position 40 -> subject-subordinate; none -> plain-declarative
inline std::vector<std::string> style_tags(const std::string& headline) {
  std::string h = headline;
  while (!h.empty() && std::isspace(static_cast<unsigned char>(h.back()))) h.pop_back();
  std::size_t start = 0;
  while (start < h.size() && std::isspace(static_cast<unsigned char>(h[start]))) ++start;
  h = h.substr(start);

  const auto is_integer = [](const std::string& tok) {
    if (tok.empty()) return false;
    for (char c : tok)
      if (!std::isdigit(static_cast<unsigned char>(c))) return false;
    return true;
  };

  std::vector<std::string> tags;
  if (!h.empty() && h.back() == '?') tags.push_back("question");
  if (h.find('!') != std::string::npos) tags.push_back("exclamation");

  const auto tokens = split_whitespace(h);
  bool numbered = !tokens.empty() && is_integer(tokens[0]);
  for (std::size_t i = 0; !numbered && i + 1 < tokens.size(); ++i)
    numbered = is_integer(tokens[i]) && tokens[i + 1].size() > 1 && tokens[i + 1].back() == 's';
  if (numbered) tags.push_back("numbered-list");

  const auto colon = h.find(':');
  if (colon != std::string::npos && colon < 40) tags.push_back("subject-subordinate");

  if (tags.empty()) tags.push_back("plain-declarative");
  return tags;
}

// planted synthetic tags use the short name "plain" for the mock's
// "plain-declarative" fallback
inline bool style_tag_matches(const std::string& planted, const std::vector<std::string>& tags) {
  for (const auto& t : tags) {
    if (t == planted) return true;
    if (planted == "plain" && t == "plain-declarative") return true;
  }
  return false;
}

// =========================================================================
// Chat backends
// =========================================================================

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string complete(const std::string& prompt) = 0;
};

inline const std::set<std::string>& content_stopwords() {
  static const std::set<std::string> words = {
      "a",    "an",   "the",  "of",   "to",    "in",   "on",   "for", "and",
      "or",   "this", "that", "is",   "are",   "was",  "were", "be",  "with",
      "at",   "by",   "as",   "it",   "its",   "from", "after", "before",
      "over", "under", "you",  "your", "we",   "our",  "do",   "does"};
  return words;
}

// Deterministic mock inferencer. Expects prompts shaped like the defaults:
// an instruction line, then the headline on the following line(s). The
// instruction line selects the channel (contains "style" -> style rules,
// otherwise content rules).
class MockInferencer final : public ChatBackend {
 public:
  std::string complete(const std::string& prompt) override {
    const auto nl = prompt.find('\n');
    const std::string head = nl == std::string::npos ? prompt : prompt.substr(0, nl);
    const std::string headline = nl == std::string::npos ? prompt : prompt.substr(nl + 1);
    if (to_lower(head).find("style") != std::string::npos) return style_response(headline);
    return content_response(headline);
  }

  static std::string style_response(const std::string& headline) {
    const auto tags = style_tags(headline);
    std::string out = "style: ";
    for (std::size_t i = 0; i < tags.size(); ++i) {
      if (i) out += ", ";
      out += tags[i];
    }
    return out;
  }

  // up to 5 most frequent non-stopword lowercase tokens, ties broken
  // lexicographically
  static std::string content_response(const std::string& headline) {
    std::map<std::string, std::size_t> freq;
    for (const auto& tok : tokenize_alnum(headline))
      if (!content_stopwords().count(tok)) ++freq[tok];
    std::vector<std::pair<std::string, std::size_t>> items(freq.begin(), freq.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    std::string out = "topics:";
    const std::size_t n = std::min<std::size_t>(5, items.size());
    for (std::size_t i = 0; i < n; ++i) out += " " + items[i].first;
    return out;
  }
};

class HttpChatClient final : public ChatBackend {
 public:
  explicit HttpChatClient(HttpConfig cfg) : cfg_(std::move(cfg)) {}

  std::string complete(const std::string& prompt) override {
    nlohmann::json body{
        {"model", cfg_.model},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})}};
    nlohmann::json reply = post_json_retry(cfg_, body);
    try {
      return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception&) {
      throw BackendError("chat reply from " + cfg_.url + " lacks choices[0].message.content");
    }
  }

 private:
  HttpConfig cfg_;
};

// =========================================================================
// Attribute records
// =========================================================================

struct AttributeRecord {
  std::string news_id;
  std::string style_response;    // R_s
  std::string content_response;  // R_c
};

inline AttributeRecord infer_attributes(ChatBackend& backend, const std::string& headline,
                                        const PromptTemplate& p_style,
                                        const PromptTemplate& p_content) {
  AttributeRecord rec;
  rec.style_response = backend.complete(render_prompt(p_style, headline));
  rec.content_response = backend.complete(render_prompt(p_content, headline));
  if (rec.style_response.empty() || rec.content_response.empty())
    throw InferenceError("backend returned an empty response for headline: " + headline);
  return rec;
}

// =========================================================================
// Response cache: responses.jsonl {"id","style_response","content_response"}
// =========================================================================

using AttributeMap = std::map<std::string, AttributeRecord>;

inline AttributeMap load_attribute_records(const std::string& path) {
  AttributeMap out;
  for (const auto& [line_no, j] : detail::parse_jsonl(path)) {
    AttributeRecord rec;
    rec.news_id = detail::require_string(j, "id", path, line_no);
    rec.style_response = detail::require_string(j, "style_response", path, line_no);
    rec.content_response = detail::require_string(j, "content_response", path, line_no);
    out[rec.news_id] = std::move(rec);
  }
  return out;
}

inline void save_attribute_records(const AttributeMap& records, const std::string& path) {
  std::string out;
  for (const auto& [id, rec] : records) {
    nlohmann::json j{{"id", id},
                     {"style_response", rec.style_response},
                     {"content_response", rec.content_response}};
    out += j.dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

// Infer attributes for every article in the database, reusing cached
// records so a remote backend is asked at most once per headline.
inline AttributeMap infer_all(ChatBackend& backend, const NewsDatabase& db,
                              const PromptTemplate& p_style, const PromptTemplate& p_content,
                              const AttributeMap& cache = {}) {
  AttributeMap out;
  for (const auto& article : db.articles()) {
    auto hit = cache.find(article.id);
    if (hit != cache.end()) {
      out[article.id] = hit->second;
      continue;
    }
    AttributeRecord rec = infer_attributes(backend, article.headline, p_style, p_content);
    rec.news_id = article.id;
    out[article.id] = std::move(rec);
  }
  return out;
}

}  // namespace scape
