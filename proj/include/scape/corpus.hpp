#pragma once

// News data model, JSONL ingestion, and the seeded synthetic benchmark with
// planted per-user style/topic preferences.

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "scape/common.hpp"

namespace scape {

// =========================================================================
// Domain types
// =========================================================================

struct NewsArticle {
  std::string id;
  std::string headline;
  std::string body;
};

class NewsDatabase {
 public:
  NewsDatabase() = default;

  void add(NewsArticle article) {
    if (article.id.empty()) throw ValidationError("article id must be non-empty");
    if (article.headline.empty())
      throw ValidationError("article \"" + article.id + "\" has an empty headline");
    if (index_.count(article.id))
      throw ValidationError("duplicate news id \"" + article.id + "\"");
    index_.emplace(article.id, articles_.size());
    articles_.push_back(std::move(article));
  }

  bool contains(const std::string& id) const { return index_.count(id) != 0; }

  const NewsArticle& lookup(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw ValidationError("unknown news id \"" + id + "\"");
    return articles_[it->second];
  }

  std::size_t size() const { return articles_.size(); }
  const std::vector<NewsArticle>& articles() const { return articles_; }

 private:
  std::vector<NewsArticle> articles_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct ClickHistory {
  std::string user_id;
  std::vector<std::string> clicks;  // news ids, oldest -> newest
};

struct GoldRecord {
  std::string user_id;
  std::string news_id;
  std::string headline;
};

// =========================================================================
// JSONL loaders / savers
//
//   news.jsonl   {"id","headline","body"}
//   clicks.jsonl {"user_id","clicks":[...]}
//   gold.jsonl   {"user_id","news_id","headline"}
// =========================================================================

namespace detail {

inline std::vector<std::pair<std::size_t, nlohmann::json>> parse_jsonl(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  std::vector<std::pair<std::size_t, nlohmann::json>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw ParseError(path + ": malformed JSON on line " + std::to_string(line_no));
    out.emplace_back(line_no, std::move(j));
  }
  return out;
}

inline std::string require_string(const nlohmann::json& j, const char* key,
                                  const std::string& path, std::size_t line_no) {
  if (!j.contains(key) || !j.at(key).is_string())
    throw ParseError(path + ": line " + std::to_string(line_no) +
                     " is missing string field \"" + key + "\"");
  return j.at(key).get<std::string>();
}

}  // namespace detail

inline NewsDatabase load_news(const std::string& path) {
  NewsDatabase db;
  for (const auto& [line_no, j] : detail::parse_jsonl(path)) {
    NewsArticle a;
    a.id = detail::require_string(j, "id", path, line_no);
    a.headline = detail::require_string(j, "headline", path, line_no);
    a.body = detail::require_string(j, "body", path, line_no);
    db.add(std::move(a));
  }
  return db;
}

inline std::string news_to_jsonl(const NewsDatabase& db) {
  std::string out;
  for (const auto& a : db.articles()) {
    nlohmann::json j{{"id", a.id}, {"headline", a.headline}, {"body", a.body}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline void save_news(const NewsDatabase& db, const std::string& path) {
  write_file_atomic(path, news_to_jsonl(db));
}

inline std::vector<ClickHistory> load_click_histories(const std::string& path,
                                                      const NewsDatabase& db) {
  std::vector<ClickHistory> out;
  for (const auto& [line_no, j] : detail::parse_jsonl(path)) {
    ClickHistory h;
    h.user_id = detail::require_string(j, "user_id", path, line_no);
    if (!j.contains("clicks") || !j.at("clicks").is_array())
      throw ParseError(path + ": line " + std::to_string(line_no) +
                       " is missing array field \"clicks\"");
    for (const auto& c : j.at("clicks")) {
      if (!c.is_string())
        throw ParseError(path + ": line " + std::to_string(line_no) +
                         " has a non-string click id");
      h.clicks.push_back(c.get<std::string>());
    }
    if (h.clicks.empty())
      throw ValidationError("user \"" + h.user_id + "\" has an empty click list");
    for (const auto& id : h.clicks)
      if (!db.contains(id))
        throw ValidationError("user \"" + h.user_id + "\" clicked unknown news id \"" +
                              id + "\"");
    out.push_back(std::move(h));
  }
  return out;
}

inline std::string clicks_to_jsonl(const std::vector<ClickHistory>& histories) {
  std::string out;
  for (const auto& h : histories) {
    nlohmann::json j{{"user_id", h.user_id}, {"clicks", h.clicks}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline void save_click_histories(const std::vector<ClickHistory>& histories,
                                 const std::string& path) {
  write_file_atomic(path, clicks_to_jsonl(histories));
}

inline std::vector<GoldRecord> load_gold(const std::string& path) {
  std::vector<GoldRecord> out;
  for (const auto& [line_no, j] : detail::parse_jsonl(path)) {
    GoldRecord g;
    g.user_id = detail::require_string(j, "user_id", path, line_no);
    g.news_id = detail::require_string(j, "news_id", path, line_no);
    g.headline = detail::require_string(j, "headline", path, line_no);
    out.push_back(std::move(g));
  }
  return out;
}

inline std::string gold_to_jsonl(const std::vector<GoldRecord>& gold) {
  std::string out;
  for (const auto& g : gold) {
    nlohmann::json j{{"user_id", g.user_id}, {"news_id", g.news_id}, {"headline", g.headline}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline void save_gold(const std::vector<GoldRecord>& gold, const std::string& path) {
  write_file_atomic(path, gold_to_jsonl(gold));
}

// =========================================================================
// Synthetic benchmark
// =========================================================================

struct SynthSpec {
  std::size_t n_users = 200;
  std::size_t n_articles = 5000;
  std::vector<std::string> styles = {"question", "exclamation", "numbered-list",
                                     "subject-subordinate", "plain"};
  std::vector<std::string> topics = {"finance", "sports", "health",
                                     "technology", "travel", "science"};
  double concentration = 0.8;    // expected mass on the dominant style/topic
  std::size_t l_min = 24;        // history length range
  std::size_t l_max = 40;
  double drift_prob = 0.5;       // chance a user's recent clicks shift mixture
  std::size_t drift_window = 10; // how many trailing clicks the shift covers
  std::size_t candidates_per_user = 4;
  std::uint64_t seed = 1;
};

struct SynthUserProfile {
  std::string user_id;
  std::vector<double> style_mixture;
  std::vector<double> topic_mixture;
  std::size_t dominant_style = 0;
  std::size_t dominant_topic = 0;
  bool drifted = false;
  std::vector<double> drift_style_mixture;  // empty when not drifted
  std::vector<double> drift_topic_mixture;
};

struct SynthResult {
  NewsDatabase db;
  std::vector<ClickHistory> histories;
  std::vector<GoldRecord> gold;
  std::vector<SynthUserProfile> profiles;
};

namespace synth {

// Word material per topic. Headlines embed one or two of these keywords and
// bodies repeat several, so both channels of the pipeline can recover the
// topic from text alone.
inline const std::map<std::string, std::vector<std::string>>& topic_keywords() {
  static const std::map<std::string, std::vector<std::string>> table = {
      {"finance", {"markets", "stocks", "rates", "inflation", "earnings", "banks"}},
      {"sports", {"league", "coach", "playoffs", "season", "striker", "derby"}},
      {"health", {"vaccine", "diet", "clinic", "therapy", "fitness", "doctors"}},
      {"technology", {"chips", "software", "startup", "robots", "gadgets", "cloud"}},
      {"travel", {"flights", "beaches", "hotels", "tourism", "cruise", "islands"}},
      {"science", {"telescope", "genome", "climate", "physics", "fossil", "rover"}},
  };
  return table;
}

inline const std::vector<std::string>& question_leads() {
  static const std::vector<std::string> v = {"will", "can", "why do", "should", "are"};
  return v;
}
inline const std::vector<std::string>& question_tails() {
  static const std::vector<std::string> v = {"keep climbing", "surprise everyone",
                                             "change the outlook", "hold steady",
                                             "turn the corner"};
  return v;
}
inline const std::vector<std::string>& exclaim_tails() {
  static const std::vector<std::string> v = {"stun fans", "smash records", "defy forecasts",
                                             "spark a frenzy", "roar back"};
  return v;
}
inline const std::vector<std::string>& list_counts() {
  static const std::vector<std::string> v = {"3", "5", "7", "9"};
  return v;
}
inline const std::vector<std::string>& list_tails() {
  static const std::vector<std::string> v = {"moves to watch", "lessons from this week",
                                             "trends worth tracking", "picks for the month",
                                             "facts you should know"};
  return v;
}
inline const std::vector<std::string>& colon_tails() {
  static const std::vector<std::string> v = {"a quiet shift is underway",
                                             "what insiders expect next",
                                             "the outlook turns cautious",
                                             "signals point both ways",
                                             "a steady hand prevails"};
  return v;
}
inline const std::vector<std::string>& plain_tails() {
  static const std::vector<std::string> v = {"close flat on tuesday", "edge higher after the break",
                                             "hold steady in early trading", "drift lower at midday",
                                             "stay the course this week"};
  return v;
}

// Render one headline carrying exactly one style surface form and one
// topic keyword. `variant` selects among the fixed word lists; variant 0
// is the canonical rendering used for gold headlines.
inline std::string render_headline(const std::string& style, const std::string& topic,
                                   std::size_t variant) {
  const auto& kws = topic_keywords().at(topic);
  const std::string& kw = kws[variant % kws.size()];
  if (style == "question")
    return question_leads()[variant % question_leads().size()] + " " + kw + " " +
           question_tails()[(variant / 7) % question_tails().size()] + "?";
  if (style == "exclamation")
    return kw + " " + exclaim_tails()[variant % exclaim_tails().size()] + "!";
  if (style == "numbered-list")
    return list_counts()[variant % list_counts().size()] + " " + kw + " " +
           list_tails()[(variant / 5) % list_tails().size()];
  if (style == "subject-subordinate")
    return kw + ": " + colon_tails()[variant % colon_tails().size()];
  if (style == "plain")
    return kw + " " + plain_tails()[variant % plain_tails().size()];
  throw ConfigError("unknown synthetic style \"" + style + "\"");
}

inline std::string render_body(const std::string& topic, std::size_t variant) {
  const auto& kws = topic_keywords().at(topic);
  const std::string& k1 = kws[variant % kws.size()];
  const std::string& k2 = kws[(variant + 1) % kws.size()];
  const std::string& k3 = kws[(variant + 2) % kws.size()];
  static const std::vector<std::string> frames = {
      "the % desk reviewed % figures while % analysts compared notes before the close",
      "reports on % circulated as % watchers weighed fresh % numbers through the day",
      "a briefing on % followed updates about % and a short note on % this morning",
      "observers tracking % said % data and % chatter shaped the afternoon session",
  };
  const std::string& frame = frames[variant % frames.size()];
  std::string out;
  std::size_t slot = 0;
  const std::string* subs[3] = {&k1, &k2, &k3};
  for (char c : frame) {
    if (c == '%') {
      out += *subs[slot++ % 3];
    } else {
      out += c;
    }
  }
  return out;
}

// peaked mixture: `dominant` gets ~concentration mass, the rest is split
// randomly; sums to 1 within 1e-9
inline std::vector<double> make_mixture(Rng& rng, std::size_t n, std::size_t dominant,
                                        double concentration) {
  const double floor_w = 1.0 / static_cast<double>(n) + 0.05;
  double w = std::clamp(concentration + rng.uniform(-0.05, 0.05), floor_w, 0.98);
  if (n == 1) w = 1.0;
  std::vector<double> rest(n, 0.0);
  double rest_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i == dominant) continue;
    rest[i] = 0.2 + rng.uniform();
    rest_sum += rest[i];
  }
  std::vector<double> mix(n, 0.0);
  mix[dominant] = w;
  for (std::size_t i = 0; i < n; ++i)
    if (i != dominant) mix[i] = (1.0 - w) * rest[i] / rest_sum;
  double total = 0.0;
  for (double m : mix) total += m;
  for (double& m : mix) m /= total;
  return mix;
}

}  // namespace synth

inline void validate(const SynthSpec& spec) {
  if (spec.l_min < 1) throw ConfigError("l_min must be >= 1");
  if (spec.l_max < spec.l_min) throw ConfigError("l_max must be >= l_min");
  if (spec.drift_prob < 0.0 || spec.drift_prob > 1.0)
    throw ConfigError("drift_prob must lie in [0,1]");
  if (spec.styles.empty() || spec.topics.empty())
    throw ConfigError("style and topic sets must be non-empty");
  for (const auto& t : spec.topics)
    if (!synth::topic_keywords().count(t))
      throw ConfigError("unknown synthetic topic \"" + t + "\"");
  const std::set<std::string> known = {"question", "exclamation", "numbered-list",
                                       "subject-subordinate", "plain"};
  for (const auto& s : spec.styles)
    if (!known.count(s)) throw ConfigError("unknown synthetic style \"" + s + "\"");
  if (spec.n_articles < spec.styles.size() * spec.topics.size())
    throw ConfigError("n_articles (" + std::to_string(spec.n_articles) +
                      ") cannot cover the " + std::to_string(spec.styles.size()) + "x" +
                      std::to_string(spec.topics.size()) + " style-topic grid");
  if (spec.n_users == 0) throw ConfigError("n_users must be >= 1");
}

// Deterministic synthetic corpus. Article i carries style i mod S and topic
// (i/S) mod T, so every cell of the grid is populated. Clicks are drawn from
// each user's planted mixtures; drifted users draw their trailing
// drift_window clicks from shifted mixtures. The gold headline for a
// (user, candidate) pair is the candidate's topic rendered canonically in
// the user's dominant style.
inline SynthResult synth_corpus(const SynthSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);
  SynthResult result;

  const std::size_t n_styles = spec.styles.size();
  const std::size_t n_topics = spec.topics.size();

  // articles, bucketed by (style, topic) for click sampling
  std::vector<std::vector<std::vector<std::size_t>>> buckets(
      n_styles, std::vector<std::vector<std::size_t>>(n_topics));
  std::vector<std::size_t> article_topic(spec.n_articles);
  for (std::size_t i = 0; i < spec.n_articles; ++i) {
    const std::size_t s = i % n_styles;
    const std::size_t t = (i / n_styles) % n_topics;
    NewsArticle a;
    char idbuf[16];
    std::snprintf(idbuf, sizeof idbuf, "n%06zu", i);
    a.id = idbuf;
    // variant 0 is reserved for gold renderings
    a.headline = synth::render_headline(spec.styles[s], spec.topics[t], 1 + rng.below(997));
    a.body = synth::render_body(spec.topics[t], rng.below(9973));
    buckets[s][t].push_back(i);
    article_topic[i] = t;
    result.db.add(std::move(a));
  }

  for (std::size_t u = 0; u < spec.n_users; ++u) {
    SynthUserProfile prof;
    char ubuf[16];
    std::snprintf(ubuf, sizeof ubuf, "u%04zu", u);
    prof.user_id = ubuf;
    prof.dominant_style = rng.below(n_styles);
    prof.dominant_topic = rng.below(n_topics);
    prof.style_mixture = synth::make_mixture(rng, n_styles, prof.dominant_style,
                                             spec.concentration);
    prof.topic_mixture = synth::make_mixture(rng, n_topics, prof.dominant_topic,
                                             spec.concentration);
    prof.drifted = rng.uniform() < spec.drift_prob;
    if (prof.drifted) {
      const std::size_t ds = (prof.dominant_style + 1 + rng.below(n_styles > 1 ? n_styles - 1 : 1)) % n_styles;
      const std::size_t dt = (prof.dominant_topic + 1 + rng.below(n_topics > 1 ? n_topics - 1 : 1)) % n_topics;
      prof.drift_style_mixture = synth::make_mixture(rng, n_styles, ds, spec.concentration);
      prof.drift_topic_mixture = synth::make_mixture(rng, n_topics, dt, spec.concentration);
    }

    const std::size_t len = spec.l_min + rng.below(spec.l_max - spec.l_min + 1);
    const std::size_t drift_len = prof.drifted ? std::min(spec.drift_window, len) : 0;

    ClickHistory hist;
    hist.user_id = prof.user_id;
    std::unordered_set<std::size_t> clicked;
    for (std::size_t j = 0; j < len; ++j) {
      const bool in_drift = j >= len - drift_len;
      const auto& smix = in_drift ? prof.drift_style_mixture : prof.style_mixture;
      const auto& tmix = in_drift ? prof.drift_topic_mixture : prof.topic_mixture;
      const std::size_t s = rng.categorical(smix);
      const std::size_t t = rng.categorical(tmix);
      const auto& bucket = buckets[s][t];
      const std::size_t art = bucket[rng.below(bucket.size())];
      clicked.insert(art);
      hist.clicks.push_back(result.db.articles()[art].id);
    }
    result.histories.push_back(std::move(hist));

    // candidate articles outside the click history, with gold renderings
    std::size_t made = 0;
    std::size_t guard = 0;
    while (made < spec.candidates_per_user && guard < 64 * spec.candidates_per_user) {
      ++guard;
      const std::size_t art = rng.below(spec.n_articles);
      if (clicked.count(art)) continue;
      clicked.insert(art);
      GoldRecord g;
      g.user_id = prof.user_id;
      g.news_id = result.db.articles()[art].id;
      g.headline = synth::render_headline(spec.styles[prof.dominant_style],
                                          spec.topics[article_topic[art]], 0);
      result.gold.push_back(std::move(g));
      ++made;
    }
    result.profiles.push_back(std::move(prof));
  }
  return result;
}

}  // namespace scape
