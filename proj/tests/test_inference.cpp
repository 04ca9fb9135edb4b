#include <catch2/catch_amalgamated.hpp>

#include <atomic>

#include "scape/inference.hpp"
#include "test_support.hpp"

using namespace scape;
using testsupport::LocalServer;
using testsupport::TempDir;
using testsupport::write_text;

namespace {

struct CountingBackend final : ChatBackend {
  MockInferencer mock;
  int calls = 0;
  std::string complete(const std::string& prompt) override {
    ++calls;
    return mock.complete(prompt);
  }
};

struct EmptyBackend final : ChatBackend {
  std::string complete(const std::string&) override { return ""; }
};

}  // namespace

TEST_CASE("render_prompt substitutes the slot verbatim") {
  PromptTemplate tmpl{"t", "Style of: {headline}"};
  CHECK(render_prompt(tmpl, "A: B wins!") == "Style of: A: B wins!");

  SECTION("a literal {headline} inside the headline is not re-expanded") {
    CHECK(render_prompt(tmpl, "x {headline} y") == "Style of: x {headline} y");
  }

  SECTION("empty headline produces an empty slot") {
    CHECK(render_prompt(tmpl, "") == "Style of: ");
  }

  SECTION("output length is template - slot + headline") {
    const std::string headline = "some headline text";
    const auto out = render_prompt(tmpl, headline);
    CHECK(out.size() ==
          tmpl.text.size() - std::string("{headline}").size() + headline.size());
  }

  SECTION("template without the slot is invalid") {
    PromptTemplate bad{"b", "no slot here"};
    CHECK_THROWS_AS(render_prompt(bad, "x"), ValidationError);
  }

  SECTION("template with two slots is invalid") {
    PromptTemplate bad{"b", "{headline} and {headline}"};
    CHECK_THROWS_AS(render_prompt(bad, "x"), ValidationError);
  }
}

TEST_CASE("mock inferencer applies the documented style rules") {
  MockInferencer mock;
  const auto ps = default_style_prompt();
  const auto pc = default_content_prompt();

  SECTION("numbered list with topical content") {
    auto rec = infer_attributes(mock, "5 ways to save money", ps, pc);
    CHECK(rec.style_response.find("numbered-list") != std::string::npos);
    CHECK(rec.content_response.find("money") != std::string::npos);
  }

  SECTION("trailing question mark") {
    auto rec = infer_attributes(mock, "Will rates rise?", ps, pc);
    CHECK(rec.style_response.find("question") != std::string::npos);
  }

  SECTION("plain declarative fallback") {
    auto rec = infer_attributes(mock, "Markets close flat", ps, pc);
    CHECK(rec.style_response.find("plain-declarative") != std::string::npos);
  }

  SECTION("all matching tags are emitted") {
    auto tags = style_tags("Stocks: will 5 banks rally?!");
    CHECK(style_tag_matches("question", tags));
    CHECK(style_tag_matches("exclamation", tags));
    CHECK(style_tag_matches("numbered-list", tags));
    CHECK(style_tag_matches("subject-subordinate", tags));
  }

  SECTION("N <word>s pattern counts as numbered-list") {
    CHECK(style_tag_matches("numbered-list", style_tags("top 5 picks today")));
  }

  SECTION("colon past position 40 is not subject-subordinate") {
    const std::string far = std::string(45, 'x') + ": tail";
    CHECK_FALSE(style_tag_matches("subject-subordinate", style_tags(far)));
  }

  SECTION("content tokens are frequency-ranked with lexicographic ties") {
    // "banks banks rates" -> banks (2) then rates (1)
    CHECK(MockInferencer::content_response("banks banks rates") == "topics: banks rates");
    // all ties resolve lexicographically
    CHECK(MockInferencer::content_response("zebra apple mango") ==
          "topics: apple mango zebra");
  }

  SECTION("at most five content tokens") {
    const auto out =
        MockInferencer::content_response("alpha beta gamma delta epsilon zeta eta");
    CHECK(split_whitespace(out).size() == 6);  // "topics:" + 5 tokens
  }
}

TEST_CASE("mock inference is deterministic") {
  MockInferencer mock;
  const auto ps = default_style_prompt();
  const auto pc = default_content_prompt();
  auto a = infer_attributes(mock, "Will the cruise lines rebound?", ps, pc);
  auto b = infer_attributes(mock, "Will the cruise lines rebound?", ps, pc);
  CHECK(a.style_response == b.style_response);
  CHECK(a.content_response == b.content_response);
}

TEST_CASE("style rules are sound on the synthetic corpus") {
  SynthSpec spec;
  spec.n_users = 5;
  spec.n_articles = 200;
  spec.seed = 17;
  SynthResult r = synth_corpus(spec);
  MockInferencer mock;
  const auto ps = default_style_prompt();
  const auto pc = default_content_prompt();
  for (std::size_t i = 0; i < r.db.articles().size(); ++i) {
    const auto& planted = spec.styles[i % spec.styles.size()];
    auto rec = infer_attributes(mock, r.db.articles()[i].headline, ps, pc);
    INFO("headline: " << r.db.articles()[i].headline << " R_s: " << rec.style_response);
    CHECK(rec.style_response.rfind("style: ", 0) == 0);
    CHECK(style_tag_matches(planted, style_tags(r.db.articles()[i].headline)));
  }
}

TEST_CASE("infer_attributes makes one call per prompt and rejects empty replies") {
  CountingBackend counting;
  auto rec = infer_attributes(counting, "Will rates rise?", default_style_prompt(),
                              default_content_prompt());
  CHECK(counting.calls == 2);
  CHECK_FALSE(rec.style_response.empty());

  EmptyBackend empty;
  CHECK_THROWS_AS(infer_attributes(empty, "Will rates rise?", default_style_prompt(),
                                   default_content_prompt()),
                  InferenceError);
}

TEST_CASE("attribute cache round-trips and suppresses backend calls") {
  NewsDatabase db;
  db.add({"a", "Will rates rise?", "x"});
  db.add({"b", "7 stocks to watch", "y"});

  CountingBackend backend;
  auto records = infer_all(backend, db, default_style_prompt(), default_content_prompt());
  CHECK(backend.calls == 4);
  REQUIRE(records.size() == 2);
  CHECK(records.at("a").news_id == "a");

  TempDir dir;
  const auto path = dir.file("responses.jsonl");
  save_attribute_records(records, path);
  auto loaded = load_attribute_records(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded.at("b").style_response == records.at("b").style_response);
  CHECK(loaded.at("b").content_response == records.at("b").content_response);

  // nothing new to infer: the backend is not consulted again
  backend.calls = 0;
  auto again = infer_all(backend, db, default_style_prompt(), default_content_prompt(), loaded);
  CHECK(backend.calls == 0);
  CHECK(again.at("a").style_response == records.at("a").style_response);

  // one new article triggers exactly two calls
  db.add({"c", "Markets close flat", "z"});
  backend.calls = 0;
  auto merged = infer_all(backend, db, default_style_prompt(), default_content_prompt(), loaded);
  CHECK(backend.calls == 2);
  CHECK(merged.size() == 3);
}

TEST_CASE("http chat backend") {
  httplib::Server server;
  std::atomic<int> hits{0};
  std::string seen_auth;
  server.Post("/v1/chat", [&](const httplib::Request& req, httplib::Response& res) {
    ++hits;
    if (req.has_header("Authorization")) seen_auth = req.get_header_value("Authorization");
    nlohmann::json body = nlohmann::json::parse(req.body);
    const std::string prompt = body.at("messages").at(0).at("content");
    nlohmann::json reply{
        {"choices",
         nlohmann::json::array(
             {{{"message", {{"role", "assistant"}, {"content", "echo: " + prompt}}}}})}};
    res.set_content(reply.dump(), "application/json");
  });
  std::atomic<int> flaky_hits{0};
  server.Post("/v1/flaky", [&](const httplib::Request&, httplib::Response& res) {
    if (flaky_hits.fetch_add(1) < 2) {
      res.status = 500;
      return;
    }
    nlohmann::json reply{
        {"choices",
         nlohmann::json::array({{{"message", {{"content", "recovered"}}}}})}};
    res.set_content(reply.dump(), "application/json");
  });
  server.Post("/v1/broken", [&](const httplib::Request&, httplib::Response& res) {
    res.status = 503;
  });
  LocalServer local(server);

  SECTION("success path carries the bearer token") {
    HttpConfig cfg;
    cfg.url = local.url("/v1/chat");
    cfg.api_key = "testkey";
    cfg.base_delay_ms = 1;
    HttpChatClient client(cfg);
    CHECK(client.complete("hello") == "echo: hello");
    CHECK(seen_auth == "Bearer testkey");
    CHECK(hits == 1);
  }

  SECTION("5xx responses are retried with backoff until success") {
    HttpConfig cfg;
    cfg.url = local.url("/v1/flaky");
    cfg.base_delay_ms = 1;
    HttpChatClient client(cfg);
    CHECK(client.complete("x") == "recovered");
    CHECK(flaky_hits == 3);
  }

  SECTION("persistent failure raises after three attempts with the status") {
    HttpConfig cfg;
    cfg.url = local.url("/v1/broken");
    cfg.base_delay_ms = 1;
    HttpChatClient client(cfg);
    CHECK_THROWS_MATCHES(client.complete("x"), BackendError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("503")));
  }

  SECTION("malformed reply is a backend error") {
    httplib::Server bad;
    bad.Post("/v1/chat", [](const httplib::Request&, httplib::Response& res) {
      res.set_content("{\"nope\":1}", "application/json");
    });
    LocalServer bad_local(bad);
    HttpConfig cfg;
    cfg.url = bad_local.url("/v1/chat");
    cfg.base_delay_ms = 1;
    HttpChatClient client(cfg);
    CHECK_THROWS_AS(client.complete("x"), BackendError);
  }
}
