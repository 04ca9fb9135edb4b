#include <catch2/catch_amalgamated.hpp>

#include "scape/embedding.hpp"
#include "test_support.hpp"

using namespace scape;
using testsupport::LocalServer;
using testsupport::TempDir;

namespace {

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// independent re-derivation of the mock hashing rules, kept deliberately
// naive: re-hash each token, bucket it, weight by segment, normalize
std::vector<double> oracle_mock_embed(const std::string& text, std::size_t dim) {
  auto fnv = [](const std::string& s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    return h;
  };
  std::vector<double> v(dim, 0.0);
  std::vector<std::string> segments;
  std::string cur;
  for (char c : text) {
    if (c == '\n') {
      segments.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  segments.push_back(cur);
  for (std::size_t si = 0; si < segments.size(); ++si) {
    const double w = si >= 2 ? 4.0 : 1.0;
    for (const auto& tok : tokenize_alnum(segments[si])) v[fnv(tok) % dim] += w;
  }
  double n = norm(v);
  if (n == 0.0) {
    v[0] = 1.0;
    n = 1.0;
  }
  for (double& x : v) x /= n;
  return v;
}

EmbeddingTable random_table(Rng& rng, std::size_t dim, std::size_t n) {
  EmbeddingTable table(dim);
  for (std::size_t i = 0; i < n; ++i) {
    EmbeddingPair pair;
    pair.style.resize(dim);
    pair.content.resize(dim);
    for (double& v : pair.style) v = rng.normal();
    for (double& v : pair.content) v = rng.normal();
    const double ns = norm(pair.style), nc = norm(pair.content);
    for (double& v : pair.style) v /= ns;
    for (double& v : pair.content) v /= nc;
    table.add("id" + std::to_string(i), std::move(pair));
  }
  return table;
}

}  // namespace

TEST_CASE("mock embedder determinism and normalization") {
  MockEmbedder emb(64);
  const std::string text = "Will rates rise?\nstyle instruction\nstyle: question";
  auto a = emb.embed(text);
  auto b = emb.embed(text);
  CHECK(a == b);  // bitwise
  CHECK(std::fabs(norm(a) - 1.0) <= 1e-6);

  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    std::string s;
    for (int k = 0; k < 8; ++k) s += " tok" + std::to_string(rng.below(50));
    CHECK(std::fabs(norm(emb.embed(s)) - 1.0) <= 1e-6);
  }
}

TEST_CASE("mock embedder matches the documented hash rules") {
  const std::size_t dim = 16;
  MockEmbedder emb(dim);
  const std::string text = "5 ways to save money\ncontent instruction\ntopics: money save ways";
  auto got = emb.embed(text);
  auto expected = oracle_mock_embed(text, dim);
  REQUIRE(got.size() == expected.size());
  for (std::size_t i = 0; i < got.size(); ++i)
    CHECK(got[i] == Catch::Approx(expected[i]).margin(1e-15));
}

TEST_CASE("embed_pair uses headline-instruction-response concatenation") {
  // a provider that records its inputs
  struct Probe final : EmbeddingProvider {
    std::vector<std::string> inputs;
    std::size_t dim() const override { return 4; }
    std::vector<double> embed_raw(const std::string& text) override {
      inputs.push_back(text);
      return {1.0, 0.0, 0.0, 0.0};
    }
  } probe;

  auto pair = embed_pair(probe, "headline text", {"style", "SI"}, "R_s text",
                         {"content", "CI"}, "R_c text");
  REQUIRE(probe.inputs.size() == 2);
  CHECK(probe.inputs[0] == "headline text\nSI\nR_s text");
  CHECK(probe.inputs[1] == "headline text\nCI\nR_c text");
  CHECK(pair.style.size() == 4);
}

TEST_CASE("style channel separates styles better than topics on mock responses") {
  MockEmbedder emb(64);
  MockInferencer mock;
  const auto ps = default_style_prompt();
  const auto pc = default_content_prompt();
  const auto is = default_style_instruction();
  const auto ic = default_content_instruction();

  auto style_vec = [&](const std::string& headline) {
    auto rec = infer_attributes(mock, headline, ps, pc);
    return embed_pair(emb, headline, is, rec.style_response, ic, rec.content_response).style;
  };

  // two question headlines with different topics vs a plain headline
  auto q_finance = style_vec("will markets keep climbing?");
  auto q_travel = style_vec("will beaches surprise everyone?");
  auto plain = style_vec("markets close flat on tuesday");

  CHECK(cosine(q_finance, q_travel) > cosine(q_finance, plain));
}

TEST_CASE("mock embedder separates styles on a synthetic corpus") {
  SynthSpec spec;
  spec.n_users = 2;
  spec.n_articles = 500;
  spec.seed = 23;
  SynthResult r = synth_corpus(spec);

  MockEmbedder emb(64);
  MockInferencer mock;
  auto records = infer_all(mock, r.db, default_style_prompt(), default_content_prompt());
  EmbeddingTable table = build_table(emb, r.db, records);

  // group style vectors by planted style
  std::vector<std::vector<const std::vector<double>*>> groups(spec.styles.size());
  for (std::size_t i = 0; i < r.db.articles().size(); ++i)
    groups[i % spec.styles.size()].push_back(
        &table.lookup(r.db.articles()[i].id).style);

  double intra = 0.0, inter = 0.0;
  std::size_t n_intra = 0, n_inter = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (std::size_t h = g; h < groups.size(); ++h) {
      for (std::size_t i = 0; i < groups[g].size(); i += 7) {
        for (std::size_t j = (g == h ? i + 1 : 0); j < groups[h].size(); j += 7) {
          const double c = cosine(*groups[g][i], *groups[h][j]);
          if (g == h) {
            intra += c;
            ++n_intra;
          } else {
            inter += c;
            ++n_inter;
          }
        }
      }
    }
  }
  intra /= static_cast<double>(n_intra);
  inter /= static_cast<double>(n_inter);
  INFO("mean intra-style cosine " << intra << " vs inter " << inter);
  CHECK(intra > inter);
}

TEST_CASE("build_table covers the database exactly") {
  NewsDatabase db;
  db.add({"a", "Will rates rise?", "x"});
  db.add({"b", "7 stocks to watch", "y"});
  db.add({"c", "Markets close flat", "z"});
  MockInferencer mock;
  MockEmbedder emb(32);
  auto records = infer_all(mock, db, default_style_prompt(), default_content_prompt());

  EmbeddingTable table = build_table(emb, db, records);
  CHECK(table.size() == 3);
  CHECK(table.dim() == 32);
  CHECK(table.contains("a"));
  CHECK_THROWS_AS(table.lookup("zzz"), ValidationError);

  SECTION("missing record names the id") {
    records.erase("b");
    CHECK_THROWS_MATCHES(build_table(emb, db, records), ValidationError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("\"b\"")));
  }

  SECTION("rebuild yields identical bytes") {
    auto again = build_table(emb, db, infer_all(mock, db, default_style_prompt(),
                                                default_content_prompt()));
    CHECK(serialize_table(table) == serialize_table(again));
  }
}

TEST_CASE("table persistence is bit-exact") {
  Rng rng(31);
  EmbeddingTable table = random_table(rng, 8, 5);
  TempDir dir;
  const auto path = dir.file("table.bin");
  save_table(table, path);
  EmbeddingTable loaded = load_table(path);
  CHECK(loaded == table);
  CHECK(serialize_table(loaded) == serialize_table(table));
}

TEST_CASE("table format errors") {
  Rng rng(33);
  EmbeddingTable table = random_table(rng, 4, 3);
  std::string bytes = serialize_table(table);

  SECTION("bad magic") {
    bytes[0] = 'Z';
    CHECK_THROWS_AS(deserialize_table(bytes), FormatError);
  }
  SECTION("bumped version is unsupported") {
    bytes[4] = 2;
    CHECK_THROWS_MATCHES(deserialize_table(bytes), FormatError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("version")));
  }
  SECTION("truncation mid-record reports an offset") {
    bytes.resize(bytes.size() - 11);
    CHECK_THROWS_MATCHES(deserialize_table(bytes), FormatError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("offset")));
  }
  SECTION("trailing garbage is rejected") {
    bytes += "xx";
    CHECK_THROWS_AS(deserialize_table(bytes), FormatError);
  }
}

TEST_CASE("provider contract violations") {
  struct WrongDim final : EmbeddingProvider {
    std::size_t dim() const override { return 4; }
    std::vector<double> embed_raw(const std::string&) override { return {1.0, 2.0}; }
  } wrong;
  CHECK_THROWS_AS(wrong.embed("x"), Error);

  struct NonFinite final : EmbeddingProvider {
    std::size_t dim() const override { return 2; }
    std::vector<double> embed_raw(const std::string&) override {
      return {1.0, std::numeric_limits<double>::infinity()};
    }
  } nonfinite;
  CHECK_THROWS_AS(nonfinite.embed("x"), NumericError);
}

TEST_CASE("http embedder renormalizes replies") {
  httplib::Server server;
  server.Post("/v1/embed", [](const httplib::Request&, httplib::Response& res) {
    nlohmann::json reply{{"data", nlohmann::json::array({{{"embedding", {3.0, 0.0, 4.0}}}})}};
    res.set_content(reply.dump(), "application/json");
  });
  LocalServer local(server);

  HttpConfig cfg;
  cfg.url = local.url("/v1/embed");
  cfg.base_delay_ms = 1;
  HttpEmbedder emb(cfg, 3);
  auto v = emb.embed("anything");
  CHECK(v[0] == Catch::Approx(0.6));
  CHECK(v[1] == 0.0);
  CHECK(v[2] == Catch::Approx(0.8));
}
