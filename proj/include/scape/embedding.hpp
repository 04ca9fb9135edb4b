#pragma once

// Instruction-conditioned text embeddings and the offline per-headline
// style/content vector table with bit-exact binary persistence.

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "scape/common.hpp"
#include "scape/corpus.hpp"
#include "scape/inference.hpp"
#include "scape/numerics.hpp"

namespace scape {

struct EmbeddingInstruction {
  std::string name;
  std::string text;

  void validate() const {
    if (text.empty())
      throw ValidationError("embedding instruction \"" + name + "\" is empty");
  }
};

inline EmbeddingInstruction default_style_instruction() {
  return {"style", "Represent the writing style of this headline for retrieval."};
}
inline EmbeddingInstruction default_content_instruction() {
  return {"content", "Represent the content topics of this headline for retrieval."};
}

// =========================================================================
// Providers
// =========================================================================

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::size_t dim() const = 0;

  // returns a unit-norm vector of length dim()
  std::vector<double> embed(const std::string& text) {
    std::vector<double> v = embed_raw(text);
    if (v.size() != dim())
      throw Error("embedding provider returned dimension " + std::to_string(v.size()) +
                  ", expected " + std::to_string(dim()));
    double norm_sq = 0.0;
    for (double x : v) {
      if (!std::isfinite(x)) throw NumericError("embedding has a non-finite component");
      norm_sq += x * x;
    }
    // normalization enforced at the provider boundary
    const double norm = std::sqrt(norm_sq);
    if (norm == 0.0) throw NumericError("embedding has zero norm");
    for (double& x : v) x /= norm;
    return v;
  }

 protected:
  virtual std::vector<double> embed_raw(const std::string& text) = 0;
};

// Deterministic hashing embedder. Normative rules:
//   - the input is split at newlines into headline / instruction / response
//     segments (third segment onward counts as response)
//   - each segment is tokenized to lowercase alphanumeric runs
//   - each token is hashed with 64-bit FNV-1a; bucket = hash mod dim
//   - headline and instruction tokens add weight 1 at their bucket,
//     response tokens add weight 4, so inferred attributes dominate
//     surface lexical overlap
//   - the accumulated vector is L2-normalized
class MockEmbedder final : public EmbeddingProvider {
 public:
  explicit MockEmbedder(std::size_t dim = 64) : dim_(dim) {
    if (dim_ == 0) throw ConfigError("embedding dim must be >= 1");
  }

  std::size_t dim() const override { return dim_; }

 protected:
  std::vector<double> embed_raw(const std::string& text) override {
    std::vector<double> v(dim_, 0.0);
    std::size_t segment = 0;
    std::size_t start = 0;
    bool any = false;
    while (start <= text.size()) {
      auto end = text.find('\n', start);
      if (end == std::string::npos) end = text.size();
      const double weight = segment >= 2 ? 4.0 : 1.0;
      for (const auto& tok : tokenize_alnum(text.substr(start, end - start))) {
        v[fnv1a64(tok) % dim_] += weight;
        any = true;
      }
      ++segment;
      start = end + 1;
    }
    if (!any) v[0] = 1.0;  // keep the unit-norm contract for empty text
    return v;
  }

 private:
  std::size_t dim_;
};

// Remote embedder speaking {model, input} -> {data:[{embedding:[...]}]}.
// Vectors are renormalized at the boundary like every provider.
class HttpEmbedder final : public EmbeddingProvider {
 public:
  HttpEmbedder(HttpConfig cfg, std::size_t dim) : cfg_(std::move(cfg)), dim_(dim) {}

  std::size_t dim() const override { return dim_; }

 protected:
  std::vector<double> embed_raw(const std::string& text) override {
    nlohmann::json body{{"model", cfg_.model}, {"input", text}};
    nlohmann::json reply = post_json_retry(cfg_, body);
    try {
      return reply.at("data").at(0).at("embedding").get<std::vector<double>>();
    } catch (const nlohmann::json::exception&) {
      throw BackendError("embedding reply from " + cfg_.url + " lacks data[0].embedding");
    }
  }

 private:
  HttpConfig cfg_;
  std::size_t dim_;
};

// =========================================================================
// Embedding pairs and the offline table
// =========================================================================

struct EmbeddingPair {
  std::vector<double> style;
  std::vector<double> content;
};

// per channel the provider sees: headline \n instruction \n response
inline EmbeddingPair embed_pair(EmbeddingProvider& provider, const std::string& headline,
                                const EmbeddingInstruction& style_instruction,
                                const std::string& style_response,
                                const EmbeddingInstruction& content_instruction,
                                const std::string& content_response) {
  style_instruction.validate();
  content_instruction.validate();
  EmbeddingPair pair;
  pair.style = provider.embed(headline + "\n" + style_instruction.text + "\n" + style_response);
  pair.content =
      provider.embed(headline + "\n" + content_instruction.text + "\n" + content_response);
  return pair;
}

class EmbeddingTable {
 public:
  explicit EmbeddingTable(std::size_t dim = 64) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return records_.size(); }

  void add(const std::string& id, EmbeddingPair pair) {
    check_vector(pair.style, id);
    check_vector(pair.content, id);
    records_[id] = std::move(pair);
  }

  bool contains(const std::string& id) const { return records_.count(id) != 0; }

  const EmbeddingPair& lookup(const std::string& id) const {
    auto it = records_.find(id);
    if (it == records_.end())
      throw ValidationError("embedding table has no entry for news id \"" + id + "\"");
    return it->second;
  }

  const std::map<std::string, EmbeddingPair>& records() const { return records_; }

  friend bool operator==(const EmbeddingTable& a, const EmbeddingTable& b) {
    if (a.dim_ != b.dim_ || a.records_.size() != b.records_.size()) return false;
    auto ia = a.records_.begin();
    auto ib = b.records_.begin();
    for (; ia != a.records_.end(); ++ia, ++ib) {
      if (ia->first != ib->first) return false;
      if (ia->second.style != ib->second.style) return false;
      if (ia->second.content != ib->second.content) return false;
    }
    return true;
  }

 private:
  void check_vector(const std::vector<double>& v, const std::string& id) const {
    if (v.size() != dim_)
      throw ValidationError("embedding for \"" + id + "\" has dimension " +
                            std::to_string(v.size()) + ", table expects " +
                            std::to_string(dim_));
    double norm_sq = 0.0;
    for (double x : v) norm_sq += x * x;
    if (std::fabs(std::sqrt(norm_sq) - 1.0) > 1e-6)
      throw ValidationError("embedding for \"" + id + "\" is not unit norm");
  }

  std::size_t dim_;
  std::map<std::string, EmbeddingPair> records_;  // sorted: deterministic bytes
};

inline EmbeddingTable build_table(EmbeddingProvider& provider, const NewsDatabase& db,
                                  const AttributeMap& records,
                                  const EmbeddingInstruction& style_instruction =
                                      default_style_instruction(),
                                  const EmbeddingInstruction& content_instruction =
                                      default_content_instruction()) {
  EmbeddingTable table(provider.dim());
  for (const auto& article : db.articles()) {
    auto it = records.find(article.id);
    if (it == records.end())
      throw ValidationError("no attribute record for news id \"" + article.id + "\"");
    table.add(article.id,
              embed_pair(provider, article.headline, style_instruction,
                         it->second.style_response, content_instruction,
                         it->second.content_response));
  }
  return table;
}

// =========================================================================
// table.bin: magic "SCPE", u8 version=1, u32 LE dim, u64 record count,
// then per record: u16 id byte-length, id UTF-8 bytes, dim f64 LE style
// vector, dim f64 LE content vector. Records sorted by id.
// =========================================================================

inline std::string serialize_table(const EmbeddingTable& table) {
  std::string out;
  out += "SCPE";
  out.push_back(static_cast<char>(1));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(table.dim()));
  detail::put_le<std::uint64_t>(out, table.size());
  for (const auto& [id, pair] : table.records()) {
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(id.size()));
    out += id;
    for (double v : pair.style) detail::put_le<double>(out, v);
    for (double v : pair.content) detail::put_le<double>(out, v);
  }
  return out;
}

inline EmbeddingTable deserialize_table(const std::string& in) {
  if (in.size() < 5 || in.compare(0, 4, "SCPE") != 0)
    throw FormatError("bad table magic at offset 0");
  std::size_t off = 4;
  const auto version = static_cast<unsigned char>(in[off++]);
  if (version != 1)
    throw FormatError("unsupported table version " + std::to_string(version) +
                      " at offset 4");
  const auto dim = detail::get_le<std::uint32_t>(in, off, "table dim");
  const auto count = detail::get_le<std::uint64_t>(in, off, "record count");
  EmbeddingTable table(dim);
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto id_len = detail::get_le<std::uint16_t>(in, off, "id length");
    if (off + id_len > in.size())
      throw FormatError("truncated id at offset " + std::to_string(off));
    std::string id = in.substr(off, id_len);
    off += id_len;
    EmbeddingPair pair;
    pair.style.resize(dim);
    pair.content.resize(dim);
    for (auto& v : pair.style) v = detail::get_le<double>(in, off, "style vector of " + id);
    for (auto& v : pair.content)
      v = detail::get_le<double>(in, off, "content vector of " + id);
    table.add(id, std::move(pair));
  }
  if (off != in.size())
    throw FormatError("trailing bytes at offset " + std::to_string(off));
  return table;
}

inline void save_table(const EmbeddingTable& table, const std::string& path) {
  write_file_atomic(path, serialize_table(table));
}

inline EmbeddingTable load_table(const std::string& path) {
  return deserialize_table(read_file(path));
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

}  // namespace scape
