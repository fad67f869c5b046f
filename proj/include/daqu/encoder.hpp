#pragma once

// Reference text encoder: hashed bag-of-tokens with term-frequency weights,
// mapped to a dense vector by a trainable D x V matrix.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "daqu/errors.hpp"
#include "daqu/util.hpp"

namespace daqu {

class DenseVector {
 public:
  DenseVector() = default;
  explicit DenseVector(std::size_t n, double fill = 0.0) : v_(n, fill) {}
  DenseVector(std::initializer_list<double> init) : v_(init) {}
  explicit DenseVector(std::vector<double> values) : v_(std::move(values)) {}

  std::size_t size() const noexcept { return v_.size(); }
  double operator[](std::size_t i) const { return v_[i]; }
  double& operator[](std::size_t i) { return v_[i]; }
  const double* data() const noexcept { return v_.data(); }
  double* data() noexcept { return v_.data(); }
  auto begin() const noexcept { return v_.begin(); }
  auto end() const noexcept { return v_.end(); }
  std::span<const double> span() const noexcept { return v_; }
  const std::vector<double>& values() const noexcept { return v_; }

  /// this += a * x
  void axpy(double a, const DenseVector& x) {
    if (x.size() != size()) throw DimensionError("axpy: length " + std::to_string(x.size()) + " vs " + std::to_string(size()));
    for (std::size_t i = 0; i < v_.size(); ++i) v_[i] += a * x.v_[i];
  }
  void scale(double a) {
    for (auto& x : v_) x *= a;
  }
  bool all_finite() const {
    for (double x : v_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  friend bool operator==(const DenseVector&, const DenseVector&) = default;

 private:
  std::vector<double> v_;
};

struct SparseEntry {
  std::uint32_t bucket;
  double weight;
  friend bool operator==(const SparseEntry&, const SparseEntry&) = default;
};

/// Sorted by bucket, no duplicate buckets, no zero weights.
using SparseVector = std::vector<SparseEntry>;

struct FeaturizerConfig {
  std::uint32_t hash_buckets = 1u << 15;
  std::size_t max_tokens = 256;

  void validate() const {
    if (hash_buckets < 2) throw ConfigError("hash_buckets must be >= 2");
    if (max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
  }
  friend bool operator==(const FeaturizerConfig&, const FeaturizerConfig&) = default;
};

inline bool is_token_byte(unsigned char c) noexcept {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

/// Lowercased runs of alphanumeric bytes (non-ASCII bytes count as
/// alphanumeric so UTF-8 words stay whole), at most `limit` of them.
inline std::vector<std::string> tokenize(std::string_view text, std::size_t limit = SIZE_MAX) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size() && out.size() < limit) {
    while (i < text.size() && !is_token_byte(static_cast<unsigned char>(text[i]))) ++i;
    if (i == text.size()) break;
    std::string tok;
    while (i < text.size() && is_token_byte(static_cast<unsigned char>(text[i]))) {
      char c = text[i++];
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
      tok.push_back(c);
    }
    out.push_back(std::move(tok));
  }
  return out;
}

inline std::uint32_t token_bucket(std::string_view token, std::uint32_t buckets) noexcept {
  return static_cast<std::uint32_t>(fnv1a64(token) % buckets);
}

inline SparseVector featurize_tokens(const FeaturizerConfig& cfg, const std::vector<std::string>& tokens) {
  const std::size_t n = std::min(tokens.size(), cfg.max_tokens);
  if (n == 0) return {};
  std::map<std::uint32_t, std::size_t> counts;
  for (std::size_t i = 0; i < n; ++i) ++counts[token_bucket(tokens[i], cfg.hash_buckets)];
  SparseVector out;
  out.reserve(counts.size());
  for (const auto& [b, c] : counts) out.push_back({b, static_cast<double>(c) / static_cast<double>(n)});
  return out;
}

inline SparseVector featurize(const FeaturizerConfig& cfg, std::string_view text) {
  return featurize_tokens(cfg, tokenize(text, cfg.max_tokens));
}

enum class EncoderRole { query, document, attribute };

inline std::string to_string(EncoderRole r) {
  switch (r) {
    case EncoderRole::query: return "query";
    case EncoderRole::document: return "document";
    case EncoderRole::attribute: return "attribute";
  }
  return "?";
}

/// The D x V projection of one encoder. Stored bucket-major so that one
/// bucket's D weights are contiguous.
class EncoderParams {
 public:
  EncoderParams() = default;
  EncoderParams(EncoderRole role, std::size_t dim, std::uint32_t buckets)
      : role_(role), dim_(dim), buckets_(buckets), w_(dim * buckets, 0.0) {
    if (dim == 0) throw ConfigError("encoder dimension must be >= 1");
  }

  /// Entries uniform in [-1/sqrt(V), 1/sqrt(V)], drawn in row-major D x V order.
  static EncoderParams random(EncoderRole role, std::size_t dim, std::uint32_t buckets, std::uint64_t seed) {
    EncoderParams p(role, dim, buckets);
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(buckets));
    for (std::size_t d = 0; d < dim; ++d)
      for (std::uint32_t v = 0; v < buckets; ++v) p.at(d, v) = rng.uniform(-bound, bound);
    return p;
  }

  EncoderRole role() const noexcept { return role_; }
  std::size_t dim() const noexcept { return dim_; }
  std::uint32_t buckets() const noexcept { return buckets_; }

  double at(std::size_t d, std::uint32_t v) const { return w_[static_cast<std::size_t>(v) * dim_ + d]; }
  double& at(std::size_t d, std::uint32_t v) { return w_[static_cast<std::size_t>(v) * dim_ + d]; }

  std::span<const double> column(std::uint32_t v) const { return {w_.data() + static_cast<std::size_t>(v) * dim_, dim_}; }
  std::span<double> column(std::uint32_t v) { return {w_.data() + static_cast<std::size_t>(v) * dim_, dim_}; }

  std::span<const double> flat() const noexcept { return w_; }
  std::span<double> flat() noexcept { return w_; }

  std::uint64_t checksum() const {
    return fnv1a64(std::string_view(reinterpret_cast<const char*>(w_.data()), w_.size() * sizeof(double)));
  }

  friend bool operator==(const EncoderParams&, const EncoderParams&) = default;

 private:
  EncoderRole role_ = EncoderRole::query;
  std::size_t dim_ = 0;
  std::uint32_t buckets_ = 0;
  std::vector<double> w_;
};

inline DenseVector encode_features(const EncoderParams& params, const SparseVector& x) {
  DenseVector out(params.dim());
  for (const auto& e : x) {
    if (e.bucket >= params.buckets())
      throw DimensionError("feature bucket " + std::to_string(e.bucket) + " outside V=" + std::to_string(params.buckets()));
    auto col = params.column(e.bucket);
    for (std::size_t d = 0; d < col.size(); ++d) out[d] += e.weight * col[d];
  }
  return out;
}

inline DenseVector encode(const EncoderParams& params, const FeaturizerConfig& cfg, std::string_view text) {
  if (params.buckets() != cfg.hash_buckets)
    throw DimensionError("encoder has V=" + std::to_string(params.buckets()) + " but featurizer uses " +
                         std::to_string(cfg.hash_buckets));
  return encode_features(params, featurize(cfg, text));
}

enum class Metric { dot, cosine };

inline double dot(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw DimensionError("dot: length " + std::to_string(u.size()) + " vs " + std::to_string(v.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

/// Dot product, or cosine with the convention that a zero-norm side scores 0.
inline double similarity(const DenseVector& u, const DenseVector& v, Metric metric = Metric::dot) {
  const double d = dot(u.span(), v.span());
  if (metric == Metric::dot) return d;
  const double nu = std::sqrt(dot(u.span(), u.span()));
  const double nv = std::sqrt(dot(v.span(), v.span()));
  if (nu == 0.0 || nv == 0.0) return 0.0;
  return d / (nu * nv);
}

/// The three parameter blocks plus the featurizer they were trained with.
struct EncoderSet {
  FeaturizerConfig featurizer;
  EncoderParams query;
  EncoderParams document;
  EncoderParams attribute;

  static EncoderSet random(const FeaturizerConfig& cfg, std::size_t dim, std::uint64_t seed) {
    cfg.validate();
    return EncoderSet{cfg,
                      EncoderParams::random(EncoderRole::query, dim, cfg.hash_buckets, mix64(seed ^ 0x71)),
                      EncoderParams::random(EncoderRole::document, dim, cfg.hash_buckets, mix64(seed ^ 0xd0)),
                      EncoderParams::random(EncoderRole::attribute, dim, cfg.hash_buckets, mix64(seed ^ 0xa7))};
  }
  std::size_t dim() const { return query.dim(); }
  friend bool operator==(const EncoderSet&, const EncoderSet&) = default;
};

/// Precomputed embeddings keyed by text id, for plugging in vectors produced
/// outside this library.
class EmbeddingProvider {
 public:
  std::size_t size() const noexcept { return vectors_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  bool contains(std::string_view id) const { return vectors_.count(std::string(id)) > 0; }

  const DenseVector& lookup(std::string_view id) const {
    auto it = vectors_.find(std::string(id));
    if (it == vectors_.end()) throw UnknownIdError("no embedding for id '" + std::string(id) + "'");
    return it->second;
  }

  void insert(std::string id, DenseVector v) {
    if (!vectors_.empty() && v.size() != dim_)
      throw DimensionMismatchError("embedding '" + id + "' has length " + std::to_string(v.size()) + ", expected " +
                                   std::to_string(dim_));
    if (!v.all_finite()) throw FormatError("embedding '" + id + "' has non-finite entries");
    dim_ = v.size();
    vectors_.insert_or_assign(std::move(id), std::move(v));
  }

  const std::map<std::string, DenseVector>& entries() const { return vectors_; }

 private:
  std::map<std::string, DenseVector> vectors_;
  std::size_t dim_ = 0;
};

/// JSON-Lines, one {"id": string, "vec": [numbers]} per line.
inline EmbeddingProvider load_embedding_provider(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw FormatError("cannot open embedding file " + file.string());
  EmbeddingProvider p;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = file.filename().string() + ":" + std::to_string(lineno);
    try {
      auto j = nlohmann::json::parse(line);
      if (!j.at("id").is_string() || !j.at("vec").is_array()) throw FormatError(where + ": expected {\"id\", \"vec\"}");
      std::vector<double> v;
      for (const auto& x : j.at("vec")) {
        if (!x.is_number()) throw FormatError(where + ": non-numeric vector entry");
        v.push_back(x.get<double>());
      }
      p.insert(j.at("id").get<std::string>(), DenseVector(std::move(v)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": " + e.what());
    } catch (const DimensionMismatchError& e) {
      throw DimensionMismatchError(where + ": " + e.what());
    }
  }
  return p;
}

}  // namespace daqu
