#pragma once

// Exhaustive dense top-k search and an Okapi BM25 inverted index.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "daqu/encoder.hpp"
#include "daqu/errors.hpp"

namespace daqu {

/// Documents in ascending id order.
class Corpus {
 public:
  Corpus() = default;

  explicit Corpus(std::vector<std::pair<std::string, std::string>> docs) {
    std::sort(docs.begin(), docs.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t i = 0; i < docs.size(); ++i) {
      if (i > 0 && docs[i].first == docs[i - 1].first) throw DuplicateIdError("duplicate document id '" + docs[i].first + "'");
      ids_.push_back(std::move(docs[i].first));
      texts_.push_back(std::move(docs[i].second));
    }
  }

  std::size_t size() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const std::string& id(std::size_t i) const { return ids_[i]; }
  const std::string& text(std::size_t i) const { return texts_[i]; }

  std::optional<std::size_t> ordinal(std::string_view id) const {
    auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
    if (it == ids_.end() || *it != id) return std::nullopt;
    return static_cast<std::size_t>(it - ids_.begin());
  }

 private:
  std::vector<std::string> ids_;
  std::vector<std::string> texts_;
};

struct ScoredDoc {
  std::string id;
  double score;
  friend bool operator==(const ScoredDoc&, const ScoredDoc&) = default;
};

/// Scores non-increasing, ties by ascending id.
using SearchResult = std::vector<ScoredDoc>;

namespace detail {

/// Top-k ordinals of `scores` (ordinal order == id order), best first.
inline SearchResult top_k(const std::vector<double>& scores, const std::vector<std::uint32_t>& candidates,
                          const std::vector<std::string>& ids, std::size_t k) {
  std::vector<std::uint32_t> order = candidates;
  auto better = [&](std::uint32_t a, std::uint32_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  const std::size_t n = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(), better);
  SearchResult out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(ScoredDoc{ids[order[i]], scores[order[i]]});
  return out;
}

template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += threads) fn(i);
    });
  for (auto& th : pool) th.join();
}

}  // namespace detail

class DenseIndex {
 public:
  DenseIndex() = default;
  DenseIndex(std::vector<std::string> ids, std::size_t dim, std::vector<double> matrix, Metric metric)
      : ids_(std::move(ids)), dim_(dim), matrix_(std::move(matrix)), metric_(metric) {
    if (matrix_.size() != ids_.size() * dim_) throw DimensionError("embedding matrix does not match N x D");
    if (!std::is_sorted(ids_.begin(), ids_.end())) throw FormatError("dense index ids must be sorted ascending");
    for (double x : matrix_)
      if (!std::isfinite(x)) throw FormatError("dense index has non-finite entries");
    norms_.resize(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) norms_[i] = std::sqrt(daqu::dot(row(i), row(i)));
  }

  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  Metric metric() const noexcept { return metric_; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const std::vector<double>& matrix() const noexcept { return matrix_; }
  std::span<const double> row(std::size_t i) const { return {matrix_.data() + i * dim_, dim_}; }

  std::vector<double> scores(const DenseVector& q) const {
    if (q.size() != dim_ && !ids_.empty())
      throw DimensionError("query has length " + std::to_string(q.size()) + ", index " + std::to_string(dim_));
    std::vector<double> s(ids_.size());
    double qn = 0.0;
    if (metric_ == Metric::cosine) qn = std::sqrt(daqu::dot(q.span(), q.span()));
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      const double d = daqu::dot(q.span(), row(i));
      if (metric_ == Metric::dot) s[i] = d;
      else s[i] = (qn == 0.0 || norms_[i] == 0.0) ? 0.0 : d / (qn * norms_[i]);
    }
    return s;
  }

  friend bool operator==(const DenseIndex& a, const DenseIndex& b) {
    return a.ids_ == b.ids_ && a.dim_ == b.dim_ && a.matrix_ == b.matrix_ && a.metric_ == b.metric_;
  }

 private:
  std::vector<std::string> ids_;
  std::size_t dim_ = 0;
  std::vector<double> matrix_;
  std::vector<double> norms_;
  Metric metric_ = Metric::dot;
};

/// Encodes every document with the document encoder. Rows are written at
/// their canonical position, so the result does not depend on `threads`.
inline DenseIndex build_dense(const Corpus& corpus, const EncoderParams& doc_params, const FeaturizerConfig& cfg,
                              Metric metric = Metric::dot, unsigned threads = 1) {
  const std::size_t d = doc_params.dim();
  std::vector<double> m(corpus.size() * d);
  detail::parallel_for(corpus.size(), threads, [&](std::size_t i) {
    const DenseVector v = encode(doc_params, cfg, corpus.text(i));
    std::copy(v.begin(), v.end(), m.begin() + static_cast<std::ptrdiff_t>(i * d));
  });
  return DenseIndex(corpus.ids(), d, std::move(m), metric);
}

inline DenseIndex build_dense(const EmbeddingProvider& provider, Metric metric = Metric::dot) {
  std::vector<std::string> ids;
  std::vector<double> m;
  for (const auto& [id, v] : provider.entries()) {
    ids.push_back(id);
    m.insert(m.end(), v.begin(), v.end());
  }
  return DenseIndex(std::move(ids), provider.dim(), std::move(m), metric);
}

inline SearchResult search_dense(const DenseIndex& index, const DenseVector& q, std::size_t k) {
  if (k < 1) throw ConfigError("k must be >= 1");
  if (index.size() == 0) return {};
  const auto s = index.scores(q);
  std::vector<std::uint32_t> all(index.size());
  std::iota(all.begin(), all.end(), 0u);
  return detail::top_k(s, all, index.ids(), k);
}

inline std::vector<SearchResult> search_dense_batch(const DenseIndex& index, const std::vector<DenseVector>& queries,
                                                    std::size_t k, unsigned threads = 1) {
  std::vector<SearchResult> out(queries.size());
  detail::parallel_for(queries.size(), threads, [&](std::size_t i) { out[i] = search_dense(index, queries[i], k); });
  return out;
}

struct Bm25Params {
  double k1 = 0.9;
  double b = 0.4;
  friend bool operator==(const Bm25Params&, const Bm25Params&) = default;
};

struct Posting {
  std::uint32_t ordinal;
  std::uint32_t tf;
};

class SparseIndex {
 public:
  SparseIndex() = default;

  SparseIndex(std::vector<std::string> ids, const std::vector<std::vector<std::string>>& doc_tokens, Bm25Params params)
      : ids_(std::move(ids)), params_(params) {
    doc_lengths_.reserve(doc_tokens.size());
    double total = 0.0;
    for (std::uint32_t ord = 0; ord < doc_tokens.size(); ++ord) {
      std::unordered_map<std::string, std::uint32_t> tf;
      for (const auto& t : doc_tokens[ord]) ++tf[t];
      for (const auto& [t, c] : tf) postings_[t].push_back(Posting{ord, c});
      doc_lengths_.push_back(static_cast<std::uint32_t>(doc_tokens[ord].size()));
      total += static_cast<double>(doc_tokens[ord].size());
    }
    avg_length_ = doc_tokens.empty() ? 0.0 : total / static_cast<double>(doc_tokens.size());
  }

  std::size_t size() const noexcept { return ids_.size(); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const Bm25Params& params() const noexcept { return params_; }
  double average_length() const noexcept { return avg_length_; }
  std::uint32_t doc_length(std::size_t ord) const { return doc_lengths_.at(ord); }

  const std::vector<Posting>* postings(const std::string& term) const {
    auto it = postings_.find(term);
    return it == postings_.end() ? nullptr : &it->second;
  }

  std::size_t document_frequency(const std::string& term) const {
    const auto* p = postings(term);
    return p == nullptr ? 0 : p->size();
  }

  double idf(std::size_t df) const {
    const double n = static_cast<double>(ids_.size());
    const double f = static_cast<double>(df);
    return std::log(1.0 + (n - f + 0.5) / (f + 0.5));
  }

  /// Saturated, length-normalized term-frequency weight.
  double tf_weight(std::uint32_t tf, std::size_t ord) const {
    const double t = static_cast<double>(tf);
    const double norm = avg_length_ > 0.0 ? static_cast<double>(doc_lengths_[ord]) / avg_length_ : 1.0;
    return t * (params_.k1 + 1.0) / (t + params_.k1 * (1.0 - params_.b + params_.b * norm));
  }

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::vector<Posting>> postings_;  // each list sorted by ordinal
  std::vector<std::uint32_t> doc_lengths_;
  double avg_length_ = 0.0;
  Bm25Params params_;
};

inline SparseIndex build_bm25(const Corpus& corpus, Bm25Params params = {}) {
  std::vector<std::vector<std::string>> toks;
  toks.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) toks.push_back(tokenize(corpus.text(i)));
  return SparseIndex(corpus.ids(), toks, params);
}

/// Sum over query tokens (with multiplicity) of idf * tf weight.
inline double bm25_score(const SparseIndex& index, const std::vector<std::string>& query_tokens, std::size_t ord) {
  if (ord >= index.size()) throw UnknownIdError("document ordinal " + std::to_string(ord) + " out of range");
  double score = 0.0;
  for (const auto& t : query_tokens) {
    const auto* plist = index.postings(t);
    if (plist == nullptr) continue;
    auto it = std::lower_bound(plist->begin(), plist->end(), ord,
                               [](const Posting& p, std::size_t o) { return p.ordinal < o; });
    if (it == plist->end() || it->ordinal != ord) continue;
    score += index.idf(plist->size()) * index.tf_weight(it->tf, ord);
  }
  return score;
}

/// Term-at-a-time scoring over the posting lists of the query's tokens.
inline SearchResult search_bm25(const SparseIndex& index, std::string_view query, std::size_t k) {
  if (k < 1) throw ConfigError("k must be >= 1");
  const auto tokens = tokenize(query);
  std::vector<double> scores(index.size(), 0.0);
  std::vector<char> hit(index.size(), 0);
  std::vector<std::uint32_t> candidates;
  for (const auto& t : tokens) {
    const auto* plist = index.postings(t);
    if (plist == nullptr) continue;
    const double idf = index.idf(plist->size());
    for (const auto& p : *plist) {
      scores[p.ordinal] += idf * index.tf_weight(p.tf, p.ordinal);
      if (!hit[p.ordinal]) {
        hit[p.ordinal] = 1;
        candidates.push_back(p.ordinal);
      }
    }
  }
  return detail::top_k(scores, candidates, index.ids(), k);
}

}  // namespace daqu
