#pragma once

// Ranking metrics, TREC run/qrels I/O, and the query-side expansion
// baselines compared against metadata blending.

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "daqu/augment.hpp"
#include "daqu/encoder.hpp"
#include "daqu/errors.hpp"
#include "daqu/index.hpp"
#include "daqu/metaview.hpp"
#include "daqu/setenc.hpp"

namespace daqu {

/// Ranked results per query id.
using Run = std::map<std::string, SearchResult>;
/// Relevant document ids per query id.
using QRels = std::map<std::string, std::set<std::string>>;

enum class MissingQueryPolicy { score_zero, error };

namespace detail {

inline const SearchResult* lookup(const Run& run, const std::string& qid, MissingQueryPolicy policy) {
  auto it = run.find(qid);
  if (it != run.end()) return &it->second;
  if (policy == MissingQueryPolicy::error) throw MissingQueryError("run has no results for query '" + qid + "'");
  return nullptr;
}

template <class PerQuery>
double mean_over_qrels(const Run& run, const QRels& qrels, MissingQueryPolicy policy, PerQuery&& f) {
  if (qrels.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& [qid, rel] : qrels) {
    const SearchResult* r = lookup(run, qid, policy);
    sum += r ? f(*r, rel) : 0.0;
  }
  return sum / static_cast<double>(qrels.size());
}

}  // namespace detail

// Per-query metric values.

inline double query_acc(const SearchResult& r, const std::set<std::string>& rel, std::size_t k) {
  for (std::size_t i = 0; i < std::min(k, r.size()); ++i)
    if (rel.count(r[i].id)) return 1.0;
  return 0.0;
}

inline double query_recall(const SearchResult& r, const std::set<std::string>& rel, std::size_t k) {
  if (rel.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < std::min(k, r.size()); ++i)
    if (rel.count(r[i].id)) ++hits;
  return static_cast<double>(hits) / static_cast<double>(rel.size());
}

inline double query_rr(const SearchResult& r, const std::set<std::string>& rel) {
  for (std::size_t i = 0; i < r.size(); ++i)
    if (rel.count(r[i].id)) return 1.0 / static_cast<double>(i + 1);
  return 0.0;
}

inline double query_ap(const SearchResult& r, const std::set<std::string>& rel) {
  if (rel.empty()) return 0.0;
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (rel.count(r[i].id)) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(rel.size());
}

inline double acc_at_k(const Run& run, const QRels& qrels, std::size_t k,
                       MissingQueryPolicy policy = MissingQueryPolicy::score_zero) {
  if (k < 1) throw ConfigError("k must be >= 1");
  return detail::mean_over_qrels(run, qrels, policy, [k](const auto& r, const auto& rel) { return query_acc(r, rel, k); });
}

inline double recall_at_k(const Run& run, const QRels& qrels, std::size_t k,
                          MissingQueryPolicy policy = MissingQueryPolicy::score_zero) {
  if (k < 1) throw ConfigError("k must be >= 1");
  return detail::mean_over_qrels(run, qrels, policy,
                                 [k](const auto& r, const auto& rel) { return query_recall(r, rel, k); });
}

inline double mrr(const Run& run, const QRels& qrels, MissingQueryPolicy policy = MissingQueryPolicy::score_zero) {
  return detail::mean_over_qrels(run, qrels, policy, [](const auto& r, const auto& rel) { return query_rr(r, rel); });
}

inline double mean_average_precision(const Run& run, const QRels& qrels,
                                     MissingQueryPolicy policy = MissingQueryPolicy::score_zero) {
  return detail::mean_over_qrels(run, qrels, policy, [](const auto& r, const auto& rel) { return query_ap(r, rel); });
}

/// A metric name: "acc@K", "recall@K", "mrr" or "map".
struct MetricSpec {
  enum class Kind { acc, recall, mrr, map } kind;
  std::size_t k = 0;

  std::string name() const {
    switch (kind) {
      case Kind::acc: return "acc@" + std::to_string(k);
      case Kind::recall: return "recall@" + std::to_string(k);
      case Kind::mrr: return "mrr";
      case Kind::map: return "map";
    }
    return "?";
  }

  static MetricSpec parse(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (s == "mrr") return {Kind::mrr, 0};
    if (s == "map") return {Kind::map, 0};
    const auto at = s.find('@');
    if (at != std::string::npos) {
      const std::string head = s.substr(0, at), tail = s.substr(at + 1);
      std::size_t k = 0;
      auto [p, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), k);
      if (ec == std::errc() && p == tail.data() + tail.size() && k >= 1) {
        if (head == "acc") return {Kind::acc, k};
        if (head == "recall") return {Kind::recall, k};
      }
    }
    throw ConfigError("unknown metric '" + s + "' (expected acc@K, recall@K, mrr or map)");
  }

  double per_query(const SearchResult& r, const std::set<std::string>& rel) const {
    switch (kind) {
      case Kind::acc: return query_acc(r, rel, k);
      case Kind::recall: return query_recall(r, rel, k);
      case Kind::mrr: return query_rr(r, rel);
      case Kind::map: return query_ap(r, rel);
    }
    return 0.0;
  }
};

inline std::vector<MetricSpec> parse_metrics(const std::string& csv) {
  std::vector<MetricSpec> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(MetricSpec::parse(item));
  if (out.empty()) throw ConfigError("no metrics requested");
  return out;
}

struct MetricReport {
  std::vector<std::string> metrics;                                 // in request order
  std::map<std::string, double> mean;                               // metric -> mean
  std::map<std::string, std::map<std::string, double>> per_query;   // qid -> metric -> value
  std::size_t query_count = 0;
  std::size_t missing_queries = 0;  // qrels queries absent from the run, scored 0

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["query_count"] = query_count;
    j["missing_queries"] = missing_queries;
    j["metrics"] = metrics;
    j["mean"] = mean;
    j["per_query"] = per_query;
    return j;
  }

  std::string table() const {
    std::ostringstream os;
    std::size_t w = 6;
    for (const auto& m : metrics) w = std::max(w, m.size());
    char buf[64];
    for (const auto& m : metrics) {
      std::snprintf(buf, sizeof buf, "%.6f", mean.at(m));
      os << m << std::string(w - m.size() + 2, ' ') << buf << '\n';
    }
    os << "queries" << std::string(w > 7 ? w - 7 + 2 : 2, ' ') << query_count;
    if (missing_queries) os << " (" << missing_queries << " missing from run)";
    os << '\n';
    return os.str();
  }
};

/// Evaluates every qrels query; queries absent from the run score 0 and are counted.
inline MetricReport evaluate(const Run& run, const QRels& qrels, const std::vector<MetricSpec>& metrics) {
  MetricReport rep;
  rep.query_count = qrels.size();
  for (const auto& m : metrics) {
    rep.metrics.push_back(m.name());
    rep.mean[m.name()] = 0.0;
  }
  static const SearchResult nothing;
  for (const auto& [qid, rel] : qrels) {
    auto it = run.find(qid);
    if (it == run.end()) ++rep.missing_queries;
    const SearchResult& r = it == run.end() ? nothing : it->second;
    for (const auto& m : metrics) rep.per_query[qid][m.name()] = m.per_query(r, rel);
  }
  for (const auto& m : metrics) {
    double sum = 0.0;
    for (const auto& [qid, vals] : rep.per_query) sum += vals.at(m.name());
    rep.mean[m.name()] = qrels.empty() ? 0.0 : sum / static_cast<double>(qrels.size());
  }
  return rep;
}

// TREC formats.

inline std::string format_score(double x) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, p);
}

inline void write_run(std::ostream& os, const Run& run, const std::string& tag) {
  for (const auto& [qid, results] : run)
    for (std::size_t i = 0; i < results.size(); ++i)
      os << qid << " Q0 " << results[i].id << ' ' << (i + 1) << ' ' << format_score(results[i].score) << ' ' << tag << '\n';
}

inline Run read_run(std::istream& is) {
  Run run;
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::vector<std::pair<std::size_t, ScoredDoc>>> raw;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string qid, q0, doc, tag;
    std::size_t rank = 0;
    double score = 0.0;
    if (!(ls >> qid >> q0 >> doc >> rank >> score)) throw FormatError("run line " + std::to_string(lineno) + " is malformed");
    raw[qid].push_back({rank, ScoredDoc{doc, score}});
  }
  for (auto& [qid, rows] : raw) {
    std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    auto& out = run[qid];
    for (auto& r : rows) out.push_back(std::move(r.second));
  }
  return run;
}

inline QRels read_qrels(std::istream& is) {
  QRels q;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string qid, iter, doc;
    long rel = 0;
    if (!(ls >> qid >> iter >> doc >> rel)) throw FormatError("qrels line " + std::to_string(lineno) + " is malformed");
    if (rel > 0) q[qid].insert(doc);
  }
  return q;
}

inline void write_qrels(std::ostream& os, const QRels& q) {
  for (const auto& [qid, docs] : q)
    for (const auto& d : docs) os << qid << " 0 " << d << " 1\n";
}

template <class T, class Fn>
T read_file(const std::filesystem::path& p, Fn&& fn) {
  std::ifstream in(p);
  if (!in) throw FormatError("cannot open " + p.string());
  return fn(in);
}

// Text expansion baselines. "Terms" are whole attribute texts.

inline std::vector<std::string> flatten_texts(const AttributeSet& attrs) {
  std::vector<std::string> out;
  for (const auto& c : attrs.categories)
    for (const auto& a : c.items) out.push_back(a.value);
  return out;
}

inline std::string join_tokens(const std::vector<std::string>& toks) {
  std::string s;
  for (const auto& t : toks) {
    if (!s.empty()) s.push_back(' ');
    s += t;
  }
  return s;
}

/// Query tokens followed by the tokens of `texts`, cut at `max_tokens`.
inline std::string expand_query(std::string_view query, const std::vector<std::string>& texts, std::size_t max_tokens) {
  auto toks = tokenize(query, max_tokens);
  for (const auto& t : texts) {
    if (toks.size() >= max_tokens) break;
    for (auto& tok : tokenize(t, max_tokens - toks.size())) toks.push_back(std::move(tok));
  }
  return join_tokens(toks);
}

/// Ranks attribute texts by BM25 against the query (over a transient index of
/// the query's own attributes) and keeps the best ones until `budget` tokens
/// are used. Zero-score texts are never selected.
inline std::vector<std::string> bm25_select_terms(std::string_view query, const AttributeSet& attrs, std::size_t budget,
                                                  Bm25Params params = {}) {
  if (budget == 0) return {};
  const auto texts = flatten_texts(attrs);
  std::vector<std::vector<std::string>> toks;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    toks.push_back(tokenize(texts[i]));
    char buf[24];
    std::snprintf(buf, sizeof buf, "%012zu", i);
    ids.emplace_back(buf);
  }
  const SparseIndex index(ids, toks, params);
  const auto qtoks = tokenize(query);
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const double s = bm25_score(index, qtoks, i);
    if (s > 0.0) scored.emplace_back(s, i);
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::string> out;
  std::size_t used = 0;
  for (const auto& [s, i] : scored) {
    if (used >= budget) break;
    out.push_back(texts[i]);
    used += toks[i].size();
  }
  return out;
}

enum class SystemMode { none, naive, bm25_select, daqu };

inline std::string to_string(SystemMode m) {
  switch (m) {
    case SystemMode::none: return "none";
    case SystemMode::naive: return "naive";
    case SystemMode::bm25_select: return "bm25_select";
    case SystemMode::daqu: return "daqu";
  }
  return "?";
}

inline SystemMode parse_system_mode(const std::string& s) {
  if (s == "none") return SystemMode::none;
  if (s == "naive") return SystemMode::naive;
  if (s == "bm25_select") return SystemMode::bm25_select;
  if (s == "daqu") return SystemMode::daqu;
  throw ConfigError("unknown mode '" + s + "'");
}

struct Query {
  std::string qid;
  RowRef row;
  std::string text;
};

struct SystemOptions {
  std::size_t k = 100;
  BlendConfig blend;
  std::optional<std::size_t> inference_cap;
  std::uint64_t seed = 0;  // only used to sample under inference_cap
  Bm25Params bm25;
  unsigned threads = 1;
};

/// The query vector each system searches with.
inline DenseVector system_query_vector(SystemMode mode, const EncoderSet& model, const Database& db,
                                       const std::vector<CategorySpec>& specs, const Query& q, const SystemOptions& opt) {
  const auto& cfg = model.featurizer;
  if (mode == SystemMode::none) return encode(model.query, cfg, q.text);
  const AttributeSet attrs = extract_attributes(db, q.row, specs);
  switch (mode) {
    case SystemMode::naive:
      return encode(model.query, cfg, expand_query(q.text, flatten_texts(attrs), cfg.max_tokens));
    case SystemMode::bm25_select: {
      const std::size_t used = tokenize(q.text, cfg.max_tokens).size();
      const auto picked = bm25_select_terms(q.text, attrs, cfg.max_tokens - used, opt.bm25);
      return encode(model.query, cfg, expand_query(q.text, picked, cfg.max_tokens));
    }
    case SystemMode::daqu: {
      SamplingPolicy policy;
      policy.mode = EncodeMode::inference;
      policy.inference_cap = opt.inference_cap;
      policy.seed = query_stream_seed(opt.seed, q.qid);
      const MetadataRep meta = encode_metadata(attrs, model.attribute, cfg, policy);
      return blend(encode(model.query, cfg, q.text), meta, opt.blend);
    }
    case SystemMode::none: break;
  }
  return encode(model.query, cfg, q.text);
}

/// Runs one system over all queries against a dense index.
inline Run run_system(SystemMode mode, const EncoderSet& model, const DenseIndex& index, const Database& db,
                      const std::vector<CategorySpec>& specs, const std::vector<Query>& queries, const SystemOptions& opt) {
  if (opt.k < 1) throw ConfigError("k must be >= 1");
  std::vector<DenseVector> vecs(queries.size());
  detail::parallel_for(queries.size(), opt.threads,
                       [&](std::size_t i) { vecs[i] = system_query_vector(mode, model, db, specs, queries[i], opt); });
  auto results = search_dense_batch(index, vecs, opt.k, opt.threads);
  Run run;
  for (std::size_t i = 0; i < queries.size(); ++i) run[queries[i].qid] = std::move(results[i]);
  return run;
}

/// Pure sparse retrieval over the corpus.
inline Run run_bm25(const SparseIndex& index, const std::vector<Query>& queries, std::size_t k) {
  Run run;
  for (const auto& q : queries) run[q.qid] = search_bm25(index, q.text, k);
  return run;
}

}  // namespace daqu
