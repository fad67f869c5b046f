#pragma once

// Experiment configuration and the train / index / search / eval / sweep
// stages shared by the command-line tool and the integration tests.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "daqu/artifact.hpp"
#include "daqu/evalkit.hpp"
#include "daqu/index.hpp"
#include "daqu/metaview.hpp"
#include "daqu/relstore.hpp"
#include "daqu/trainer.hpp"

namespace daqu {

namespace fs = std::filesystem;

struct ExperimentConfig {
  fs::path schema, data_dir, train, queries, qrels;
  std::string corpus_table, corpus_field, corpus_require;
  std::string query_table, query_field;
  std::vector<CategorySpec> categories;
  FeaturizerConfig featurizer;
  TrainConfig train_cfg;
  std::size_t k = 100;
  std::vector<MetricSpec> metrics;
  std::string mode = "daqu";
  std::vector<std::uint64_t> seeds;

  static ExperimentConfig from_json(const nlohmann::json& j, const fs::path& base_dir) {
    if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
    ExperimentConfig c;
    auto require = [&](const nlohmann::json& obj, const char* key, const std::string& where) -> const nlohmann::json& {
      if (!obj.is_object() || !obj.contains(key)) throw ConfigError("missing required field '" + where + key + "'");
      return obj.at(key);
    };
    try {
      const auto& paths = require(j, "paths", "");
      auto path = [&](const char* key) {
        fs::path p = require(paths, key, "paths.").get<std::string>();
        return p.is_absolute() ? p : fs::absolute(base_dir / p).lexically_normal();
      };
      c.schema = path("schema");
      c.data_dir = path("data_dir");
      if (paths.contains("train")) c.train = path("train");
      if (paths.contains("queries")) c.queries = path("queries");
      if (paths.contains("qrels")) c.qrels = path("qrels");

      const auto& corpus = require(j, "corpus", "");
      c.corpus_table = require(corpus, "table", "corpus.").get<std::string>();
      c.corpus_field = require(corpus, "field", "corpus.").get<std::string>();
      c.corpus_require = corpus.value("require", std::string());
      const auto& query = require(j, "query", "");
      c.query_table = require(query, "table", "query.").get<std::string>();
      c.query_field = require(query, "field", "query.").get<std::string>();

      for (const auto& s : j.value("categories", nlohmann::json::array())) c.categories.push_back(spec_from_json(s));

      if (j.contains("featurizer")) {
        const auto& f = j.at("featurizer");
        c.featurizer.hash_buckets = f.value("hash_buckets", c.featurizer.hash_buckets);
        c.featurizer.max_tokens = f.value("max_tokens", c.featurizer.max_tokens);
      }
      c.featurizer.validate();

      const auto& t = require(j, "train", "");
      auto& tc = c.train_cfg;
      tc.batch_size = t.value("batch_size", tc.batch_size);
      tc.learning_rate = t.value("learning_rate", tc.learning_rate);
      tc.weight_decay = t.value("weight_decay", tc.weight_decay);
      if (t.contains("betas")) {
        tc.beta1 = t.at("betas").at(0).get<double>();
        tc.beta2 = t.at("betas").at(1).get<double>();
      }
      tc.eps = t.value("eps", tc.eps);
      tc.epochs = require(t, "epochs", "train.").get<std::size_t>();
      tc.dim = t.value("dim", tc.dim);
      tc.grad_k = t.value("grad_k", tc.grad_k);
      tc.nograd_m = t.value("nograd_m", tc.nograd_m);
      tc.seed = require(t, "seed", "train.").get<std::uint64_t>();
      if (j.contains("blend")) tc.blend = blend_from_json(j.at("blend"));
      tc.validate();

      if (j.contains("eval")) {
        const auto& e = j.at("eval");
        c.k = e.value("k", c.k);
        for (const auto& m : e.value("metrics", nlohmann::json::array())) c.metrics.push_back(MetricSpec::parse(m.get<std::string>()));
      }
      if (c.metrics.empty()) c.metrics = parse_metrics("acc@10,recall@10,mrr,map");
      if (c.k < 1) throw ConfigError("eval.k must be >= 1");
      c.mode = j.value("mode", c.mode);
      for (const auto& s : j.value("seeds", nlohmann::json::array())) c.seeds.push_back(s.get<std::uint64_t>());
      if (c.seeds.empty()) c.seeds.push_back(tc.seed);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed experiment config: ") + e.what());
    }
    return c;
  }

  static ExperimentConfig load(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config " + file.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config " + file.string() + " is not valid JSON: " + e.what());
    }
    return from_json(j, fs::absolute(file).parent_path());
  }

  /// Fully resolved form (absolute paths); embedded in artifacts.
  nlohmann::json to_json() const {
    nlohmann::json cats = nlohmann::json::array();
    for (const auto& c : categories) cats.push_back(spec_to_json(c));
    std::vector<std::string> ms;
    for (const auto& m : metrics) ms.push_back(m.name());
    const auto& t = train_cfg;
    return {{"paths",
             {{"schema", schema.string()},
              {"data_dir", data_dir.string()},
              {"train", train.string()},
              {"queries", queries.string()},
              {"qrels", qrels.string()}}},
            {"corpus", {{"table", corpus_table}, {"field", corpus_field}, {"require", corpus_require}}},
            {"query", {{"table", query_table}, {"field", query_field}}},
            {"categories", cats},
            {"featurizer", {{"hash_buckets", featurizer.hash_buckets}, {"max_tokens", featurizer.max_tokens}}},
            {"train",
             {{"batch_size", t.batch_size},
              {"learning_rate", t.learning_rate},
              {"weight_decay", t.weight_decay},
              {"betas", {t.beta1, t.beta2}},
              {"eps", t.eps},
              {"epochs", t.epochs},
              {"dim", t.dim},
              {"grad_k", t.grad_k},
              {"nograd_m", t.nograd_m},
              {"seed", t.seed}}},
            {"blend", blend_to_json(t.blend)},
            {"eval", {{"k", k}, {"metrics", ms}}},
            {"mode", mode},
            {"seeds", seeds}};
  }

  std::string digest() const { return hex64(fnv1a64(to_json().dump())); }

  /// Checks tables, fields and categories against the loaded schema.
  void validate_against(const Database& db) const {
    auto check_field = [&](const std::string& table, const std::string& field, const std::string& what) {
      if (!db.has_table(table)) throw ConfigError(what + " table '" + table + "' is not in the schema");
      const auto& s = db.table(table).schema();
      auto a = s.attr_index(field);
      if (!a || s.attributes[*a].kind != AttrKind::text)
        throw ConfigError(what + " field '" + field + "' is not a text column of '" + table + "'");
    };
    check_field(corpus_table, corpus_field, "corpus");
    check_field(query_table, query_field, "query");
    if (!corpus_require.empty()) {
      const auto& s = db.table(corpus_table).schema();
      if (!s.fk_index(corpus_require) && !s.attr_index(corpus_require))
        throw ConfigError("corpus.require column '" + corpus_require + "' is not in '" + corpus_table + "'");
    }
    for (const auto& r : validate_specs(db.schemas(), categories))
      if (!r.ok) throw ConfigError("category '" + r.name + "': " + r.message);
    for (const auto& c : categories)
      if (c.start_table != query_table)
        throw ConfigError("category '" + c.name + "' starts at '" + c.start_table + "', queries live in '" + query_table + "'");
  }
};

inline Database load_experiment_database(const ExperimentConfig& cfg) {
  Database db = load_database(cfg.schema, cfg.data_dir);
  cfg.validate_against(db);
  return db;
}

/// Rows of the corpus table (optionally only those with `require` present).
inline Corpus load_corpus(const Database& db, const ExperimentConfig& cfg) {
  const Table& t = db.table(cfg.corpus_table);
  const auto& s = t.schema();
  const auto field = *s.attr_index(cfg.corpus_field);
  const auto req_fk = cfg.corpus_require.empty() ? std::nullopt : s.fk_index(cfg.corpus_require);
  const auto req_attr = cfg.corpus_require.empty() ? std::nullopt : s.attr_index(cfg.corpus_require);
  std::vector<std::pair<std::string, std::string>> docs;
  for (const auto& r : t.rows()) {
    if (req_fk && !r.fk_values[*req_fk]) continue;
    if (req_attr && !r.attr_values[*req_attr]) continue;
    docs.emplace_back(r.id, r.attr_values[field].value_or(""));
  }
  return Corpus(std::move(docs));
}

inline std::vector<TrainExample> load_train_examples(const fs::path& file, const ExperimentConfig& cfg) {
  std::ifstream in(file);
  if (!in) throw FormatError("cannot open training file " + file.string());
  std::vector<TrainExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      out.push_back(TrainExample{RowRef{j.value("query_table", cfg.query_table), j.at("query_row").get<std::string>()},
                                 j.value("query_field", cfg.query_field), j.at("positive").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(file.filename().string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

/// Queries file: JSON-Lines {"qid", "row_id"} with an optional "text" override.
inline std::vector<Query> load_queries(const fs::path& file, const Database& db, const ExperimentConfig& cfg) {
  std::ifstream in(file);
  if (!in) throw FormatError("cannot open queries file " + file.string());
  const Table& t = db.table(cfg.query_table);
  std::vector<Query> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      Query q;
      q.row = RowRef{cfg.query_table, j.at("row_id").get<std::string>()};
      q.qid = j.value("qid", q.row.id);
      if (j.contains("text")) q.text = j.at("text").get<std::string>();
      else q.text = t.attribute(db.row(q.row), cfg.query_field).value_or("");
      out.push_back(std::move(q));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(file.filename().string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline unsigned threads_from_env(std::optional<unsigned> flag) {
  if (flag && *flag > 0) return *flag;
  if (const char* env = std::getenv("DAQU_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return static_cast<unsigned>(n);
  }
  return 1;
}

// Stages.

inline TrainResult run_training(const ExperimentConfig& cfg, const Database& db, const Corpus& corpus,
                                const std::vector<TrainExample>& examples) {
  Trainer trainer(db, corpus, cfg.categories, cfg.train_cfg, cfg.featurizer);
  return trainer.train(examples);
}

/// Dense index at storage precision, so in-memory and on-disk searches agree.
inline DenseIndex build_index(const Checkpoint& ckpt, const Corpus& corpus, unsigned threads = 1) {
  return at_storage_precision(build_dense(corpus, ckpt.model.document, ckpt.model.featurizer, Metric::dot, threads));
}

inline void check_checkpoint(const Checkpoint& ckpt, const ExperimentConfig& cfg) {
  if (ckpt.specs_digest != specs_digest(cfg.categories))
    throw VersionMismatchError("checkpoint was trained with different metadata categories");
  if (!(ckpt.model.featurizer == cfg.featurizer)) throw VersionMismatchError("checkpoint featurizer differs from the config");
}

inline SystemOptions system_options(const ExperimentConfig& cfg, const Checkpoint& ckpt, std::size_t k, unsigned threads) {
  SystemOptions opt;
  opt.k = k;
  opt.blend = ckpt.blend;
  opt.seed = ckpt.seed;
  opt.threads = threads;
  (void)cfg;
  return opt;
}

/// "bm25" runs pure sparse retrieval; the other modes go through the dense index.
inline Run run_mode(const std::string& mode, const ExperimentConfig& cfg, const Checkpoint& ckpt, const DenseIndex& index,
                    const Database& db, const Corpus& corpus, const std::vector<Query>& queries, std::size_t k,
                    unsigned threads = 1, std::optional<std::size_t> inference_cap = std::nullopt) {
  if (k < 1) throw ConfigError("k must be >= 1");
  if (mode == "bm25") return run_bm25(build_bm25(corpus), queries, k);
  auto opt = system_options(cfg, ckpt, k, threads);
  opt.inference_cap = inference_cap;
  return run_system(parse_system_mode(mode), ckpt.model, index, db, cfg.categories, queries, opt);
}

inline std::string run_to_string(const Run& run, const std::string& tag) {
  std::ostringstream os;
  write_run(os, run, tag);
  return os.str();
}

// Sweeps.

struct SweepRow {
  std::string param;
  nlohmann::json value;
  MetricReport report;
  double latency_median_ms = 0.0;
  double latency_mean_ms = 0.0;
  double baseline_median_ms = 0.0;
  double relative_latency = 0.0;

  nlohmann::json to_json() const {
    return {{"param", param},
            {"value", value},
            {"metrics", report.mean},
            {"queries", report.query_count},
            {"latency_median_ms", latency_median_ms},
            {"latency_mean_ms", latency_mean_ms},
            {"baseline_latency_median_ms", baseline_median_ms},
            {"relative_latency", relative_latency}};
  }
};

struct LatencyStats {
  double median_ms = 0.0;
  double mean_ms = 0.0;
};

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

/// Wall-clock latency of each per-query pipeline. One warm-up pass, then
/// `reps` timed passes in which pipelines are interleaved query by query;
/// each query's latency is the median of its reps. Reports the median and
/// mean of those per-query latencies.
inline std::vector<LatencyStats> measure_latency(const std::vector<std::function<void(std::size_t)>>& pipelines,
                                                 std::size_t n_queries, std::size_t reps = 3) {
  using clock = std::chrono::steady_clock;
  for (std::size_t q = 0; q < n_queries; ++q)
    for (const auto& p : pipelines) p(q);
  std::vector<std::vector<std::vector<double>>> samples(pipelines.size(),
                                                        std::vector<std::vector<double>>(n_queries));
  for (std::size_t r = 0; r < reps; ++r) {
    for (std::size_t q = 0; q < n_queries; ++q) {
      for (std::size_t s = 0; s < pipelines.size(); ++s) {
        const auto start = clock::now();
        pipelines[s](q);
        samples[s][q].push_back(std::chrono::duration<double, std::milli>(clock::now() - start).count());
      }
    }
  }
  std::vector<LatencyStats> out;
  for (const auto& per_system : samples) {
    std::vector<double> per_query;
    for (const auto& reps_q : per_system) per_query.push_back(detail::median(reps_q));
    double sum = 0.0;
    for (double x : per_query) sum += x;
    out.push_back({detail::median(per_query), per_query.empty() ? 0.0 : sum / static_cast<double>(per_query.size())});
  }
  return out;
}

enum class SweepParam { lambda, nograd_m, infer_cap };

inline SweepParam parse_sweep_param(const std::string& s) {
  if (s == "lambda") return SweepParam::lambda;
  if (s == "nograd_m") return SweepParam::nograd_m;
  if (s == "infer_cap") return SweepParam::infer_cap;
  throw ConfigError("unknown sweep parameter '" + s + "' (lambda, nograd_m or infer_cap)");
}

inline std::string parameter_name(SweepParam p) {
  switch (p) {
    case SweepParam::lambda: return "lambda";
    case SweepParam::nograd_m: return "nograd_m";
    case SweepParam::infer_cap: return "infer_cap";
  }
  return "?";
}

/// Runs the daqu pipeline once per value. lambda and nograd_m retrain per
/// value; infer_cap trains once and caps attributes per category at
/// inference ("all" = no cap). Latencies are relative to mode none.
inline std::vector<SweepRow> run_sweep(const ExperimentConfig& base, SweepParam param, const std::vector<std::string>& values,
                                       std::size_t reps = 3, unsigned threads = 1) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  const Database db = load_experiment_database(base);
  const Corpus corpus = load_corpus(db, base);
  const auto examples = load_train_examples(base.train, base);
  const auto queries = load_queries(base.queries, db, base);
  const QRels qrels = read_file<QRels>(base.qrels, [](std::istream& in) { return read_qrels(in); });

  struct Variant {
    std::string label;
    nlohmann::json value;
    std::shared_ptr<Checkpoint> ckpt;
    std::shared_ptr<DenseIndex> index;
    std::optional<std::size_t> cap;
  };
  std::vector<Variant> variants;
  std::shared_ptr<Checkpoint> shared_ckpt;
  std::shared_ptr<DenseIndex> shared_index;

  auto train_with = [&](const ExperimentConfig& cfg) {
    auto ck = std::make_shared<Checkpoint>(run_training(cfg, db, corpus, examples).checkpoint);
    auto ix = std::make_shared<DenseIndex>(build_index(*ck, corpus, threads));
    return std::make_pair(ck, ix);
  };

  for (const auto& v : values) {
    Variant var;
    var.label = v;
    ExperimentConfig cfg = base;
    try {
      switch (param) {
        case SweepParam::lambda:
          cfg.train_cfg.blend.lambda = std::stod(v);
          cfg.train_cfg.validate();
          var.value = cfg.train_cfg.blend.lambda;
          std::tie(var.ckpt, var.index) = train_with(cfg);
          break;
        case SweepParam::nograd_m:
          cfg.train_cfg.nograd_m = static_cast<std::size_t>(std::stoul(v));
          var.value = cfg.train_cfg.nograd_m;
          std::tie(var.ckpt, var.index) = train_with(cfg);
          break;
        case SweepParam::infer_cap:
          if (!shared_ckpt) std::tie(shared_ckpt, shared_index) = train_with(cfg);
          var.ckpt = shared_ckpt;
          var.index = shared_index;
          if (v == "all") {
            var.value = "all";
          } else {
            var.cap = static_cast<std::size_t>(std::stoul(v));
            if (*var.cap < 1) throw ConfigError("infer_cap values must be >= 1 or 'all'");
            var.value = *var.cap;
          }
          break;
      }
    } catch (const std::invalid_argument&) {
      throw ConfigError("bad sweep value '" + v + "'");
    } catch (const std::out_of_range&) {
      throw ConfigError("bad sweep value '" + v + "'");
    }
    variants.push_back(std::move(var));
  }

  std::vector<SweepRow> rows;
  std::vector<std::function<void(std::size_t)>> pipelines;
  for (const auto& var : variants) {
    const Run run = run_mode("daqu", base, *var.ckpt, *var.index, db, corpus, queries, base.k, threads, var.cap);
    rows.push_back(SweepRow{parameter_name(param), var.value, evaluate(run, qrels, base.metrics)});
    auto opt = system_options(base, *var.ckpt, base.k, 1);
    opt.inference_cap = var.cap;
    const Variant* vp = &var;
    pipelines.push_back([&, vp, opt](std::size_t q) {
      auto vec = system_query_vector(SystemMode::daqu, vp->ckpt->model, db, base.categories, queries[q], opt);
      auto res = search_dense(*vp->index, vec, opt.k);
      if (res.size() > opt.k) std::abort();
    });
  }
  {
    const Variant* vp = &variants.front();
    auto opt = system_options(base, *vp->ckpt, base.k, 1);
    pipelines.push_back([&, vp, opt](std::size_t q) {
      auto vec = system_query_vector(SystemMode::none, vp->ckpt->model, db, base.categories, queries[q], opt);
      auto res = search_dense(*vp->index, vec, opt.k);
      if (res.size() > opt.k) std::abort();
    });
  }
  const auto lat = measure_latency(pipelines, queries.size(), reps);
  const double baseline = lat.back().median_ms;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].latency_median_ms = lat[i].median_ms;
    rows[i].latency_mean_ms = lat[i].mean_ms;
    rows[i].baseline_median_ms = baseline;
    rows[i].relative_latency = baseline > 0.0 ? lat[i].median_ms / baseline : 0.0;
  }
  return rows;
}

}  // namespace daqu
