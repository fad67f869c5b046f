// daqu: generate synthetic data, train, index, search, evaluate and sweep.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "daqu/artifact.hpp"
#include "daqu/evalkit.hpp"
#include "daqu/experiment.hpp"
#include "daqu/synthgen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int exit_code(daqu::ErrorClass c) {
  switch (c) {
    case daqu::ErrorClass::config: return 2;
    case daqu::ErrorClass::data: return 3;
    case daqu::ErrorClass::version: return 4;
  }
  return 1;
}

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw daqu::ConfigError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw daqu::ConfigError(p.string() + " is not valid JSON: " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw daqu::FormatError("cannot write " + p.string());
  out << text;
}

struct LoadedCheckpoint {
  daqu::Checkpoint ckpt;
  daqu::ExperimentConfig cfg;
  std::string digest;
};

LoadedCheckpoint load_checkpoint(const fs::path& p) {
  const std::string bytes = daqu::read_bytes(p);
  const daqu::Artifact a = daqu::deserialize_artifact(bytes);
  LoadedCheckpoint lc{daqu::checkpoint_from_artifact(a), {}, daqu::content_digest(bytes)};
  if (!a.header.contains("experiment")) throw daqu::FormatError("checkpoint carries no experiment config");
  lc.cfg = daqu::ExperimentConfig::from_json(a.header.at("experiment"), fs::path("/"));
  if (a.header.value("config_digest", std::string()) != lc.cfg.digest())
    throw daqu::VersionMismatchError("checkpoint config digest does not match its embedded config");
  daqu::check_checkpoint(lc.ckpt, lc.cfg);
  return lc;
}

int cmd_gen_synthetic(const fs::path& config, const fs::path& out) {
  const auto cfg = daqu::SynthConfig::from_json(read_json_file(config));
  const auto data = daqu::generate(cfg);
  const json manifest = daqu::write_synthetic(data, out);
  std::cout << manifest.dump(2) << '\n';
  return 0;
}

int cmd_train(const fs::path& config, const fs::path& out, const std::string& loss_log) {
  const auto cfg = daqu::ExperimentConfig::load(config);
  if (cfg.train.empty()) throw daqu::ConfigError("missing required field 'paths.train'");
  const auto db = daqu::load_experiment_database(cfg);
  const auto corpus = daqu::load_corpus(db, cfg);
  const auto examples = daqu::load_train_examples(cfg.train, cfg);
  const auto result = daqu::run_training(cfg, db, corpus, examples);
  json extra = {{"experiment", cfg.to_json()}, {"config_digest", cfg.digest()}};
  daqu::write_bytes(out, daqu::serialize_checkpoint(result.checkpoint, extra));
  if (!loss_log.empty()) {
    std::ostringstream os;
    for (const auto& r : result.log)
      os << json{{"epoch", r.epoch}, {"step", r.step}, {"loss", r.loss}}.dump() << '\n';
    write_text(loss_log, os.str());
  }
  for (std::size_t e = 0; e < result.epoch_mean_loss.size(); ++e)
    std::cerr << "epoch " << e << " mean loss " << result.epoch_mean_loss[e] << '\n';
  return 0;
}

int cmd_index(const fs::path& checkpoint, const fs::path& out, unsigned threads) {
  const auto lc = load_checkpoint(checkpoint);
  const auto db = daqu::load_experiment_database(lc.cfg);
  const auto corpus = daqu::load_corpus(db, lc.cfg);
  const auto index = daqu::build_index(lc.ckpt, corpus, threads);
  json extra = {{"checkpoint", fs::absolute(checkpoint).string()}, {"checkpoint_digest", lc.digest}};
  daqu::write_bytes(out, daqu::serialize_index(index, extra));
  return 0;
}

int cmd_search(const fs::path& index_path, const fs::path& queries_path, const std::string& mode, std::size_t k,
               const std::string& out, std::optional<std::size_t> cap, unsigned threads) {
  if (k < 1) throw daqu::ConfigError("--k must be >= 1");
  if (mode != "bm25") (void)daqu::parse_system_mode(mode);
  const daqu::Artifact ia = daqu::deserialize_artifact(daqu::read_bytes(index_path));
  const daqu::DenseIndex index = daqu::index_from_artifact(ia);
  const fs::path ckpt_path = ia.header.value("checkpoint", std::string());
  if (ckpt_path.empty()) throw daqu::FormatError("index does not name its checkpoint");
  const auto lc = load_checkpoint(ckpt_path);
  if (ia.header.value("checkpoint_digest", std::string()) != lc.digest)
    throw daqu::VersionMismatchError("index was built from a different checkpoint than " + ckpt_path.string());
  const auto db = daqu::load_experiment_database(lc.cfg);
  const auto corpus = daqu::load_corpus(db, lc.cfg);
  if (corpus.ids() != index.ids()) throw daqu::VersionMismatchError("index ids do not match the corpus");
  const auto queries = daqu::load_queries(queries_path, db, lc.cfg);
  const auto run = daqu::run_mode(mode, lc.cfg, lc.ckpt, index, db, corpus, queries, k, threads, cap);
  const std::string text = daqu::run_to_string(run, mode);
  if (out.empty()) std::cout << text;
  else write_text(out, text);
  return 0;
}

int cmd_eval(const fs::path& run_path, const fs::path& qrels_path, const std::string& metrics, const std::string& out) {
  const auto specs = daqu::parse_metrics(metrics);
  const auto run = daqu::read_file<daqu::Run>(run_path, [](std::istream& in) { return daqu::read_run(in); });
  const auto qrels = daqu::read_file<daqu::QRels>(qrels_path, [](std::istream& in) { return daqu::read_qrels(in); });
  const auto report = daqu::evaluate(run, qrels, specs);
  std::cout << report.table();
  if (!out.empty()) write_text(out, report.to_json().dump(2) + "\n");
  return 0;
}

int cmd_sweep(const fs::path& config, const std::string& param, const std::vector<std::string>& values,
              const std::string& out, std::size_t reps, unsigned threads) {
  const auto p = daqu::parse_sweep_param(param);
  const auto cfg = daqu::ExperimentConfig::load(config);
  if (cfg.train.empty() || cfg.queries.empty() || cfg.qrels.empty())
    throw daqu::ConfigError("sweep needs paths.train, paths.queries and paths.qrels");
  if (reps < 3) throw daqu::ConfigError("--reps must be >= 3");
  const auto rows = daqu::run_sweep(cfg, p, values, reps, threads);
  std::ostringstream os;
  for (const auto& r : rows) os << r.to_json().dump() << '\n';
  if (out.empty()) std::cout << os.str();
  else write_text(out, os.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"daqu: relational metadata query augmentation for dense retrieval"};
  app.require_subcommand(1);
  unsigned threads_flag = 0;
  app.add_option("--threads", threads_flag, "worker cap (falls back to DAQU_THREADS, then 1)");

  fs::path gen_config, gen_out;
  auto* gen = app.add_subcommand("gen-synthetic", "write a seeded synthetic database and experiment config");
  gen->add_option("--config", gen_config, "generator config (JSON)")->required();
  gen->add_option("--out", gen_out, "output directory")->required();

  fs::path train_config, train_out;
  std::string loss_log;
  auto* train = app.add_subcommand("train", "train encoders, write a checkpoint");
  train->add_option("--config", train_config, "experiment config (JSON)")->required();
  train->add_option("--out-checkpoint", train_out)->required();
  train->add_option("--loss-log", loss_log, "per-step loss as JSON-Lines");

  fs::path idx_ckpt, idx_out;
  auto* index = app.add_subcommand("index", "embed the corpus with a checkpoint");
  index->add_option("--checkpoint", idx_ckpt)->required();
  index->add_option("--out-index", idx_out)->required();

  fs::path s_index, s_queries;
  std::string s_mode = "daqu", s_out, s_cap;
  long long s_k = 100;
  auto* search = app.add_subcommand("search", "retrieve for a query file, write a TREC run");
  search->add_option("--index", s_index)->required();
  search->add_option("--queries", s_queries, "JSON-Lines {qid, row_id}")->required();
  search->add_option("--mode", s_mode, "none | naive | bm25_select | daqu | bm25");
  search->add_option("--k", s_k);
  search->add_option("--out", s_out, "run file (default stdout)");
  search->add_option("--infer-cap", s_cap, "attributes per category at inference (daqu mode)");

  fs::path e_run, e_qrels;
  std::string e_metrics = "acc@10,recall@10,mrr,map", e_out;
  auto* eval = app.add_subcommand("eval", "score a run against qrels");
  eval->add_option("--run", e_run)->required();
  eval->add_option("--qrels", e_qrels)->required();
  eval->add_option("--metrics", e_metrics);
  eval->add_option("--out", e_out, "report as JSON");

  fs::path w_config;
  std::string w_param, w_out;
  std::vector<std::string> w_values;
  std::size_t w_reps = 3;
  auto* sweep = app.add_subcommand("sweep", "rerun the pipeline over parameter values");
  sweep->add_option("--config", w_config)->required();
  sweep->add_option("--param", w_param, "lambda | nograd_m | infer_cap")->required();
  sweep->add_option("--values", w_values)->required()->delimiter(',');
  sweep->add_option("--out", w_out, "JSON-Lines table (default stdout)");
  sweep->add_option("--reps", w_reps, "timed repetitions per query");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  const unsigned threads = daqu::threads_from_env(threads_flag ? std::optional<unsigned>(threads_flag) : std::nullopt);
  try {
    if (*gen) return cmd_gen_synthetic(gen_config, gen_out);
    if (*train) return cmd_train(train_config, train_out, loss_log);
    if (*index) return cmd_index(idx_ckpt, idx_out, threads);
    if (*search) {
      if (s_k < 1) throw daqu::ConfigError("--k must be >= 1");
      std::optional<std::size_t> cap;
      if (!s_cap.empty() && s_cap != "all") {
        try {
          cap = std::stoul(s_cap);
        } catch (const std::exception&) {
          throw daqu::ConfigError("bad --infer-cap '" + s_cap + "'");
        }
        if (*cap < 1) throw daqu::ConfigError("--infer-cap must be >= 1 or 'all'");
      }
      return cmd_search(s_index, s_queries, s_mode, static_cast<std::size_t>(s_k), s_out, cap, threads);
    }
    if (*eval) return cmd_eval(e_run, e_qrels, e_metrics, e_out);
    if (*sweep) return cmd_sweep(w_config, w_param, w_values, w_out, w_reps, threads);
  } catch (const daqu::Error& e) {
    std::cerr << "daqu: " << e.what() << '\n';
    return exit_code(e.error_class());
  } catch (const std::exception& e) {
    std::cerr << "daqu: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
