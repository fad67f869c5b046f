#pragma once

// Seeded generator for a small Q&A-site database (users, posts, comments,
// votes) where part of each question's identifying vocabulary lives in the
// metadata rather than in the question text.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "daqu/errors.hpp"
#include "daqu/evalkit.hpp"
#include "daqu/metaview.hpp"
#include "daqu/relstore.hpp"
#include "daqu/trainer.hpp"
#include "daqu/util.hpp"

namespace daqu {

struct SynthConfig {
  std::size_t n_users = 500;
  std::size_t n_questions = 2000;
  std::size_t answers_min = 1, answers_max = 3;
  std::size_t comments_min = 0, comments_max = 3;
  std::size_t n_topics = 20;
  std::size_t tokens_min = 8, tokens_max = 20;
  std::size_t vocab_size = 5000;
  std::size_t signature_tokens = 4;  // question-specific topic tokens shared with its answers
  double signal_split = 0.8;         // fraction of signature tokens moved out of the question body
  std::uint64_t seed = 0;

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v < 1) throw ConfigError(std::string(name) + " must be >= 1");
    };
    positive(n_users, "n_users");
    positive(n_questions, "n_questions");
    positive(answers_min, "answers_per_question");
    positive(n_topics, "n_topics");
    positive(tokens_min, "tokens_per_text");
    positive(vocab_size, "vocab_size");
    positive(signature_tokens, "signature_tokens");
    if (answers_max < answers_min) throw ConfigError("answers_per_question: max < min");
    if (comments_max < comments_min) throw ConfigError("comments_per_question: max < min");
    if (tokens_max < tokens_min) throw ConfigError("tokens_per_text: max < min");
    if (n_users < 2) throw ConfigError("n_users must be >= 2 (answers come from other users)");
    if (!(signal_split >= 0.0 && signal_split <= 1.0)) throw ConfigError("signal_split must lie in [0, 1]");
    if (topic_slice() < signature_tokens + 2)
      throw ConfigError("vocab_size too small: each topic needs at least signature_tokens + 2 reserved words");
    if (general_words() < 1) throw ConfigError("vocab_size leaves no general words");
  }

  /// Reserved words per topic; the reserved block is the top fifth of the vocabulary.
  std::size_t topic_slice() const { return (vocab_size / 5) / n_topics; }
  std::size_t general_words() const { return vocab_size - topic_slice() * n_topics; }

  static SynthConfig from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("synthetic config must be a JSON object");
    if (!j.contains("seed")) throw ConfigError("missing required field 'seed'");
    SynthConfig c;
    try {
      auto range = [&](const char* key, std::size_t& lo, std::size_t& hi) {
        if (!j.contains(key)) return;
        const auto& r = j.at(key);
        if (!r.is_array() || r.size() != 2) throw ConfigError(std::string(key) + " must be [min, max]");
        lo = r[0].get<std::size_t>();
        hi = r[1].get<std::size_t>();
      };
      c.seed = j.at("seed").get<std::uint64_t>();
      c.n_users = j.value("n_users", c.n_users);
      c.n_questions = j.value("n_questions", c.n_questions);
      range("answers_per_question", c.answers_min, c.answers_max);
      range("comments_per_question", c.comments_min, c.comments_max);
      range("tokens_per_text", c.tokens_min, c.tokens_max);
      c.n_topics = j.value("n_topics", c.n_topics);
      c.vocab_size = j.value("vocab_size", c.vocab_size);
      c.signature_tokens = j.value("signature_tokens", c.signature_tokens);
      c.signal_split = j.value("signal_split", c.signal_split);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed synthetic config: ") + e.what());
    }
    c.validate();
    return c;
  }

  nlohmann::json to_json() const {
    return {{"n_users", n_users},
            {"n_questions", n_questions},
            {"answers_per_question", {answers_min, answers_max}},
            {"comments_per_question", {comments_min, comments_max}},
            {"n_topics", n_topics},
            {"tokens_per_text", {tokens_min, tokens_max}},
            {"vocab_size", vocab_size},
            {"signature_tokens", signature_tokens},
            {"signal_split", signal_split},
            {"seed", seed}};
  }
};

struct SynthData {
  std::vector<TableSchema> schema;
  std::map<std::string, std::vector<Row>> rows;
  std::vector<TrainExample> train;
  std::vector<Query> valid_queries, test_queries;
  QRels valid_qrels, test_qrels;
  std::vector<CategorySpec> categories;
  std::map<std::string, std::size_t> question_topic;  // question id -> topic
  std::set<std::string> train_users, valid_users, test_users;
  SynthConfig config;

  /// Word ids reserved for topic `t`.
  std::vector<std::string> topic_words(std::size_t t) const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < config.topic_slice(); ++i)
      out.push_back(word(config.general_words() + t * config.topic_slice() + i));
    return out;
  }
  bool is_topic_word(const std::string& tok) const {
    if (tok.size() < 2 || tok[0] != 'w') return false;
    const std::size_t id = std::stoul(tok.substr(1));
    return id >= config.general_words() && id < config.general_words() + config.topic_slice() * config.n_topics;
  }
  static std::string word(std::size_t id) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "w%04zu", id);
    return buf;
  }
};

inline std::vector<TableSchema> synthetic_schema() {
  using K = AttrKind;
  return {
      TableSchema{"users", "UserId", {}, {{"AboutMe", K::text}, {"CreationDate", K::timestamp}}},
      TableSchema{"posts",
                  "PostId",
                  {{"OwnerUserId", {"users", "UserId"}}, {"ParentId", {"posts", "PostId"}}},
                  {{"Body", K::text}, {"Tags", K::text}, {"CreationDate", K::timestamp}}},
      TableSchema{"comments",
                  "CommentId",
                  {{"PostId", {"posts", "PostId"}}, {"UserId", {"users", "UserId"}}},
                  {{"Text", K::text}, {"CreationDate", K::timestamp}}},
      TableSchema{"votes",
                  "VoteId",
                  {{"PostId", {"posts", "PostId"}}, {"UserId", {"users", "UserId"}}},
                  {{"VoteType", K::text}, {"CreationDate", K::timestamp}}},
  };
}

/// Metadata categories for the answer-retrieval task on the synthetic schema.
inline std::vector<CategorySpec> synthetic_categories() {
  using D = Direction;
  const auto before = TemporalFilter::strictly_before;
  const Hop to_user{"posts.OwnerUserId", D::forward};
  return {
      CategorySpec{"current_tags", "posts", {}, "Tags", TemporalFilter::none, false},
      CategorySpec{"comments_in_question", "posts", {{"comments.PostId", D::reverse}}, "Text", TemporalFilter::none, false},
      CategorySpec{"aboutme", "posts", {to_user}, "AboutMe", TemporalFilter::none, false},
      CategorySpec{"previous_tags", "posts", {to_user, {"posts.OwnerUserId", D::reverse}}, "Tags", before, true},
      CategorySpec{"previous_posts", "posts", {to_user, {"posts.OwnerUserId", D::reverse}}, "Body", before, true},
      CategorySpec{"comments", "posts", {to_user, {"comments.UserId", D::reverse}}, "Text", before, false},
      CategorySpec{"voted_posts",
                   "posts",
                   {to_user, {"votes.UserId", D::reverse}, {"votes.PostId", D::forward}},
                   "Body",
                   before,
                   true},
  };
}

inline SynthData generate(const SynthConfig& cfg) {
  cfg.validate();
  SynthData out;
  out.config = cfg;
  out.schema = synthetic_schema();
  out.categories = synthetic_categories();
  Rng rng(mix64(cfg.seed ^ 0x5e7d));

  auto general = [&] { return SynthData::word(rng.below(cfg.general_words())); };
  auto topic_word = [&](std::size_t t) {
    return SynthData::word(cfg.general_words() + t * cfg.topic_slice() + rng.below(cfg.topic_slice()));
  };
  auto filler = [&](std::size_t n) {
    std::vector<std::string> toks;
    for (std::size_t i = 0; i < n; ++i) toks.push_back(general());
    return toks;
  };
  auto scatter_into = [&](std::vector<std::string>& toks, const std::vector<std::string>& extra) {
    for (const auto& e : extra) toks.insert(toks.begin() + static_cast<std::ptrdiff_t>(rng.below(toks.size() + 1)), e);
  };
  auto text_len = [&] { return static_cast<std::size_t>(rng.between(static_cast<std::int64_t>(cfg.tokens_min),
                                                                    static_cast<std::int64_t>(cfg.tokens_max))); };
  auto id = [](char prefix, std::size_t n) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%c%07zu", prefix, n);
    return std::string(buf);
  };
  auto ts = [](std::int64_t t) { return std::optional<std::string>(std::to_string(t)); };
  const std::int64_t t0 = 1'600'000'000;

  // Users: a main and a secondary topic each.
  struct User {
    std::size_t main, second;
  };
  std::vector<User> users;
  auto& urows = out.rows["users"];
  for (std::size_t u = 0; u < cfg.n_users; ++u) {
    User usr{rng.below(cfg.n_topics), rng.below(cfg.n_topics)};
    users.push_back(usr);
    Row r{id('u', u), {}, {std::nullopt, ts(t0)}, t0};
    if (rng.bernoulli(0.35)) {
      auto toks = filler(text_len());
      scatter_into(toks, {topic_word(usr.main), topic_word(usr.main)});
      r.attr_values[0] = join_tokens(toks);
    }
    urows.push_back(std::move(r));
  }

  // Split users 8:1:1.
  std::vector<std::size_t> uorder(cfg.n_users);
  for (std::size_t i = 0; i < uorder.size(); ++i) uorder[i] = i;
  rng.shuffle(uorder);
  std::vector<int> split(cfg.n_users);
  for (std::size_t i = 0; i < uorder.size(); ++i) {
    const double f = static_cast<double>(i) / static_cast<double>(cfg.n_users);
    split[uorder[i]] = f < 0.8 ? 0 : (f < 0.9 ? 1 : 2);
    (split[uorder[i]] == 0 ? out.train_users : split[uorder[i]] == 1 ? out.valid_users : out.test_users)
        .insert(id('u', uorder[i]));
  }

  auto& prows = out.rows["posts"];
  auto& crows = out.rows["comments"];
  auto& vrows = out.rows["votes"];
  std::size_t next_post = 0, next_comment = 0, next_vote = 0;
  std::vector<std::string> answer_ids;
  std::int64_t clock = t0 + 86400;

  auto add_comment = [&](const std::string& post, std::size_t user, std::string text, std::int64_t when) {
    crows.push_back(Row{id('c', next_comment++), {post, id('u', user)}, {std::move(text), ts(when)}, when});
  };
  auto other_user = [&](std::size_t not_this) {
    std::size_t u = rng.below(cfg.n_users - 1);
    return u >= not_this ? u + 1 : u;
  };

  for (std::size_t q = 0; q < cfg.n_questions; ++q) {
    clock += 600 + static_cast<std::int64_t>(rng.below(3000));
    const std::size_t asker = rng.below(cfg.n_users);
    const std::size_t topic = rng.bernoulli(0.8) ? users[asker].main : users[asker].second;
    const std::string qid = id('p', next_post++);
    out.question_topic[qid] = topic;

    // Distinct signature words from the topic's reserved slice.
    std::vector<std::string> signature;
    for (auto i : rng.sample_indices(cfg.topic_slice(), cfg.signature_tokens))
      signature.push_back(SynthData::word(cfg.general_words() + topic * cfg.topic_slice() + i));
    std::vector<std::string> kept, moved;
    for (const auto& s : signature) (rng.bernoulli(cfg.signal_split) ? moved : kept).push_back(s);

    auto body = filler(text_len());
    scatter_into(body, kept);
    char tag[32];
    std::snprintf(tag, sizeof tag, "topic%02zu", topic);
    const std::string tags = std::string(tag) + " " + general();
    prows.push_back(Row{qid, {id('u', asker), std::nullopt}, {join_tokens(body), tags, ts(clock)}, clock});

    std::int64_t t = clock;
    if (!moved.empty()) {
      auto c = filler(std::max<std::size_t>(2, cfg.tokens_min / 2));
      scatter_into(c, moved);
      add_comment(qid, asker, join_tokens(c), t += 30);
    }
    const auto n_comments = rng.between(static_cast<std::int64_t>(cfg.comments_min), static_cast<std::int64_t>(cfg.comments_max));
    for (std::int64_t i = 0; i < n_comments; ++i) {
      auto c = filler(std::max<std::size_t>(2, cfg.tokens_min / 2));
      scatter_into(c, {topic_word(topic)});
      add_comment(qid, other_user(asker), join_tokens(c), t += 60 + static_cast<std::int64_t>(rng.below(600)));
    }

    std::vector<std::string> answers;
    const auto n_answers = rng.between(static_cast<std::int64_t>(cfg.answers_min), static_cast<std::int64_t>(cfg.answers_max));
    for (std::int64_t a = 0; a < n_answers; ++a) {
      const std::size_t author = other_user(asker);
      auto toks = filler(text_len());
      std::vector<std::string> extra = signature;
      extra.push_back(topic_word(topic));
      extra.push_back(topic_word(topic));
      scatter_into(toks, extra);
      const std::string aid = id('p', next_post++);
      t += 120 + static_cast<std::int64_t>(rng.below(1200));
      prows.push_back(Row{aid, {id('u', author), qid}, {join_tokens(toks), std::nullopt, ts(t)}, t});
      answers.push_back(aid);
      answer_ids.push_back(aid);
      const auto n_votes = rng.below(3);
      for (std::uint64_t v = 0; v < n_votes; ++v) {
        const std::size_t voter = other_user(author);
        t += 30;
        vrows.push_back(Row{id('v', next_vote++), {aid, id('u', voter)}, {std::string("up"), ts(t)}, t});
      }
    }
    clock = std::max(clock, t);

    const int s = split[asker];
    if (s == 0) {
      for (const auto& a : answers) out.train.push_back(TrainExample{RowRef{"posts", qid}, "Body", a});
    } else {
      Query query{qid, RowRef{"posts", qid}, join_tokens(body)};
      auto& qrels = s == 1 ? out.valid_qrels : out.test_qrels;
      for (const auto& a : answers) qrels[qid].insert(a);
      (s == 1 ? out.valid_queries : out.test_queries).push_back(std::move(query));
    }
  }
  return out;
}

/// Experiment config pointing at the files written by write_synthetic.
inline nlohmann::json synthetic_experiment_config(const SynthData& data) {
  nlohmann::json cats = nlohmann::json::array();
  for (const auto& c : data.categories) cats.push_back(spec_to_json(c));
  return {
      {"paths",
       {{"schema", "schema.json"},
        {"data_dir", "data"},
        {"train", "train.jsonl"},
        {"queries", "queries_test.jsonl"},
        {"qrels", "qrels_test.txt"}}},
      {"corpus", {{"table", "posts"}, {"field", "Body"}, {"require", "ParentId"}}},
      {"query", {{"table", "posts"}, {"field", "Body"}}},
      {"categories", cats},
      {"featurizer", {{"hash_buckets", 8192}, {"max_tokens", 256}}},
      {"train",
       {{"batch_size", 16},
        {"learning_rate", 1e-2},
        {"weight_decay", 0.01},
        {"epochs", 4},
        {"dim", 64},
        {"grad_k", 3},
        {"nograd_m", 30},
        {"seed", data.config.seed}}},
      {"blend", {{"lambda", 0.7}, {"empty_metadata_policy", "fallback_to_query"}}},
      {"eval", {{"k", 100}, {"metrics", {"acc@10", "acc@100", "recall@10", "recall@100", "mrr", "map"}}}},
      {"mode", "daqu"},
      {"seeds", {data.config.seed}},
  };
}

/// Writes schema.json, data/<table>.jsonl, train.jsonl, queries_{valid,test}.jsonl,
/// qrels_{valid,test}.txt and experiment.json under `dir`. Returns the manifest.
inline nlohmann::json write_synthetic(const SynthData& data, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "data");
  auto open = [](const fs::path& p) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw FormatError("cannot write " + p.string());
    return f;
  };
  nlohmann::json manifest;
  {
    auto f = open(dir / "schema.json");
    f << schema_to_json(data.schema).dump(2) << '\n';
  }
  for (const auto& s : data.schema) {
    auto f = open(dir / "data" / (s.name + ".jsonl"));
    const auto& rows = data.rows.at(s.name);
    for (const auto& r : rows) f << row_to_json(s, r).dump() << '\n';
    manifest["tables"][s.name] = rows.size();
  }
  {
    auto f = open(dir / "train.jsonl");
    for (const auto& e : data.train)
      f << nlohmann::json{{"query_table", e.query_row.table}, {"query_row", e.query_row.id}, {"query_field", e.query_field},
                          {"positive", e.positive}}
                  .dump()
        << '\n';
  }
  auto write_queries = [&](const fs::path& p, const std::vector<Query>& qs) {
    auto f = open(p);
    for (const auto& q : qs) f << nlohmann::json{{"qid", q.qid}, {"row_id", q.row.id}}.dump() << '\n';
  };
  write_queries(dir / "queries_valid.jsonl", data.valid_queries);
  write_queries(dir / "queries_test.jsonl", data.test_queries);
  {
    auto f = open(dir / "qrels_valid.txt");
    write_qrels(f, data.valid_qrels);
  }
  {
    auto f = open(dir / "qrels_test.txt");
    write_qrels(f, data.test_qrels);
  }
  {
    auto f = open(dir / "experiment.json");
    f << synthetic_experiment_config(data).dump(2) << '\n';
  }
  manifest["train_examples"] = data.train.size();
  manifest["valid_queries"] = data.valid_queries.size();
  manifest["test_queries"] = data.test_queries.size();
  manifest["config"] = data.config.to_json();
  manifest["files"] = {"schema.json", "data/", "train.jsonl", "queries_valid.jsonl", "queries_test.jsonl",
                       "qrels_valid.txt", "qrels_test.txt", "experiment.json"};
  return manifest;
}

}  // namespace daqu
