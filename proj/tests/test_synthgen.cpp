#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "daqu/experiment.hpp"
#include "daqu/synthgen.hpp"

using namespace daqu;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

SynthConfig small(std::uint64_t seed, double rho) {
  SynthConfig c;
  c.seed = seed;
  c.n_users = 200;
  c.n_questions = 600;
  c.signal_split = rho;
  return c;
}

bool is_question(const Row& r) { return !r.fk_values[1].has_value(); }

// Ranks every answer by the number of distinct topic-reserved tokens it
// shares with the query text, ties by id, and returns mean Recall@10.
double lexical_oracle_recall(const SynthData& d, bool* all_zero = nullptr) {
  std::vector<std::pair<std::string, std::set<std::string>>> answers;
  for (const auto& r : d.rows.at("posts"))
    if (!is_question(r)) {
      std::set<std::string> toks;
      for (const auto& t : tokenize(*r.attr_values[0]))
        if (d.is_topic_word(t)) toks.insert(t);
      answers.emplace_back(r.id, toks);
    }
  if (all_zero) *all_zero = true;
  daqu::Run run;
  for (const auto& q : d.test_queries) {
    std::set<std::string> qt;
    for (const auto& t : tokenize(q.text))
      if (d.is_topic_word(t)) qt.insert(t);
    std::vector<double> scores;
    std::vector<std::string> ids;
    for (const auto& [id, toks] : answers) {
      double s = 0;
      for (const auto& t : qt) s += toks.count(t);
      if (all_zero && s != 0) *all_zero = false;
      scores.push_back(s);
      ids.push_back(id);
    }
    SearchResult r;
    for (std::size_t i = 0; i < ids.size(); ++i) r.push_back({ids[i], scores[i]});
    std::stable_sort(r.begin(), r.end(), [](const ScoredDoc& a, const ScoredDoc& b) { return a.score > b.score; });
    r.resize(std::min<std::size_t>(10, r.size()));
    run[q.qid] = r;
  }
  return recall_at_k(run, d.test_qrels, 10);
}

}  // namespace

TEST(Synthgen, SameSeedSameFiles) {
  const auto a = fresh_dir("daqu_syn_a"), b = fresh_dir("daqu_syn_b"), c = fresh_dir("daqu_syn_c");
  write_synthetic(generate(small(7, 0.8)), a);
  write_synthetic(generate(small(7, 0.8)), b);
  write_synthetic(generate(small(8, 0.8)), c);
  const auto ta = tree(a);
  EXPECT_EQ(ta.size(), 11u);  // seven files plus one per table
  EXPECT_EQ(ta, tree(b));
  EXPECT_NE(ta, tree(c));
}

TEST(Synthgen, MissingSeedIsConfigError) {
  try {
    SynthConfig::from_json({{"n_users", 10}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("seed"), std::string::npos);
  }
  EXPECT_THROW(SynthConfig::from_json({{"seed", 1}, {"signal_split", 1.5}}), ConfigError);
  EXPECT_THROW(SynthConfig::from_json({{"seed", 1}, {"n_users", 0}}), ConfigError);
  EXPECT_THROW(SynthConfig::from_json({{"seed", 1}, {"tokens_per_text", {5}}}), ConfigError);
  EXPECT_EQ(SynthConfig::from_json({{"seed", 3}}).n_users, 500u);
}

TEST(Synthgen, FullSignalInBodyIsLexicallyRecoverable) {
  const auto d = generate(small(11, 0.0));
  ASSERT_FALSE(d.test_queries.empty());
  EXPECT_EQ(lexical_oracle_recall(d), 1.0);
}

TEST(Synthgen, HiddenSignalDropsOracleToChance) {
  const auto d = generate(small(11, 1.0));
  bool all_zero = false;
  const double r = lexical_oracle_recall(d, &all_zero);
  // No query token can match, so the ranking carries no information.
  EXPECT_TRUE(all_zero);
  EXPECT_LT(r, 0.05);
}

TEST(Synthgen, NoTopicTokensInBodiesWhenFullyHidden) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto d = generate(small(seed, 1.0));
    std::size_t scanned = 0;
    for (const auto& r : d.rows.at("posts"))
      if (is_question(r)) {
        for (const auto& t : tokenize(*r.attr_values[0])) EXPECT_FALSE(d.is_topic_word(t)) << r.id << " " << t;
        ++scanned;
      }
    EXPECT_EQ(scanned, 600u);
    for (const auto& q : d.test_queries)
      for (const auto& t : tokenize(q.text)) EXPECT_FALSE(d.is_topic_word(t));
  }
}

TEST(Synthgen, SplitsAreDisjointByUser) {
  const auto d = generate(small(5, 0.8));
  std::map<std::string, std::string> asker;
  for (const auto& r : d.rows.at("posts"))
    if (is_question(r)) asker[r.id] = *r.fk_values[0];
  auto disjoint = [](const std::set<std::string>& a, const std::set<std::string>& b) {
    for (const auto& x : a)
      if (b.count(x)) return false;
    return true;
  };
  EXPECT_TRUE(disjoint(d.train_users, d.valid_users));
  EXPECT_TRUE(disjoint(d.train_users, d.test_users));
  EXPECT_TRUE(disjoint(d.valid_users, d.test_users));
  EXPECT_EQ(d.train_users.size() + d.valid_users.size() + d.test_users.size(), 200u);
  for (const auto& e : d.train) EXPECT_TRUE(d.train_users.count(asker.at(e.query_row.id)));
  for (const auto& q : d.valid_queries) EXPECT_TRUE(d.valid_users.count(asker.at(q.qid)));
  for (const auto& q : d.test_queries) EXPECT_TRUE(d.test_users.count(asker.at(q.qid)));
}

TEST(Synthgen, QrelsAreTheQuestionsAnswers) {
  const auto d = generate(small(6, 0.5));
  std::map<std::string, std::set<std::string>> answers;
  for (const auto& r : d.rows.at("posts"))
    if (!is_question(r)) answers[*r.fk_values[1]].insert(r.id);
  for (const auto& [qid, rel] : d.test_qrels) EXPECT_EQ(rel, answers.at(qid));
  for (const auto& [qid, rel] : d.valid_qrels) EXPECT_EQ(rel, answers.at(qid));
}

TEST(SynthgenProperty, RandomConfigsLoadThroughTheStore) {
  Rng rng(91);
  for (int t = 0; t < 20; ++t) {
    SynthConfig c;
    c.seed = rng.next();
    c.n_users = 2 + rng.below(60);
    c.n_questions = 1 + rng.below(80);
    c.answers_min = 1 + rng.below(2);
    c.answers_max = c.answers_min + rng.below(3);
    c.comments_min = rng.below(2);
    c.comments_max = c.comments_min + rng.below(3);
    c.n_topics = 1 + rng.below(6);
    c.tokens_min = 1 + rng.below(6);
    c.tokens_max = c.tokens_min + rng.below(10);
    c.vocab_size = 200 + rng.below(2000);
    c.signature_tokens = 1 + rng.below(4);
    c.signal_split = rng.uniform();
    const auto d = generate(c);
    const auto dir = fresh_dir("daqu_syn_rand");
    write_synthetic(d, dir);

    const auto cfg = ExperimentConfig::load(dir / "experiment.json");
    const auto db = load_experiment_database(cfg);
    EXPECT_NO_THROW(cfg.validate_against(db));
    for (const auto& [name, rows] : d.rows) EXPECT_EQ(db.table(name).rows().size(), rows.size());
    const auto corpus = load_corpus(db, cfg);
    EXPECT_EQ(load_train_examples(cfg.train, cfg).size(), d.train.size());
    const auto qs = load_queries(cfg.queries, db, cfg);
    ASSERT_EQ(qs.size(), d.test_queries.size());
    for (std::size_t i = 0; i < qs.size(); ++i) EXPECT_EQ(qs[i].text, d.test_queries[i].text);
    for (const auto& e : d.train) EXPECT_TRUE(corpus.ordinal(e.positive).has_value());
  }
}
