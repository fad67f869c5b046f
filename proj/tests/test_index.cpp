#include <algorithm>
#include <cmath>
#include <map>

#include <gtest/gtest.h>

#include "daqu/index.hpp"
#include "oracles.hpp"

using namespace daqu;

namespace {

DenseIndex random_dense(Rng& rng, std::size_t n, std::size_t dim, Metric metric = Metric::dot) {
  std::vector<std::string> ids;
  std::vector<double> m;
  for (std::size_t i = 0; i < n; ++i) {
    ids.push_back("doc" + std::to_string(1000000 + i));
    for (std::size_t d = 0; d < dim; ++d) m.push_back(rng.uniform(-1, 1));
  }
  return DenseIndex(ids, dim, m, metric);
}

DenseVector random_query(Rng& rng, std::size_t dim) {
  DenseVector q(dim);
  for (std::size_t d = 0; d < dim; ++d) q[d] = rng.uniform(-1, 1);
  return q;
}

using Docs = std::vector<std::pair<std::string, std::string>>;

std::string join(const std::vector<std::string>& toks) {
  std::string s;
  for (const auto& t : toks) s += t + " ";
  return s;
}

}  // namespace

TEST(DenseSearch, TopOneExample) {
  const DenseIndex idx({"d1", "d2"}, 2, {1, 0, 0, 1}, Metric::dot);
  EXPECT_EQ(search_dense(idx, DenseVector{1, 0}, 1), (SearchResult{{"d1", 1.0}}));
}

TEST(DenseSearch, TiesByAscendingId) {
  const DenseIndex idx({"a", "b", "c"}, 1, {2, 2, 2}, Metric::dot);
  const auto r = search_dense(idx, DenseVector{1}, 3);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0].id, "a");
  EXPECT_EQ(r[1].id, "b");
  EXPECT_EQ(r[2].id, "c");
}

TEST(DenseSearch, KBeyondSizeAndInvalidK) {
  const DenseIndex idx({"d1", "d2"}, 2, {1, 0, 0, 1}, Metric::dot);
  EXPECT_EQ(search_dense(idx, DenseVector{1, 1}, 10).size(), 2u);
  EXPECT_THROW(search_dense(idx, DenseVector{1, 1}, 0), ConfigError);
  EXPECT_THROW(search_dense(idx, DenseVector{1}, 1), DimensionError);
}

TEST(DenseSearch, EmptyIndex) {
  EXPECT_TRUE(search_dense(DenseIndex({}, 4, {}, Metric::dot), DenseVector(4), 5).empty());
}

TEST(DenseSearch, IndexValidation) {
  EXPECT_THROW(DenseIndex({"a"}, 2, {1}, Metric::dot), DimensionError);
  EXPECT_THROW(DenseIndex({"b", "a"}, 1, {1, 2}, Metric::dot), FormatError);
  EXPECT_THROW(DenseIndex({"a"}, 1, {NAN}, Metric::dot), FormatError);
}

TEST(DenseSearch, CosineIgnoresNorm) {
  const DenseIndex idx({"long", "short"}, 2, {10, 1, 1, 0}, Metric::cosine);
  const auto r = search_dense(idx, DenseVector{1, 0}, 2);
  EXPECT_EQ(r[0].id, "short");
  EXPECT_DOUBLE_EQ(r[0].score, 1.0);
}

TEST(DenseSearchProperty, MatchesFullSort) {
  Rng rng(71);
  for (Metric metric : {Metric::dot, Metric::cosine}) {
    const auto idx = random_dense(rng, 1000, 16, metric);
    for (int t = 0; t < 20; ++t) {
      const auto q = random_query(rng, 16);
      std::vector<double> s(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        double d = 0, qq = 0, dd = 0;
        for (std::size_t j = 0; j < 16; ++j) {
          d += q[j] * idx.row(i)[j];
          qq += q[j] * q[j];
          dd += idx.row(i)[j] * idx.row(i)[j];
        }
        s[i] = metric == Metric::dot ? d : d / (std::sqrt(qq) * std::sqrt(dd));
      }
      const std::size_t k = 1 + rng.below(50);
      const auto got = search_dense(idx, q, k);
      const auto want = fixtures::full_sort_oracle(s, idx.ids(), k);
      ASSERT_EQ(got.size(), want.size());
      for (std::size_t i = 0; i < got.size(); ++i) {
        EXPECT_EQ(got[i].id, want[i].id);
        EXPECT_NEAR(got[i].score, want[i].score, 1e-12);
      }
    }
  }
}

TEST(DenseSearchProperty, TiedScoresOrderedById) {
  Rng rng(72);
  for (int t = 0; t < 50; ++t) {
    // Integer-valued rows give frequent exact ties.
    std::vector<std::string> ids;
    std::vector<double> m;
    for (std::size_t i = 0; i < 60; ++i) {
      ids.push_back("x" + std::to_string(100 + i));
      m.push_back(static_cast<double>(rng.below(4)));
    }
    const DenseIndex idx(ids, 1, m, Metric::dot);
    const auto r = search_dense(idx, DenseVector{1}, 60);
    for (std::size_t i = 1; i < r.size(); ++i) {
      EXPECT_GE(r[i - 1].score, r[i].score);
      if (r[i - 1].score == r[i].score) EXPECT_LT(r[i - 1].id, r[i].id);
    }
  }
}

TEST(DenseSearchProperty, PositiveScalingKeepsRanking) {
  Rng rng(73);
  const auto idx = random_dense(rng, 300, 8);
  for (int t = 0; t < 20; ++t) {
    const auto q = random_query(rng, 8);
    const double alpha = rng.uniform(0.1, 10.0);
    DenseVector qs = q;
    qs.scale(alpha);
    const auto a = search_dense(idx, q, 300), b = search_dense(idx, qs, 300);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].id, b[i].id);
  }
}

TEST(DenseSearchProperty, BatchMatchesSequential) {
  Rng rng(74);
  const auto idx = random_dense(rng, 200, 8);
  std::vector<DenseVector> qs;
  for (int t = 0; t < 33; ++t) qs.push_back(random_query(rng, 8));
  const auto batch = search_dense_batch(idx, qs, 7, 4);
  for (std::size_t i = 0; i < qs.size(); ++i) EXPECT_EQ(batch[i], search_dense(idx, qs[i], 7));
}

TEST(DenseBuild, MatchesPerDocumentEncodeAndIsThreadIndependent) {
  Rng rng(75);
  std::vector<std::pair<std::string, std::string>> docs;
  for (int i = 0; i < 120; ++i) {
    std::string text;
    for (std::size_t j = 0; j < 1 + rng.below(20); ++j) text += "w" + std::to_string(rng.below(300)) + " ";
    docs.emplace_back("d" + std::to_string(rng.next() % 100000) + "_" + std::to_string(i), text);
  }
  const Corpus corpus(docs);
  const FeaturizerConfig cfg{512, 64};
  const auto p = EncoderParams::random(EncoderRole::document, 12, 512, 9);
  const auto one = build_dense(corpus, p, cfg, Metric::dot, 1);
  const auto four = build_dense(corpus, p, cfg, Metric::dot, 4);
  EXPECT_EQ(one, four);
  EXPECT_EQ(one, build_dense(corpus, p, cfg, Metric::dot, 1));
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto v = encode(p, cfg, corpus.text(i));
    for (std::size_t d = 0; d < 12; ++d) EXPECT_EQ(one.row(i)[d], v[d]);
  }
}

TEST(Bm25, SingleDocumentGolden) {
  const auto idx = build_bm25(Corpus(Docs{{"d", "hello world"}}));
  const auto r = search_bm25(idx, "hello", 10);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_NEAR(r[0].score, 0.287682, 1e-6);
  EXPECT_NEAR(r[0].score, std::log(4.0 / 3.0), 1e-12);
}

TEST(Bm25, ThreeDocumentRanking) {
  const auto idx = build_bm25(Corpus(Docs{{"d1", "apple banana apple"},
                                      {"d2", "banana cherry"},
                                      {"d3", "cherry cherry cherry durian"}}));
  const auto r = search_bm25(idx, "apple cherry", 10);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0].id, "d1");
  EXPECT_NEAR(r[0].score, 1.2852245384291585, 1e-12);
  EXPECT_EQ(r[1].id, "d3");
  EXPECT_NEAR(r[1].score, 0.6664230563932072, 1e-12);
  EXPECT_EQ(r[2].id, "d2");
  EXPECT_NEAR(r[2].score, 0.5016892671724144, 1e-12);
}

TEST(Bm25, NoOverlapAndEmptyQuery) {
  const auto idx = build_bm25(Corpus(Docs{{"a", "red green"}, {"b", "blue"}}));
  EXPECT_TRUE(search_bm25(idx, "purple", 5).empty());
  EXPECT_EQ(bm25_score(idx, {"purple"}, 0), 0.0);
  EXPECT_TRUE(search_bm25(idx, "", 5).empty());
  EXPECT_TRUE(search_bm25(idx, " ,. ", 5).empty());
  EXPECT_THROW(search_bm25(idx, "red", 0), ConfigError);
}

TEST(Bm25, EmptyCorpus) {
  EXPECT_TRUE(search_bm25(build_bm25(Corpus{}), "anything", 3).empty());
}

TEST(Bm25, ZeroBRemovesLengthEffect) {
  const Corpus c(Docs{{"short", "cat"}, {"long", "cat dog dog dog dog dog dog dog"}});
  const auto idx = build_bm25(c, Bm25Params{0.9, 0.0});
  const auto r = search_bm25(idx, "cat", 2);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0].score, r[1].score);
  EXPECT_EQ(r[0].id, "long");  // tie broken by id
  const auto with_b = search_bm25(build_bm25(c), "cat", 2);
  EXPECT_EQ(with_b[0].id, "short");
  EXPECT_GT(with_b[0].score, with_b[1].score);
}

TEST(Bm25Property, MatchesExhaustiveOracle) {
  Rng rng(76);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = 1 + rng.below(200);
    const std::size_t vocab = 5 + rng.below(60);
    const Bm25Params params{rng.uniform(0.2, 2.0), rng.uniform(0.0, 1.0)};
    std::vector<std::vector<std::string>> toks;
    std::vector<std::pair<std::string, std::string>> docs;
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) {
      toks.emplace_back();
      for (std::size_t j = 0; j < 1 + rng.below(25); ++j) toks.back().push_back("v" + std::to_string(rng.below(vocab)));
      char id[32];
      std::snprintf(id, sizeof id, "doc%04zu", i);
      ids.emplace_back(id);
      docs.emplace_back(id, join(toks.back()));
    }
    const auto idx = build_bm25(Corpus(docs), params);
    for (int qi = 0; qi < 5; ++qi) {
      std::vector<std::string> q;
      for (std::size_t j = 0; j < 1 + rng.below(4); ++j) q.push_back("v" + std::to_string(rng.below(vocab + 5)));
      const auto s = fixtures::bm25_oracle(toks, q, params.k1, params.b);
      std::vector<double> matched;
      std::vector<std::string> matched_ids;
      for (std::size_t i = 0; i < n; ++i) {
        bool any = false;
        for (const auto& t : q) any |= std::find(toks[i].begin(), toks[i].end(), t) != toks[i].end();
        if (any) {
          matched.push_back(s[i]);
          matched_ids.push_back(ids[i]);
        }
        EXPECT_NEAR(bm25_score(idx, q, i), s[i], 1e-12);
      }
      const std::size_t k = 1 + rng.below(20);
      const auto got = search_bm25(idx, join(q), k);
      const auto want = fixtures::full_sort_oracle(matched, matched_ids, k);
      ASSERT_EQ(got.size(), want.size());
      for (std::size_t i = 0; i < got.size(); ++i) {
        EXPECT_EQ(got[i].id, want[i].id);
        EXPECT_NEAR(got[i].score, want[i].score, 1e-12);
        // Term-at-a-time accumulation agrees with per-document scoring.
        EXPECT_EQ(got[i].score, bm25_score(idx, q, *Corpus(docs).ordinal(got[i].id)));
      }
    }
  }
}

TEST(Bm25Property, TermFrequencyMonotone) {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    // Doc "t" contains the query term once; swapping filler for the term keeps
    // every length and document frequency fixed.
    std::vector<std::string> target{"q"};
    const std::size_t filler = 1 + rng.below(10);
    for (std::size_t j = 0; j < filler; ++j) target.push_back("f" + std::to_string(j));
    std::vector<std::pair<std::string, std::string>> others;
    for (std::size_t i = 0; i < 1 + rng.below(10); ++i)
      others.emplace_back("o" + std::to_string(i), rng.bernoulli(0.5) ? "q z z" : "z z z z");
    const Bm25Params params{rng.uniform(0.1, 3.0), rng.uniform(0, 1)};
    double prev = -1;
    for (std::size_t swaps = 0; swaps <= filler; ++swaps) {
      auto docs = others;
      docs.emplace_back("t", join(target));
      const auto idx = build_bm25(Corpus(docs), params);
      const double s = bm25_score(idx, {"q"}, *Corpus(docs).ordinal("t"));
      EXPECT_GE(s, prev);
      prev = s;
      if (swaps < filler) target[1 + swaps] = "q";
    }
  }
}

TEST(Bm25, RebuildIsIdentical) {
  const Corpus c(Docs{{"a", "one two three"}, {"b", "two three four"}, {"c", "five"}});
  const auto x = build_bm25(c), y = build_bm25(c);
  for (const char* q : {"two", "three five", "one four four"}) EXPECT_EQ(search_bm25(x, q, 3), search_bm25(y, q, 3));
}
