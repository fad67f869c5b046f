// Drives the daqu binary end to end.

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "daqu/artifact.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Regression baselines from the first passing run of the small pipeline below.
constexpr double kDaquRecall10 = 0.017857142857142856;
constexpr double kDaquRecall100 = 0.20238095238095236;
constexpr double kNoneRecall10 = 0.0;
constexpr double kNoneRecall100 = 0.017857142857142856;

struct Result {
  int code;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Result cli(const std::string& args) {
  const fs::path err = fs::temp_directory_path() / "daqu_cli_stderr.txt";
  const std::string cmd = std::string(DAQU_CLI) + " " + args + " 2>" + err.string();
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {-1, "", "popen failed"};
  std::string out;
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out, slurp(err)};
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

fs::path fresh_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

/// Small synthetic experiment with a reduced model, shared by the tests below.
class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fresh_dir("daqu_cli_pipeline");
    write(dir_ / "gen.json", R"({"seed": 1, "n_users": 150, "n_questions": 500})");
    const auto r = cli("gen-synthetic --config " + (dir_ / "gen.json").string() + " --out " + (dir_ / "data").string());
    ASSERT_EQ(r.code, 0) << r.err;
    json exp = json::parse(slurp(dir_ / "data" / "experiment.json"));
    exp["featurizer"]["hash_buckets"] = 2048;
    exp["train"]["dim"] = 32;
    exp["train"]["epochs"] = 4;
    write(dir_ / "data" / "experiment.json", exp.dump(2));
    const auto t = cli("train --config " + config().string() + " --out-checkpoint " + ckpt().string());
    ASSERT_EQ(t.code, 0) << t.err;
    const auto i = cli("index --checkpoint " + ckpt().string() + " --out-index " + index().string());
    ASSERT_EQ(i.code, 0) << i.err;
  }

  static fs::path config() { return dir_ / "data" / "experiment.json"; }
  static fs::path ckpt() { return dir_ / "model.ckpt"; }
  static fs::path index() { return dir_ / "model.idx"; }
  static fs::path queries() { return dir_ / "data" / "queries_test.jsonl"; }
  static fs::path qrels() { return dir_ / "data" / "qrels_test.txt"; }

  static json search_and_eval(const std::string& mode, const std::string& extra = "") {
    const auto run = dir_ / ("run_" + mode + ".txt"), rep = dir_ / ("report_" + mode + ".json");
    const auto s = cli("search --index " + index().string() + " --queries " + queries().string() + " --mode " + mode +
                        " --out " + run.string() + extra);
    EXPECT_EQ(s.code, 0) << s.err;
    const auto e = cli("eval --run " + run.string() + " --qrels " + qrels().string() +
                        " --metrics acc@10,acc@100,recall@10,recall@100,mrr,map --out " + rep.string());
    EXPECT_EQ(e.code, 0) << e.err;
    EXPECT_NE(e.out.find("recall@10"), std::string::npos);
    return json::parse(slurp(rep));
  }

  static inline fs::path dir_;
};

}  // namespace

TEST(Cli, GenSyntheticWritesManifestAndIsRepeatable) {
  const auto dir = fresh_dir("daqu_cli_gen");
  write(dir / "gen.json", R"({"seed": 4, "n_users": 30, "n_questions": 40})");
  const auto a = cli("gen-synthetic --config " + (dir / "gen.json").string() + " --out " + (dir / "a").string());
  ASSERT_EQ(a.code, 0) << a.err;
  const auto manifest = json::parse(a.out);
  EXPECT_EQ(manifest.at("config").at("seed"), 4);
  for (const auto& f : {"schema.json", "train.jsonl", "queries_test.jsonl", "qrels_test.txt", "experiment.json"})
    EXPECT_TRUE(fs::exists(dir / "a" / f)) << f;
  ASSERT_EQ(cli("gen-synthetic --config " + (dir / "gen.json").string() + " --out " + (dir / "b").string()).code, 0);
  for (const auto& e : fs::recursive_directory_iterator(dir / "a"))
    if (e.is_regular_file()) EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / fs::relative(e.path(), dir / "a")));
}

TEST(Cli, GenSyntheticMissingSeed) {
  const auto dir = fresh_dir("daqu_cli_noseed");
  write(dir / "gen.json", R"({"n_users": 30})");
  const auto r = cli("gen-synthetic --config " + (dir / "gen.json").string() + " --out " + (dir / "x").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("seed"), std::string::npos) << r.err;
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
  EXPECT_EQ(cli("eval --run x").code, 2);
  EXPECT_EQ(cli("--help").code, 0);
}

TEST(Cli, EvalHandWrittenRun) {
  const auto dir = fresh_dir("daqu_cli_eval");
  write(dir / "run.txt", "q1 Q0 a 1 3.0 t\nq1 Q0 x 2 2.0 t\nq1 Q0 b 3 1.0 t\n");
  write(dir / "qrels.txt", "q1 0 a 1\nq1 0 b 1\n");
  const auto r = cli("eval --run " + (dir / "run.txt").string() + " --qrels " + (dir / "qrels.txt").string() +
                      " --metrics acc@1,acc@2,recall@2,recall@3,mrr,map --out " + (dir / "rep.json").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("0.833333"), std::string::npos) << r.out;
  const auto mean = json::parse(slurp(dir / "rep.json")).at("mean");
  EXPECT_EQ(mean.at("acc@1").get<double>(), 1.0);
  EXPECT_EQ(mean.at("recall@2").get<double>(), 0.5);
  EXPECT_EQ(mean.at("recall@3").get<double>(), 1.0);
  EXPECT_EQ(mean.at("mrr").get<double>(), 1.0);
  EXPECT_NEAR(mean.at("map").get<double>(), 0.833333, 1e-6);

  write(dir / "mrr_run.txt", "a Q0 r 1 1 t\nb Q0 x 1 2 t\nb Q0 r 2 1 t\nc Q0 x 1 4 t\nc Q0 y 2 3 t\nc Q0 z 3 2 t\nc Q0 r 4 1 t\n");
  write(dir / "mrr_qrels.txt", "a 0 r 1\nb 0 r 1\nc 0 r 1\n");
  const auto m = cli("eval --run " + (dir / "mrr_run.txt").string() + " --qrels " + (dir / "mrr_qrels.txt").string() +
                      " --metrics mrr");
  ASSERT_EQ(m.code, 0) << m.err;
  EXPECT_NE(m.out.find("0.583333"), std::string::npos) << m.out;

  EXPECT_EQ(cli("eval --run " + (dir / "nope.txt").string() + " --qrels " + (dir / "qrels.txt").string()).code, 3);
  EXPECT_EQ(cli("eval --run " + (dir / "run.txt").string() + " --qrels " + (dir / "qrels.txt").string() +
                 " --metrics ndcg")
                .code,
            2);
}

TEST_F(Pipeline, DaquAndNoneRuns) {
  const auto daqu_rep = search_and_eval("daqu");
  const auto none_rep = search_and_eval("none");
  const auto& d = daqu_rep.at("mean");
  const auto& n = none_rep.at("mean");
  std::printf("daqu recall@10 %.17g recall@100 %.17g\nnone recall@10 %.17g recall@100 %.17g\n",
              d.at("recall@10").get<double>(), d.at("recall@100").get<double>(), n.at("recall@10").get<double>(),
              n.at("recall@100").get<double>());
  EXPECT_EQ(daqu_rep.at("query_count"), none_rep.at("query_count"));
  EXPECT_GT(d.at("recall@100").get<double>(), n.at("recall@100").get<double>());
  EXPECT_NEAR(d.at("recall@10").get<double>(), kDaquRecall10, 1e-9);
  EXPECT_NEAR(d.at("recall@100").get<double>(), kDaquRecall100, 1e-9);
  EXPECT_NEAR(n.at("recall@10").get<double>(), kNoneRecall10, 1e-9);
  EXPECT_NEAR(n.at("recall@100").get<double>(), kNoneRecall100, 1e-9);
}

TEST_F(Pipeline, OtherModesRun) {
  for (const char* mode : {"naive", "bm25_select", "bm25"}) {
    const auto rep = search_and_eval(mode);
    EXPECT_GT(rep.at("query_count").get<int>(), 0) << mode;
  }
  const auto capped = search_and_eval("daqu", " --infer-cap 1");
  EXPECT_GT(capped.at("query_count").get<int>(), 0);
}

TEST_F(Pipeline, TrainingIsByteIdentical) {
  const auto again = dir_ / "again.ckpt";
  ASSERT_EQ(cli("train --config " + config().string() + " --out-checkpoint " + again.string()).code, 0);
  EXPECT_EQ(slurp(again), slurp(ckpt()));
  const auto idx2 = dir_ / "again.idx";
  ASSERT_EQ(cli("--threads 4 index --checkpoint " + ckpt().string() + " --out-index " + idx2.string()).code, 0);
  // Only the recorded checkpoint path could differ, and it does not.
  EXPECT_EQ(slurp(idx2), slurp(index()));
}

TEST_F(Pipeline, BadKExitsTwo) {
  const std::string base = "search --index " + index().string() + " --queries " + queries().string();
  EXPECT_EQ(cli(base + " --k 0").code, 2);
  EXPECT_EQ(cli(base + " --mode dense").code, 2);
  EXPECT_EQ(cli(base + " --infer-cap 0").code, 2);
}

TEST_F(Pipeline, VersionAndDigestMismatchExitFour) {
  // Index pointing at a checkpoint whose bytes changed since indexing.
  const auto other = dir_ / "other.ckpt", other_idx = dir_ / "other.idx";
  fs::copy_file(ckpt(), other, fs::copy_options::overwrite_existing);
  ASSERT_EQ(cli("index --checkpoint " + other.string() + " --out-index " + other_idx.string()).code, 0);
  auto a = daqu::deserialize_artifact(daqu::read_bytes(other));
  a.header["epoch"] = 99;
  daqu::write_bytes(other, daqu::serialize_artifact(a));
  const auto r = cli("search --index " + other_idx.string() + " --queries " + queries().string());
  EXPECT_EQ(r.code, 4) << r.err;

  auto bytes = daqu::read_bytes(ckpt());
  bytes[4] = 7;
  const auto bad = dir_ / "bad_version.ckpt";
  daqu::write_bytes(bad, bytes);
  EXPECT_EQ(cli("index --checkpoint " + bad.string() + " --out-index " + (dir_ / "x.idx").string()).code, 4);
}

TEST_F(Pipeline, MissingDataExitsThree) {
  EXPECT_EQ(cli("search --index " + (dir_ / "missing.idx").string() + " --queries " + queries().string()).code, 3);
  write(dir_ / "bad_queries.jsonl", "{\"qid\": \"x\", \"row_id\": \"no-such-row\"}\n");
  EXPECT_EQ(cli("search --index " + index().string() + " --queries " + (dir_ / "bad_queries.jsonl").string()).code, 3);
}

TEST_F(Pipeline, LambdaSweepRows) {
  const auto out = dir_ / "sweep.jsonl";
  const auto r = cli("sweep --config " + config().string() + " --param lambda --values 0.1,0.7,0.9 --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(slurp(out));
  std::vector<json> rows;
  for (std::string line; std::getline(in, line);) rows.push_back(json::parse(line));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1].at("value").get<double>(), 0.7);
  for (const auto& row : rows) {
    EXPECT_EQ(row.at("param"), "lambda");
    EXPECT_GT(row.at("latency_median_ms").get<double>(), 0.0);
    EXPECT_GT(row.at("relative_latency").get<double>(), 0.0);
  }
}

TEST_F(Pipeline, SingleValueSweepMatchesDirectRun) {
  const auto r = cli("sweep --config " + config().string() + " --param lambda --values 0.7");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto row = json::parse(r.out);
  const auto direct = search_and_eval("daqu");
  EXPECT_EQ(row.at("metrics"), direct.at("mean"));
  EXPECT_EQ(row.at("queries"), direct.at("query_count"));
}

TEST_F(Pipeline, SweepRejectsBadInput) {
  EXPECT_EQ(cli("sweep --config " + config().string() + " --param tau --values 1").code, 2);
  EXPECT_EQ(cli("sweep --config " + config().string() + " --param lambda --values 1.5").code, 2);
  EXPECT_EQ(cli("sweep --config " + config().string() + " --param infer_cap --values 0").code, 2);
  EXPECT_EQ(cli("sweep --config " + config().string() + " --param lambda --values 0.7 --reps 2").code, 2);
}
