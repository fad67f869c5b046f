// A tiny forum where question bodies are vague and the asker's earlier posts
// reveal the topic. Trains a small model, then compares plain query encoding
// with metadata blending for one held-out question.

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "daqu/evalkit.hpp"
#include "daqu/trainer.hpp"

using namespace daqu;

int main() {
  std::vector<TableSchema> schema{
      TableSchema{"users", "id", {}, {{"About", AttrKind::text}}},
      TableSchema{"posts",
                  "id",
                  {{"Owner", {"users", "id"}}, {"Parent", {"posts", "id"}}},
                  {{"Body", AttrKind::text}, {"Tags", AttrKind::text}, {"Created", AttrKind::timestamp}}}};

  const std::vector<std::string> topics{"rust borrow lifetime", "sql join index", "go goroutine channel"};
  std::map<std::string, std::vector<Row>> rows;
  std::vector<TrainExample> train;
  std::vector<std::pair<std::string, std::string>> docs;
  std::int64_t clock = 1000;
  auto post = [&](const std::string& id, const std::string& owner, std::optional<std::string> parent, std::string body,
                  std::optional<std::string> tags) {
    ++clock;
    rows["posts"].push_back(Row{id, {owner, parent}, {body, tags, std::to_string(clock)}, clock});
  };

  for (std::size_t u = 0; u < 12; ++u) {
    const std::string user = "u" + std::to_string(u), topic = topics[u % 3];
    rows["users"].push_back(Row{user, {}, {std::nullopt}, {}});
    post("old" + std::to_string(u), user, std::nullopt, "an earlier question", topic);
    for (int q = 0; q < 3; ++q) {
      const std::string qid = "q" + std::to_string(u) + "_" + std::to_string(q);
      post(qid, user, std::nullopt, "my code does not work please help", std::nullopt);
      const std::string aid = "a" + std::to_string(u) + "_" + std::to_string(q);
      post(aid, "u" + std::to_string((u + 1) % 12), qid, "answer about " + topic, std::nullopt);
      docs.emplace_back(aid, "answer about " + topic);
      if (u != 9) train.push_back(TrainExample{RowRef{"posts", qid}, "Body", aid});
    }
  }
  const Database db = Database::build(schema, rows);
  const Corpus corpus(docs);

  // Tags of the asker's earlier posts.
  const std::vector<CategorySpec> specs{CategorySpec{"previous_tags",
                                                     "posts",
                                                     {{"posts.Owner", Direction::forward}, {"posts.Owner", Direction::reverse}},
                                                     "Tags",
                                                     TemporalFilter::strictly_before,
                                                     true}};

  const Query held_out{"q9_0", RowRef{"posts", "q9_0"}, "my code does not work please help"};
  for (const auto& c : extract_attributes(db, held_out.row, specs).categories)
    for (const auto& a : c.items) std::printf("metadata %s: %s (from %s)\n", c.name.c_str(), a.value.c_str(), a.source.id.c_str());

  TrainConfig cfg;
  cfg.batch_size = 6;
  cfg.learning_rate = 5e-2;
  cfg.epochs = 30;
  cfg.dim = 8;
  cfg.seed = 3;
  const FeaturizerConfig fc{256, 32};
  Trainer trainer(db, corpus, specs, cfg, fc);
  const auto result = trainer.train(train);
  std::printf("mean loss: first epoch %.4f, last epoch %.4f\n", result.epoch_mean_loss.front(),
              result.epoch_mean_loss.back());

  const DenseIndex index = build_dense(corpus, result.checkpoint.model.document, fc);
  SystemOptions opt;
  opt.k = 3;
  opt.blend = cfg.blend;
  for (SystemMode mode : {SystemMode::none, SystemMode::daqu}) {
    const Run run = run_system(mode, result.checkpoint.model, index, db, specs, {held_out}, opt);
    std::printf("%-5s", to_string(mode).c_str());
    for (const auto& r : run.at(held_out.qid)) std::printf("  %s (%s) %.3f", r.id.c_str(), corpus.text(*corpus.ordinal(r.id)).c_str(), r.score);
    std::printf("\n");
  }
  return 0;
}
