#pragma once

// Contrastive training of the query, document and attribute encoders with
// in-batch negatives. Gradients are derived by hand and applied with AdamW.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "daqu/augment.hpp"
#include "daqu/encoder.hpp"
#include "daqu/errors.hpp"
#include "daqu/index.hpp"
#include "daqu/metaview.hpp"
#include "daqu/relstore.hpp"
#include "daqu/setenc.hpp"
#include "daqu/util.hpp"

namespace daqu {

struct TrainConfig {
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;  // 2e-5 is the usual value for transformer fine-tuning
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t epochs = 0;
  std::size_t dim = 128;
  BlendConfig blend;
  std::size_t grad_k = 3;
  std::size_t nograd_m = 30;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size < 2) throw BatchTooSmallError("batch_size must be >= 2 for in-batch negatives");
    if (!(learning_rate > 0.0) || !(eps > 0.0)) throw ConfigError("learning_rate and eps must be > 0");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
    if (dim < 1) throw ConfigError("dim must be >= 1");
    blend.validate();
  }
};

struct TrainExample {
  RowRef query_row;
  std::string query_field;
  std::string positive;  // document id
  friend bool operator==(const TrainExample&, const TrainExample&) = default;
};

/// -log(e^pos / (e^pos + sum e^neg)), evaluated with a max shift.
inline double contrastive_loss(double pos, const std::vector<double>& negs) {
  double m = pos;
  for (double s : negs) m = std::max(m, s);
  double sum = std::exp(pos - m);
  for (double s : negs) sum += std::exp(s - m);
  return m + std::log(sum) - pos;
}

/// Gradient buffers laid out like EncoderParams::flat().
struct Gradients {
  std::vector<double> query;
  std::vector<double> document;
  std::vector<double> attribute;
  bool attribute_touched = false;  // any gradient-active attribute in the batch
};

struct PreparedExample {
  std::string query_id;
  SparseVector query_features;
  Selection selection;
  std::size_t doc_ordinal = 0;  // into the batch's document list
};

/// A batch with attribute sampling fixed, so the loss can be re-evaluated
/// under different parameters.
struct PreparedBatch {
  std::vector<PreparedExample> examples;
  std::vector<SparseVector> documents;  // one per example, its positive
  std::unordered_map<std::string, SparseVector> attribute_features;
};

struct BatchResult {
  double loss = 0.0;
  std::size_t rows = 0, cols = 0;  // score matrix shape
  Gradients grads;
};

class AdamW {
 public:
  AdamW() = default;
  AdamW(const TrainConfig& cfg, const EncoderSet& model) : cfg_(cfg) {
    for (auto* s : {&state_[0], &state_[1], &state_[2]}) {
      s->m.assign(model.query.flat().size(), 0.0);
      s->v.assign(model.query.flat().size(), 0.0);
    }
  }

  void step(EncoderSet& model, const Gradients& g) {
    update(model.query.flat(), g.query, state_[0]);
    update(model.document.flat(), g.document, state_[1]);
    // A block outside this step's graph gets no update at all, weight decay included.
    if (g.attribute_touched) update(model.attribute.flat(), g.attribute, state_[2]);
  }

 private:
  struct State {
    std::vector<double> m, v;
    std::uint64_t t = 0;
  };

  void update(std::span<double> p, const std::vector<double>& g, State& s) const {
    ++s.t;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t));
    const double lr = cfg_.learning_rate;
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] -= lr * cfg_.weight_decay * p[i];
      s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g[i];
      s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      p[i] -= lr * (s.m[i] / bc1) / (std::sqrt(s.v[i] / bc2) + cfg_.eps);
    }
  }

  TrainConfig cfg_;
  State state_[3];
};

struct Checkpoint {
  EncoderSet model;
  BlendConfig blend;
  std::string specs_digest;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline std::string hex64(std::uint64_t x) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, x >>= 4) s[static_cast<std::size_t>(i)] = digits[x & 0xf];
  return s;
}

inline std::string specs_digest(const std::vector<CategorySpec>& specs) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : specs) arr.push_back(spec_to_json(s));
  return hex64(fnv1a64(arr.dump()));
}

/// Rounds every parameter to IEEE single precision, the checkpoint storage format.
inline void round_to_float(EncoderSet& model) {
  for (auto* p : {&model.query, &model.document, &model.attribute})
    for (double& x : p->flat()) x = static_cast<double>(static_cast<float>(x));
}

struct LossRecord {
  std::size_t epoch;
  std::size_t step;
  double loss;
  friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossRecord> log;
  std::vector<double> epoch_mean_loss;
};

class Trainer {
 public:
  Trainer(const Database& db, const Corpus& corpus, std::vector<CategorySpec> specs, TrainConfig cfg,
          FeaturizerConfig featurizer)
      : db_(db), corpus_(corpus), specs_(std::move(specs)), cfg_(cfg) {
    cfg_.validate();
    featurizer.validate();
    for (const auto& r : validate_specs(db_.schemas(), specs_))
      if (!r.ok) throw SpecTypeError("category '" + r.name + "': " + r.message);
    model_ = EncoderSet::random(featurizer, cfg_.dim, cfg_.seed);
    optimizer_ = AdamW(cfg_, model_);
  }

  const EncoderSet& model() const { return model_; }
  EncoderSet& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }

  const AttributeSet& attributes(const RowRef& query) {
    auto it = attr_cache_.find(query);
    if (it == attr_cache_.end()) it = attr_cache_.emplace(query, extract_attributes(db_, query, specs_)).first;
    return it->second;
  }

  /// Fixes featurization and attribute sampling for one batch.
  PreparedBatch prepare(const std::vector<TrainExample>& batch, std::size_t epoch) {
    if (batch.size() < 2) throw BatchTooSmallError("a batch needs at least 2 examples, got " + std::to_string(batch.size()));
    PreparedBatch out;
    for (const auto& ex : batch) {
      const Table& t = db_.table(ex.query_row.table);
      const auto& text = t.attribute(db_.row(ex.query_row), ex.query_field);
      PreparedExample pe;
      pe.query_id = ex.query_row.id;
      pe.query_features = featurize(model_.featurizer, text ? *text : std::string());
      SamplingPolicy policy{cfg_.grad_k, cfg_.nograd_m, EncodeMode::train,
                            query_stream_seed(cfg_.seed, ex.query_row.table + "/" + ex.query_row.id, epoch), std::nullopt};
      pe.selection = select_attributes(attributes(ex.query_row), policy);
      for (const auto& col : pe.selection.columns)
        for (const auto& a : col.used)
          if (!out.attribute_features.count(a.text)) out.attribute_features.emplace(a.text, featurize(model_.featurizer, a.text));
      auto ord = corpus_.ordinal(ex.positive);
      if (!ord) throw UnknownIdError("positive document '" + ex.positive + "' is not in the corpus");
      pe.doc_ordinal = out.documents.size();
      out.documents.push_back(featurize(model_.featurizer, corpus_.text(*ord)));
      out.examples.push_back(std::move(pe));
    }
    return out;
  }

  /// Loss of a prepared batch under `model`; gradients when `with_grad`.
  BatchResult evaluate(const EncoderSet& model, const PreparedBatch& batch, bool with_grad) const {
    const std::size_t n = batch.examples.size();
    const std::size_t dim = model.dim();
    std::vector<DenseVector> docs, queries;
    std::vector<MetadataRep> metas;
    std::vector<BlendWeights> weights;
    for (const auto& d : batch.documents) docs.push_back(encode_features(model.document, d));
    for (const auto& ex : batch.examples) {
      const DenseVector q = encode_features(model.query, ex.query_features);
      metas.push_back(encode_selection(ex.selection, dim, [&](const std::string& text) {
        return encode_features(model.attribute, batch.attribute_features.at(text));
      }));
      weights.push_back(blend_weights(metas.back(), cfg_.blend));
      queries.push_back(blend(q, metas.back(), cfg_.blend));
    }

    BatchResult res;
    res.rows = n;
    res.cols = docs.size();
    std::vector<std::vector<double>> probs(n, std::vector<double>(docs.size()));
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> s(docs.size());
      for (std::size_t j = 0; j < docs.size(); ++j) s[j] = dot(queries[i].span(), docs[j].span());
      const std::size_t pos = batch.examples[i].doc_ordinal;
      std::vector<double> negs;
      for (std::size_t j = 0; j < s.size(); ++j)
        if (j != pos) negs.push_back(s[j]);
      const double li = contrastive_loss(s[pos], negs);
      res.loss += li;
      double m = *std::max_element(s.begin(), s.end());
      double z = 0.0;
      for (double x : s) z += std::exp(x - m);
      for (std::size_t j = 0; j < s.size(); ++j) probs[i][j] = std::exp(s[j] - m) / z;
    }
    res.loss /= static_cast<double>(n);
    if (!with_grad) return res;

    auto& g = res.grads;
    g.query.assign(model.query.flat().size(), 0.0);
    g.document.assign(model.document.flat().size(), 0.0);
    g.attribute.assign(model.attribute.flat().size(), 0.0);
    auto scatter = [dim](std::vector<double>& buf, const SparseVector& x, const DenseVector& grad, double scale) {
      for (const auto& e : x) {
        double* col = buf.data() + static_cast<std::size_t>(e.bucket) * dim;
        const double w = scale * e.weight;
        for (std::size_t d = 0; d < dim; ++d) col[d] += w * grad[d];
      }
    };

    const double inv_n = 1.0 / static_cast<double>(n);
    std::vector<DenseVector> doc_grad(docs.size(), DenseVector(dim));
    for (std::size_t i = 0; i < n; ++i) {
      DenseVector gq(dim);
      for (std::size_t j = 0; j < docs.size(); ++j) {
        const double coef = (probs[i][j] - (j == batch.examples[i].doc_ordinal ? 1.0 : 0.0)) * inv_n;
        gq.axpy(coef, docs[j]);
        doc_grad[j].axpy(coef, queries[i]);
      }
      scatter(g.query, batch.examples[i].query_features, gq, weights[i].query);
      if (weights[i].metadata != 0.0 && !metas[i].empty) {
        DenseVector up = gq;
        up.scale(weights[i].metadata);
        for (const auto& ag : metadata_backprop(metas[i], up)) {
          const auto& text = metas[i].selection.columns[ag.column].used[ag.used].text;
          scatter(g.attribute, batch.attribute_features.at(text), ag.grad, 1.0);
          g.attribute_touched = true;
        }
      }
    }
    for (std::size_t j = 0; j < docs.size(); ++j) scatter(g.document, batch.documents[j], doc_grad[j], 1.0);
    return res;
  }

  /// One optimizer step on a prepared batch; returns the pre-update loss.
  double step(const PreparedBatch& batch) {
    const BatchResult r = evaluate(model_, batch, true);
    optimizer_.step(model_, r.grads);
    return r.loss;
  }

  double train_step(const std::vector<TrainExample>& batch, std::size_t epoch = 0) { return step(prepare(batch, epoch)); }

  TrainResult train(const std::vector<TrainExample>& dataset) {
    if (dataset.empty()) throw ConfigError("training dataset is empty");
    TrainResult out;
    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t global_step = 0;
    for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
      Rng rng(mix64(cfg_.seed ^ mix64(epoch + 1)));
      std::vector<std::size_t> perm = order;
      rng.shuffle(perm);
      double sum = 0.0;
      std::size_t steps = 0;
      for (std::size_t start = 0; start + 2 <= perm.size(); start += cfg_.batch_size) {
        const std::size_t end = std::min(start + cfg_.batch_size, perm.size());
        if (end - start < 2) break;
        std::vector<TrainExample> batch;
        for (std::size_t i = start; i < end; ++i) batch.push_back(dataset[perm[i]]);
        const double loss = step(prepare(batch, epoch));
        out.log.push_back(LossRecord{epoch, global_step++, loss});
        sum += loss;
        ++steps;
      }
      out.epoch_mean_loss.push_back(steps ? sum / static_cast<double>(steps) : 0.0);
    }
    out.checkpoint = checkpoint(cfg_.epochs);
    return out;
  }

  Checkpoint checkpoint(std::size_t epoch) const {
    Checkpoint c{model_, cfg_.blend, specs_digest(specs_), cfg_.seed, epoch};
    round_to_float(c.model);
    return c;
  }

 private:
  const Database& db_;
  const Corpus& corpus_;
  std::vector<CategorySpec> specs_;
  TrainConfig cfg_;
  EncoderSet model_;
  AdamW optimizer_;
  std::map<RowRef, AttributeSet> attr_cache_;
};

}  // namespace daqu
