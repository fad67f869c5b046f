#pragma once

// Two-level set encoding of query metadata: attribute vectors are mean-pooled
// per category, and the category vectors are mean-pooled into one metadata
// vector. In training, a few attributes per category carry gradient and a
// larger sample contributes to the forward value only.

#include <algorithm>
#include <optional>
#include <tuple>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "daqu/encoder.hpp"
#include "daqu/errors.hpp"
#include "daqu/metaview.hpp"
#include "daqu/util.hpp"

namespace daqu {

enum class EncodeMode { train, inference };

struct SamplingPolicy {
  std::size_t grad_k = 3;
  std::size_t nograd_m = 30;
  EncodeMode mode = EncodeMode::inference;
  std::uint64_t seed = 0;
  /// Inference only: use at most this many attributes per category.
  std::optional<std::size_t> inference_cap;
};

/// Per-query sampling stream: global seed, query id and epoch mixed together.
inline std::uint64_t query_stream_seed(std::uint64_t global_seed, std::string_view query_id, std::uint64_t epoch = 0) {
  return mix64(global_seed ^ fnv1a64(query_id)) ^ mix64(epoch + 0x5eed);
}

/// Categories sorted by name; items by (source row id, source table, value).
inline AttributeSet canonicalize(AttributeSet attrs) {
  std::sort(attrs.categories.begin(), attrs.categories.end(),
            [](const Category& a, const Category& b) { return a.name < b.name; });
  for (auto& c : attrs.categories) {
    std::sort(c.items.begin(), c.items.end(), [](const Attribute& a, const Attribute& b) {
      return std::tie(a.source.id, a.source.table, a.value) < std::tie(b.source.id, b.source.table, b.value);
    });
  }
  return attrs;
}

struct SelectedAttribute {
  std::size_t index = 0;  // position in the canonical category list
  std::string text;
  bool grad_active = false;
};

struct ColumnSelection {
  std::string name;
  std::vector<SelectedAttribute> used;  // canonical order
};

/// Which attributes take part in one forward pass. Only non-empty categories appear.
struct Selection {
  EncodeMode mode = EncodeMode::inference;
  std::vector<ColumnSelection> columns;
};

inline Selection select_attributes(const AttributeSet& attrs, const SamplingPolicy& policy) {
  const AttributeSet canon = canonicalize(attrs);
  Rng rng(policy.seed);
  Selection sel{policy.mode, {}};
  for (const auto& cat : canon.categories) {
    const std::size_t n = cat.items.size();
    if (n == 0) continue;
    std::vector<std::pair<std::size_t, bool>> picked;  // (index, active)
    if (policy.mode == EncodeMode::train) {
      auto order = rng.sample_indices(n, std::min(n, policy.grad_k + policy.nograd_m));
      const std::size_t active = std::min(policy.grad_k, n);
      for (std::size_t i = 0; i < order.size(); ++i) picked.emplace_back(order[i], i < active);
    } else if (policy.inference_cap && *policy.inference_cap < n) {
      for (auto i : rng.sample_indices(n, *policy.inference_cap)) picked.emplace_back(i, false);
    } else {
      for (std::size_t i = 0; i < n; ++i) picked.emplace_back(i, false);
    }
    if (picked.empty()) continue;
    std::sort(picked.begin(), picked.end());
    ColumnSelection col{cat.name, {}};
    for (auto [i, active] : picked) col.used.push_back(SelectedAttribute{i, cat.items[i].value, active});
    sel.columns.push_back(std::move(col));
  }
  return sel;
}

/// Componentwise mean, summed in the given order.
inline DenseVector pool_column(std::span<const DenseVector> vectors) {
  if (vectors.empty()) throw EmptyColumnError("cannot pool an empty column");
  DenseVector out(vectors.front().size());
  for (const auto& v : vectors) out.axpy(1.0, v);
  out.scale(1.0 / static_cast<double>(vectors.size()));
  return out;
}

struct ColumnRep {
  std::string name;
  DenseVector pooled;
  std::size_t used_count = 0;
  std::vector<std::size_t> grad_active;  // positions within the used list
};

struct MetadataRep {
  DenseVector q_prime;
  std::vector<ColumnRep> columns;
  bool empty = true;
  Selection selection;
};

/// Encodes a fixed selection. `encode_one` maps attribute text to a vector of
/// length `dim`.
template <class AttrEncoder>
MetadataRep encode_selection(const Selection& sel, std::size_t dim, AttrEncoder&& encode_one) {
  MetadataRep rep;
  rep.selection = sel;
  std::vector<DenseVector> pooled;
  for (const auto& col : sel.columns) {
    std::vector<DenseVector> vecs;
    vecs.reserve(col.used.size());
    ColumnRep cr{col.name, {}, col.used.size(), {}};
    for (std::size_t i = 0; i < col.used.size(); ++i) {
      vecs.push_back(encode_one(col.used[i].text));
      if (vecs.back().size() != dim) throw DimensionError("attribute encoder returned the wrong length");
      if (col.used[i].grad_active) cr.grad_active.push_back(i);
    }
    cr.pooled = pool_column(vecs);
    pooled.push_back(cr.pooled);
    rep.columns.push_back(std::move(cr));
  }
  rep.empty = pooled.empty();
  rep.q_prime = rep.empty ? DenseVector(dim) : pool_column(pooled);
  return rep;
}

template <class AttrEncoder>
MetadataRep encode_metadata(const AttributeSet& attrs, const SamplingPolicy& policy, std::size_t dim,
                            AttrEncoder&& encode_one) {
  return encode_selection(select_attributes(attrs, policy), dim, std::forward<AttrEncoder>(encode_one));
}

inline MetadataRep encode_metadata(const AttributeSet& attrs, const EncoderParams& attribute_params,
                                   const FeaturizerConfig& cfg, const SamplingPolicy& policy) {
  return encode_metadata(attrs, policy, attribute_params.dim(),
                         [&](const std::string& text) { return encode(attribute_params, cfg, text); });
}

struct AttributeGrad {
  std::size_t column = 0;  // index into MetadataRep::columns
  std::size_t used = 0;    // position within that column's used list
  DenseVector grad;        // d q_prime-objective / d attribute vector
};

/// Gradient of <upstream, q_prime> w.r.t. each gradient-active attribute
/// vector. Inactive attributes are stop-gradient and get nothing.
inline std::vector<AttributeGrad> metadata_backprop(const MetadataRep& rep, const DenseVector& upstream) {
  if (rep.selection.mode != EncodeMode::train)
    throw ModeError("metadata_backprop needs a representation encoded in train mode");
  std::vector<AttributeGrad> out;
  if (rep.empty) return out;
  if (upstream.size() != rep.q_prime.size()) throw DimensionError("upstream gradient has the wrong length");
  const double n_cols = static_cast<double>(rep.columns.size());
  for (std::size_t j = 0; j < rep.columns.size(); ++j) {
    const auto& col = rep.columns[j];
    const double factor = 1.0 / (static_cast<double>(col.used_count) * n_cols);
    for (auto pos : col.grad_active) {
      DenseVector g = upstream;
      g.scale(factor);
      out.push_back(AttributeGrad{j, pos, std::move(g)});
    }
  }
  return out;
}

}  // namespace daqu
