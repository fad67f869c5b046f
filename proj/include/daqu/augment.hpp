#pragma once

#include <string>

#include "daqu/encoder.hpp"
#include "daqu/errors.hpp"
#include "daqu/setenc.hpp"

namespace daqu {

enum class EmptyMetadataPolicy { fallback_to_query, blend_with_zero };

struct BlendConfig {
  double lambda = 0.7;
  EmptyMetadataPolicy empty_metadata_policy = EmptyMetadataPolicy::fallback_to_query;

  void validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  }
  friend bool operator==(const BlendConfig&, const BlendConfig&) = default;
};

/// Coefficients (a, b) with q~ = a*q + b*q'. Also the Jacobian weights used by the trainer.
struct BlendWeights {
  double query;
  double metadata;
};

inline BlendWeights blend_weights(const MetadataRep& meta, const BlendConfig& cfg) {
  if (meta.empty && cfg.empty_metadata_policy == EmptyMetadataPolicy::fallback_to_query) return {1.0, 0.0};
  return {cfg.lambda, 1.0 - cfg.lambda};
}

inline DenseVector blend(const DenseVector& q, const MetadataRep& meta, const BlendConfig& cfg) {
  cfg.validate();
  if (q.size() != meta.q_prime.size())
    throw DimensionError("blend: query has length " + std::to_string(q.size()) + ", metadata " +
                         std::to_string(meta.q_prime.size()));
  const auto w = blend_weights(meta, cfg);
  if (w.metadata == 0.0 && w.query == 1.0) return q;
  DenseVector out(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) out[i] = w.query * q[i] + w.metadata * meta.q_prime[i];
  return out;
}

inline std::string to_string(EmptyMetadataPolicy p) {
  return p == EmptyMetadataPolicy::fallback_to_query ? "fallback_to_query" : "blend_with_zero";
}

}  // namespace daqu
