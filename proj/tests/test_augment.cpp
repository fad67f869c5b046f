#include <gtest/gtest.h>

#include "daqu/augment.hpp"

using namespace daqu;

namespace {

MetadataRep meta_of(DenseVector v) {
  MetadataRep m;
  m.q_prime = std::move(v);
  m.empty = false;
  return m;
}

}  // namespace

TEST(Blend, DefaultLambda) {
  EXPECT_EQ(BlendConfig{}.lambda, 0.7);
  const auto out = blend(DenseVector{1, 0}, meta_of({0, 1}), BlendConfig{});
  EXPECT_DOUBLE_EQ(out[0], 0.7);
  EXPECT_DOUBLE_EQ(out[1], 0.3);
}

TEST(Blend, LambdaOneIsQuery) {
  const DenseVector q{0.1, -3.3, 7.25};
  EXPECT_EQ(blend(q, meta_of({5, 5, 5}), BlendConfig{1.0}), q);
}

TEST(Blend, EmptyMetadataPolicies) {
  const DenseVector q{0.1, 0.2};
  MetadataRep empty;
  empty.q_prime = DenseVector(2);
  EXPECT_EQ(blend(q, empty, BlendConfig{0.3, EmptyMetadataPolicy::fallback_to_query}), q);
  const auto z = blend(q, empty, BlendConfig{0.5, EmptyMetadataPolicy::blend_with_zero});
  EXPECT_EQ(z, (DenseVector{0.05, 0.1}));
}

TEST(Blend, Validation) {
  EXPECT_THROW(blend(DenseVector{1}, meta_of({1}), BlendConfig{1.5}), ConfigError);
  EXPECT_THROW(blend(DenseVector{1}, meta_of({1, 2}), BlendConfig{}), DimensionError);
}

TEST(BlendProperty, LambdaZeroIgnoresQuery) {
  Rng rng(51);
  for (int t = 0; t < 100; ++t) {
    const auto m = meta_of({rng.uniform(-1, 1), rng.uniform(-1, 1)});
    const auto a = blend(DenseVector{rng.uniform(-9, 9), rng.uniform(-9, 9)}, m, BlendConfig{0.0});
    const auto b = blend(DenseVector{rng.uniform(-9, 9), rng.uniform(-9, 9)}, m, BlendConfig{0.0});
    EXPECT_EQ(a, b);
    EXPECT_EQ(a, m.q_prime);
  }
}

TEST(BlendProperty, Affine) {
  Rng rng(52);
  for (int t = 0; t < 200; ++t) {
    const double lambda = rng.uniform();
    const DenseVector q{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
    const auto m = meta_of({rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)});
    const auto a = blend(q, m, BlendConfig{lambda});
    const auto b = blend(q, m, BlendConfig{1.0 - lambda});
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a[i] + b[i], q[i] + m.q_prime[i], 1e-12);
  }
}
