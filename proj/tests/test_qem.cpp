#include <gtest/gtest.h>

#include "qotr/errors.hpp"
#include "qotr/gradcheck.hpp"
#include "qotr/qem.hpp"
#include "test_support.hpp"

using namespace qotr;
using qotr::testing::probe;
using qotr::testing::randn;
using qotr::testing::rescale;
using Td = Tensor<double>;

namespace {

const GridSpec kToy{8, 8, 4, 4, 2};  // L = 4, R = 12, 4x4 grid

QEMParams<double> toy_qem(std::size_t blocks, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  return QEMParams<double>::init(8, blocks, 4, rng);
}

NoiseSpec toy_noise() { return {4, NoiseDistribution::kNormal}; }

}  // namespace

TEST(Qem, TokensToMapLayoutAndInverse) {
  std::mt19937_64 rng(1);
  Td h = randn({4, 8}, 1.0, rng);
  Graph<double> g;
  Var<double> m = tokens_to_map(g.constant(h), kToy);
  ASSERT_EQ(m.shape(), (Shape{8, 2, 2}));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t d = 0; d < 8; ++d) EXPECT_EQ(m.value().at(d, i / 2, i % 2), h.at(i, d));
  EXPECT_EQ(map_to_tokens(m).value(), h);
  EXPECT_THROW(tokens_to_map(g.constant(Td({5, 8})), kToy), DimensionError);
}

TEST(Qem, SingleTokenMap) {
  Graph<double> g;
  EXPECT_EQ(tokens_to_map(g.constant(Td({1, 3}, 1.0)), GridSpec{4, 4, 4, 4, 0}).shape(), (Shape{3, 1, 1}));
}

TEST(Qem, NoisePadCenterPassThroughAndDeterminism) {
  auto p = toy_qem(1);
  std::mt19937_64 rng(2);
  Td fmap = randn({8, 2, 2}, 1.0, rng);
  Graph<double> g;
  std::mt19937_64 r1(5), r2(5), r3(6);
  Td a = noise_pad(g.constant(fmap), kToy, p, toy_noise(), r1).value();
  Td b = noise_pad(g.constant(fmap), kToy, p, toy_noise(), r2).value();
  Td c = noise_pad(g.constant(fmap), kToy, p, toy_noise(), r3).value();
  ASSERT_EQ(a.shape(), (Shape{8, 4, 4}));
  for (std::size_t d = 0; d < 8; ++d)
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t x = 0; x < 2; ++x) EXPECT_EQ(a.at(d, y + 1, x + 1), fmap.at(d, y, x));
  EXPECT_EQ(a, b);
  EXPECT_GT(max_abs_diff(a, c), 0.0);
}

TEST(Qem, ZeroMlpGivesBiasOnRing) {
  auto p = toy_qem(1);
  p.mlp_w1.fill(0);
  p.mlp_w2.fill(0);
  for (std::size_t d = 0; d < 8; ++d) p.mlp_b2[d] = 0.1 * static_cast<double>(d);
  Graph<double> g;
  std::mt19937_64 rng(3);
  Td a = noise_pad(g.constant(Td({8, 2, 2}, 7.0)), kToy, p, toy_noise(), rng).value();
  for (const Cell& c : ring_index(kToy).cells)
    for (std::size_t d = 0; d < 8; ++d) EXPECT_EQ(a.at(d, c.row, c.col), p.mlp_b2[d]);
}

TEST(Qem, ZeroConvWeightsMakeBlockIdentity) {
  auto p = toy_qem(2);
  for (auto& b : p.blocks) {
    b.point_w.fill(0);
    b.point_b.fill(0);
  }
  std::mt19937_64 rng(4);
  Td x = randn({8, 4, 4}, 1.0, rng);
  Graph<double> g;
  Var<double> y = g.constant(x);
  for (const auto& b : p.blocks) y = qem_block(y, b);
  EXPECT_EQ(y.value(), x);
}

TEST(Qem, ExpandShapeAndNoiseDependence) {
  auto p = toy_qem(2);
  std::mt19937_64 rng(5);
  rescale<double>(p, 0.3, rng);
  Td h = randn({4, 8}, 1.0, rng);
  Graph<double> g;
  std::mt19937_64 a(1), b(1), c(2);
  Td qa = expand_queries(g.constant(h), kToy, p, toy_noise(), a).value();
  Td qb = expand_queries(g.constant(h), kToy, p, toy_noise(), b).value();
  Td qc = expand_queries(g.constant(h), kToy, p, toy_noise(), c).value();
  EXPECT_EQ(qa.shape(), (Shape{12, 8}));
  EXPECT_EQ(qa, qb);
  EXPECT_GT(max_abs_diff(qa, qc), 0.0);
}

TEST(Qem, FullGridGivesEightyQueries) {
  const GridSpec full{128, 128, 32, 16, 8};
  std::mt19937_64 rng(6);
  auto p = QEMParams<float>::init(16, 1, 4, rng);
  Graph<float> g;
  Var<float> q = expand_queries(g.constant(Tensor<float>({64, 16}, 0.5f)), full, p, {4}, rng);
  EXPECT_EQ(q.shape(), (Shape{80, 16}));
}

TEST(Qem, UniformNoiseWithinBounds) {
  std::mt19937_64 rng(7);
  Td z = sample_noise<double>(50, {6, NoiseDistribution::kUniform}, rng);
  for (double v : z.data()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_EQ(parse_noise_distribution("uniform"), NoiseDistribution::kUniform);
  EXPECT_EQ(to_string(NoiseDistribution::kNormal), "normal");
}

TEST(Qem, NoiseDimMismatch) {
  auto p = toy_qem(1);
  Graph<double> g;
  std::mt19937_64 rng(8);
  EXPECT_THROW(noise_pad(g.constant(Td({8, 2, 2})), kToy, p, {5}, rng), ConfigError);
}

TEST(Qem, GradCheckToy) {
  auto p = toy_qem(2);
  std::mt19937_64 rng(9);
  rescale<double>(p, 0.3, rng);
  Td h = randn({4, 8}, 1.0, rng);
  auto ptrs = param_pointers<double>(p);
  ptrs.push_back(&h);
  auto f = [&](Graph<double>& g) {
    std::mt19937_64 noise(3);
    return probe(expand_queries(g.param(h), kToy, p, toy_noise(), noise));
  };
  EXPECT_LE(grad_check(f, ptrs, {1e-4, 10, 1}).max_rel_error, 1e-3);
}
