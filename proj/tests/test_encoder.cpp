#include <gtest/gtest.h>

#include <cmath>

#include "qotr/encoder.hpp"
#include "qotr/errors.hpp"
#include "qotr/gradcheck.hpp"
#include "test_support.hpp"

using namespace qotr;
using qotr::testing::probe;
using qotr::testing::randn;
using qotr::testing::rescale;
using Td = Tensor<double>;

namespace {

EncoderParams<double> toy_encoder(std::size_t depth, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  return EncoderParams<double>::init(12, 4, 8, depth, 2, rng);
}

Td layer_norm_rows(const Td& x) {
  const std::size_t L = x.dim(0), D = x.dim(1);
  Td out(x.shape());
  for (std::size_t r = 0; r < L; ++r) {
    double mu = 0, var = 0;
    for (std::size_t c = 0; c < D; ++c) mu += x.at(r, c);
    mu /= D;
    for (std::size_t c = 0; c < D; ++c) var += (x.at(r, c) - mu) * (x.at(r, c) - mu);
    var /= D;
    for (std::size_t c = 0; c < D; ++c) out.at(r, c) = (x.at(r, c) - mu) / std::sqrt(var + 1e-5);
  }
  return out;
}

}  // namespace

TEST(PatchEmbed, ZeroTokensGivePositions) {
  auto p = toy_encoder(1);
  Graph<double> g;
  Var<double> h = patch_embed(g.constant(Td({4, 12})), p);
  EXPECT_EQ(h.value(), p.pos);
}

TEST(PatchEmbed, ZeroEmbeddingIgnoresInput) {
  auto p = toy_encoder(1);
  p.embed.fill(0);
  std::mt19937_64 rng(2);
  Graph<double> g;
  EXPECT_EQ(patch_embed(g.constant(randn({4, 12}, 1.0, rng)), p).value(), p.pos);
}

TEST(PatchEmbed, OneHotSelectsRow) {
  auto p = toy_encoder(1);
  Td tok({4, 12});
  tok.at(2, 5) = 1.0;
  Graph<double> g;
  Td h = patch_embed(g.constant(tok), p).value();
  for (std::size_t c = 0; c < 8; ++c) EXPECT_DOUBLE_EQ(h.at(2, c), p.embed.at(5, c) + p.pos.at(2, c));
}

TEST(PatchEmbed, LengthMismatch) {
  auto p = toy_encoder(1);
  Graph<double> g;
  EXPECT_THROW(patch_embed(g.constant(Td({5, 12})), p), DimensionError);
}

TEST(AttentionHead, SingletonAndIdenticalKeys) {
  std::mt19937_64 rng(3);
  Graph<double> g;
  Td I({2, 2}, std::vector<double>{1, 0, 0, 1});
  Var<double> id = g.constant(I);
  Td x = randn({1, 2}, 1.0, rng);
  EXPECT_LT(max_abs_diff(attention_head(g.constant(x), g.constant(x), id, id, id).value(), x), 1e-15);
  // Identical keys: every query attends uniformly, so the output is the mean of V.
  Td y({3, 2}, std::vector<double>{1, 1, 1, 1, 1, 1});
  Td wv({2, 2}, std::vector<double>{1, 2, 3, 4});
  Td q = randn({2, 2}, 1.0, rng);
  Td out = attention_head(g.constant(q), g.constant(y), id, id, g.constant(wv)).value();
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_NEAR(out.at(r, 0), 4.0, 1e-12);
    EXPECT_NEAR(out.at(r, 1), 6.0, 1e-12);
  }
}

TEST(AttentionHead, TwoTokenHandExample) {
  Graph<double> g;
  Td I({2, 2}, std::vector<double>{1, 0, 0, 1});
  Td x({2, 2}, std::vector<double>{1, 0, 0, 2});
  Td out = attention_head(g.constant(x), g.constant(x), g.constant(I), g.constant(I), g.constant(I)).value();
  // scores = x x^T / sqrt(2) = [[1, 0], [0, 4]] / sqrt(2)
  const double s = 1 / std::sqrt(2.0);
  const double p00 = std::exp(s) / (std::exp(s) + 1), p01 = 1 - p00;
  const double p11 = std::exp(4 * s) / (1 + std::exp(4 * s)), p10 = 1 - p11;
  EXPECT_NEAR(out.at(0, 0), p00, 1e-6);
  EXPECT_NEAR(out.at(0, 1), 2 * p01, 1e-6);
  EXPECT_NEAR(out.at(1, 0), p10, 1e-6);
  EXPECT_NEAR(out.at(1, 1), 2 * p11, 1e-6);
}

TEST(Msa, PermutationEquivariant) {
  std::mt19937_64 rng(4);
  auto p = AttentionParams<double>::init(8, rng);
  rescale<double>(p, 0.4, rng);
  Td x = randn({5, 8}, 1.0, rng);
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  Td xp(x.shape());
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 8; ++c) xp.at(i, c) = x.at(perm[i], c);
  Graph<double> g;
  Td y = msa(g.constant(x), p, 2).value();
  Td yp = msa(g.constant(xp), p, 2).value();
  ASSERT_EQ(y.shape(), (Shape{5, 8}));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(yp.at(i, c), y.at(perm[i], c), 1e-12);
}

TEST(Msa, SingleHeadIsProjectedHead) {
  std::mt19937_64 rng(5);
  auto p = AttentionParams<double>::init(4, rng);
  rescale<double>(p, 0.5, rng);
  p.bq.fill(0); p.bk.fill(0); p.bv.fill(0); p.bo.fill(0);
  Td x = randn({3, 4}, 1.0, rng);
  Graph<double> g;
  Td a = msa(g.constant(x), p, 1).value();
  Td b = matmul(attention_head(g.constant(x), g.constant(x), g.constant(p.wq), g.constant(p.wk), g.constant(p.wv)).value(), p.wo);
  EXPECT_LT(max_abs_diff(a, b), 1e-12);
}

TEST(Msa, GradCheck) {
  std::mt19937_64 rng(6);
  auto p = AttentionParams<double>::init(8, rng);
  rescale<double>(p, 0.4, rng);
  Td x = randn({4, 8}, 1.0, rng);
  auto ptrs = param_pointers<double>(p);
  ptrs.push_back(&x);
  auto f = [&](Graph<double>& g) { return probe(msa(g.param(x), p, 2)); };
  EXPECT_LE(grad_check(f, ptrs, {1e-4}).max_rel_error, 1e-4);
}

TEST(Encode, EmptyStackIsNormOfEmbedding) {
  auto p = toy_encoder(0);
  std::mt19937_64 rng(7);
  Td tok = randn({4, 12}, 1.0, rng);
  Graph<double> g;
  Td h0 = patch_embed(g.constant(tok), p).value();
  EXPECT_LT(max_abs_diff(encode(g.constant(tok), p).value(), layer_norm_rows(h0)), 1e-12);
}

TEST(Encode, ZeroBlocksAreIdentity) {
  auto p = toy_encoder(3);
  for (auto& l : p.layers) {
    qotr::testing::zero_all<double>(l.attn);
    qotr::testing::zero_all<double>(l.ffn);
  }
  std::mt19937_64 rng(8);
  Td tok = randn({4, 12}, 1.0, rng);
  Graph<double> g;
  Td h0 = patch_embed(g.constant(tok), p).value();
  EXPECT_LT(max_abs_diff(encode(g.constant(tok), p).value(), layer_norm_rows(h0)), 1e-12);
}

TEST(Encode, AttentionRowsSumToOne) {
  auto p = toy_encoder(2);
  std::mt19937_64 rng(9);
  rescale<double>(p, 0.5, rng);
  Graph<double> g;
  std::size_t seen = 0;
  g.set_attention_observer([&](const Td& probs) {
    const std::size_t cols = probs.shape().back();
    for (std::size_t r = 0; r < probs.numel() / cols; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < cols; ++c) s += probs[r * cols + c];
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
    ++seen;
  });
  encode(g.constant(randn({4, 12}, 1.0, rng)), p);
  EXPECT_EQ(seen, 2u * 2u);  // layers x heads
}

TEST(Encode, Deterministic) {
  auto p = toy_encoder(2);
  std::mt19937_64 rng(10);
  Td tok = randn({4, 12}, 1.0, rng);
  Graph<double> g1, g2;
  EXPECT_EQ(encode(g1.constant(tok), p).value(), encode(g2.constant(tok), p).value());
}

TEST(Encode, GradCheckToy) {
  auto p = toy_encoder(2);
  std::mt19937_64 rng(11);
  rescale<double>(p, 0.3, rng);
  Td tok = randn({4, 12}, 1.0, rng);
  auto f = [&](Graph<double>& g) { return probe(encode(g.constant(tok), p)); };
  EXPECT_LE(grad_check(f, param_pointers<double>(p), {1e-4}).max_rel_error, 1e-4);
}
