#include <gtest/gtest.h>

#include <random>
#include <set>

#include "qotr/errors.hpp"
#include "qotr/geometry.hpp"

using namespace qotr;

namespace {

std::vector<GridSpec> valid_specs() {
  return {{128, 128, 32, 16, 8}, {64, 64, 16, 8, 4}, {32, 32, 16, 16, 0}, {8, 8, 4, 4, 2},
          {16, 24, 8, 8, 3},     {24, 16, 4, 4, 1},  {64, 32, 16, 16, 8}, {48, 48, 24, 8, 0},
          {8, 16, 8, 8, 7}};
}

}  // namespace

TEST(Geometry, TokenCountExamples) {
  const auto full = token_counts({128, 128, 32, 16, 8});
  EXPECT_EQ(full.L, 64u);
  EXPECT_EQ(full.R, 80u);
  const auto small = token_counts({32, 32, 16, 16, 0});
  EXPECT_EQ(small.L, 4u);
  EXPECT_EQ(small.R, 12u);
  EXPECT_EQ(token_counts({32, 32, 0, 16, 0}).R, 0u);
  const auto desk = token_counts(GridSpec{});
  EXPECT_EQ(desk.L, 64u);
  EXPECT_EQ(desk.R, 80u);
}

TEST(Geometry, ValidationNamesField) {
  auto msg = [](GridSpec s) {
    try {
      s.validate();
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(msg({30, 32, 16, 16, 0}).find("GridSpec.H"), std::string::npos);
  EXPECT_NE(msg({32, 30, 16, 16, 0}).find("GridSpec.W"), std::string::npos);
  EXPECT_NE(msg({32, 32, 10, 16, 0}).find("GridSpec.M"), std::string::npos);
  EXPECT_NE(msg({32, 32, 16, 16, 16}).find("GridSpec.o"), std::string::npos);
  EXPECT_THROW(token_counts({32, 32, 10, 16, 0}), ConfigError);
  EXPECT_EQ(msg(GridSpec{}), "");
}

TEST(Geometry, RingExamples) {
  const RingIndex small = ring_index({32, 32, 16, 16, 0});
  ASSERT_EQ(small.size(), 12u);
  EXPECT_EQ(small.cells.front(), (Cell{0, 0}));
  const RingIndex full = ring_index({128, 128, 32, 16, 8});
  EXPECT_EQ(full.size(), 80u);
  for (const Cell& c : full.cells) EXPECT_FALSE(c.row >= 2 && c.row <= 9 && c.col >= 2 && c.col <= 9);
  EXPECT_THROW(ring_index({32, 32, 0, 16, 0}), GeometryError);
}

TEST(Geometry, RingAgreesWithBruteForce) {
  for (const GridSpec& s : valid_specs()) {
    const RingIndex ring = ring_index(s);
    const std::size_t rows = (s.H + 2 * s.M) / s.P, cols = (s.W + 2 * s.M) / s.P;
    std::vector<Cell> expect;
    std::size_t center = 0;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        const bool inside = r * s.P >= s.M && r * s.P < s.M + s.H && c * s.P >= s.M && c * s.P < s.M + s.W;
        if (inside) {
          ++center;
        } else {
          expect.push_back({r, c});
        }
      }
    EXPECT_EQ(ring.cells, expect);
    EXPECT_EQ(token_counts(s).R, expect.size());
    EXPECT_EQ(token_counts(s).L, center);
    std::set<std::pair<std::size_t, std::size_t>> uniq;
    for (std::size_t i = 0; i < ring.size(); ++i) {
      uniq.insert({ring.cells[i].row, ring.cells[i].col});
      EXPECT_EQ(ring.slot_of[ring.cells[i].row * cols + ring.cells[i].col], static_cast<std::int64_t>(i));
    }
    EXPECT_EQ(uniq.size(), ring.size());
  }
}

TEST(Geometry, Footprints) {
  const GridSpec tile{32, 32, 16, 16, 0};
  EXPECT_EQ(patch_footprint({1, 0}, tile), (Rect{16, 0, 32, 16}));
  const GridSpec full{128, 128, 32, 16, 8};
  const Rect interior = patch_footprint({0, 5}, full);
  EXPECT_EQ(interior.width(), 32);
  EXPECT_EQ(interior.height(), 24);  // top edge clipped
  const Rect mid = patch_footprint({1, 1}, full);
  EXPECT_EQ(mid.height(), 32);
  EXPECT_EQ(mid.width(), 32);
  const Rect corner = patch_footprint({0, 0}, full);
  EXPECT_EQ(corner.height(), 24);
  EXPECT_EQ(corner.width(), 24);
  EXPECT_EQ(patch_footprint_unclipped({0, 0}, full), (Rect{-8, -8, 24, 24}));
}

TEST(Geometry, PartitionSinglePatch) {
  const GridSpec s{4, 4, 4, 4, 0};
  Tensor<float> img({3, 4, 4});
  for (std::size_t i = 0; i < img.numel(); ++i) img[i] = static_cast<float>(i);
  const Tensor<float> tok = partition_to_tokens(img, s);
  ASSERT_EQ(tok.shape(), (Shape{1, 48}));
  EXPECT_EQ(tok.vec(), img.vec());
}

TEST(Geometry, PartitionRowMajorOrder) {
  const GridSpec s{4, 4, 2, 2, 0};
  Tensor<double> img({3, 4, 4});
  const double vals[2][2] = {{1, 2}, {3, 4}};  // a b / c d
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x) img.at(c, y, x) = vals[y / 2][x / 2];
  const Tensor<double> tok = partition_to_tokens(img, s);
  ASSERT_EQ(tok.shape(), (Shape{4, 12}));
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t k = 0; k < 12; ++k) EXPECT_EQ(tok.at(t, k), static_cast<double>(t + 1));
}

TEST(Geometry, PartitionRoundTripAndGatherIndex) {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> n;
  for (const GridSpec& s : valid_specs()) {
    Tensor<float> img({3, s.H, s.W});
    for (auto& v : img.data()) v = n(rng);
    const Tensor<float> tok = partition_to_tokens(img, s);
    EXPECT_EQ(tokens_to_image(tok, s), img);
    const auto idx = partition_gather_index(s);
    ASSERT_EQ(idx.size(), tok.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) EXPECT_EQ(tok[i], img[static_cast<std::size_t>(idx[i])]);
  }
}

TEST(Geometry, PartitionDimensionMismatch) {
  EXPECT_THROW(partition_to_tokens(Tensor<float>({3, 8, 8}), GridSpec{16, 16, 8, 8, 0}), DimensionError);
}
