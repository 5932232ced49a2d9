#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "qotr/image_io.hpp"

namespace qotr {

enum class SynthFamily { kGradient = 0, kStripes = 1, kValueNoise = 2, kShapes = 3 };

// Image i of a corpus uses family i % 4 and its own seed derived from
// (seed, i), so any prefix of a corpus is stable under growing count.
Image8 synth_image(std::size_t index, std::size_t size, std::uint64_t seed);
SynthFamily synth_family(std::size_t index);

std::vector<Image8> synth_corpus(std::size_t count, std::size_t size, std::uint64_t seed);

// Writes img_00000.png ... into dir (created if needed); returns the paths.
std::vector<std::filesystem::path> write_synth_corpus(const std::filesystem::path& dir, std::size_t count,
                                                      std::size_t size, std::uint64_t seed);

}  // namespace qotr
