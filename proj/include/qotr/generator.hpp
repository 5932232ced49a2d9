#pragma once

#include <cstdint>
#include <random>

#include "qotr/decoder.hpp"
#include "qotr/encoder.hpp"
#include "qotr/geometry.hpp"
#include "qotr/psm.hpp"
#include "qotr/qem.hpp"

namespace qotr {

struct ModelConfig {
  std::size_t dim = 64;
  std::size_t encoder_layers = 4;
  std::size_t decoder_layers = 4;
  std::size_t n_heads = 4;
  std::size_t qem_blocks = 2;
  NoiseSpec noise;
};

// Encoder + query expansion + decoder + patch smoothing head.
template <typename T>
struct GeneratorParams {
  EncoderParams<T> enc;
  QEMParams<T> qem;
  DecoderParams<T> dec;
  PSMParams<T> psm;

  static GeneratorParams init(const ModelConfig& cfg, const GridSpec& spec, std::uint64_t seed);

  void visit(const std::string& prefix, const ParamVisitor<T>& f);
  void visit(const std::string& prefix, const ConstParamVisitor<T>& f) const;
};

template <typename T>
struct GeneratorOutput {
  Var<T> h_enc;     // [L, D]
  Var<T> queries;   // q_expand [R, D]
  Var<T> decoded;   // q_M [R, D]
  Var<T> patches;   // [R, 3 (P+2o)^2]
  Var<T> canvas;    // [3, H+2M, W+2M]
};

// Full forward pass for one [3, H, W] input. rng drives the QEM noise.
template <typename T>
GeneratorOutput<T> generate(Graph<T>& g, const Tensor<T>& input, const GeneratorParams<T>& p,
                            const GridSpec& spec, const OverlapMap& omap, const NoiseSpec& noise,
                            std::mt19937_64& rng);

}  // namespace qotr
