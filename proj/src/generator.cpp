#include "qotr/generator.hpp"

namespace qotr {

template <typename T>
GeneratorParams<T> GeneratorParams<T>::init(const ModelConfig& cfg, const GridSpec& spec,
                                            std::uint64_t seed) {
  const TokenCounts n = token_counts(spec);
  std::mt19937_64 rng(seed);
  GeneratorParams p;
  p.enc = EncoderParams<T>::init(spec.token_width(), n.L, cfg.dim, cfg.encoder_layers, cfg.n_heads, rng);
  p.qem = QEMParams<T>::init(cfg.dim, cfg.qem_blocks, cfg.noise.noise_dim, rng);
  p.dec = DecoderParams<T>::init(n.R, cfg.dim, cfg.decoder_layers, cfg.n_heads, rng);
  p.psm = PSMParams<T>::init(cfg.dim, spec, rng);
  return p;
}

template <typename T>
void GeneratorParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
  enc.visit(prefix + "enc.", f);
  qem.visit(prefix + "qem.", f);
  dec.visit(prefix + "dec.", f);
  psm.visit(prefix + "psm.", f);
}

template <typename T>
void GeneratorParams<T>::visit(const std::string& prefix, const ConstParamVisitor<T>& f) const {
  enc.visit(prefix + "enc.", f);
  qem.visit(prefix + "qem.", f);
  dec.visit(prefix + "dec.", f);
  psm.visit(prefix + "psm.", f);
}

template <typename T>
GeneratorOutput<T> generate(Graph<T>& g, const Tensor<T>& input, const GeneratorParams<T>& p,
                            const GridSpec& spec, const OverlapMap& omap, const NoiseSpec& noise,
                            std::mt19937_64& rng) {
  GeneratorOutput<T> out;
  Var<T> x = g.constant(input);
  Var<T> tokens = g.constant(partition_to_tokens(input, spec));
  out.h_enc = encode(tokens, p.enc);
  out.queries = expand_queries(out.h_enc, spec, p.qem, noise, rng);
  out.decoded = decode(out.queries, out.h_enc, p.dec);
  out.patches = project_patches(out.decoded, p.psm);
  out.canvas = assemble(x, out.patches, spec, omap);
  return out;
}

template struct GeneratorParams<float>;
template struct GeneratorParams<double>;
template GeneratorOutput<float> generate(Graph<float>&, const Tensor<float>&, const GeneratorParams<float>&,
                                         const GridSpec&, const OverlapMap&, const NoiseSpec&, std::mt19937_64&);
template GeneratorOutput<double> generate(Graph<double>&, const Tensor<double>&, const GeneratorParams<double>&,
                                          const GridSpec&, const OverlapMap&, const NoiseSpec&, std::mt19937_64&);

}  // namespace qotr
