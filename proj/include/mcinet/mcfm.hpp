#ifndef MCINET_MCFM_HPP
#define MCINET_MCFM_HPP

#include <cstdint>
#include <string>

#include "mcinet/backbone.hpp"
#include "mcinet/layers.hpp"

namespace mcinet {

template <typename Scalar>
struct AttentionResult {
  Var<Scalar> output;     // [1, C1, H, W]
  Var<Scalar> attention;  // [H*W, H*W], rows sum to one
};

/// Bilinear downsample of the image to `target`, then conv(3 -> C) + ReLU +
/// conv(C -> C), both 3x3 same-padded. `prefix` names the two convolutions
/// `prefix.0` and `prefix.1`.
template <typename Scalar>
Var<Scalar> encode_low_level(Binding<Scalar>& bind, const std::string& prefix,
                             const Tensor<Scalar>& image, Extent target);

/// Residual token cross-attention over spatial positions:
///   out = Q + softmax(proj_q(Q) proj_k(K)ᵀ / sqrt(d)) proj_v(K)
/// with qmap [1, C1, H, W] and kv [1, C2, H, W].
template <typename Scalar>
AttentionResult<Scalar> cross_attention(const Var<Scalar>& qmap, const Var<Scalar>& kv,
                                        const Linear<Scalar>& proj_q, const Linear<Scalar>& proj_k,
                                        const Linear<Scalar>& proj_v, Index d);

/// Multi-content fusion on the query pyramid. Only the last two scales are
/// modified; every layer of a fused scale attends to the same low-level map.
class Mcfm {
 public:
  explicit Mcfm(ModelConfig cfg);

  const McfmConfig& config() const { return cfg_.mcfm; }

  template <typename Scalar>
  void register_parameters(ParameterStore<Scalar>& store, std::uint64_t seed) const;

  /// Key/value map for `scale` according to the configured low-level source.
  template <typename Scalar>
  Var<Scalar> low_level(Binding<Scalar>& bind, const FeaturePyramid<Scalar>& pyr_q,
                        const Tensor<Scalar>& image, Index scale) const;

  template <typename Scalar>
  FeaturePyramid<Scalar> apply(Binding<Scalar>& bind, const FeaturePyramid<Scalar>& pyr_q,
                               const Tensor<Scalar>& image) const;

  Index source_channels() const;
  static std::string scale_prefix(Index scale) { return "mcfm.s" + std::to_string(scale); }

 private:
  ModelConfig cfg_;
};

template <typename Scalar>
FeaturePyramid<Scalar> apply_mcfm(const Mcfm& mcfm, Binding<Scalar>& bind,
                                  const FeaturePyramid<Scalar>& pyr_q, const Tensor<Scalar>& image) {
  return mcfm.apply(bind, pyr_q, image);
}

}  // namespace mcinet

#endif  // MCINET_MCFM_HPP
