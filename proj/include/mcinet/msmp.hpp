#ifndef MCINET_MSMP_HPP
#define MCINET_MSMP_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "mcinet/backbone.hpp"
#include "mcinet/layers.hpp"
#include "mcinet/mlim.hpp"

namespace mcinet {

template <typename Scalar>
struct MaskLogits {
  Var<Scalar> small;  // [1, 1, H/4, W/4]
  Var<Scalar> large;  // [1, 1, H, W]
};

/// Per-scale skip features; index 0 is pyramid scale 1. Support entries
/// are the last layer of each scale multiplied by the area-downsampled
/// support mask, averaged over shots.
template <typename Scalar>
struct SkipBundle {
  std::vector<Var<Scalar>> query;
  std::vector<Var<Scalar>> support;
};

template <typename Scalar>
struct SmallBranch {
  Var<Scalar> features;  // pre-classifier, [1, width, H/4, W/4]
  Var<Scalar> logits;    // [1, 1, H/4, W/4]
};

/// masks: [K, 1, H, W] at input resolution.
template <typename Scalar>
SkipBundle<Scalar> build_skips(const FeaturePyramid<Scalar>& pyr_s, const FeaturePyramid<Scalar>& pyr_q,
                               const Tensor<Scalar>& masks,
                               SkipSupport mode = SkipSupport::foreground);

/// Dilation actually used for `rate` on a feature map whose smaller side is
/// `size`: min(rate, floor((size - 1) / 2)), at least 1.
Index clamp_aspp_rate(Index rate, Index size);

/// Parallel branches (1x1 conv for rate 1, dilated 3x3 otherwise, each
/// followed by ReLU) plus a global-average-pool branch, concatenated and
/// projected back to the input width. Parameters live under `prefix`.
template <typename Scalar>
Var<Scalar> aspp(Binding<Scalar>& bind, const std::string& prefix, const Var<Scalar>& feat,
                 const std::vector<Index>& rates);

template <typename Scalar>
void add_aspp_params(ParameterStore<Scalar>& store, Rng& rng, const std::string& prefix, Index width,
                     const std::vector<Index>& rates);

/// Two-branch mask decoder: a 1/4-scale branch and an input-scale branch
/// with bidirectional fusion.
class Msmp {
 public:
  explicit Msmp(ModelConfig cfg);

  const MsmpConfig& config() const { return cfg_.msmp; }

  template <typename Scalar>
  void register_parameters(ParameterStore<Scalar>& store, std::uint64_t seed) const;

  /// ev_small at the last scale, ev_large at the penultimate scale.
  template <typename Scalar>
  SmallBranch<Scalar> decode_small(Binding<Scalar>& bind, const Var<Scalar>& ev_small,
                                   const Var<Scalar>& ev_large, const SkipBundle<Scalar>& skips) const;

  template <typename Scalar>
  Var<Scalar> decode_large(Binding<Scalar>& bind, const Var<Scalar>& ev_large,
                           const SmallBranch<Scalar>& small, const SkipBundle<Scalar>& skips) const;

  template <typename Scalar>
  MaskLogits<Scalar> forward(Binding<Scalar>& bind, const Evidence<Scalar>& evidence,
                             const SkipBundle<Scalar>& skips) const;

  Index small_input_channels() const;
  Index large_input_channels() const;

 private:
  ModelConfig cfg_;
};

}  // namespace mcinet

#endif  // MCINET_MSMP_HPP
