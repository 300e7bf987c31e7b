#ifndef MCINET_BACKBONE_HPP
#define MCINET_BACKBONE_HPP

#include <cstdint>
#include <vector>

#include "mcinet/autograd.hpp"
#include "mcinet/config.hpp"

namespace mcinet {

/// Feature maps of one pyramid scale; every layer is [N, channels, H_i, W_i].
template <typename Scalar>
struct ScaleBlock {
  Index scale = 0;  // 1-based
  Extent extent;
  Index channels = 0;
  std::vector<Var<Scalar>> layers;

  const Var<Scalar>& last() const { return layers.back(); }
};

template <typename Scalar>
struct FeaturePyramid {
  std::vector<ScaleBlock<Scalar>> scales;

  Index num_scales() const { return static_cast<Index>(scales.size()); }
  const ScaleBlock<Scalar>& scale(Index i) const { return scales.at(static_cast<std::size_t>(i - 1)); }
  ScaleBlock<Scalar>& scale(Index i) { return scales.at(static_cast<std::size_t>(i - 1)); }

  /// Halving between scales, shared shape within a scale, finite values.
  void check_invariants() const;
};

/// Trainable conv pyramid: a stride-4 stem (two stride-2 convs) followed by
/// one block per scale. The first layer of every scale after the first
/// halves the resolution.
class Backbone {
 public:
  explicit Backbone(BackboneConfig cfg);

  const BackboneConfig& config() const { return cfg_; }

  template <typename Scalar>
  void register_parameters(ParameterStore<Scalar>& store, std::uint64_t seed) const;

  template <typename Scalar>
  FeaturePyramid<Scalar> extract(Binding<Scalar>& bind, const Var<Scalar>& images) const;

 private:
  BackboneConfig cfg_;
};

/// Validates cfg and registers "backbone.*" parameters drawn from seed.
template <typename Scalar>
Backbone build_backbone(const BackboneConfig& cfg, ParameterStore<Scalar>& store, std::uint64_t seed) {
  Backbone b(cfg);
  b.register_parameters(store, seed);
  if (cfg.freeze) store.set_trainable("backbone.", false);
  return b;
}

/// images: [N, 3, input_size, input_size] with values in [0, 1].
template <typename Scalar>
FeaturePyramid<Scalar> extract_pyramid(const Backbone& backbone, Binding<Scalar>& bind,
                                       const Tensor<Scalar>& images);

/// Throws ShapeError / ValidationError unless images is [N, 3, size, size] in [0, 1].
template <typename Scalar>
void check_images(const Tensor<Scalar>& images, Index size);

}  // namespace mcinet

#endif  // MCINET_BACKBONE_HPP
