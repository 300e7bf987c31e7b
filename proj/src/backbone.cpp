#include "mcinet/backbone.hpp"

#include "mcinet/layers.hpp"

namespace mcinet {

namespace {

std::string layer_name(Index scale, Index layer) {
  return "backbone.s" + std::to_string(scale) + ".l" + std::to_string(layer);
}

}  // namespace

template <typename Scalar>
void FeaturePyramid<Scalar>::check_invariants() const {
  for (std::size_t i = 0; i < scales.size(); ++i) {
    const auto& s = scales[i];
    if (s.layers.empty()) throw ShapeError("pyramid scale without layers");
    if (i > 0) {
      const Extent prev = scales[i - 1].extent;
      if (s.extent.height * 2 != prev.height || s.extent.width * 2 != prev.width) {
        throw ShapeError("pyramid scales must halve in size");
      }
    }
    for (const auto& layer : s.layers) {
      const auto& v = layer.value();
      if (v.rank() != 4 || v.dim(1) != s.channels || extent_of(v) != s.extent) {
        throw ShapeError("pyramid layer " + to_string(v.shape()) + " inconsistent with its scale");
      }
      if (!v.all_finite()) throw NumericError("non-finite pyramid features");
    }
  }
}

Backbone::Backbone(BackboneConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

template <typename Scalar>
void Backbone::register_parameters(ParameterStore<Scalar>& store, std::uint64_t seed) const {
  Rng rng(derive_seed({seed, 1}));
  const Index c1 = cfg_.channels(1);
  add_conv_params(store, rng, "backbone.stem.0", 3, c1, 3);
  add_conv_params(store, rng, "backbone.stem.1", c1, c1, 3);
  for (Index i = 1; i <= cfg_.num_scales; ++i) {
    for (Index l = 1; l <= cfg_.layers(i); ++l) {
      const Index cin = (l == 1 && i > 1) ? cfg_.channels(i - 1) : cfg_.channels(i);
      add_conv_params(store, rng, layer_name(i, l), cin, cfg_.channels(i), 3);
    }
  }
}

template <typename Scalar>
FeaturePyramid<Scalar> Backbone::extract(Binding<Scalar>& bind, const Var<Scalar>& images) const {
  const Conv2dSpec down{2, 1, 1};
  const Conv2dSpec same{1, 1, 1};
  Var<Scalar> x = relu(conv(bind, "backbone.stem.0", images, down));
  x = relu(conv(bind, "backbone.stem.1", x, down));

  FeaturePyramid<Scalar> pyr;
  for (Index i = 1; i <= cfg_.num_scales; ++i) {
    ScaleBlock<Scalar> block;
    block.scale = i;
    block.channels = cfg_.channels(i);
    for (Index l = 1; l <= cfg_.layers(i); ++l) {
      x = relu(conv(bind, layer_name(i, l), x, (l == 1 && i > 1) ? down : same));
      block.layers.push_back(x);
    }
    block.extent = extent_of(x.value());
    pyr.scales.push_back(std::move(block));
  }
  pyr.check_invariants();
  return pyr;
}

template <typename Scalar>
void check_images(const Tensor<Scalar>& images, Index size) {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != size || images.dim(3) != size) {
    throw ShapeError("expected images [N, 3, " + std::to_string(size) + ", " + std::to_string(size) +
                     "], got " + to_string(images.shape()));
  }
  if (!images.all_finite() || images.data().minCoeff() < Scalar(0) ||
      images.data().maxCoeff() > Scalar(1)) {
    throw ValidationError("image values must be finite and within [0, 1]");
  }
}

template <typename Scalar>
FeaturePyramid<Scalar> extract_pyramid(const Backbone& backbone, Binding<Scalar>& bind,
                                       const Tensor<Scalar>& images) {
  check_images(images, backbone.config().input_size);
  return backbone.extract(bind, Var<Scalar>::constant(images));
}

#define MCINET_INSTANTIATE_BACKBONE(S)                                                           \
  template struct FeaturePyramid<S>;                                                             \
  template void Backbone::register_parameters<S>(ParameterStore<S>&, std::uint64_t) const;       \
  template FeaturePyramid<S> Backbone::extract<S>(Binding<S>&, const Var<S>&) const;             \
  template FeaturePyramid<S> extract_pyramid<S>(const Backbone&, Binding<S>&, const Tensor<S>&); \
  template void check_images<S>(const Tensor<S>&, Index);

MCINET_INSTANTIATE_BACKBONE(float)
MCINET_INSTANTIATE_BACKBONE(double)

}  // namespace mcinet
