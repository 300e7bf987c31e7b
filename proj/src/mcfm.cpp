#include "mcinet/mcfm.hpp"

#include <cmath>

namespace mcinet {

template <typename Scalar>
Var<Scalar> encode_low_level(Binding<Scalar>& bind, const std::string& prefix,
                             const Tensor<Scalar>& image, Extent target) {
  require_rank(image.shape(), 4, "encode_low_level image");
  const Extent in = extent_of(image);
  if (target.height < 1 || target.width < 1 || target.height > in.height || target.width > in.width) {
    throw ShapeError("encode_low_level: target " + std::to_string(target.height) + "x" +
                     std::to_string(target.width) + " exceeds the " + std::to_string(in.height) +
                     "x" + std::to_string(in.width) + " input (the raw image is never upsampled)");
  }
  const Var<Scalar> small = resize_bilinear(Var<Scalar>::constant(image), target);
  const Var<Scalar> hidden = relu(conv(bind, prefix + ".0", small, same_padding(3)));
  return conv(bind, prefix + ".1", hidden, same_padding(3));
}

template <typename Scalar>
AttentionResult<Scalar> cross_attention(const Var<Scalar>& qmap, const Var<Scalar>& kv,
                                        const Linear<Scalar>& proj_q, const Linear<Scalar>& proj_k,
                                        const Linear<Scalar>& proj_v, Index d) {
  require_rank(qmap.shape(), 4, "cross_attention query");
  require_rank(kv.shape(), 4, "cross_attention key/value");
  if (qmap.dim(0) != 1 || kv.dim(0) != 1) throw ShapeError("cross_attention: batch size must be 1");
  if (extent_of(qmap.value()) != extent_of(kv.value())) {
    throw ShapeError("cross_attention: query " + to_string(qmap.shape()) + " and key/value " +
                     to_string(kv.shape()) + " differ in spatial size");
  }
  if (proj_q.out_channels() != d || proj_k.out_channels() != d) {
    throw ShapeError("cross_attention: query/key projections must map to d channels");
  }
  if (proj_v.out_channels() != qmap.dim(1)) {
    throw ShapeError("cross_attention: value projection must map to the query channel count");
  }
  const Index c1 = qmap.dim(1);
  const Index tokens = qmap.dim(2) * qmap.dim(3);

  const auto q = reshape(proj_q(qmap), Shape{d, tokens});
  const auto k = reshape(proj_k(kv), Shape{d, tokens});
  const auto v = reshape(proj_v(kv), Shape{c1, tokens});
  const auto scores = scale(matmul(q, k, /*trans_a=*/true), Scalar(1) / std::sqrt(static_cast<Scalar>(d)));
  const auto attention = softmax_last(scores);          // [tokens(query), tokens(key)]
  const auto mixed = matmul(v, attention, false, true);  // [c1, tokens]
  return {add(qmap, reshape(mixed, qmap.shape())), attention};
}

Mcfm::Mcfm(ModelConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

Index Mcfm::source_channels() const {
  switch (cfg_.mcfm.low_level_source) {
    case LowLevelSource::backbone_block1: return cfg_.backbone.channels(1);
    case LowLevelSource::backbone_block2: return cfg_.backbone.channels(2);
    default: return cfg_.mcfm.low_level_channels;
  }
}

template <typename Scalar>
void Mcfm::register_parameters(ParameterStore<Scalar>& store, std::uint64_t seed) const {
  if (!cfg_.mcfm.active()) return;
  Rng rng(derive_seed({seed, 2}));
  const Index ll = source_channels();
  const Index last = cfg_.backbone.num_scales;
  for (Index i = last - 1; i <= last; ++i) {
    const std::string p = scale_prefix(i);
    if (cfg_.mcfm.low_level_source == LowLevelSource::branch) {
      add_conv_params(store, rng, p + ".enc.0", 3, ll, 3);
      add_conv_params(store, rng, p + ".enc.1", ll, ll, 3);
    }
    const Index c = cfg_.backbone.channels(i);
    for (Index l = 1; l <= cfg_.backbone.layers(i); ++l) {
      const std::string lp = p + ".l" + std::to_string(l);
      add_conv_params(store, rng, lp + ".q", c, cfg_.mcfm.d, 1);
      add_conv_params(store, rng, lp + ".k", ll, cfg_.mcfm.d, 1);
      add_conv_params(store, rng, lp + ".v", ll, c, 1);
    }
  }
}

template <typename Scalar>
Var<Scalar> Mcfm::low_level(Binding<Scalar>& bind, const FeaturePyramid<Scalar>& pyr_q,
                            const Tensor<Scalar>& image, Index scale) const {
  const Extent target = pyr_q.scale(scale).extent;
  switch (cfg_.mcfm.low_level_source) {
    case LowLevelSource::backbone_block1: return resize_bilinear(pyr_q.scale(1).last(), target);
    case LowLevelSource::backbone_block2: return resize_bilinear(pyr_q.scale(2).last(), target);
    case LowLevelSource::branch: return encode_low_level(bind, scale_prefix(scale) + ".enc", image, target);
    case LowLevelSource::none: break;
  }
  throw ConfigError("mcfm: no low-level source configured");
}

template <typename Scalar>
FeaturePyramid<Scalar> Mcfm::apply(Binding<Scalar>& bind, const FeaturePyramid<Scalar>& pyr_q,
                                   const Tensor<Scalar>& image) const {
  if (!cfg_.mcfm.active()) return pyr_q;
  FeaturePyramid<Scalar> out = pyr_q;
  const Index last = pyr_q.num_scales();
  for (Index i = last - 1; i <= last; ++i) {
    const Var<Scalar> kv = low_level(bind, pyr_q, image, i);
    auto& block = out.scale(i);
    for (std::size_t l = 0; l < block.layers.size(); ++l) {
      const std::string lp = scale_prefix(i) + ".l" + std::to_string(l + 1);
      block.layers[l] = cross_attention(block.layers[l], kv, bind_linear(bind, lp + ".q"),
                                        bind_linear(bind, lp + ".k"), bind_linear(bind, lp + ".v"),
                                        cfg_.mcfm.d)
                            .output;
    }
  }
  return out;
}

#define MCINET_INSTANTIATE_MCFM(S)                                                                  \
  template Var<S> encode_low_level<S>(Binding<S>&, const std::string&, const Tensor<S>&, Extent);   \
  template AttentionResult<S> cross_attention<S>(const Var<S>&, const Var<S>&, const Linear<S>&,    \
                                                 const Linear<S>&, const Linear<S>&, Index);        \
  template void Mcfm::register_parameters<S>(ParameterStore<S>&, std::uint64_t) const;              \
  template Var<S> Mcfm::low_level<S>(Binding<S>&, const FeaturePyramid<S>&, const Tensor<S>&,       \
                                     Index) const;                                                  \
  template FeaturePyramid<S> Mcfm::apply<S>(Binding<S>&, const FeaturePyramid<S>&, const Tensor<S>&) \
      const;

MCINET_INSTANTIATE_MCFM(float)
MCINET_INSTANTIATE_MCFM(double)

}  // namespace mcinet
