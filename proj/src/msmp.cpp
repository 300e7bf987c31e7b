#include "mcinet/msmp.hpp"

#include <algorithm>

namespace mcinet {

template <typename Scalar>
SkipBundle<Scalar> build_skips(const FeaturePyramid<Scalar>& pyr_s, const FeaturePyramid<Scalar>& pyr_q,
                               const Tensor<Scalar>& masks, SkipSupport mode) {
  if (pyr_s.num_scales() != pyr_q.num_scales()) throw ShapeError("build_skips: pyramid depth mismatch");
  SkipBundle<Scalar> bundle;
  for (Index i = 1; i <= pyr_q.num_scales(); ++i) {
    const auto& fs = pyr_s.scale(i).last();
    if (masks.rank() != 4 || masks.dim(0) != fs.dim(0) || masks.dim(1) != 1) {
      throw ShapeError("build_skips: expected one mask per support shot, got " + to_string(masks.shape()));
    }
    bundle.query.push_back(pyr_q.scale(i).last());
    const Var<Scalar> masked =
        mode == SkipSupport::foreground ? mul_mask(fs, downsample_mask(masks, pyr_s.scale(i).extent)) : fs;
    bundle.support.push_back(fs.dim(0) == 1 ? masked : mean_leading(masked));
  }
  return bundle;
}

Index clamp_aspp_rate(Index rate, Index size) {
  return std::max<Index>(1, std::min(rate, (size - 1) / 2));
}

template <typename Scalar>
void add_aspp_params(ParameterStore<Scalar>& store, Rng& rng, const std::string& prefix, Index width,
                     const std::vector<Index>& rates) {
  for (std::size_t j = 0; j < rates.size(); ++j) {
    add_conv_params(store, rng, prefix + ".b" + std::to_string(j), width, width, rates[j] == 1 ? 1 : 3);
  }
  add_conv_params(store, rng, prefix + ".pool", width, width, 1);
  add_conv_params(store, rng, prefix + ".proj", width * static_cast<Index>(rates.size() + 1), width, 1);
}

template <typename Scalar>
Var<Scalar> aspp(Binding<Scalar>& bind, const std::string& prefix, const Var<Scalar>& feat,
                 const std::vector<Index>& rates) {
  require_rank(feat.shape(), 4, "aspp input");
  const Extent e = extent_of(feat.value());
  const Index side = std::min(e.height, e.width);
  std::vector<Var<Scalar>> branches;
  for (std::size_t j = 0; j < rates.size(); ++j) {
    const std::string name = prefix + ".b" + std::to_string(j);
    const Index k = kernel_of(bind.store(), name);
    const Index rate = k == 1 ? 1 : clamp_aspp_rate(rates[j], side);
    branches.push_back(relu(conv(bind, name, feat, same_padding(k, rate))));
  }
  const auto pooled = relu(conv(bind, prefix + ".pool", global_avg_pool(feat), {}));
  branches.push_back(resize_bilinear(pooled, e));
  return relu(conv(bind, prefix + ".proj", concat(branches, 1), {}));
}

Msmp::Msmp(ModelConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

Index Msmp::small_input_channels() const {
  const Index last = cfg_.backbone.num_scales;
  return 2 * cfg_.mlim.evidence_channels() + 2 * cfg_.backbone.channels(last);
}

Index Msmp::large_input_channels() const {
  Index c = cfg_.mlim.evidence_channels();
  if (cfg_.msmp.feedback) c += cfg_.msmp.width + 1;
  for (Index i = 1; i < cfg_.backbone.num_scales; ++i) c += 2 * cfg_.backbone.channels(i);
  return c;
}

template <typename Scalar>
void Msmp::register_parameters(ParameterStore<Scalar>& store, std::uint64_t seed) const {
  Rng rng(derive_seed({seed, 4}));
  const Index w = cfg_.msmp.width;
  add_conv_block_params(store, rng, "msmp.small.block", small_input_channels(), w);
  add_conv_params(store, rng, "msmp.small.head.0", w, w, 3);
  add_conv_params(store, rng, "msmp.small.head.1", w, 1, 1);
  add_conv_block_params(store, rng, "msmp.large.block_in", large_input_channels(), w);
  add_aspp_params(store, rng, "msmp.large.aspp", w, cfg_.msmp.aspp_rates);
  add_conv_block_params(store, rng, "msmp.large.block_out", w, w);
  add_conv_params(store, rng, "msmp.large.head", w, 1, 1);
}

template <typename Scalar>
SmallBranch<Scalar> Msmp::decode_small(Binding<Scalar>& bind, const Var<Scalar>& ev_small,
                                       const Var<Scalar>& ev_large,
                                       const SkipBundle<Scalar>& skips) const {
  const Extent small_extent = extent_of(ev_small.value());
  const Extent quarter = extent_of(skips.query.front().value());
  const auto x = concat<Scalar>({ev_small, resize_area(ev_large, small_extent), skips.query.back(),
                                 skips.support.back()},
                                1);
  const auto features = resize_bilinear(relu(conv_block(bind, "msmp.small.block", x)), quarter);
  const auto hidden = relu(conv(bind, "msmp.small.head.0", features, same_padding(3)));
  return {features, conv(bind, "msmp.small.head.1", hidden, {})};
}

template <typename Scalar>
Var<Scalar> Msmp::decode_large(Binding<Scalar>& bind, const Var<Scalar>& ev_large,
                               const SmallBranch<Scalar>& small, const SkipBundle<Scalar>& skips) const {
  const Extent quarter = extent_of(skips.query.front().value());
  const Extent full{quarter.height * kStemStride, quarter.width * kStemStride};
  const Extent half{quarter.height * 2, quarter.width * 2};
  std::vector<Var<Scalar>> parts{resize_bilinear(ev_large, quarter)};
  if (cfg_.msmp.feedback) {
    parts.push_back(small.features);
    parts.push_back(small.logits);
  }
  for (std::size_t i = 0; i + 1 < skips.query.size(); ++i) {
    parts.push_back(resize_bilinear(skips.query[i], quarter));
    parts.push_back(resize_bilinear(skips.support[i], quarter));
  }
  auto x = relu(conv_block(bind, "msmp.large.block_in", concat(parts, 1)));
  x = aspp(bind, "msmp.large.aspp", resize_bilinear(x, half), cfg_.msmp.aspp_rates);
  x = relu(conv_block(bind, "msmp.large.block_out", resize_bilinear(x, full)));
  return conv(bind, "msmp.large.head", x, {});
}

template <typename Scalar>
MaskLogits<Scalar> Msmp::forward(Binding<Scalar>& bind, const Evidence<Scalar>& evidence,
                                 const SkipBundle<Scalar>& skips) const {
  const auto small = decode_small(bind, evidence.last, evidence.penultimate, skips);
  return {small.logits, decode_large(bind, evidence.penultimate, small, skips)};
}

#define MCINET_INSTANTIATE_MSMP(S)                                                                  \
  template SkipBundle<S> build_skips<S>(const FeaturePyramid<S>&, const FeaturePyramid<S>&,         \
                                        const Tensor<S>&, SkipSupport);                             \
  template Var<S> aspp<S>(Binding<S>&, const std::string&, const Var<S>&, const std::vector<Index>&); \
  template void add_aspp_params<S>(ParameterStore<S>&, Rng&, const std::string&, Index,             \
                                   const std::vector<Index>&);                                      \
  template void Msmp::register_parameters<S>(ParameterStore<S>&, std::uint64_t) const;              \
  template SmallBranch<S> Msmp::decode_small<S>(Binding<S>&, const Var<S>&, const Var<S>&,          \
                                                const SkipBundle<S>&) const;                        \
  template Var<S> Msmp::decode_large<S>(Binding<S>&, const Var<S>&, const SmallBranch<S>&,          \
                                        const SkipBundle<S>&) const;                                \
  template MaskLogits<S> Msmp::forward<S>(Binding<S>&, const Evidence<S>&, const SkipBundle<S>&) const;

MCINET_INSTANTIATE_MSMP(float)
MCINET_INSTANTIATE_MSMP(double)

}  // namespace mcinet
