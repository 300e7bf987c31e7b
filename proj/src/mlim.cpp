#include "mcinet/mlim.hpp"

namespace mcinet {

template <typename Scalar>
CorrelationVolume<Scalar> multihead_correlation(const Var<Scalar>& fs, const Var<Scalar>& fq,
                                                const Linear<Scalar>& projector, Index heads) {
  require_rank(fs.shape(), 4, "multihead_correlation support");
  require_rank(fq.shape(), 4, "multihead_correlation query");
  if (fs.dim(0) != 1 || fq.dim(0) != 1) throw ShapeError("multihead_correlation: batch size must be 1");
  if (fs.dim(1) != fq.dim(1)) {
    throw ShapeError("multihead_correlation: channel mismatch (" + std::to_string(fs.dim(1)) +
                     " vs " + std::to_string(fq.dim(1)) + ")");
  }
  const Index width = projector.out_channels();
  if (heads < 1 || width % heads != 0) {
    throw ShapeError("multihead_correlation: projector width not divisible by head count");
  }
  const Index head_dim = width / heads;
  const Extent es = extent_of(fs.value()), eq = extent_of(fq.value());
  const Index s = es.height * es.width, q = eq.height * eq.width;

  const auto ps = reshape(projector(fs), Shape{heads, head_dim, s});
  const auto pq = reshape(projector(fq), Shape{heads, head_dim, q});
  const auto corr = matmul(pq, ps, /*trans_a=*/true);  // [heads, q, s]
  return {reshape(permute(corr, {1, 0, 2}), Shape{q, heads, es.height, es.width}), eq, es};
}

template <typename Scalar>
Var<Scalar> adjacent_rescale(const Var<Scalar>& fq_shallow, const Var<Scalar>& weight,
                             const Var<Scalar>& bias, Extent target) {
  require_rank(fq_shallow.shape(), 4, "adjacent_rescale input");
  const Extent in = extent_of(fq_shallow.value());
  if (in.height != 2 * target.height || in.width != 2 * target.width) {
    throw ShapeError("adjacent_rescale: input " + std::to_string(in.height) + "x" +
                     std::to_string(in.width) + " is not twice the target " +
                     std::to_string(target.height) + "x" + std::to_string(target.width));
  }
  return conv2d(fq_shallow, weight, bias, Conv2dSpec{2, weight.dim(2) / 2, 1});
}

template <typename Scalar>
CorrelationVolume<Scalar> refine_correlation(const CorrelationVolume<Scalar>& stacked,
                                             const std::vector<RefinerStage<Scalar>>& stages) {
  if (stages.empty()) return stacked;
  if (stacked.channels() != stages.front().support_weight.dim(1)) {
    throw ConfigError("refine_correlation: volume has " + std::to_string(stacked.channels()) +
                      " channels but the refiner expects " +
                      std::to_string(stages.front().support_weight.dim(1)));
  }
  const Index q = stacked.query_positions(), s = stacked.support_positions();
  Var<Scalar> x = stacked.data;
  for (std::size_t j = 0; j < stages.size(); ++j) {
    const auto& st = stages[j];
    x = conv2d(x, st.support_weight, st.support_bias, same_padding(st.support_weight.dim(2)));
    const Index mid = x.dim(1);
    if (st.query_weight.dim(1) != mid) throw ConfigError("refine_correlation: stage widths disagree");
    x = reshape(permute(reshape(x, Shape{q, mid, s}), {2, 1, 0}),
                Shape{s, mid, stacked.query.height, stacked.query.width});
    x = conv2d(x, st.query_weight, st.query_bias, same_padding(st.query_weight.dim(2)));
    const Index out = x.dim(1);
    x = reshape(permute(reshape(x, Shape{s, out, q}), {2, 1, 0}),
                Shape{q, out, stacked.support.height, stacked.support.width});
    if (j + 1 < stages.size()) x = relu(x);
  }
  return {x, stacked.query, stacked.support};
}

template <typename Scalar>
Var<Scalar> mask_aggregate(const CorrelationVolume<Scalar>& refined, const Tensor<Scalar>& mask,
                           Aggregate mode) {
  const Index q = refined.query_positions(), s = refined.support_positions();
  const Index c = refined.channels();
  if (mask.size() != s || mask.rank() != 4 || extent_of(mask) != refined.support) {
    throw ShapeError("mask_aggregate: mask " + to_string(mask.shape()) +
                     " does not match the support extent");
  }
  if (!mask.all_finite() || mask.data().minCoeff() < Scalar(0) || mask.data().maxCoeff() > Scalar(1)) {
    throw ValidationError("mask_aggregate: mask values must lie in [0, 1]");
  }
  const auto rows = reshape(refined.data, Shape{q * c, s});
  const auto weights = mode == Aggregate::softmax ? softmax_last(rows)
                                                  : scale(rows, Scalar(1) / static_cast<Scalar>(s));
  const auto evidence = matmul(weights, Var<Scalar>::constant(mask.reshaped(Shape{s, 1})));
  return reshape(permute(reshape(evidence, Shape{q, c}), {1, 0}),
                 Shape{1, c, refined.query.height, refined.query.width});
}

template <typename Scalar>
MergedSupport<Scalar> kshot_merge(const std::vector<CorrelationVolume<Scalar>>& volumes,
                                  const std::vector<Tensor<Scalar>>& masks) {
  if (volumes.empty()) throw ValidationError("kshot_merge: K must be >= 1");
  if (masks.size() != volumes.size()) throw ShapeError("kshot_merge: one mask per support shot required");
  const auto& first = volumes.front();
  std::vector<Var<Scalar>> parts;
  std::vector<Var<Scalar>> mask_parts;
  for (std::size_t k = 0; k < volumes.size(); ++k) {
    const auto& v = volumes[k];
    if (v.query != first.query || v.support != first.support || v.channels() != first.channels()) {
      throw ShapeError("kshot_merge: support shots produced differently shaped volumes");
    }
    if (masks[k].shape() != Shape{1, 1, v.support.height, v.support.width}) {
      throw ShapeError("kshot_merge: mask " + to_string(masks[k].shape()) + " does not match its volume");
    }
    parts.push_back(v.data);
    mask_parts.push_back(Var<Scalar>::constant(masks[k]));
  }
  const Index shots = static_cast<Index>(volumes.size());
  return {{concat(parts, 2), first.query, {first.support.height * shots, first.support.width}},
          concat(mask_parts, 2).value()};
}

template <typename Scalar>
Tensor<Scalar> downsample_mask(const Tensor<Scalar>& masks, Extent extent) {
  require_rank(masks.shape(), 4, "downsample_mask");
  return resize_area(masks, extent);
}

Mlim::Mlim(ModelConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

template <typename Scalar>
void Mlim::register_parameters(ParameterStore<Scalar>& store, std::uint64_t seed) const {
  Rng rng(derive_seed({seed, 3}));
  const auto& m = cfg_.mlim;
  const Index last = cfg_.backbone.num_scales;
  for (Index i = last - 1; i <= last; ++i) {
    const std::string p = scale_prefix(i);
    const Index c = cfg_.backbone.channels(i);
    const Index width = m.heads * m.projection_width(c);
    for (Index l = 1; l <= cfg_.backbone.layers(i); ++l) {
      add_conv_params(store, rng, p + ".l" + std::to_string(l) + ".proj", c, width, 1);
    }
    if (m.adjacent) {
      add_conv_params(store, rng, p + ".adj.proj", c, width, 1);
      add_conv_params(store, rng, p + ".adj.rescale", cfg_.backbone.channels(i - 1), c, 3);
    }
    Index cin = m.heads * m.pairings(cfg_.backbone.layers(i));
    for (std::size_t j = 0; j < m.refine_widths.size(); ++j) {
      const std::string rp = p + ".refine." + std::to_string(j);
      const Index w = m.refine_widths[j];
      add_conv_params(store, rng, rp + ".support", cin, w, m.refine_kernel);
      add_conv_params(store, rng, rp + ".query", w, w, m.refine_kernel);
      cin = w;
    }
  }
}

template <typename Scalar>
CorrelationVolume<Scalar> Mlim::stacked_correlation(Binding<Scalar>& bind,
                                                    const FeaturePyramid<Scalar>& pyr_s,
                                                    const FeaturePyramid<Scalar>& pyr_q, Index shot,
                                                    Index scale) const {
  const std::string p = scale_prefix(scale);
  const auto& bs = pyr_s.scale(scale);
  const auto& bq = pyr_q.scale(scale);
  std::vector<Var<Scalar>> channels;
  CorrelationVolume<Scalar> vol;
  for (std::size_t l = 0; l < bs.layers.size(); ++l) {
    vol = multihead_correlation(slice_leading(bs.layers[l], shot), bq.layers[l],
                                bind_linear(bind, p + ".l" + std::to_string(l + 1) + ".proj"),
                                cfg_.mlim.heads);
    channels.push_back(vol.data);
  }
  if (cfg_.mlim.adjacent) {
    const auto fq_adj = adjacent_rescale(pyr_q.scale(scale - 1).last(), bind(p + ".adj.rescale.w"),
                                         bind(p + ".adj.rescale.b"), bq.extent);
    vol = multihead_correlation(slice_leading(bs.last(), shot), fq_adj,
                                bind_linear(bind, p + ".adj.proj"), cfg_.mlim.heads);
    channels.push_back(vol.data);
  }
  vol.data = concat(channels, 1);
  return vol;
}

template <typename Scalar>
std::vector<RefinerStage<Scalar>> Mlim::refiner(Binding<Scalar>& bind, Index scale) const {
  std::vector<RefinerStage<Scalar>> stages;
  for (std::size_t j = 0; j < cfg_.mlim.refine_widths.size(); ++j) {
    const std::string rp = scale_prefix(scale) + ".refine." + std::to_string(j);
    stages.push_back({bind(rp + ".support.w"), bind(rp + ".support.b"), bind(rp + ".query.w"),
                      bind(rp + ".query.b")});
  }
  return stages;
}

template <typename Scalar>
Var<Scalar> Mlim::evidence_at(Binding<Scalar>& bind, const FeaturePyramid<Scalar>& pyr_s,
                              const FeaturePyramid<Scalar>& pyr_q, const Tensor<Scalar>& masks,
                              Index scale) const {
  const Index shots = pyr_s.scale(scale).last().dim(0);
  if (masks.rank() != 4 || masks.dim(0) != shots || masks.dim(1) != 1) {
    throw ShapeError("mlim: expected one [1, H, W] mask per support shot, got " + to_string(masks.shape()));
  }
  const Extent extent = pyr_s.scale(scale).extent;
  const Tensor<Scalar> small = downsample_mask(masks, extent);
  const auto stages = refiner(bind, scale);
  std::vector<CorrelationVolume<Scalar>> volumes;
  std::vector<Tensor<Scalar>> shot_masks;
  const Index plane = extent.height * extent.width;
  for (Index k = 0; k < shots; ++k) {
    volumes.push_back(refine_correlation(stacked_correlation(bind, pyr_s, pyr_q, k, scale), stages));
    shot_masks.emplace_back(Shape{1, 1, extent.height, extent.width},
                            typename Tensor<Scalar>::Vector(small.data().segment(k * plane, plane)));
  }
  const auto merged = kshot_merge(volumes, shot_masks);
  return mask_aggregate(merged.volume, merged.mask, cfg_.mlim.aggregate);
}

template <typename Scalar>
Evidence<Scalar> Mlim::forward(Binding<Scalar>& bind, const FeaturePyramid<Scalar>& pyr_s,
                               const FeaturePyramid<Scalar>& pyr_q, const Tensor<Scalar>& masks) const {
  const Index last = pyr_q.num_scales();
  return {evidence_at(bind, pyr_s, pyr_q, masks, last - 1), evidence_at(bind, pyr_s, pyr_q, masks, last)};
}

#define MCINET_INSTANTIATE_MLIM(S)                                                                  \
  template CorrelationVolume<S> multihead_correlation<S>(const Var<S>&, const Var<S>&,              \
                                                         const Linear<S>&, Index);                  \
  template Var<S> adjacent_rescale<S>(const Var<S>&, const Var<S>&, const Var<S>&, Extent);         \
  template CorrelationVolume<S> refine_correlation<S>(const CorrelationVolume<S>&,                  \
                                                      const std::vector<RefinerStage<S>>&);         \
  template Var<S> mask_aggregate<S>(const CorrelationVolume<S>&, const Tensor<S>&, Aggregate);      \
  template MergedSupport<S> kshot_merge<S>(const std::vector<CorrelationVolume<S>>&,                \
                                           const std::vector<Tensor<S>>&);                          \
  template Tensor<S> downsample_mask<S>(const Tensor<S>&, Extent);                                  \
  template void Mlim::register_parameters<S>(ParameterStore<S>&, std::uint64_t) const;              \
  template CorrelationVolume<S> Mlim::stacked_correlation<S>(                                       \
      Binding<S>&, const FeaturePyramid<S>&, const FeaturePyramid<S>&, Index, Index) const;         \
  template std::vector<RefinerStage<S>> Mlim::refiner<S>(Binding<S>&, Index) const;                 \
  template Var<S> Mlim::evidence_at<S>(Binding<S>&, const FeaturePyramid<S>&,                       \
                                       const FeaturePyramid<S>&, const Tensor<S>&, Index) const;    \
  template Evidence<S> Mlim::forward<S>(Binding<S>&, const FeaturePyramid<S>&,                      \
                                        const FeaturePyramid<S>&, const Tensor<S>&) const;

MCINET_INSTANTIATE_MLIM(float)
MCINET_INSTANTIATE_MLIM(double)

}  // namespace mcinet
