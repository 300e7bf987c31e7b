#ifndef MCINET_MLIM_HPP
#define MCINET_MLIM_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "mcinet/backbone.hpp"
#include "mcinet/layers.hpp"

namespace mcinet {

/// Pixel-wise support/query similarities, stored query-position major:
/// data is [Hq*Wq, channels, Hs, Ws].
template <typename Scalar>
struct CorrelationVolume {
  Var<Scalar> data;
  Extent query;
  Extent support;

  Index channels() const { return data.dim(1); }
  Index query_positions() const { return query.height * query.width; }
  Index support_positions() const { return support.height * support.width; }
};

/// One query/support alternation of the separable 4D refiner.
template <typename Scalar>
struct RefinerStage {
  Var<Scalar> support_weight, support_bias;  // conv over (Hs, Ws)
  Var<Scalar> query_weight, query_bias;      // conv over (Hq, Wq)
};

/// corr_h[q, s] = <proj_h(fq)[q], proj_h(fs)[s]> for every head h; the
/// projector maps C -> heads * head_dim and head h owns output channels
/// [h*head_dim, (h+1)*head_dim). fs, fq: [1, C, H, W].
template <typename Scalar>
CorrelationVolume<Scalar> multihead_correlation(const Var<Scalar>& fs, const Var<Scalar>& fq,
                                                const Linear<Scalar>& projector, Index heads);

/// Stride-2 3x3 convolution bringing the shallower query layer to the
/// resolution (and channel count) of the deeper scale.
template <typename Scalar>
Var<Scalar> adjacent_rescale(const Var<Scalar>& fq_shallow, const Var<Scalar>& weight,
                             const Var<Scalar>& bias, Extent target);

/// Alternates convolutions over the support dims (each query position an
/// independent item) and over the query dims (each support position an item).
/// ReLU follows every alternation but the last.
template <typename Scalar>
CorrelationVolume<Scalar> refine_correlation(const CorrelationVolume<Scalar>& stacked,
                                             const std::vector<RefinerStage<Scalar>>& stages);

/// Evidence [1, C, Hq, Wq]: per channel and query position, the softmax over
/// support positions of the correlation row, dotted with the support mask.
/// With Aggregate::raw the row is used unnormalised and averaged instead.
/// mask: [1, 1, Hs, Ws] with values in [0, 1].
template <typename Scalar>
Var<Scalar> mask_aggregate(const CorrelationVolume<Scalar>& refined, const Tensor<Scalar>& mask,
                           Aggregate mode = Aggregate::softmax);

template <typename Scalar>
struct MergedSupport {
  CorrelationVolume<Scalar> volume;  // support extent (K*Hs, Ws)
  Tensor<Scalar> mask;               // [1, 1, K*Hs, Ws]
};

/// Concatenates the K shots along the support axis so aggregation
/// normalises over all K*Hs*Ws support positions.
template <typename Scalar>
MergedSupport<Scalar> kshot_merge(const std::vector<CorrelationVolume<Scalar>>& volumes,
                                  const std::vector<Tensor<Scalar>>& masks);

template <typename Scalar>
struct Evidence {
  Var<Scalar> penultimate;  // [1, C_ev, H_{S-1}, W_{S-1}]
  Var<Scalar> last;         // [1, C_ev, H_S, W_S]
};

class Mlim {
 public:
  explicit Mlim(ModelConfig cfg);

  const MlimConfig& config() const { return cfg_.mlim; }

  template <typename Scalar>
  void register_parameters(ParameterStore<Scalar>& store, std::uint64_t seed) const;

  /// Raw stacked correlations of one support shot at `scale`; channels are
  /// heads x (same-layer pairings, then the adjacent pairing).
  template <typename Scalar>
  CorrelationVolume<Scalar> stacked_correlation(Binding<Scalar>& bind,
                                                const FeaturePyramid<Scalar>& pyr_s,
                                                const FeaturePyramid<Scalar>& pyr_q, Index shot,
                                                Index scale) const;

  template <typename Scalar>
  std::vector<RefinerStage<Scalar>> refiner(Binding<Scalar>& bind, Index scale) const;

  /// masks: [K, 1, H, W] at input resolution.
  template <typename Scalar>
  Var<Scalar> evidence_at(Binding<Scalar>& bind, const FeaturePyramid<Scalar>& pyr_s,
                          const FeaturePyramid<Scalar>& pyr_q, const Tensor<Scalar>& masks,
                          Index scale) const;

  template <typename Scalar>
  Evidence<Scalar> forward(Binding<Scalar>& bind, const FeaturePyramid<Scalar>& pyr_s,
                           const FeaturePyramid<Scalar>& pyr_q, const Tensor<Scalar>& masks) const;

  static std::string scale_prefix(Index scale) { return "mlim.s" + std::to_string(scale); }

 private:
  ModelConfig cfg_;
};

template <typename Scalar>
Evidence<Scalar> mlim_forward(const Mlim& mlim, Binding<Scalar>& bind,
                              const FeaturePyramid<Scalar>& pyr_s,
                              const FeaturePyramid<Scalar>& pyr_q, const Tensor<Scalar>& masks) {
  return mlim.forward(bind, pyr_s, pyr_q, masks);
}

/// Area-averaged copy of masks [K, 1, H, W] at `extent`.
template <typename Scalar>
Tensor<Scalar> downsample_mask(const Tensor<Scalar>& masks, Extent extent);

}  // namespace mcinet

#endif  // MCINET_MLIM_HPP
