#ifndef MCINET_OBJECTIVE_HPP
#define MCINET_OBJECTIVE_HPP

#include <cstdint>
#include <map>
#include <vector>

#include "mcinet/msmp.hpp"

namespace mcinet {

/// Scalar values of the two-scale objective.
struct LossBreakdown {
  double total = 0;
  double large_bce = 0;
  double small_bce = 0;
  double lambda = 0;
};

template <typename Scalar>
struct Loss {
  Var<Scalar> total;
  Var<Scalar> large;
  Var<Scalar> small;
  Scalar lambda = 0;

  LossBreakdown breakdown() const {
    return {static_cast<double>(total.value().item()), static_cast<double>(large.value().item()),
            static_cast<double>(small.value().item()), static_cast<double>(lambda)};
  }
};

/// Mean over pixels of -[m log s(z) + (1 - m) log(1 - s(z))], evaluated as
/// max(z, 0) - z m + log1p(exp(-|z|)). target values must lie in [0, 1].
template <typename Scalar>
Var<Scalar> bce(const Var<Scalar>& logits, const Tensor<Scalar>& target);

/// total = BCE(large, M) + lambda * BCE(small, M_small), where M_small is the
/// area-averaged (soft) mask at the small-logit resolution. mask: [1, 1, H, W].
template <typename Scalar>
Loss<Scalar> total_loss(const MaskLogits<Scalar>& logits, const Tensor<Scalar>& mask, double lambda);

using Mask = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Foreground where sigmoid(z) >= 0.5, i.e. z >= 0. logits: [..., H, W].
Mask threshold_logits(const Tensor<float>& logits);

/// Intersection and union pixel counts.
struct IouCounts {
  std::int64_t intersection = 0;
  std::int64_t union_ = 0;

  /// 1 when both masks were empty, intersection / union otherwise.
  double iou() const {
    return union_ == 0 ? 1.0 : static_cast<double>(intersection) / static_cast<double>(union_);
  }
  IouCounts& operator+=(const IouCounts& o) {
    intersection += o.intersection;
    union_ += o.union_;
    return *this;
  }
};

IouCounts foreground_counts(const Mask& pred, const Mask& gt);
IouCounts background_counts(const Mask& pred, const Mask& gt);

struct EvalReport {
  std::map<int, double> per_class_iou;
  double miou = 0;
  double fb_iou = 0;
  std::int64_t episodes = 0;
};

/// Pools per-class foreground counts and global foreground/background counts
/// across episodes. Merging is associative and commutative.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(std::vector<int> class_ids);

  void add(int class_id, const Mask& pred, const Mask& gt);
  void merge(const MetricAccumulator& other);
  EvalReport report() const;
  std::int64_t episodes() const { return episodes_; }

 private:
  std::map<int, IouCounts> per_class_;
  std::map<int, bool> seen_;
  IouCounts foreground_;
  IouCounts background_;
  std::int64_t episodes_ = 0;
};

/// Mean over the classes that occur in `episode_classes` of the pooled
/// per-class IoU. Every episode class must belong to `fold_classes`.
double miou(const std::vector<Mask>& preds, const std::vector<Mask>& gts,
            const std::vector<int>& episode_classes, const std::vector<int>& fold_classes);

/// Mean of globally pooled foreground IoU and background IoU.
double fb_iou(const std::vector<Mask>& preds, const std::vector<Mask>& gts);

}  // namespace mcinet

#endif  // MCINET_OBJECTIVE_HPP
