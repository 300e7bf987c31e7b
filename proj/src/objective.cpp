#include "mcinet/objective.hpp"

namespace mcinet {

template <typename Scalar>
Var<Scalar> bce(const Var<Scalar>& logits, const Tensor<Scalar>& target) {
  if (!target.all_finite() || target.data().minCoeff() < Scalar(0) || target.data().maxCoeff() > Scalar(1)) {
    throw ValidationError("bce: target values must lie in [0, 1]");
  }
  return bce_with_logits(logits, target);
}

template <typename Scalar>
Loss<Scalar> total_loss(const MaskLogits<Scalar>& logits, const Tensor<Scalar>& mask, double lambda) {
  if (!(lambda >= 0)) throw ConfigError("lambda must be >= 0");
  const Extent small_extent = extent_of(logits.small.value());
  const Tensor<Scalar> mask_small = resize_area(mask, small_extent);
  Loss<Scalar> loss;
  loss.lambda = static_cast<Scalar>(lambda);
  loss.large = bce(logits.large, mask);
  loss.small = bce(logits.small, mask_small);
  loss.total = add(loss.large, scale(loss.small, loss.lambda));
  return loss;
}

Mask threshold_logits(const Tensor<float>& logits) {
  const Extent e = extent_of(logits);
  if (logits.size() != e.height * e.width) throw ShapeError("threshold_logits: expected a single map");
  Mask m(e.height, e.width);
  for (Index i = 0; i < logits.size(); ++i) m.data()[i] = logits[i] >= 0.0f ? 1 : 0;
  return m;
}

namespace {

void require_same_shape(const Mask& a, const Mask& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("prediction and ground truth differ in size");
}

}  // namespace

IouCounts foreground_counts(const Mask& pred, const Mask& gt) {
  require_same_shape(pred, gt);
  const auto p = pred != 0;
  const auto g = gt != 0;
  return {(p && g).count(), (p || g).count()};
}

IouCounts background_counts(const Mask& pred, const Mask& gt) {
  require_same_shape(pred, gt);
  const auto p = pred == 0;
  const auto g = gt == 0;
  return {(p && g).count(), (p || g).count()};
}

MetricAccumulator::MetricAccumulator(std::vector<int> class_ids) {
  for (int c : class_ids) {
    per_class_[c] = {};
    seen_[c] = false;
  }
}

void MetricAccumulator::add(int class_id, const Mask& pred, const Mask& gt) {
  auto it = per_class_.find(class_id);
  if (it == per_class_.end()) throw ValidationError("unknown class id " + std::to_string(class_id));
  it->second += foreground_counts(pred, gt);
  seen_[class_id] = true;
  foreground_ += foreground_counts(pred, gt);
  background_ += background_counts(pred, gt);
  ++episodes_;
}

void MetricAccumulator::merge(const MetricAccumulator& other) {
  for (const auto& [c, counts] : other.per_class_) {
    auto it = per_class_.find(c);
    if (it == per_class_.end()) throw ValidationError("merging accumulators over different classes");
    it->second += counts;
    seen_[c] = seen_[c] || other.seen_.at(c);
  }
  foreground_ += other.foreground_;
  background_ += other.background_;
  episodes_ += other.episodes_;
}

EvalReport MetricAccumulator::report() const {
  EvalReport r;
  r.episodes = episodes_;
  double sum = 0;
  for (const auto& [c, counts] : per_class_) {
    if (!seen_.at(c)) continue;
    r.per_class_iou[c] = counts.iou();
    sum += counts.iou();
  }
  r.miou = r.per_class_iou.empty() ? 0.0 : sum / static_cast<double>(r.per_class_iou.size());
  r.fb_iou = episodes_ == 0 ? 0.0 : 0.5 * (foreground_.iou() + background_.iou());
  return r;
}

double miou(const std::vector<Mask>& preds, const std::vector<Mask>& gts,
            const std::vector<int>& episode_classes, const std::vector<int>& fold_classes) {
  if (preds.size() != gts.size() || preds.size() != episode_classes.size()) {
    throw ShapeError("miou: predictions, ground truths and classes differ in count");
  }
  MetricAccumulator acc(fold_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) acc.add(episode_classes[i], preds[i], gts[i]);
  return acc.report().miou;
}

double fb_iou(const std::vector<Mask>& preds, const std::vector<Mask>& gts) {
  if (preds.empty()) throw ValidationError("fb_iou: empty episode set");
  if (preds.size() != gts.size()) throw ShapeError("fb_iou: predictions and ground truths differ in count");
  IouCounts fg, bg;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    fg += foreground_counts(preds[i], gts[i]);
    bg += background_counts(preds[i], gts[i]);
  }
  return 0.5 * (fg.iou() + bg.iou());
}

template Var<float> bce<float>(const Var<float>&, const Tensor<float>&);
template Var<double> bce<double>(const Var<double>&, const Tensor<double>&);
template Loss<float> total_loss<float>(const MaskLogits<float>&, const Tensor<float>&, double);
template Loss<double> total_loss<double>(const MaskLogits<double>&, const Tensor<double>&, double);

}  // namespace mcinet
