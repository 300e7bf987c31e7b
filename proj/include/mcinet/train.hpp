#ifndef MCINET_TRAIN_HPP
#define MCINET_TRAIN_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mcinet/checkpoint.hpp"
#include "mcinet/data.hpp"
#include "mcinet/model.hpp"
#include "mcinet/objective.hpp"

namespace mcinet {

/// p <- p - lr * b with b <- momentum * b + g (buffers start at zero).
void sgd_momentum_step(ParameterStore<float>& params, std::vector<Tensor<float>>& buffers,
                       const std::vector<std::pair<std::string, Tensor<float>>>& grads, double lr,
                       double momentum);

/// Fresh checkpoint at step 0: parameters initialised from cfg.train.seed.
Checkpoint initial_checkpoint(const RunConfig& cfg);

/// Forward pass and loss for one episode; gradients accumulate into the binding.
template <typename Scalar>
Loss<Scalar> episode_loss(const MciNet<Scalar>& net, Binding<Scalar>& bind, const Episode& ep, double lambda);

/// The episode used by fixed-episode (overfitting) runs.
Episode fixed_training_episode(const RunConfig& cfg);

struct TrainHooks {
  std::function<void(const MetricRecord&)> on_step;
};

/// Advances `ckpt` to `until_step` (cfg.train.steps when negative). Each step
/// averages gradients over batch_size episodes drawn from the training classes
/// (or the single fixed episode) and applies one SGD update. Throws
/// NumericError naming the loss term when a loss becomes non-finite.
void train_steps(Checkpoint& ckpt, Index until_step = -1, const TrainHooks& hooks = {});

inline Checkpoint train(const RunConfig& cfg, const TrainHooks& hooks = {}) {
  Checkpoint ckpt = initial_checkpoint(cfg);
  train_steps(ckpt, -1, hooks);
  return ckpt;
}

using Predictor = std::function<Mask(const Episode&)>;

/// Thresholded large-scale logits of `net`.
Predictor model_predictor(const MciNet<float>& net);

EvalReport evaluate_suite(const std::vector<Episode>& suite, const std::vector<int>& classes,
                          const Predictor& predict);

struct EvalResult {
  EvalReport report;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::uint64_t manifest_hash = 0;
  int fold = 0;
  Index k = 1;
  /// Set when the evaluated fold differs from the fold the model trained on.
  bool fold_mismatch = false;
};

/// Evaluates on sample_eval_suite(fold, n_episodes, k, seed). A predictor may
/// replace the model's own predictions.
EvalResult evaluate(const Checkpoint& ckpt, int fold, Index k, Index n_episodes, std::uint64_t seed,
                    const Predictor& override_predictor = {});

nlohmann::json results_json(const EvalResult& r);
std::string results_table(const EvalResult& r);
/// Writes results.json and results.txt under `dir`.
void write_results(const std::filesystem::path& dir, const EvalResult& r);

struct PredictFiles {
  std::filesystem::path prediction, ground_truth, overlay;
};

/// 0.5 * image + 0.5 * red * mask, per channel.
Image overlay_image(const Image& image, const Mask& mask);

/// Writes the predicted mask, the query ground truth and an overlay under `dir`.
PredictFiles predict(const Checkpoint& ckpt, const Episode& ep, const std::filesystem::path& dir);

struct GradcheckOptions {
  double tolerance = 1e-3;
  double step = 1e-4;
  /// Entries sampled per parameter tensor.
  Index samples = 3;
  std::uint64_t seed = 0;
  double lambda = 0.6;
  Index k = 1;
  bool freeze_backbone = false;
};

struct GroupCheck {
  std::string group;
  Index entries = 0;
  /// Samples discarded because [p - h, p + h] crossed a non-differentiable point.
  Index rejected = 0;
  /// ||analytic - numeric|| / max(||analytic||, ||numeric||) over sampled entries.
  double relative_error = 0;
  double analytic_norm = 0;
  bool passed = true;
};

struct GradcheckReport {
  std::vector<GroupCheck> groups;
  double tolerance = 0;

  bool passed() const;
  std::vector<std::string> offenders() const;
};

/// Central finite differences against reverse-mode gradients in double
/// precision for every trainable parameter group. A group fails when its
/// error exceeds the tolerance or when more samples were rejected as
/// straddling a ReLU boundary than were accepted.
GradcheckReport gradcheck(const ModelConfig& cfg, const GradcheckOptions& opts = {});

/// Reverse-mode loss gradient of every parameter (double precision).
std::vector<std::pair<std::string, Tensor<double>>> loss_gradients(const ModelConfig& cfg, std::uint64_t seed,
                                                                   double lambda, Index k);

struct AblationFlags {
  bool mcfm = false;
  bool mlim_adjacent = false;
  bool msmp_feedback = false;
};

/// The eight on/off combinations, baseline first and the full model last.
std::vector<AblationFlags> ablation_grid();
RunConfig apply_ablation(RunConfig cfg, const AblationFlags& flags);

struct AblationRow {
  AblationFlags flags;
  std::vector<double> miou;  // one per seed

  double mean() const;
  double stddev() const;  // sample standard deviation
};

struct AblationHooks {
  std::function<void(const AblationRow&, std::size_t seed_index, double seconds)> on_run;
};

/// Trains and evaluates every grid row for every seed.
std::vector<AblationRow> ablate(const RunConfig& cfg, const std::vector<std::uint64_t>& seeds,
                                const AblationHooks& hooks = {});

std::string ablation_table(const std::vector<AblationRow>& rows);

}  // namespace mcinet

#endif  // MCINET_TRAIN_HPP
