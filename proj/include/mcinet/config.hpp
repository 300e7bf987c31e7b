#ifndef MCINET_CONFIG_HPP
#define MCINET_CONFIG_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcinet/tensor.hpp"

namespace mcinet {

/// Total downsampling of the stem; scale 1 of the pyramid sits at input / 4.
inline constexpr Index kStemStride = 4;

struct BackboneConfig {
  Index input_size = 64;
  Index num_scales = 3;
  std::vector<Index> layers_per_scale{2, 2, 2};
  std::vector<Index> channels_per_scale{32, 64, 128};
  bool freeze = false;

  void validate() const;
  /// Spatial side of scale i (1-based).
  Index scale_size(Index scale) const { return input_size / (kStemStride << (scale - 1)); }
  Index channels(Index scale) const { return channels_per_scale[static_cast<std::size_t>(scale - 1)]; }
  Index layers(Index scale) const { return layers_per_scale[static_cast<std::size_t>(scale - 1)]; }
};

enum class LowLevelSource { branch, backbone_block1, backbone_block2, none };

struct McfmConfig {
  bool enabled = true;
  Index d = 64;
  Index low_level_channels = 128;
  LowLevelSource low_level_source = LowLevelSource::branch;

  bool active() const { return enabled && low_level_source != LowLevelSource::none; }
};

enum class Aggregate { softmax, raw };

struct MlimConfig {
  Index heads = 4;
  /// Per-head projection width; 0 means channels / heads.
  Index head_dim = 0;
  bool adjacent = true;
  /// Output width of each query/support alternation of the refiner.
  std::vector<Index> refine_widths{16, 16};
  Index refine_kernel = 3;
  Aggregate aggregate = Aggregate::softmax;

  Index projection_width(Index channels) const {
    return head_dim > 0 ? head_dim : std::max<Index>(1, channels / heads);
  }
  Index pairings(Index layers) const { return layers + (adjacent ? 1 : 0); }
  Index evidence_channels() const { return refine_widths.back(); }
};

enum class SkipSupport { foreground, whole_image };

struct MsmpConfig {
  Index width = 64;
  bool feedback = true;
  std::vector<Index> aspp_rates{1, 6, 12, 18};
  SkipSupport skip_support = SkipSupport::foreground;
};

struct ModelConfig {
  BackboneConfig backbone;
  McfmConfig mcfm;
  MlimConfig mlim;
  MsmpConfig msmp;

  void validate() const;
};

struct TrainConfig {
  double lr = 0.001;
  double momentum = 0.9;
  Index steps = 250;
  Index batch_size = 8;
  /// Unset: 0.6 for 1-shot, 1.0 otherwise.
  std::optional<double> lambda;
  Index k = 1;
  int fold = 0;
  std::uint64_t seed = 0;
  /// Steps between held-out evaluations; 0 disables.
  Index eval_every = 0;
  Index eval_episodes = 50;
  /// Train on a single fixed episode (overfitting runs).
  bool fixed_episode = false;

  double resolved_lambda() const { return lambda ? *lambda : (k == 1 ? 0.6 : 1.0); }
};

struct DataConfig {
  int num_classes = 16;
  int num_folds = 4;
};

struct EvalConfig {
  Index episodes = 200;
  Index k = 1;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;

  void validate() const;
};

/// Small double-precision model used by gradient verification.
ModelConfig tiny_model_config();

std::string to_string(LowLevelSource s);
std::string to_string(Aggregate a);
std::string to_string(SkipSupport s);

nlohmann::json to_json(const RunConfig& cfg);
/// Strict parse: unknown keys and ill-typed values raise ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
/// Hash of the canonical JSON form.
std::uint64_t config_hash(const RunConfig& cfg);

}  // namespace mcinet

#endif  // MCINET_CONFIG_HPP
