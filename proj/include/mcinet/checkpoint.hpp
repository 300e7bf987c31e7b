#ifndef MCINET_CHECKPOINT_HPP
#define MCINET_CHECKPOINT_HPP

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "mcinet/autograd.hpp"
#include "mcinet/config.hpp"

namespace mcinet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct MetricRecord {
  Index step = 0;
  double total = 0;
  double large_bce = 0;
  double small_bce = 0;
  /// Held-out mIoU when an evaluation ran after this step, NaN otherwise.
  double eval_miou = std::numeric_limits<double>::quiet_NaN();
};

/// Everything needed to resume training: parameters, SGD momentum buffers
/// (aligned with the parameter order), step counter and logged metrics.
struct Checkpoint {
  RunConfig config;
  ParameterStore<float> params;
  std::vector<Tensor<float>> momentum;
  Index step = 0;
  std::vector<MetricRecord> history;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

/// Writes to a temporary sibling and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mcinet

#endif  // MCINET_CHECKPOINT_HPP
