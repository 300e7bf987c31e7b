#ifndef MCINET_MODEL_HPP
#define MCINET_MODEL_HPP

#include <cstdint>
#include <string>

#include "mcinet/backbone.hpp"
#include "mcinet/mcfm.hpp"
#include "mcinet/mlim.hpp"
#include "mcinet/msmp.hpp"

namespace mcinet {

/// One episode as model inputs.
template <typename Scalar>
struct EpisodeTensors {
  Tensor<Scalar> support_images;  // [K, 3, H, W]
  Tensor<Scalar> support_masks;   // [K, 1, H, W]
  Tensor<Scalar> query_image;     // [1, 3, H, W]
  Tensor<Scalar> query_mask;      // [1, 1, H, W]

  Index shots() const { return support_images.dim(0); }
};

/// Backbone -> MCFM (query only) -> MLIM -> MSMP.
template <typename Scalar>
class MciNet {
 public:
  MciNet(ModelConfig cfg, std::uint64_t seed);
  /// Adopts existing parameters; names and shapes must match cfg exactly.
  MciNet(ModelConfig cfg, ParameterStore<Scalar> params);

  const ModelConfig& config() const { return cfg_; }
  ParameterStore<Scalar>& parameters() { return params_; }
  const ParameterStore<Scalar>& parameters() const { return params_; }

  const Backbone& backbone() const { return backbone_; }
  const Mcfm& mcfm() const { return mcfm_; }
  const Mlim& mlim() const { return mlim_; }
  const Msmp& msmp() const { return msmp_; }

  MaskLogits<Scalar> forward(Binding<Scalar>& bind, const EpisodeTensors<Scalar>& episode) const;

  /// Parameters registered by a fresh model with this config (names/shapes).
  static ParameterStore<Scalar> layout(const ModelConfig& cfg, std::uint64_t seed = 0);

 private:
  ModelConfig cfg_;
  Backbone backbone_;
  Mcfm mcfm_;
  Mlim mlim_;
  Msmp msmp_;
  ParameterStore<Scalar> params_;
};

/// Reporting group of a parameter, e.g. "mlim.refiner" or "msmp.aspp".
std::string parameter_group(const std::string& name);

}  // namespace mcinet

#endif  // MCINET_MODEL_HPP
