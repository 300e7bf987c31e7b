#include "mcinet/model.hpp"

namespace mcinet {

template <typename Scalar>
ParameterStore<Scalar> MciNet<Scalar>::layout(const ModelConfig& cfg, std::uint64_t seed) {
  ParameterStore<Scalar> store;
  build_backbone(cfg.backbone, store, seed);
  Mcfm(cfg).register_parameters(store, seed);
  Mlim(cfg).register_parameters(store, seed);
  Msmp(cfg).register_parameters(store, seed);
  return store;
}

template <typename Scalar>
MciNet<Scalar>::MciNet(ModelConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)), backbone_(cfg_.backbone), mcfm_(cfg_), mlim_(cfg_), msmp_(cfg_),
      params_(layout(cfg_, seed)) {}

template <typename Scalar>
MciNet<Scalar>::MciNet(ModelConfig cfg, ParameterStore<Scalar> params)
    : cfg_(std::move(cfg)), backbone_(cfg_.backbone), mcfm_(cfg_), mlim_(cfg_), msmp_(cfg_),
      params_(std::move(params)) {
  const auto expected = layout(cfg_);
  if (expected.size() != params_.size()) {
    throw FormatError("parameter count " + std::to_string(params_.size()) +
                      " does not match the configured model (" + std::to_string(expected.size()) + ")");
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& want = expected.entries()[i];
    const auto& got = params_.entries()[i];
    if (want.name != got.name || want.value.shape() != got.value.shape()) {
      throw FormatError("parameter '" + got.name + "' " + to_string(got.value.shape()) +
                        " does not match expected '" + want.name + "' " + to_string(want.value.shape()));
    }
  }
  if (cfg_.backbone.freeze) params_.set_trainable("backbone.", false);
}

template <typename Scalar>
MaskLogits<Scalar> MciNet<Scalar>::forward(Binding<Scalar>& bind,
                                           const EpisodeTensors<Scalar>& episode) const {
  const Index size = cfg_.backbone.input_size;
  check_images(episode.query_image, size);
  check_images(episode.support_images, size);
  if (episode.query_image.dim(0) != 1) throw ShapeError("exactly one query image per episode");
  const auto& masks = episode.support_masks;
  if (masks.shape() != Shape{episode.shots(), 1, size, size}) {
    throw ShapeError("support masks " + to_string(masks.shape()) + " do not match the support images");
  }
  const auto pyr_s = extract_pyramid(backbone_, bind, episode.support_images);
  const auto pyr_q = mcfm_.apply(bind, extract_pyramid(backbone_, bind, episode.query_image),
                                 episode.query_image);
  const auto evidence = mlim_.forward(bind, pyr_s, pyr_q, masks);
  const auto skips = build_skips(pyr_s, pyr_q, masks, cfg_.msmp.skip_support);
  return msmp_.forward(bind, evidence, skips);
}

std::string parameter_group(const std::string& name) {
  auto has = [&](const char* s) { return name.find(s) != std::string::npos; };
  if (name.rfind("backbone.", 0) == 0) return "backbone";
  if (name.rfind("mcfm.", 0) == 0) return has(".enc.") ? "mcfm.encoder" : "mcfm.attention";
  if (name.rfind("mlim.", 0) == 0) {
    if (has(".refine.")) return "mlim.refiner";
    if (has(".rescale")) return "mlim.rescale";
    return "mlim.projectors";
  }
  if (name.rfind("msmp.", 0) == 0) {
    if (has(".aspp.")) return "msmp.aspp";
    if (has(".head")) return has(".small.") ? "msmp.small_head" : "msmp.large_head";
    return has(".small.") ? "msmp.small_decoder" : "msmp.large_decoder";
  }
  return "other";
}

template class MciNet<float>;
template class MciNet<double>;

}  // namespace mcinet
