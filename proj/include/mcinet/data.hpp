#ifndef MCINET_DATA_HPP
#define MCINET_DATA_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mcinet/model.hpp"
#include "mcinet/objective.hpp"
#include "mcinet/random.hpp"

namespace mcinet {

inline constexpr int kNumShapeFamilies = 16;

enum class ShapeFamily : int {
  disc,
  ring,
  square,
  frame,
  triangle,
  diamond,
  plus,
  x_cross,
  hexagon,
  star,
  crescent,
  ellipse,
  semicircle,
  l_shape,
  t_shape,
  arrow,
};

std::string family_name(int class_id);

/// A shape family placed in the image plane. Pixel (row, col) is covered when
/// its centre (col + 0.5, row + 0.5) lies inside.
struct ShapeInstance {
  int family = 0;
  double cx = 0, cy = 0;  // centre in pixels
  double radius = 1;      // pixels per unit of the family's canonical frame
  double angle = 0;       // radians, counter-clockwise in the canonical frame

  /// Canonical-frame coordinates of an image point.
  std::array<double, 2> to_canonical(double x, double y) const;
  bool contains(double x, double y) const;
};

/// Membership test in the canonical frame; every family lies within radius 1.15.
bool family_contains(int family, double u, double v);

/// Coverage of `shape` on a size x size grid.
Mask rasterize(const ShapeInstance& shape, Index size);

/// RGB image [3, H, W] with values k / 255.
using Image = Tensor<float>;

struct Sample {
  Image image;
  Mask mask;
  ShapeInstance target;
  std::vector<ShapeInstance> distractors;
};

struct Episode {
  std::vector<Sample> supports;
  Sample query;
  int class_id = 0;
  int fold_id = 0;
  std::uint64_t seed = 0;

  Index shots() const { return static_cast<Index>(supports.size()); }
  Index size() const { return query.mask.rows(); }
};

/// Contiguous class blocks: fold f holds classes [f * n / F, (f + 1) * n / F).
class FoldSpec {
 public:
  explicit FoldSpec(int num_classes = kNumShapeFamilies, int num_folds = 4);

  int num_classes() const { return num_classes_; }
  int num_folds() const { return num_folds_; }
  int fold_of(int class_id) const;
  /// Held-out (evaluation) classes of `fold`.
  std::vector<int> test_classes(int fold) const;
  /// Classes of every other fold.
  std::vector<int> train_classes(int fold) const;

 private:
  int num_classes_;
  int num_folds_;
};

/// Bounds on the foreground fraction of every generated mask.
inline constexpr double kMinForeground = 0.02;
inline constexpr double kMaxForeground = 0.6;
/// Probability that a distractor is painted in the episode's target colour.
inline constexpr double kDistractorSameColour = 0.3;

Episode generate_episode(int class_id, Index k, std::uint64_t seed, Index size,
                         const FoldSpec& folds = FoldSpec());

/// Episode `index` of step `step` in a training run on `fold`.
Episode sample_train_episode(const FoldSpec& folds, int fold, Index k, std::uint64_t seed,
                             std::uint64_t step, std::uint64_t index, Index size);

std::vector<Episode> sample_eval_suite(const FoldSpec& folds, int fold, Index n_episodes, Index k,
                                       std::uint64_t seed, Index size);

/// Hash of class, seed and all pixel and mask bytes.
std::uint64_t episode_checksum(const Episode& ep);
std::uint64_t suite_checksum(const std::vector<Episode>& suite);

template <typename Scalar>
EpisodeTensors<Scalar> to_tensors(const Episode& ep);

template <typename Scalar>
Tensor<Scalar> mask_tensor(const Mask& m);

// 8-bit binary PPM (P6) and 1-bit binary PBM (P4).
void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);
void write_pbm(const std::filesystem::path& path, const Mask& mask);
Mask read_pbm(const std::filesystem::path& path);

/// Writes every episode's images and masks under `dir` plus `dir/manifest.txt`.
/// Returns the manifest path.
std::filesystem::path export_episodes(const std::filesystem::path& dir,
                                      const std::vector<Episode>& episodes);

/// Reads episodes back from a manifest. Shape parameters are not stored.
std::vector<Episode> import_episodes(const std::filesystem::path& manifest);

}  // namespace mcinet

#endif  // MCINET_DATA_HPP
