#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "misd/core_model.hpp"
#include "misd/image.hpp"
#include "misd/rng.hpp"

namespace misd {

enum class CropSchedule {
  adaptive,  // reselect normal/pseudo views every epoch with the current prompts
  fixed,     // select once with the initial prompts, before training
};

struct CropConfig {
  int k = 8;
  double area_min = 0.2;
  double area_max = 1.0;
  double aspect_min = 3.0 / 4.0;
  double aspect_max = 4.0 / 3.0;
  CropSchedule schedule = CropSchedule::adaptive;

  bool operator==(const CropConfig&) const = default;
};

void validate(const CropConfig& config);

/// Draws one crop rectangle: area fraction ~ U[area_min, area_max], aspect
/// ratio ~ U[aspect_min, aspect_max], side lengths clamped to the image and
/// the position uniform over all placements that fit.
CropRect sample_crop_rect(int height, int width, const CropConfig& config, Rng& rng);

/// k crops of `image`, each bilinearly resized to out_size x out_size.
std::vector<Image> random_crops(const Image& image, const CropConfig& config, int out_size,
                                Rng& rng);

/// One sample's candidate views and label.
struct ViewSet {
  std::size_t sample_id = 0;
  std::vector<Embedding> views;
  int label = 0;
};

struct SelectedPair {
  Embedding normal;
  Embedding pseudo;
  int normal_index = 0;
  int pseudo_index = 0;
};

/// Picks the view most similar to the class feature as the normal view and
/// the least similar as the pseudo view. argmax keeps the first maximum,
/// argmin the last minimum, so a fully tied set yields (0, k-1).
SelectedPair select_views(const ViewSet& views, const Embedding& class_feature);

enum class AugmentStrategy { random_crop, cutout, gaussian_noise };

AugmentStrategy parse_augment_strategy(std::string_view name);
std::string_view to_string(AugmentStrategy strategy);

inline constexpr double kNoiseStddev = 0.1;

/// Cutout zeroes a random square of side height/2 lying fully inside the
/// image; gaussian_noise adds N(0, 0.1^2) per pixel without clamping.
Image alternative_augment(const Image& image, AugmentStrategy strategy, Rng& rng);

}  // namespace misd
