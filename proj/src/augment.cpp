#include "misd/augment.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "misd/errors.hpp"
#include "misd/losses.hpp"

namespace misd {

void validate(const CropConfig& c) {
  if (c.k < 2) throw ConfigError("crop count k must be >= 2, got " + std::to_string(c.k));
  if (!(c.area_min > 0.0 && c.area_min <= c.area_max && c.area_max <= 1.0)) {
    throw ConfigError("crop area range must satisfy 0 < area_min <= area_max <= 1");
  }
  if (!(c.aspect_min > 0.0 && c.aspect_min <= c.aspect_max)) {
    throw ConfigError("crop aspect range must satisfy 0 < aspect_min <= aspect_max");
  }
}

CropRect sample_crop_rect(int height, int width, const CropConfig& config, Rng& rng) {
  std::uniform_real_distribution<double> area_dist(config.area_min, config.area_max);
  std::uniform_real_distribution<double> aspect_dist(config.aspect_min, config.aspect_max);
  const double area = area_dist(rng) * height * width;
  const double aspect = aspect_dist(rng);
  CropRect r;
  r.width = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 1, width);
  r.height = std::clamp(static_cast<int>(std::lround(std::sqrt(area / aspect))), 1, height);
  r.x = std::uniform_int_distribution<int>(0, width - r.width)(rng);
  r.y = std::uniform_int_distribution<int>(0, height - r.height)(rng);
  return r;
}

std::vector<Image> random_crops(const Image& image, const CropConfig& config, int out_size,
                                Rng& rng) {
  validate(config);
  if (out_size < 1) throw ConfigError("crop output size must be positive");
  std::vector<Image> crops;
  crops.reserve(static_cast<std::size_t>(config.k));
  for (int i = 0; i < config.k; ++i) {
    const CropRect r = sample_crop_rect(image.height, image.width, config, rng);
    crops.push_back(resize_bilinear(image, r, out_size, out_size));
  }
  return crops;
}

SelectedPair select_views(const ViewSet& set, const Embedding& class_feature) {
  if (set.views.size() < 2) throw ConfigError("view selection needs at least two views");
  int best = 0;
  int worst = 0;
  double best_sim = 0.0;
  double worst_sim = 0.0;
  for (std::size_t i = 0; i < set.views.size(); ++i) {
    const double s = cosine_sim(set.views[i], class_feature);
    const int idx = static_cast<int>(i);
    if (i == 0 || s > best_sim) {
      best = idx;
      best_sim = s;
    }
    if (i == 0 || s <= worst_sim) {
      worst = idx;
      worst_sim = s;
    }
  }
  return SelectedPair{set.views[static_cast<std::size_t>(best)],
                      set.views[static_cast<std::size_t>(worst)], best, worst};
}

AugmentStrategy parse_augment_strategy(std::string_view name) {
  if (name == "random-crop" || name == "crop") return AugmentStrategy::random_crop;
  if (name == "cutout") return AugmentStrategy::cutout;
  if (name == "gaussian-noise" || name == "noise") return AugmentStrategy::gaussian_noise;
  throw ConfigError("unknown augmentation strategy '" + std::string(name) + "'");
}

std::string_view to_string(AugmentStrategy s) {
  switch (s) {
    case AugmentStrategy::random_crop: return "random-crop";
    case AugmentStrategy::cutout: return "cutout";
    case AugmentStrategy::gaussian_noise: return "gaussian-noise";
  }
  return "unknown";
}

Image alternative_augment(const Image& image, AugmentStrategy strategy, Rng& rng) {
  Image out = image;
  switch (strategy) {
    case AugmentStrategy::cutout: {
      const int side = image.height / 2;
      if (side < 1 || side > image.width) throw ShapeError("image too small for cutout");
      const int x0 = std::uniform_int_distribution<int>(0, image.width - side)(rng);
      const int y0 = std::uniform_int_distribution<int>(0, image.height - side)(rng);
      for (int y = y0; y < y0 + side; ++y) {
        for (int x = x0; x < x0 + side; ++x) {
          for (int c = 0; c < image.channels; ++c) out.at(y, x, c) = 0.0;
        }
      }
      return out;
    }
    case AugmentStrategy::gaussian_noise: {
      std::normal_distribution<double> noise(0.0, kNoiseStddev);
      for (double& p : out.pixels) p += noise(rng);
      return out;
    }
    case AugmentStrategy::random_crop:
      break;
  }
  throw ConfigError("random-crop is not an alternative augmentation; use random_crops");
}

}  // namespace misd
