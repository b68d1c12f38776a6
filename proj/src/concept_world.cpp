#include "misd/concept_world.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "misd/errors.hpp"
#include "misd/rng.hpp"

namespace misd {

ConceptAppearance ConceptWorld::appearance(std::string_view name, int channels) const {
  Rng rng = make_rng(seed_, name);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ConceptAppearance a;
  a.color.resize(static_cast<std::size_t>(channels));
  for (auto& c : a.color) c = unit(rng);
  a.frequency = 1.0 + 3.0 * unit(rng);
  a.orientation = std::numbers::pi * unit(rng);
  a.phase = 2.0 * std::numbers::pi * unit(rng);
  return a;
}

void ConceptWorld::paint_blob(Image& image, std::string_view name, int x0, int y0,
                              int size) const {
  if (size <= 0 || x0 < 0 || y0 < 0 || x0 + size > image.width || y0 + size > image.height) {
    throw ShapeError("blob does not fit inside the image");
  }
  const ConceptAppearance a = appearance(name, image.channels);
  const double ct = std::cos(a.orientation);
  const double st = std::sin(a.orientation);
  for (int dy = 0; dy < size; ++dy) {
    for (int dx = 0; dx < size; ++dx) {
      const double u = static_cast<double>(dx) / size;
      const double v = static_cast<double>(dy) / size;
      const double texture =
          0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * a.frequency * (u * ct + v * st) + a.phase);
      for (int c = 0; c < image.channels; ++c) {
        image.at(y0 + dy, x0 + dx, c) = a.color[static_cast<std::size_t>(c)] * texture;
      }
    }
  }
}

Image ConceptWorld::canonical_image(std::string_view name, int image_size, int channels,
                                    double background) const {
  Image img(image_size, image_size, channels, background);
  const int side = image_size / 2;
  const int offset = (image_size - side) / 2;
  paint_blob(img, name, offset, offset, side);
  return img;
}

}  // namespace misd
