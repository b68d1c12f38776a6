#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "misd/image.hpp"

namespace misd {

// Procedural look of one named concept: a coloured stripe texture.
struct ConceptAppearance {
  std::vector<double> color;  // one intensity per channel, in [0, 1]
  double frequency = 1.0;     // stripes across the blob side
  double orientation = 0.0;   // radians
  double phase = 0.0;
};

// The synthetic world shared by the data generator and the frozen backbone.
// A concept's appearance is a pure function of (world seed, concept name), so
// a dataset generated under one world seed and a backbone grounded in the same
// world agree on what every class looks like.
class ConceptWorld {
 public:
  explicit ConceptWorld(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  ConceptAppearance appearance(std::string_view name, int channels) const;

  // Overwrites the size x size square at (x0, y0) with the concept's blob.
  void paint_blob(Image& image, std::string_view name, int x0, int y0, int size) const;

  // Blob of side image_size/2, centered on a constant background.
  Image canonical_image(std::string_view name, int image_size, int channels,
                        double background) const;

 private:
  std::uint64_t seed_;
};

}  // namespace misd
