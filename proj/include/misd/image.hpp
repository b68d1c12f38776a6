#pragma once

#include <cstddef>
#include <vector>

namespace misd {

// Dense H x W x Ch image, row-major with interleaved channels.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int h, int w, int c, double fill = 0.0);

  std::size_t index(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
            static_cast<std::size_t>(x)) *
               static_cast<std::size_t>(channels) +
           static_cast<std::size_t>(c);
  }
  double& at(int y, int x, int c) noexcept { return pixels[index(y, x, c)]; }
  double at(int y, int x, int c) const noexcept { return pixels[index(y, x, c)]; }

  bool all_finite() const noexcept;
  bool operator==(const Image&) const = default;
};

// Integer pixel rectangle; (x, y) is the top-left corner.
struct CropRect {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;

  bool operator==(const CropRect&) const = default;
};

// Bilinear resampling of `rect` of `src` to out_h x out_w (half-pixel centers,
// edge clamped).
Image resize_bilinear(const Image& src, const CropRect& rect, int out_h, int out_w);

}  // namespace misd
