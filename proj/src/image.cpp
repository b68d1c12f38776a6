#include "misd/image.hpp"

#include <algorithm>
#include <cmath>

#include "misd/errors.hpp"

namespace misd {

Image::Image(int h, int w, int c, double fill)
    : height(h), width(w), channels(c) {
  if (h <= 0 || w <= 0 || c <= 0) throw ShapeError("image dimensions must be positive");
  pixels.assign(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) *
                    static_cast<std::size_t>(c),
                fill);
}

bool Image::all_finite() const noexcept {
  return std::all_of(pixels.begin(), pixels.end(),
                     [](double v) { return std::isfinite(v); });
}

Image resize_bilinear(const Image& src, const CropRect& rect, int out_h, int out_w) {
  if (rect.width <= 0 || rect.height <= 0 || rect.x < 0 || rect.y < 0 ||
      rect.x + rect.width > src.width || rect.y + rect.height > src.height) {
    throw ShapeError("crop rectangle outside image bounds");
  }
  Image out(out_h, out_w, src.channels);
  const double sy = static_cast<double>(rect.height) / out_h;
  const double sx = static_cast<double>(rect.width) / out_w;
  for (int oy = 0; oy < out_h; ++oy) {
    const double fy = std::clamp((oy + 0.5) * sy - 0.5, 0.0, rect.height - 1.0);
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, rect.height - 1);
    const double wy = fy - y0;
    for (int ox = 0; ox < out_w; ++ox) {
      const double fx = std::clamp((ox + 0.5) * sx - 0.5, 0.0, rect.width - 1.0);
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, rect.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < src.channels; ++c) {
        const double top = (1.0 - wx) * src.at(rect.y + y0, rect.x + x0, c) +
                           wx * src.at(rect.y + y0, rect.x + x1, c);
        const double bottom = (1.0 - wx) * src.at(rect.y + y1, rect.x + x0, c) +
                              wx * src.at(rect.y + y1, rect.x + x1, c);
        out.at(oy, ox, c) = (1.0 - wy) * top + wy * bottom;
      }
    }
  }
  return out;
}

}  // namespace misd
