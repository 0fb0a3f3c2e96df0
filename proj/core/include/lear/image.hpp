#pragma once

#include <cstdint>
#include <vector>

#include "lear/error.hpp"

namespace lear {

// Single-channel float raster, row-major. Shared by depth maps, event images
// and edge maps.
struct Image {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<float> v;

  Image() = default;
  Image(std::int64_t h, std::int64_t w, float fill = 0.f)
      : height(h), width(w), v(static_cast<std::size_t>(h * w), fill) {}

  float& at(std::int64_t y, std::int64_t x) { return v[y * width + x]; }
  float at(std::int64_t y, std::int64_t x) const { return v[y * width + x]; }
  std::int64_t pixels() const { return height * width; }
};

// Bilinear resize with half-pixel centres and border clamping.
Image resize_bilinear(const Image& in, std::int64_t out_h, std::int64_t out_w);

// Centered crop of extent (h, w); throws when the crop exceeds the image.
Image center_crop(const Image& in, std::int64_t h, std::int64_t w);

// Dense 2D displacement field with an explicit validity mask. Invalid pixels
// store (0, 0).
struct FlowField {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<float> dx, dy;
  std::vector<std::uint8_t> valid;

  FlowField() = default;
  FlowField(std::int64_t h, std::int64_t w)
      : height(h),
        width(w),
        dx(static_cast<std::size_t>(h * w), 0.f),
        dy(static_cast<std::size_t>(h * w), 0.f),
        valid(static_cast<std::size_t>(h * w), 0) {}

  std::int64_t pixels() const { return height * width; }
  std::int64_t valid_count() const {
    std::int64_t n = 0;
    for (const auto m : valid) n += m != 0;
    return n;
  }
};

}  // namespace lear
