#include "lear/image.hpp"

#include <cmath>

namespace lear {

Image resize_bilinear(const Image& in, std::int64_t out_h, std::int64_t out_w) {
  if (out_h < 1 || out_w < 1) throw Error("shape", "resize_bilinear: bad output extent");
  if (in.height == out_h && in.width == out_w) return in;
  Image out(out_h, out_w);
  const auto index = [](std::int64_t dst, std::int64_t in_size, std::int64_t out_size,
                        std::int64_t& i0, std::int64_t& i1, double& frac) {
    const double src = (static_cast<double>(dst) + 0.5) *
                           (static_cast<double>(in_size) / static_cast<double>(out_size)) -
                       0.5;
    const double fl = std::floor(src);
    frac = src - fl;
    i0 = static_cast<std::int64_t>(fl);
    i1 = i0 + 1;
    if (i0 < 0) {
      i0 = i1 = 0;
      frac = 0.0;
    }
    if (i1 >= in_size) {
      i1 = in_size - 1;
      if (i0 >= in_size) i0 = in_size - 1;
    }
  };
  for (std::int64_t y = 0; y < out_h; ++y) {
    std::int64_t y0, y1;
    double fy;
    index(y, in.height, out_h, y0, y1, fy);
    for (std::int64_t x = 0; x < out_w; ++x) {
      std::int64_t x0, x1;
      double fx;
      index(x, in.width, out_w, x0, x1, fx);
      const double top = (1.0 - fx) * in.at(y0, x0) + fx * in.at(y0, x1);
      const double bot = (1.0 - fx) * in.at(y1, x0) + fx * in.at(y1, x1);
      out.at(y, x) = static_cast<float>((1.0 - fy) * top + fy * bot);
    }
  }
  return out;
}

Image center_crop(const Image& in, std::int64_t h, std::int64_t w) {
  if (h > in.height || w > in.width)
    throw Error("shape", "center_crop: crop larger than image");
  const std::int64_t oy = (in.height - h) / 2;
  const std::int64_t ox = (in.width - w) / 2;
  Image out(h, w);
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) out.at(y, x) = in.at(y + oy, x + ox);
  return out;
}

}  // namespace lear
