// SPDX-License-Identifier: Apache-2.0
#include "carseg/data/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "carseg/error.hpp"

namespace carseg {

Image2D normalize_intensity(const Image2D& image) {
  Image2D out = image;
  double sum = 0.0;
  for (float v : image.pixels) {
    require(std::isfinite(v), "normalize_intensity: non-finite input pixel");
    sum += v;
  }
  const double n = static_cast<double>(image.pixels.size());
  const double mean = sum / n;
  double sq = 0.0;
  for (float v : image.pixels) sq += (v - mean) * (v - mean);
  const double std_pop = std::sqrt(sq / n);
  if (std_pop < 1e-12) {  // constant image
    std::fill(out.pixels.begin(), out.pixels.end(), 0.0f);
    return out;
  }
  const double inv = 1.0 / (std_pop + 1e-8);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    double z = (image.pixels[i] - mean) * inv;
    z = std::clamp(z, -3.0, 3.0) / 3.0;
    out.pixels[i] = static_cast<float>(z);
  }
  return out;
}

Sample center_crop_or_pad(const Image2D& image, const std::optional<SegMask>& mask, int target) {
  require(target > 0, "center_crop_or_pad: non-positive target");
  if (mask)
    require(mask->height == image.height && mask->width == image.width,
            "center_crop_or_pad: mask dims differ from image dims");

  // Source window start (crop) or destination offset (pad) per axis.
  // dim >= target: copy rows [off, off+target) with off = floor((dim-target)/2).
  // dim < target: place input at floor((target-dim)/2), fill the rest.
  const auto plan = [target](int dim) {
    if (dim >= target) return std::pair<int, int>{(dim - target) / 2, 0};
    return std::pair<int, int>{0, (target - dim) / 2};
  };
  const auto [src_r, dst_r] = plan(image.height);
  const auto [src_c, dst_c] = plan(image.width);
  const int copy_rows = std::min(image.height, target);
  const int copy_cols = std::min(image.width, target);

  Sample out;
  out.image = image;
  out.image.height = target;
  out.image.width = target;
  out.image.pixels.assign(static_cast<std::size_t>(target) * target, -1.0f);
  for (int r = 0; r < copy_rows; ++r)
    for (int c = 0; c < copy_cols; ++c)
      out.image.at(dst_r + r, dst_c + c) = image.at(src_r + r, src_c + c);

  if (mask) {
    SegMask m;
    m.height = target;
    m.width = target;
    m.labels.assign(static_cast<std::size_t>(target) * target, 0);
    for (int r = 0; r < copy_rows; ++r)
      for (int c = 0; c < copy_cols; ++c)
        m.at(dst_r + r, dst_c + c) = mask->at(src_r + r, src_c + c);
    out.mask = std::move(m);
  }
  return out;
}

}  // namespace carseg
