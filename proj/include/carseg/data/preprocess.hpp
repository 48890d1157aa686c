// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "carseg/data/sample.hpp"

namespace carseg {

constexpr int kTargetSize = 224;

/// Per-slice z-score (population std, eps guard), clip to [-3, 3], rescale to
/// [-1, 1]. A constant image maps to all zeros.
Image2D normalize_intensity(const Image2D& image);

/// Crops or pads to target x target around the center. Crop offset is
/// floor((dim - target) / 2); padding splits floor/ceil and fills with -1 for
/// the image and 0 for the mask.
Sample center_crop_or_pad(const Image2D& image, const std::optional<SegMask>& mask,
                          int target = kTargetSize);

inline Sample center_crop_or_pad(const Sample& sample, int target = kTargetSize) {
  Sample out = center_crop_or_pad(sample.image, sample.mask, target);
  out.provenance = sample.provenance;
  return out;
}

/// normalize_intensity followed by center_crop_or_pad; the standard
/// augmentation-free preprocessing used for validation, evaluation and
/// factor extraction.
inline Sample preprocess(const Sample& sample, int target = kTargetSize) {
  Sample out = center_crop_or_pad(normalize_intensity(sample.image), sample.mask, target);
  out.provenance = sample.provenance;
  return out;
}

}  // namespace carseg
