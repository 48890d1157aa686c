// SPDX-License-Identifier: Apache-2.0
#include "carseg/data/sample.hpp"

#include <cmath>

#include "carseg/error.hpp"

namespace carseg {

const char* to_string(Phase phase) {
  switch (phase) {
    case Phase::ED: return "ED";
    case Phase::ES: return "ES";
    default: return "other";
  }
}

Phase phase_from_string(const std::string& s) {
  if (s == "ED") return Phase::ED;
  if (s == "ES") return Phase::ES;
  if (s == "other") return Phase::Other;
  fail("unknown phase '", s, "' (expected ED, ES or other)");
}

void Image2D::validate() const {
  require(height >= 16 && width >= 16, "image dims ", height, "x", width,
          " below the 16x16 minimum");
  require(pixels.size() == static_cast<std::size_t>(height) * width,
          "pixel buffer size does not match dims");
  require(row_mm > 0.0 && col_mm > 0.0, "non-positive pixel spacing");
  for (float v : pixels)
    require(std::isfinite(v), "non-finite pixel value in image for subject '", subject_id, "'");
}

void SegMask::validate() const {
  require(labels.size() == static_cast<std::size_t>(height) * width,
          "label buffer size does not match dims");
  for (std::uint8_t v : labels)
    require(v < kNumClasses, "invalid mask label ", int(v), " (valid classes are 0..3)");
}

}  // namespace carseg
