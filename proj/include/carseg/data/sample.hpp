// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace carseg {

enum class Phase { ED, ES, Other };

const char* to_string(Phase phase);
Phase phase_from_string(const std::string& s);

/// 2D grayscale image with physical pixel spacing and domain metadata.
/// After preprocessing, pixel values live in [-1, 1].
struct Image2D {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;  // row-major, height*width
  double row_mm = 1.0;
  double col_mm = 1.0;
  std::string vendor;
  std::string subject_id;
  Phase phase = Phase::Other;

  double pixel_area() const { return row_mm * col_mm; }

  float& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * width + c]; }
  float at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * width + c]; }

  /// Checks dims >= 16, positive spacing, finite pixels.
  void validate() const;
};

/// Segmentation labels: 0=BG, 1=LV, 2=MYO, 3=RV.
struct SegMask {
  static constexpr int kNumClasses = 4;

  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;  // row-major

  std::uint8_t& at(int r, int c) { return labels[static_cast<std::size_t>(r) * width + c]; }
  std::uint8_t at(int r, int c) const { return labels[static_cast<std::size_t>(r) * width + c]; }

  /// Checks every value is in {0,1,2,3}.
  void validate() const;
};

struct Sample {
  Image2D image;
  std::optional<SegMask> mask;
  // extra meta.json keys (set for factor-augmented samples)
  std::map<std::string, std::string> provenance;

  bool labeled() const { return mask.has_value(); }
  bool generated() const { return !provenance.empty(); }
};

}  // namespace carseg
