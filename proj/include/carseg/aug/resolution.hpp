// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "carseg/data/manifest.hpp"
#include "carseg/rng.hpp"

namespace carseg {

/// Pixel-area range spanning the scanner protocols of all vendors.
struct RAConfig {
  double area_lo_mm2 = 0.954;
  double area_hi_mm2 = 2.692;
  int target_size = 224;
};

/// Maps a unit variate to the area range; u=0 -> lo, u=1 -> hi.
inline double area_from_unit(double u, const RAConfig& cfg) {
  return cfg.area_lo_mm2 + u * (cfg.area_hi_mm2 - cfg.area_lo_mm2);
}

/// Uniform draw in pixel area over [lo, hi].
inline double sample_target_area(Rng& rng, const RAConfig& cfg) {
  return area_from_unit(rng.uniform(), cfg);
}

/// Isotropic zoom so the pixel area becomes target_area (up to dim rounding).
/// Image is resampled bilinearly, the mask by nearest neighbor. Fails when a
/// zoomed dim would fall below 8.
Sample resample_to_area(const Sample& sample, double target_area);

/// sample_target_area + resample_to_area + center_crop_or_pad.
Sample apply_ra(const Sample& sample, Rng& rng, const RAConfig& cfg);

struct HistogramRow {
  std::string vendor;
  double bin_lo = 0.0;
  double bin_hi = 0.0;
  long count = 0;
};

/// Per-vendor record counts over pixel-area bins. bin_edges must be ascending
/// with at least two entries; out-of-range areas land in the end bins.
std::vector<HistogramRow> resolution_histogram(const DatasetManifest& manifest,
                                               const std::vector<double>& bin_edges);

/// CSV columns: vendor,bin_lo,bin_hi,count.
void write_histogram_csv(const std::vector<HistogramRow>& rows,
                         const std::filesystem::path& path);

}  // namespace carseg
