// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "carseg/data/manifest.hpp"

namespace carseg {

/// Synthetic scanner-domain description. The two axes of domain shift are
/// resolution (pixel-area range) and appearance (gamma/bias/noise).
struct VendorProfile {
  std::string tag;
  double area_lo_mm2 = 1.0;  // pixel area = row_mm * col_mm
  double area_hi_mm2 = 1.0;
  double intensity_gamma = 1.0;
  double intensity_bias = 0.0;
  double noise_sigma = 0.0;
  bool labeled = true;
  bool held_out = false;  // excluded from training manifests by default

  void validate() const;
};

struct PhantomConfig {
  std::vector<VendorProfile> vendor_profiles;
  int subjects_per_vendor = 20;
  int slices_per_subject = 3;
  int canvas_size = 256;
  std::uint64_t seed = 1234;

  void validate() const;
};

/// The 4-vendor desk-scale configuration: A/B labeled, C unlabeled,
/// D labeled but held out of training.
PhantomConfig default_desk_config();

/// Copy of `cfg` with every vendor labeled (and not held out); used to build
/// evaluation datasets with ground truth for all vendors.
PhantomConfig all_labeled_variant(PhantomConfig cfg, int subjects_per_vendor, std::uint64_t seed);

/// Writes a complete dataset (sample dirs + manifest.json) under out_dir and
/// returns the manifest. Byte-deterministic in the config (including seed).
DatasetManifest generate_phantom_dataset(const PhantomConfig& config,
                                         const std::filesystem::path& out_dir);

}  // namespace carseg
