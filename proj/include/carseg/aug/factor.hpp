// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "carseg/data/manifest.hpp"
#include "carseg/model/sdnet.hpp"
#include "carseg/rng.hpp"

namespace carseg {

/// One extracted anatomy factor: bit-packed binary channels plus the
/// preprocessed mask (224x224) when the source record is labeled.
struct AnatomyEntry {
  std::vector<std::uint8_t> packed;  // channels*h*w bits
  bool labeled = false;
  std::string source;    // source record image_uri
  std::string mask_uri;  // source mask_uri when labeled (provenance)
  std::vector<std::uint8_t> mask;  // preprocessed labels, h*w, labeled only
  double row_mm = 1.0, col_mm = 1.0;
  Phase phase = Phase::Other;
};

struct ModalityEntry {
  std::array<float, model::kModalityDim> z{};
  std::string source;
};

struct VendorFactors {
  std::string vendor;
  std::vector<AnatomyEntry> anatomy;
  std::vector<ModalityEntry> modality;
};

/// Per-vendor factor stores extracted with one checkpoint; the fingerprint
/// couples the bank to that checkpoint file.
struct FactorBank {
  std::uint64_t fingerprint = 0;
  int height = 224, width = 224, channels = model::kAnatomyChannels;
  int z_dim = model::kModalityDim;
  std::vector<VendorFactors> vendors;

  std::size_t anatomy_count() const;
  std::size_t modality_count() const;
  const VendorFactors* find(const std::string& vendor) const;
};

std::vector<std::uint8_t> pack_bits(const nn::Tensor& binary, int batch_index);
nn::Tensor unpack_bits(const std::vector<std::uint8_t>& packed, int channels, int h, int w);

/// Runs both encoders in inference mode over every record and groups the
/// factors by vendor. Records of excluded vendors are skipped.
FactorBank extract_factors(model::SdNet& net, const DatasetManifest& manifest,
                           std::uint64_t fingerprint,
                           const std::vector<std::string>& exclude_vendors = {});

/// Convenience: loads the checkpoint, fingerprints the file, extracts.
FactorBank extract_factors(const std::filesystem::path& checkpoint,
                           const DatasetManifest& manifest,
                           const std::vector<std::string>& exclude_vendors = {});

void save_bank(const FactorBank& bank, const std::filesystem::path& path);
FactorBank load_bank(const std::filesystem::path& path);

struct FaDraw {
  const AnatomyEntry* anatomy = nullptr;
  const ModalityEntry* modality = nullptr;
  std::string anatomy_vendor, modality_vendor;
};

/// Vendor-uniform then entry-uniform draw for each factor kind; with
/// same_vendor_control the modality vendor is forced equal to the anatomy
/// vendor (reconstruction-effect control).
FaDraw fa_draw(const FactorBank& bank, Rng& rng, bool same_vendor_control = false);

/// Decode one drawn factor pair. The sample is labeled iff the anatomy source
/// is labeled, carrying the source's preprocessed mask bytes.
Sample fa_sample(const FactorBank& bank, Rng& rng, model::SdNet& net,
                 bool same_vendor_control = false);

/// Draws and decodes n samples (per-output-index rng streams), writes them in
/// the standard dataset format with provenance metadata and returns the
/// manifest. Rejects a checkpoint whose fingerprint differs from the bank's.
DatasetManifest generate_fa_dataset(const FactorBank& bank,
                                    const std::filesystem::path& checkpoint, int n,
                                    std::uint64_t seed, const std::filesystem::path& out_dir,
                                    bool same_vendor_control = false);

}  // namespace carseg
