// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "carseg/data/sample.hpp"

namespace carseg {

struct SampleRecord {
  std::string image_uri;                 // relative to the manifest directory
  std::optional<std::string> mask_uri;   // present iff labeled
  std::string vendor;
  double row_mm = 1.0;
  double col_mm = 1.0;
  std::string subject_id;
  Phase phase = Phase::Other;
  bool labeled = false;

  double pixel_area() const { return row_mm * col_mm; }
};

struct DatasetManifest {
  std::vector<std::string> vendors;
  std::vector<SampleRecord> records;
  std::filesystem::path base_dir;  // runtime root for relative URIs, not serialized

  /// Deterministic record order: (subject_id, phase, image_uri).
  void sort_records();
};

/// Parses manifest.json, resolves URIs against its directory and validates
/// every record. Errors name the offending record index.
DatasetManifest load_manifest(const std::filesystem::path& path);

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// Reads one sample (meta.json + image.f32 + optional mask.u8) from the
/// directory containing record.image_uri.
Sample read_sample(const SampleRecord& record, const std::filesystem::path& base_dir);

inline Sample read_sample(const DatasetManifest& manifest, std::size_t index) {
  return read_sample(manifest.records[index], manifest.base_dir);
}

/// Writes sample files into `dir` (created if needed): meta.json, image.f32
/// and, when the sample is labeled, mask.u8.
void write_sample(const Sample& sample, const std::filesystem::path& dir);

/// Builds the manifest record for a sample written into `dir`.
SampleRecord record_for(const Sample& sample, const std::filesystem::path& dir,
                        const std::filesystem::path& base_dir);

}  // namespace carseg
