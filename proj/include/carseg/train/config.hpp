// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace carseg {

enum class TrainMode { FS, SS };
enum class ModelKind { UNET, SDNET };

const char* to_string(TrainMode m);
const char* to_string(ModelKind m);
TrainMode train_mode_from_string(const std::string& s);
ModelKind model_kind_from_string(const std::string& s);

struct TrainConfig {
  TrainMode mode = TrainMode::FS;
  ModelKind model = ModelKind::SDNET;
  bool use_ra = true;
  std::optional<std::filesystem::path> fa_dataset;
  double lr0 = 1e-3;
  int batch_size = 4;
  int epochs = 50;           // paper-faithful default; desk-scale runs override
  int plateau_patience = 2;  // epochs without improvement before lr cut
  double plateau_factor = 0.1;
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  std::vector<std::string> exclude_vendors = {"D"};  // held-out by default

  void validate() const;
};

/// The five ablation configurations.
struct Preset {
  std::string name;  // display name, e.g. "FS SDNet+RA"
  std::string slug;  // CLI name, e.g. "fs-sdnet-ra"
  TrainConfig config;
  bool requires_fa = false;
};

std::vector<Preset> ablation_presets();
const Preset& preset_by_slug(const std::string& slug);

/// Key-value config file (`key = value`, '#' comments). Keys mirror the
/// TrainConfig fields; unknown keys are rejected.
std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path);
void apply_config(const std::map<std::string, std::string>& kv, TrainConfig& cfg);

}  // namespace carseg
