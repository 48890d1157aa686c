// SPDX-License-Identifier: Apache-2.0
#include "carseg/train/config.hpp"

#include <algorithm>
#include <fstream>

#include "carseg/error.hpp"

namespace carseg {

const char* to_string(TrainMode m) { return m == TrainMode::FS ? "FS" : "SS"; }
const char* to_string(ModelKind m) { return m == ModelKind::UNET ? "UNET" : "SDNET"; }

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "FS") return TrainMode::FS;
  if (s == "SS") return TrainMode::SS;
  fail("unknown training mode '", s, "' (expected FS or SS)");
}

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "UNET") return ModelKind::UNET;
  if (s == "SDNET") return ModelKind::SDNET;
  fail("unknown model kind '", s, "' (expected UNET or SDNET)");
}

void TrainConfig::validate() const {
  require(lr0 > 0, "train config: lr0 must be positive");
  require(batch_size > 0, "train config: batch_size must be positive");
  require(epochs > 0, "train config: epochs must be positive");
  require(plateau_factor > 0 && plateau_factor < 1, "train config: plateau_factor must be in (0,1)");
  require(plateau_patience >= 1, "train config: plateau_patience must be >= 1");
  require(validation_fraction > 0 && validation_fraction < 1,
          "train config: validation_fraction must be in (0,1)");
  require(focal_gamma >= 0, "train config: focal_gamma must be >= 0");
  require(focal_alpha > 0 && focal_alpha <= 1, "train config: focal_alpha must be in (0,1]");
  if (model == ModelKind::UNET)
    require(mode == TrainMode::FS, "train config: the UNET baseline is fully supervised only");
}

std::vector<Preset> ablation_presets() {
  std::vector<Preset> out;
  auto base = [] {
    TrainConfig c;
    c.lr0 = 1e-3;
    c.batch_size = 4;
    c.epochs = 50;
    return c;
  };
  {
    Preset p{"U-Net+RA", "unet-ra", base(), false};
    p.config.model = ModelKind::UNET;
    p.config.mode = TrainMode::FS;
    p.config.use_ra = true;
    out.push_back(std::move(p));
  }
  {
    Preset p{"FS SDNet", "fs-sdnet", base(), false};
    p.config.model = ModelKind::SDNET;
    p.config.mode = TrainMode::FS;
    p.config.use_ra = false;
    out.push_back(std::move(p));
  }
  {
    Preset p{"FS SDNet+RA", "fs-sdnet-ra", base(), false};
    p.config.model = ModelKind::SDNET;
    p.config.mode = TrainMode::FS;
    p.config.use_ra = true;
    out.push_back(std::move(p));
  }
  {
    Preset p{"SS SDNet+RA", "ss-sdnet-ra", base(), false};
    p.config.model = ModelKind::SDNET;
    p.config.mode = TrainMode::SS;
    p.config.use_ra = true;
    out.push_back(std::move(p));
  }
  {
    Preset p{"SS SDNet+RA+FA", "ss-sdnet-ra-fa", base(), true};
    p.config.model = ModelKind::SDNET;
    p.config.mode = TrainMode::SS;
    p.config.use_ra = true;
    out.push_back(std::move(p));
  }
  return out;
}

const Preset& preset_by_slug(const std::string& slug) {
  static const std::vector<Preset> presets = ablation_presets();
  for (const auto& p : presets)
    if (p.slug == slug) return p;
  std::string known;
  for (const auto& p : presets) known += " " + p.slug;
  fail("unknown preset '", slug, "'; known presets:", known);
}

namespace {
std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  const auto b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail("config key '", key, "': expected a boolean, got '", v, "'");
}
}  // namespace

std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "config file not found: ", path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, path.string(), ":", lineno, ": expected key = value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

void apply_config(const std::map<std::string, std::string>& kv, TrainConfig& cfg) {
  for (const auto& [key, value] : kv) {
    try {
      if (key == "mode") cfg.mode = train_mode_from_string(value);
      else if (key == "model") cfg.model = model_kind_from_string(value);
      else if (key == "use_ra") cfg.use_ra = parse_bool(value, key);
      else if (key == "fa_dataset") cfg.fa_dataset = value;
      else if (key == "lr0") cfg.lr0 = std::stod(value);
      else if (key == "batch_size") cfg.batch_size = std::stoi(value);
      else if (key == "epochs") cfg.epochs = std::stoi(value);
      else if (key == "plateau_patience") cfg.plateau_patience = std::stoi(value);
      else if (key == "plateau_factor") cfg.plateau_factor = std::stod(value);
      else if (key == "seed") cfg.seed = std::stoull(value);
      else if (key == "validation_fraction") cfg.validation_fraction = std::stod(value);
      else if (key == "focal_gamma") cfg.focal_gamma = std::stod(value);
      else if (key == "focal_alpha") cfg.focal_alpha = std::stod(value);
      else if (key == "exclude_vendors") {
        cfg.exclude_vendors.clear();
        std::string item;
        for (char c : value + ",") {
          if (c == ',') {
            const std::string t = trim(item);
            if (!t.empty()) cfg.exclude_vendors.push_back(t);
            item.clear();
          } else {
            item += c;
          }
        }
      } else {
        fail("unknown config key '", key, "'");
      }
    } catch (const std::invalid_argument&) {
      fail("config key '", key, "': cannot parse value '", value, "'");
    }
  }
}

}  // namespace carseg
