// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "carseg/data/manifest.hpp"
#include "carseg/model/sdnet.hpp"
#include "carseg/model/unet_seg.hpp"

namespace carseg {

/// Per-pixel argmax over the 4 class channels; ties resolve to the lowest
/// class index.
SegMask argmax_mask(const nn::Tensor& probs, int batch_index);

/// 2|P^G| / (|P|+|G|) over the binary masks of class_id; 1.0 when both are
/// empty, 0.0 when exactly one is.
double dice_coefficient(const SegMask& pred, const SegMask& gt, int class_id);

/// Mean over foreground classes 1..3 of dice_coefficient.
double mean_foreground_dice(const SegMask& pred, const SegMask& gt);

struct EvalRow {
  std::string model;
  std::string vendor;
  double dice[3] = {0, 0, 0};  // LV, MYO, RV
  int count = 0;

  double mean_fg() const { return (dice[0] + dice[1] + dice[2]) / 3.0; }
};

struct EvalReport {
  std::vector<EvalRow> rows;

  const EvalRow* find(const std::string& vendor) const {
    for (const auto& r : rows)
      if (r.vendor == vendor) return &r;
    return nullptr;
  }
};

/// Batch of preprocessed images [N,1,H,W] -> class probabilities [N,4,H,W].
using Predictor = std::function<nn::Tensor(const nn::Tensor&)>;

/// Standard preprocessing (normalize + center-crop, no augmentation), predict,
/// per-class Dice, averaged per vendor. Every record must be labeled.
EvalReport evaluate_with(const Predictor& predictor, const DatasetManifest& manifest,
                         const std::string& model_name);

EvalReport evaluate(model::SdNet& net, const DatasetManifest& manifest,
                    const std::string& model_name);
EvalReport evaluate(model::UNetSeg& net, const DatasetManifest& manifest,
                    const std::string& model_name);

/// Loads either model kind by its descriptor and evaluates it.
EvalReport evaluate_checkpoint(const std::filesystem::path& ckpt,
                               const DatasetManifest& manifest, const std::string& model_name);

SegMask predict_mask(model::SdNet& net, const Image2D& preprocessed);

/// CSV columns: model,vendor,class,dice,n.
void write_report_csv(const std::vector<EvalReport>& reports, const std::filesystem::path& path);

/// Fixed-width text table, vendors x classes.
std::string format_report_table(const std::vector<EvalReport>& reports);

}  // namespace carseg
