// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "carseg/data/manifest.hpp"
#include "carseg/rng.hpp"
#include "carseg/train/config.hpp"

namespace carseg {

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double rec = 0.0, zrec = 0.0, dice = 0.0, focal = 0.0;  // epoch means
  double val_dice = 0.0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  std::filesystem::path checkpoint_path;
  double best_val_dice = 0.0;
  int best_epoch = 0;
};

/// CSV columns: epoch,lr,rec,zrec,dice,focal,val_dice.
void write_train_log_csv(const TrainLog& log, const std::filesystem::path& path);

/// Reduce-on-plateau: cut the rate by `factor` after `patience` consecutive
/// epochs without improvement (improvement = best + 1e-4).
class PlateauTracker {
 public:
  PlateauTracker(int patience, double factor) : patience_(patience), factor_(factor) {}

  double observe(double metric, double lr) {
    if (metric > best_ + kTol) {
      best_ = metric;
      bad_ = 0;
    } else if (++bad_ >= patience_) {
      lr *= factor_;
      bad_ = 0;
    }
    return lr;
  }

 private:
  static constexpr double kTol = 1e-4;
  int patience_;
  double factor_;
  double best_ = -1e300;
  int bad_ = 0;
};

struct BatchPlan {
  std::vector<int> indices;  // into the training pool
  bool labeled = true;
};

/// FS: shuffled labeled batches (short tail kept). SS: strict L/U alternation
/// over independently shuffled pools, 2*min(batch counts) batches per epoch.
std::vector<BatchPlan> schedule_epoch(TrainMode mode, const std::vector<int>& labeled_pool,
                                      const std::vector<int>& unlabeled_pool, int batch_size,
                                      Rng& rng);

/// Runs the optimization loop and writes best.ckpt + train_log.csv under
/// out_dir. The manifest provides both training and validation data; the
/// validation split is taken per subject from the labeled records.
TrainLog train(const TrainConfig& config, const DatasetManifest& manifest,
               const std::filesystem::path& out_dir);

}  // namespace carseg
