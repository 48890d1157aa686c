// SPDX-License-Identifier: Apache-2.0
#include "carseg/train/train.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "carseg/aug/resolution.hpp"
#include "carseg/data/preprocess.hpp"
#include "carseg/error.hpp"
#include "carseg/eval/evaluate.hpp"
#include "carseg/losses.hpp"
#include "carseg/model/checkpoint.hpp"
#include "carseg/nn/adam.hpp"

namespace carseg {

namespace {

// rng stream tags; any value works, they just separate the consumers
constexpr std::uint64_t kStreamValSplit = 0x7a11;
constexpr std::uint64_t kStreamEpoch = 0xe70000000ULL;
constexpr std::uint64_t kStreamAug = 0xa50000000ULL;
constexpr std::uint64_t kStreamZ = 0x5a0000000ULL;

template <typename C, typename R>
void shuffle_with(C& v, R& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

std::vector<BatchPlan> chunk(const std::vector<int>& pool, int batch_size, bool labeled) {
  std::vector<BatchPlan> out;
  for (std::size_t i = 0; i < pool.size(); i += batch_size) {
    BatchPlan b;
    b.labeled = labeled;
    for (std::size_t j = i; j < std::min(pool.size(), i + batch_size); ++j)
      b.indices.push_back(pool[j]);
    out.push_back(std::move(b));
  }
  return out;
}

struct LoadedSample {
  Sample native;   // normalized, native geometry (RA input)
  Sample cropped;  // normalized + center-cropped to 224
  bool labeled = false;
  bool generated = false;
  std::string subject_id;
};

LoadedSample load_training_sample(const SampleRecord& rec, const std::filesystem::path& base) {
  LoadedSample out;
  Sample s = read_sample(rec, base);
  out.native.image = normalize_intensity(s.image);
  out.native.mask = s.mask;
  out.native.provenance = s.provenance;
  out.cropped = center_crop_or_pad(out.native);
  out.labeled = s.labeled();
  out.generated = s.generated();
  out.subject_id = rec.subject_id;
  return out;
}

void fill_slot(nn::Tensor& x, int slot, const Image2D& img) {
  require(img.height == kTargetSize && img.width == kTargetSize,
          "training sample is not 224x224 after preprocessing");
  std::copy(img.pixels.begin(), img.pixels.end(),
            x.data.begin() + static_cast<std::size_t>(slot) * kTargetSize * kTargetSize);
}

}  // namespace

void write_train_log_csv(const TrainLog& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), "cannot open ", path.string(), " for writing");
  out << "epoch,lr,rec,zrec,dice,focal,val_dice\n";
  char line[200];
  for (const auto& e : log.epochs) {
    std::snprintf(line, sizeof(line), "%d,%.9g,%.6f,%.6f,%.6f,%.6f,%.6f\n", e.epoch, e.lr, e.rec,
                  e.zrec, e.dice, e.focal, e.val_dice);
    out << line;
  }
  require(out.good(), "write failed: ", path.string());
}

std::vector<BatchPlan> schedule_epoch(TrainMode mode, const std::vector<int>& labeled_pool,
                                      const std::vector<int>& unlabeled_pool, int batch_size,
                                      Rng& rng) {
  require(!labeled_pool.empty(), "batch scheduler: empty labeled pool");
  std::vector<int> labeled = labeled_pool;
  shuffle_with(labeled, rng);
  if (mode == TrainMode::FS) return chunk(labeled, batch_size, true);

  require(!unlabeled_pool.empty(), "batch scheduler: SS mode requires unlabeled records");
  std::vector<int> unlabeled = unlabeled_pool;
  shuffle_with(unlabeled, rng);
  const auto lb = chunk(labeled, batch_size, true);
  const auto ub = chunk(unlabeled, batch_size, false);
  const std::size_t n = std::min(lb.size(), ub.size());
  std::vector<BatchPlan> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(lb[i]);
    out.push_back(ub[i]);
  }
  return out;
}

TrainLog train(const TrainConfig& config, const DatasetManifest& manifest,
               const std::filesystem::path& out_dir) {
  config.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  require(std::filesystem::is_directory(out_dir), "cannot create output directory ",
          out_dir.string());

  // ---- assemble the training/validation pools -------------------------------
  const auto excluded = [&](const std::string& vendor) {
    return std::find(config.exclude_vendors.begin(), config.exclude_vendors.end(), vendor) !=
           config.exclude_vendors.end();
  };

  std::vector<LoadedSample> samples;
  std::vector<int> labeled_idx, unlabeled_idx;
  for (const auto& rec : manifest.records) {
    if (excluded(rec.vendor)) continue;
    if (!rec.labeled && config.mode == TrainMode::FS) continue;
    samples.push_back(load_training_sample(rec, manifest.base_dir));
    (rec.labeled ? labeled_idx : unlabeled_idx).push_back(static_cast<int>(samples.size()) - 1);
  }
  require(!labeled_idx.empty(), "no labeled data: training requires at least one labeled record");

  // validation split by subject over the labeled records
  std::vector<std::string> subjects;
  for (int i : labeled_idx) subjects.push_back(samples[i].subject_id);
  std::sort(subjects.begin(), subjects.end());
  subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
  std::set<std::string> val_subjects;
  std::vector<int> train_labeled, val_idx;
  if (subjects.size() >= 2) {
    Rng split_rng(config.seed, kStreamValSplit);
    shuffle_with(subjects, split_rng);
    const long k = std::clamp<long>(
        std::lround(config.validation_fraction * static_cast<double>(subjects.size())), 1,
        static_cast<long>(subjects.size()) - 1);
    val_subjects.insert(subjects.begin(), subjects.begin() + k);
    for (int i : labeled_idx)
      (val_subjects.count(samples[i].subject_id) ? val_idx : train_labeled).push_back(i);
  } else {  // single subject: hold out its first slice
    val_idx.push_back(labeled_idx.front());
    train_labeled.assign(labeled_idx.begin() + 1, labeled_idx.end());
    if (train_labeled.empty()) train_labeled = val_idx;
  }
  require(!train_labeled.empty(), "validation split consumed all labeled data");

  // factor-augmented records join the training pools only
  if (config.fa_dataset) {
    const DatasetManifest fa = load_manifest(*config.fa_dataset / "manifest.json");
    for (const auto& rec : fa.records) {
      samples.push_back(load_training_sample(rec, fa.base_dir));
      const int idx = static_cast<int>(samples.size()) - 1;
      if (rec.labeled)
        train_labeled.push_back(idx);
      else if (config.mode == TrainMode::SS)
        unlabeled_idx.push_back(idx);
    }
  }

  // ---- models, optimizer, loss plumbing --------------------------------------
  model::SdNet sdnet;
  model::UNetSeg unet;
  const bool is_sdnet = config.model == ModelKind::SDNET;
  if (is_sdnet)
    sdnet.init(config.seed);
  else
    unet.init(config.seed);

  nn::AdamT<float> adam(config.lr0);
  std::vector<nn::ParamT<float>*> all_params, unlabeled_params;
  if (is_sdnet) {
    all_params = sdnet.all_params();
    for (const char* g : {"ea.", "em.", "dec."})
      for (auto* p : sdnet.param_group(g)) unlabeled_params.push_back(p);
  } else {
    all_params = unet.all_params();
  }

  const RAConfig ra_cfg;
  const int target2 = kTargetSize * kTargetSize;

  // per-record augmentation stream: (epoch, pool index) so the schedule
  // order does not change the draws
  auto augmented_image = [&](int idx, int epoch) -> Sample {
    const LoadedSample& ls = samples[idx];
    if (!config.use_ra || ls.generated) return ls.cropped;
    Rng rng(config.seed, kStreamAug + static_cast<std::uint64_t>(epoch) * 1048576 + idx);
    return apply_ra(ls.native, rng, ra_cfg);
  };

  auto build_batch = [&](const BatchPlan& plan, int epoch, nn::Tensor& x, LabelBatch& labels) {
    const int b = static_cast<int>(plan.indices.size());
    x = nn::Tensor({b, 1, kTargetSize, kTargetSize});
    if (plan.labeled) {
      labels.n = b;
      labels.h = kTargetSize;
      labels.w = kTargetSize;
      labels.labels.assign(static_cast<std::size_t>(b) * target2, 0);
    }
    for (int s = 0; s < b; ++s) {
      const Sample aug = augmented_image(plan.indices[s], epoch);
      fill_slot(x, s, aug.image);
      if (plan.labeled) {
        require(aug.mask.has_value(), "labeled batch contains an unlabeled sample");
        std::copy(aug.mask->labels.begin(), aug.mask->labels.end(),
                  labels.labels.begin() + static_cast<std::size_t>(s) * target2);
      }
    }
  };

  // one optimization step; returns the epoch-accumulation terms
  auto sdnet_step = [&](const nn::Tensor& x, const LabelBatch* labels, std::uint64_t step_id) {
    const LossWeights w = labels ? LossWeights::labeled() : LossWeights::unlabeled();
    auto anatomy = sdnet.ea.forward(x, true);
    auto z = sdnet.em.forward(x, true);
    nn::Tensor probs;
    if (labels) probs = sdnet.seg.forward(anatomy.binary, true);
    auto rec = sdnet.dec.forward(anatomy.binary, z, true);

    Rng zrng(config.seed, kStreamZ + step_id);
    nn::Tensor z_sampled = nn::Tensor::randn({x.dim(0), model::kModalityDim}, zrng);
    auto latent = latent_regression_forward(sdnet.dec, sdnet.em, anatomy.binary, z_sampled, true);

    auto l_rec = l1_loss(rec, x);
    LossResult<float> l_dice, l_focal;
    if (labels) {
      l_dice = dice_loss(probs, *labels);
      l_focal = focal_loss(probs, *labels, config.focal_gamma, config.focal_alpha);
    }
    LossTerms terms{l_rec.value, latent.value, l_dice.value, l_focal.value};
    total_loss(terms, w);  // finiteness guard

    // backward, exact reverse of the forward calls (modules keep LIFO state)
    latent.d_zhat *= static_cast<float>(w.zrec);
    auto d_gen = sdnet.em.backward(latent.d_zhat);
    auto g2 = sdnet.dec.backward(d_gen);
    l_rec.grad *= static_cast<float>(w.rec);
    auto g1 = sdnet.dec.backward(l_rec.grad);
    sdnet.em.backward(g1.d_z);
    nn::Tensor d_anatomy = g1.d_anatomy;
    d_anatomy += g2.d_anatomy;
    if (labels) {
      nn::Tensor d_probs = l_dice.grad;
      d_probs *= static_cast<float>(w.dice);
      l_focal.grad *= static_cast<float>(w.focal);
      d_probs += l_focal.grad;
      d_anatomy += sdnet.seg.backward(d_probs);
    }
    sdnet.ea.backward(d_anatomy);

    adam.step(labels ? all_params : unlabeled_params);
    nn::AdamT<float>::zero_grad(all_params);
    return terms;
  };

  auto unet_step = [&](const nn::Tensor& x, const LabelBatch& labels) {
    auto probs = unet.forward(x, true);
    auto l_dice = dice_loss(probs, labels);
    auto l_focal = focal_loss(probs, labels, config.focal_gamma, config.focal_alpha);
    LossTerms terms{0.0, 0.0, l_dice.value, l_focal.value};
    total_loss(terms, LossWeights::labeled());
    nn::Tensor d_probs = l_dice.grad;
    d_probs += l_focal.grad;
    unet.backward(d_probs);
    adam.step(all_params);
    nn::AdamT<float>::zero_grad(all_params);
    return terms;
  };

  auto predict_probs = [&](const nn::Tensor& x) {
    if (is_sdnet) {
      auto anatomy = sdnet.ea.forward(x, false);
      return sdnet.seg.forward(anatomy.binary, false);
    }
    return unet.forward(x, false);
  };

  auto validation_dice = [&] {
    double acc = 0.0;
    for (int i : val_idx) {
      const Sample& s = samples[i].cropped;
      nn::Tensor x({1, 1, kTargetSize, kTargetSize});
      fill_slot(x, 0, s.image);
      const SegMask pred = argmax_mask(predict_probs(x), 0);
      acc += mean_foreground_dice(pred, *s.mask);
    }
    return acc / static_cast<double>(val_idx.size());
  };

  // ---- epoch loop -------------------------------------------------------------
  TrainLog log;
  log.checkpoint_path = out_dir / "best.ckpt";
  PlateauTracker plateau(config.plateau_patience, config.plateau_factor);
  double lr = config.lr0;
  double best_val = -1.0;
  std::uint64_t global_step = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng epoch_rng(config.seed, kStreamEpoch + static_cast<std::uint64_t>(epoch));
    const auto batches =
        schedule_epoch(config.mode, train_labeled, unlabeled_idx, config.batch_size, epoch_rng);
    adam.lr = lr;

    EpochLog el;
    el.epoch = epoch;
    el.lr = lr;
    long n_batches = 0, n_labeled_batches = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      nn::Tensor x;
      LabelBatch labels;
      build_batch(batches[bi], epoch, x, labels);
      ++global_step;
      LossTerms terms;
      try {
        if (is_sdnet)
          terms = sdnet_step(x, batches[bi].labeled ? &labels : nullptr, global_step);
        else
          terms = unet_step(x, labels);
      } catch (const Error& e) {
        fail("epoch ", epoch, " step ", bi + 1, ": ", e.what());
      }
      el.rec += terms.rec;
      el.zrec += terms.zrec;
      ++n_batches;
      if (batches[bi].labeled) {
        el.dice += terms.dice;
        el.focal += terms.focal;
        ++n_labeled_batches;
      }
    }
    el.rec /= n_batches;
    el.zrec /= n_batches;
    if (n_labeled_batches > 0) {
      el.dice /= n_labeled_batches;
      el.focal /= n_labeled_batches;
    }

    el.val_dice = validation_dice();
    if (el.val_dice > best_val) {
      best_val = el.val_dice;
      log.best_val_dice = el.val_dice;
      log.best_epoch = epoch;
      if (is_sdnet)
        model::save_checkpoint(sdnet, log.checkpoint_path);
      else
        model::save_checkpoint(unet, log.checkpoint_path);
    }
    log.epochs.push_back(el);
    std::fprintf(stderr,
                 "epoch %d/%d  lr %.2g  rec %.4f  zrec %.4f  dice %.4f  focal %.4f  val %.4f\n",
                 epoch, config.epochs, el.lr, el.rec, el.zrec, el.dice, el.focal, el.val_dice);
    lr = plateau.observe(el.val_dice, lr);
  }

  write_train_log_csv(log, out_dir / "train_log.csv");
  return log;
}

}  // namespace carseg
