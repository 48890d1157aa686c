// SPDX-License-Identifier: Apache-2.0
//
// carseg: synthetic multi-vendor cardiac segmentation sandbox.
// Subcommands wire the phantom generator, the two augmentations, the
// disentanglement model training loop and the per-vendor Dice evaluation
// into reproducible batch workflows. All randomness hangs off --seed.

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>

#include "carseg/aug/factor.hpp"
#include "carseg/aug/resolution.hpp"
#include "carseg/data/preprocess.hpp"
#include "carseg/error.hpp"
#include "carseg/eval/evaluate.hpp"
#include "carseg/model/checkpoint.hpp"
#include "carseg/phantom/phantom.hpp"
#include "carseg/runtime.hpp"
#include "carseg/train/train.hpp"

namespace fs = std::filesystem;
using namespace carseg;

namespace {

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::string item;
  for (char c : csv + ",") {
    if (c == ',') {
      if (!item.empty()) out.push_back(item);
      item.clear();
    } else if (c != ' ') {
      item += c;
    }
  }
  return out;
}

struct PhantomArgs {
  std::string out;
  std::uint64_t seed = 1234;
  int subjects = 20;
  int slices = 3;
  bool all_labeled = false;
};

int run_phantom(const PhantomArgs& a) {
  PhantomConfig cfg = default_desk_config();
  cfg.seed = a.seed;
  cfg.subjects_per_vendor = a.subjects;
  cfg.slices_per_subject = a.slices;
  if (a.all_labeled) cfg = all_labeled_variant(cfg, a.subjects, a.seed);
  const DatasetManifest m = generate_phantom_dataset(cfg, a.out);
  std::printf("wrote %zu samples for %zu vendors under %s\n", m.records.size(),
              m.vendors.size(), a.out.c_str());
  return 0;
}

struct HistArgs {
  std::string manifest, out;
  double lo = 0.9, hi = 2.8;
  int bins = 10;
};

int run_hist(const HistArgs& a) {
  const DatasetManifest m = load_manifest(a.manifest);
  require(a.bins >= 1 && a.hi > a.lo, "hist: need bins >= 1 and hi > lo");
  std::vector<double> edges;
  for (int i = 0; i <= a.bins; ++i) edges.push_back(a.lo + (a.hi - a.lo) * i / a.bins);
  write_histogram_csv(resolution_histogram(m, edges), a.out);
  std::printf("wrote per-vendor resolution histogram to %s\n", a.out.c_str());
  return 0;
}

struct TrainArgs {
  std::string manifest, out;
  std::string preset, config_file;
  std::string fa_dataset, mode, model, exclude;
  std::uint64_t seed = 0;
  int epochs = 0, batch_size = 0, workers = 0;
  double lr0 = 0;
  int ra_flag = -1;  // -1 unset, 0 off, 1 on
  CLI::App* cmd = nullptr;
};

int run_train(const TrainArgs& a) {
  if (a.workers > 0) set_workers(a.workers);
  TrainConfig cfg;
  if (!a.preset.empty()) cfg = preset_by_slug(a.preset).config;
  if (!a.config_file.empty()) apply_config(parse_config_file(a.config_file), cfg);
  // explicit flags win over preset and config file
  if (a.cmd->count("--seed")) cfg.seed = a.seed;
  if (a.cmd->count("--epochs")) cfg.epochs = a.epochs;
  if (a.cmd->count("--batch-size")) cfg.batch_size = a.batch_size;
  if (a.cmd->count("--lr0")) cfg.lr0 = a.lr0;
  if (a.cmd->count("--mode")) cfg.mode = train_mode_from_string(a.mode);
  if (a.cmd->count("--model")) cfg.model = model_kind_from_string(a.model);
  if (a.cmd->count("--exclude-vendors")) cfg.exclude_vendors = split_list(a.exclude);
  if (a.ra_flag >= 0) cfg.use_ra = a.ra_flag == 1;
  if (!a.fa_dataset.empty()) cfg.fa_dataset = a.fa_dataset;
  if (!a.preset.empty() && preset_by_slug(a.preset).requires_fa)
    require(cfg.fa_dataset.has_value(), "preset '", a.preset,
            "' requires --fa-dataset (generate one with `augment fa`)");

  const DatasetManifest manifest = load_manifest(a.manifest);
  const TrainLog log = train(cfg, manifest, a.out);
  std::printf("trained %s for %zu epochs; best val dice %.4f (epoch %d)\n",
              to_string(cfg.model), log.epochs.size(), log.best_val_dice, log.best_epoch);
  std::printf("checkpoint: %s\nlog: %s\n", log.checkpoint_path.string().c_str(),
              (fs::path(a.out) / "train_log.csv").string().c_str());
  return 0;
}

struct AugmentRaArgs {
  std::string manifest, out;
  std::uint64_t seed = 0;
  int repeat = 1;
};

int run_augment_ra(const AugmentRaArgs& a) {
  const DatasetManifest src = load_manifest(a.manifest);
  require(a.repeat >= 1, "augment ra: --repeat must be >= 1");
  std::error_code ec;
  fs::create_directories(a.out, ec);
  require(fs::is_directory(a.out), "cannot create output directory ", a.out);
  const RAConfig cfg;
  DatasetManifest out_manifest;
  out_manifest.base_dir = a.out;
  out_manifest.vendors = src.vendors;
  int index = 0;
  for (int k = 0; k < a.repeat; ++k)
    for (const auto& rec : src.records) {
      Rng rng(a.seed, static_cast<std::uint64_t>(index));
      Sample s = read_sample(rec, src.base_dir);
      s.image = normalize_intensity(s.image);
      Sample aug = apply_ra(s, rng, cfg);
      aug.image.vendor = rec.vendor;
      aug.image.subject_id = rec.subject_id;
      aug.image.phase = rec.phase;
      char name[32];
      std::snprintf(name, sizeof(name), "ra%06d", index);
      const fs::path dir = fs::path(a.out) / name;
      write_sample(aug, dir);
      out_manifest.records.push_back(record_for(aug, dir, a.out));
      ++index;
    }
  out_manifest.sort_records();
  save_manifest(out_manifest, fs::path(a.out) / "manifest.json");
  std::printf("wrote %d resolution-augmented samples under %s\n", index, a.out.c_str());
  return 0;
}

struct FactorsArgs {
  std::string ckpt, manifest, out;
  std::string exclude = "D";
};

int run_factors_extract(const FactorsArgs& a) {
  const DatasetManifest m = load_manifest(a.manifest);
  const FactorBank bank = extract_factors(a.ckpt, m, split_list(a.exclude));
  save_bank(bank, a.out);
  std::printf("extracted %zu anatomy and %zu modality factors from %zu vendors into %s\n",
              bank.anatomy_count(), bank.modality_count(), bank.vendors.size(), a.out.c_str());
  return 0;
}

struct AugmentFaArgs {
  std::string bank, ckpt, out;
  int count = 200;
  std::uint64_t seed = 0;
  bool same_vendor_control = false;
  int workers = 0;
};

int run_augment_fa(const AugmentFaArgs& a) {
  if (a.workers > 0) set_workers(a.workers);
  const FactorBank bank = load_bank(a.bank);
  const DatasetManifest m =
      generate_fa_dataset(bank, a.ckpt, a.count, a.seed, a.out, a.same_vendor_control);
  int labeled = 0;
  for (const auto& rec : m.records) labeled += rec.labeled;
  std::printf("generated %zu factor-augmented samples (%d labeled) under %s\n",
              m.records.size(), labeled, a.out.c_str());
  return 0;
}

struct EvalArgs {
  std::string ckpt, manifest, report;
  std::string model_name = "model";
};

int run_eval(const EvalArgs& a) {
  const DatasetManifest m = load_manifest(a.manifest);
  const EvalReport report = evaluate_checkpoint(a.ckpt, m, a.model_name);
  write_report_csv({report}, a.report);
  std::fputs(format_report_table({report}).c_str(), stdout);
  std::printf("report written to %s\n", a.report.c_str());
  return 0;
}

struct AblationArgs {
  std::string out;
  std::uint64_t seed = 1;
  int epochs = 15;
  int subjects = 12;
  int eval_subjects = 8;
  int slices = 3;
  int fa_count = 240;
  int workers = 0;
};

int run_ablation(const AblationArgs& a) {
  if (a.workers > 0) set_workers(a.workers);
  const fs::path root(a.out);

  PhantomConfig train_cfg = default_desk_config();
  train_cfg.seed = a.seed;
  train_cfg.subjects_per_vendor = a.subjects;
  train_cfg.slices_per_subject = a.slices;
  const DatasetManifest train_manifest =
      generate_phantom_dataset(train_cfg, root / "train_data");
  const PhantomConfig eval_cfg =
      all_labeled_variant(train_cfg, a.eval_subjects, a.seed + 0x9999);
  const DatasetManifest eval_manifest = generate_phantom_dataset(eval_cfg, root / "eval_data");
  std::printf("datasets ready: %zu train records, %zu eval records\n",
              train_manifest.records.size(), eval_manifest.records.size());

  std::vector<EvalReport> reports;
  fs::path ss_ra_ckpt;
  for (const Preset& preset : ablation_presets()) {
    TrainConfig cfg = preset.config;
    cfg.epochs = a.epochs;
    cfg.seed = a.seed;
    const fs::path run_dir = root / preset.slug;
    if (preset.requires_fa) {
      require(!ss_ra_ckpt.empty(), "ablation: SS SDNet+RA must run before the FA preset");
      const FactorBank bank = extract_factors(ss_ra_ckpt, train_manifest, {"D"});
      save_bank(bank, root / "factor_bank.bin");
      generate_fa_dataset(bank, ss_ra_ckpt, a.fa_count, a.seed, root / "fa_dataset");
      cfg.fa_dataset = root / "fa_dataset";
      std::printf("[%s] factor-augmented dataset of %d samples ready\n", preset.name.c_str(),
                  a.fa_count);
    }
    std::printf("[%s] training (%d epochs, seed %llu)...\n", preset.name.c_str(), cfg.epochs,
                static_cast<unsigned long long>(cfg.seed));
    const TrainLog log = train(cfg, train_manifest, run_dir);
    std::printf("[%s] best val dice %.4f\n", preset.name.c_str(), log.best_val_dice);
    if (preset.slug == "ss-sdnet-ra") ss_ra_ckpt = log.checkpoint_path;
    reports.push_back(evaluate_checkpoint(log.checkpoint_path, eval_manifest, preset.name));
  }

  write_report_csv(reports, root / "ablation_report.csv");
  const std::string table = format_report_table(reports);
  std::fputs(table.c_str(), stdout);
  std::ofstream table_file(root / "ablation_table.txt");
  table_file << table;
  std::printf("combined report: %s\n", (root / "ablation_report.csv").string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic multi-vendor cardiac segmentation sandbox"};
  app.require_subcommand(1);

  PhantomArgs pa;
  auto* phantom = app.add_subcommand("phantom", "generate a synthetic multi-vendor dataset");
  phantom->add_option("--out", pa.out, "output dataset directory")->required();
  phantom->add_option("--seed", pa.seed, "rng seed");
  phantom->add_option("--subjects", pa.subjects, "subjects per vendor");
  phantom->add_option("--slices", pa.slices, "slices per subject");
  phantom->add_flag("--all-labeled", pa.all_labeled,
                    "write masks for every vendor (evaluation datasets)");

  HistArgs ha;
  auto* hist = app.add_subcommand("hist", "per-vendor pixel-area histogram CSV");
  hist->add_option("--manifest", ha.manifest, "manifest.json path")->required();
  hist->add_option("--out", ha.out, "output CSV path")->required();
  hist->add_option("--lo", ha.lo, "lowest bin edge (mm^2)");
  hist->add_option("--hi", ha.hi, "highest bin edge (mm^2)");
  hist->add_option("--bins", ha.bins, "number of bins");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "train a segmentation model");
  train_cmd->add_option("--manifest", ta.manifest, "training manifest.json")->required();
  train_cmd->add_option("--out", ta.out, "run output directory")->required();
  train_cmd->add_option("--preset", ta.preset,
                        "unet-ra | fs-sdnet | fs-sdnet-ra | ss-sdnet-ra | ss-sdnet-ra-fa");
  train_cmd->add_option("--config", ta.config_file, "key=value config file");
  train_cmd->add_option("--seed", ta.seed, "rng seed");
  train_cmd->add_option("--epochs", ta.epochs, "training epochs");
  train_cmd->add_option("--batch-size", ta.batch_size, "mini-batch size");
  train_cmd->add_option("--lr0", ta.lr0, "initial learning rate");
  train_cmd->add_option("--mode", ta.mode, "FS or SS");
  train_cmd->add_option("--model", ta.model, "SDNET or UNET");
  train_cmd->add_option("--fa-dataset", ta.fa_dataset, "factor-augmented dataset directory");
  train_cmd->add_option("--exclude-vendors", ta.exclude, "comma list (default D)");
  train_cmd->add_option("--workers", ta.workers, "compute worker threads");
  train_cmd->add_flag("--ra", [&ta](std::int64_t) { ta.ra_flag = 1; }, "enable RA");
  train_cmd->add_flag("--no-ra", [&ta](std::int64_t) { ta.ra_flag = 0; }, "disable RA");
  ta.cmd = train_cmd;

  auto* augment = app.add_subcommand("augment", "data augmentation generators");
  augment->require_subcommand(1);
  AugmentRaArgs ra;
  auto* aug_ra = augment->add_subcommand("ra", "write a resolution-augmented dataset");
  aug_ra->add_option("--manifest", ra.manifest, "source manifest.json")->required();
  aug_ra->add_option("--out", ra.out, "output dataset directory")->required();
  aug_ra->add_option("--seed", ra.seed, "rng seed");
  aug_ra->add_option("--repeat", ra.repeat, "augmented copies per record");

  AugmentFaArgs fa;
  auto* aug_fa = augment->add_subcommand("fa", "decode factor-mixed samples into a dataset");
  aug_fa->add_option("--bank", fa.bank, "factor bank file")->required();
  aug_fa->add_option("--ckpt", fa.ckpt, "checkpoint that produced the bank")->required();
  aug_fa->add_option("--out", fa.out, "output dataset directory")->required();
  aug_fa->add_option("--count", fa.count, "number of samples");
  aug_fa->add_option("--seed", fa.seed, "rng seed");
  aug_fa->add_option("--workers", fa.workers, "compute worker threads");
  aug_fa->add_flag("--same-vendor-control", fa.same_vendor_control,
                   "force modality vendor == anatomy vendor (reconstruction control)");

  auto* factors = app.add_subcommand("factors", "factor bank operations");
  factors->require_subcommand(1);
  FactorsArgs fx;
  auto* extract = factors->add_subcommand("extract", "encode a dataset into a factor bank");
  extract->add_option("--ckpt", fx.ckpt, "pretrained checkpoint")->required();
  extract->add_option("--manifest", fx.manifest, "dataset manifest.json")->required();
  extract->add_option("--out", fx.out, "output bank file")->required();
  extract->add_option("--exclude-vendors", fx.exclude, "comma list (default D)");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "per-vendor Dice report for a checkpoint");
  eval_cmd->add_option("--ckpt", ea.ckpt, "checkpoint path")->required();
  eval_cmd->add_option("--manifest", ea.manifest, "labeled manifest.json")->required();
  eval_cmd->add_option("--report", ea.report, "output CSV path")->required();
  eval_cmd->add_option("--model-name", ea.model_name, "name used in the report");

  AblationArgs ab;
  auto* ablation = app.add_subcommand("ablation", "run all 5 presets and a combined report");
  ablation->add_option("--out", ab.out, "output root directory")->required();
  ablation->add_option("--seed", ab.seed, "rng seed");
  ablation->add_option("--epochs", ab.epochs, "epochs per preset (desk-scale default 15)");
  ablation->add_option("--subjects", ab.subjects, "train subjects per vendor");
  ablation->add_option("--eval-subjects", ab.eval_subjects, "eval subjects per vendor");
  ablation->add_option("--slices", ab.slices, "slices per subject");
  ablation->add_option("--fa-count", ab.fa_count, "factor-augmented samples");
  ablation->add_option("--workers", ab.workers, "compute worker threads");

  try {
    app.parse(argc, argv);
    if (*phantom) return run_phantom(pa);
    if (*hist) return run_hist(ha);
    if (*train_cmd) return run_train(ta);
    if (*aug_ra) return run_augment_ra(ra);
    if (*aug_fa) return run_augment_fa(fa);
    if (*extract) return run_factors_extract(fx);
    if (*eval_cmd) return run_eval(ea);
    if (*ablation) return run_ablation(ab);
    return 1;
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 2;
  }
}
