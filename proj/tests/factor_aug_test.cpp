// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "carseg/aug/factor.hpp"
#include "carseg/data/preprocess.hpp"
#include "carseg/error.hpp"
#include "carseg/model/checkpoint.hpp"
#include "carseg/phantom/phantom.hpp"
#include "test_util.hpp"

using namespace carseg;
using testutil::TempDir;

namespace {

struct Fixture {
  TempDir data{"fa_data"};
  TempDir run{"fa_run"};
  DatasetManifest manifest;
  std::filesystem::path ckpt;
  model::SdNet net;

  Fixture() {
    PhantomConfig cfg = default_desk_config();
    cfg.subjects_per_vendor = 3;
    cfg.slices_per_subject = 2;
    cfg.seed = 91;
    manifest = generate_phantom_dataset(cfg, data.path());
    net.init(7);
    ckpt = run / "model.ckpt";
    model::save_checkpoint(net, ckpt);
  }
};

}  // namespace

TEST_CASE("bit packing round-trips binary tensors") {
  Rng rng(1);
  nn::Tensor bin({2, 8, 16, 16});
  for (auto& v : bin.data) v = rng.below(2) ? 1.0f : 0.0f;
  for (int i = 0; i < 2; ++i) {
    const auto packed = pack_bits(bin, i);
    const nn::Tensor back = unpack_bits(packed, 8, 16, 16);
    const std::size_t count = 8 * 16 * 16;
    for (std::size_t j = 0; j < count; ++j) CHECK(back.data[j] == bin.data[i * count + j]);
  }
}

TEST_CASE("factor extraction: counts, label propagation, determinism") {
  Fixture fx;
  const FactorBank bank = extract_factors(fx.ckpt, fx.manifest, {"D"});

  // 3 vendors remain (A, B labeled; C unlabeled), 6 records each
  REQUIRE(bank.vendors.size() == 3);
  CHECK(bank.anatomy_count() == 18);
  CHECK(bank.modality_count() == 18);
  CHECK(bank.fingerprint == model::checkpoint_fingerprint(fx.ckpt));
  for (const auto& v : bank.vendors) {
    CHECK(v.anatomy.size() == 6);
    CHECK(v.modality.size() == 6);
    for (const auto& a : v.anatomy) {
      CHECK(a.labeled == (v.vendor != "C"));
      CHECK(a.mask.empty() == (v.vendor == "C"));
      CHECK_FALSE(a.source.empty());
    }
  }

  SUBCASE("bank file round-trips and re-extraction is byte-identical") {
    const auto p1 = fx.run / "bank1.bin";
    const auto p2 = fx.run / "bank2.bin";
    save_bank(bank, p1);
    save_bank(extract_factors(fx.ckpt, fx.manifest, {"D"}), p2);
    CHECK(testutil::slurp(p1) == testutil::slurp(p2));

    const FactorBank loaded = load_bank(p1);
    CHECK(loaded.fingerprint == bank.fingerprint);
    REQUIRE(loaded.vendors.size() == bank.vendors.size());
    for (std::size_t v = 0; v < bank.vendors.size(); ++v) {
      CHECK(loaded.vendors[v].vendor == bank.vendors[v].vendor);
      for (std::size_t i = 0; i < bank.vendors[v].anatomy.size(); ++i) {
        CHECK(loaded.vendors[v].anatomy[i].packed == bank.vendors[v].anatomy[i].packed);
        CHECK(loaded.vendors[v].anatomy[i].mask == bank.vendors[v].anatomy[i].mask);
        CHECK(loaded.vendors[v].modality[i].z == bank.vendors[v].modality[i].z);
      }
    }
  }
}

TEST_CASE("fa_sample: inheritance, determinism, range") {
  Fixture fx;
  const FactorBank bank = extract_factors(fx.net, fx.manifest,
                                          model::checkpoint_fingerprint(fx.ckpt), {"D"});
  Rng rng(3);
  int labeled_seen = 0, unlabeled_seen = 0;
  for (int t = 0; t < 12; ++t) {
    Sample s = fa_sample(bank, rng, fx.net);
    CHECK(s.image.height == 224);
    CHECK(s.image.width == 224);
    for (float v : s.image.pixels) {
      CHECK(v > -1.0f);
      CHECK(v < 1.0f);
    }
    const std::string av = s.provenance.at("anatomy_vendor");
    if (av == "C") {
      CHECK_FALSE(s.labeled());
      ++unlabeled_seen;
    } else {
      REQUIRE(s.labeled());
      ++labeled_seen;
      // mask bytes equal the preprocessed source mask
      const VendorFactors* vf = bank.find(av);
      bool matched = false;
      for (const auto& a : vf->anatomy)
        if (a.source == s.provenance.at("anatomy_source")) {
          CHECK(s.mask->labels == a.mask);
          matched = true;
        }
      CHECK(matched);
    }
    CHECK(s.image.vendor == av + "+" + s.provenance.at("modality_vendor"));
  }
  CHECK(labeled_seen > 0);
  CHECK(unlabeled_seen > 0);

  SUBCASE("same rng state reproduces the sample exactly") {
    Rng r1(99), r2(99);
    const Sample a = fa_sample(bank, r1, fx.net);
    const Sample b = fa_sample(bank, r2, fx.net);
    CHECK(a.image.pixels == b.image.pixels);
    CHECK(a.provenance == b.provenance);
    CHECK(a.labeled() == b.labeled());
  }

  SUBCASE("empty bank is rejected") {
    FactorBank empty;
    Rng r(1);
    CHECK_THROWS_WITH_AS(fa_draw(empty, r), doctest::Contains("empty"), Error);
  }
}

TEST_CASE("generate_fa_dataset: provenance, control flag, fingerprint coupling") {
  Fixture fx;
  const FactorBank bank = extract_factors(fx.ckpt, fx.manifest, {"D"});
  const auto out = fx.run / "fa_out";
  const DatasetManifest fa = generate_fa_dataset(bank, fx.ckpt, 40, 17, out);
  REQUIRE(fa.records.size() == 40);

  int labeled = 0;
  for (const auto& rec : fa.records) {
    const Sample s = read_sample(rec, fa.base_dir);
    REQUIRE(s.provenance.count("anatomy_source"));
    REQUIRE(s.provenance.count("modality_source"));
    REQUIRE(s.provenance.count("anatomy_vendor"));
    REQUIRE(s.provenance.count("modality_vendor"));
    CHECK(s.generated());
    labeled += rec.labeled;
    if (rec.labeled) {
      // byte-identical to the independently preprocessed source mask
      const std::string src = s.provenance.at("anatomy_source");
      bool found = false;
      for (const auto& orig : fx.manifest.records)
        if (orig.image_uri == src) {
          const Sample source = preprocess(read_sample(orig, fx.manifest.base_dir));
          CHECK(s.mask->labels == source.mask->labels);
          found = true;
        }
      CHECK(found);
    }
  }
  CHECK(labeled > 0);
  CHECK(labeled < 40);

  SUBCASE("regenerating with the same seed is byte-identical") {
    TempDir other("fa_out2");
    generate_fa_dataset(bank, fx.ckpt, 40, 17, other.path());
    CHECK(testutil::same_tree(out, other.path()));
  }

  SUBCASE("same-vendor control forces matching vendors") {
    TempDir ctrl("fa_ctrl");
    const DatasetManifest c = generate_fa_dataset(bank, fx.ckpt, 25, 18, ctrl.path(), true);
    for (const auto& rec : c.records) {
      const Sample s = read_sample(rec, c.base_dir);
      CHECK(s.provenance.at("anatomy_vendor") == s.provenance.at("modality_vendor"));
    }
  }

  SUBCASE("mismatched checkpoint fingerprint is rejected") {
    model::SdNet other;
    other.init(12345);
    const auto other_ckpt = fx.run / "other.ckpt";
    model::save_checkpoint(other, other_ckpt);
    TempDir dump("fa_bad");
    CHECK_THROWS_WITH_AS(generate_fa_dataset(bank, other_ckpt, 4, 1, dump.path()),
                         doctest::Contains("fingerprint"), Error);
  }
}
