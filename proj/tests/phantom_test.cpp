// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <queue>
#include <set>

#include "carseg/data/preprocess.hpp"
#include "carseg/error.hpp"
#include "carseg/phantom/phantom.hpp"
#include "test_util.hpp"

using namespace carseg;
using testutil::TempDir;

namespace {

PhantomConfig small_config(std::uint64_t seed = 42) {
  PhantomConfig cfg = default_desk_config();
  cfg.subjects_per_vendor = 3;
  cfg.slices_per_subject = 2;
  cfg.seed = seed;
  return cfg;
}

// True iff some class-1 pixel can be reached from the border without
// crossing class-2 (i.e. the MYO ring does not enclose the LV pool).
bool lv_reachable_from_border(const SegMask& m) {
  std::vector<char> visited(m.labels.size(), 0);
  std::queue<std::pair<int, int>> q;
  auto push = [&](int r, int c) {
    const std::size_t i = static_cast<std::size_t>(r) * m.width + c;
    if (!visited[i] && m.at(r, c) != 2) {
      visited[i] = 1;
      q.emplace(r, c);
    }
  };
  for (int r = 0; r < m.height; ++r) {
    push(r, 0);
    push(r, m.width - 1);
  }
  for (int c = 0; c < m.width; ++c) {
    push(0, c);
    push(m.height - 1, c);
  }
  while (!q.empty()) {
    const auto [r, c] = q.front();
    q.pop();
    if (m.at(r, c) == 1) return true;
    if (r > 0) push(r - 1, c);
    if (r + 1 < m.height) push(r + 1, c);
    if (c > 0) push(r, c - 1);
    if (c + 1 < m.width) push(r, c + 1);
  }
  return false;
}

double tissue_mean_normalized(const Sample& s) {
  const Image2D norm = normalize_intensity(s.image);
  double sum = 0.0;
  long n = 0;
  for (std::size_t i = 0; i < norm.pixels.size(); ++i)
    if (s.mask->labels[i] != 0) {
      sum += norm.pixels[i];
      ++n;
    }
  return sum / n;
}

}  // namespace

TEST_CASE("same config and seed produce byte-identical datasets") {
  TempDir a("phantom_a"), b("phantom_b");
  generate_phantom_dataset(small_config(), a.path());
  generate_phantom_dataset(small_config(), b.path());
  CHECK(testutil::same_tree(a.path(), b.path()));

  TempDir c("phantom_c");
  generate_phantom_dataset(small_config(43), c.path());
  CHECK_FALSE(testutil::same_tree(a.path(), c.path()));
}

TEST_CASE("labeled/unlabeled vendors and record metadata") {
  TempDir tmp("phantom_meta");
  const DatasetManifest m = generate_phantom_dataset(small_config(), tmp.path());
  REQUIRE(m.records.size() == 4 * 3 * 2);
  for (const auto& rec : m.records) {
    if (rec.vendor == "C") {
      CHECK_FALSE(rec.labeled);
      CHECK_FALSE(rec.mask_uri.has_value());
    } else {
      CHECK(rec.labeled);
    }
  }
  // manifest round-trips through disk
  const DatasetManifest loaded = load_manifest(tmp / "manifest.json");
  CHECK(loaded.records.size() == m.records.size());
  CHECK(loaded.vendors == std::vector<std::string>{"A", "B", "C", "D"});
}

TEST_CASE("mask geometry: class set, minimum extent, ring containment") {
  TempDir tmp("phantom_geom");
  const DatasetManifest m = generate_phantom_dataset(small_config(7), tmp.path());
  int labeled_seen = 0;
  for (const auto& rec : m.records) {
    if (!rec.labeled) continue;
    ++labeled_seen;
    const Sample s = read_sample(rec, m.base_dir);
    REQUIRE(s.mask.has_value());
    long counts[4] = {0, 0, 0, 0};
    for (auto v : s.mask->labels) ++counts[v];
    for (int c = 1; c < 4; ++c) CHECK(counts[c] >= 30);
    CHECK(counts[0] > 0);
    CHECK_FALSE(lv_reachable_from_border(*s.mask));
  }
  CHECK(labeled_seen == 3 * 3 * 2);
}

TEST_CASE("default desk config: spacing ranges and vendor roles") {
  const PhantomConfig cfg = default_desk_config();
  cfg.validate();
  REQUIRE(cfg.vendor_profiles.size() == 4);
  CHECK(cfg.subjects_per_vendor == 20);
  bool has_labeled = false, has_unlabeled = false;
  for (const auto& p : cfg.vendor_profiles) (p.labeled ? has_labeled : has_unlabeled) = true;
  CHECK(has_labeled);
  CHECK(has_unlabeled);
  CHECK(cfg.vendor_profiles[3].tag == "D");
  CHECK(cfg.vendor_profiles[3].held_out);
  CHECK(cfg.vendor_profiles[3].labeled);

  TempDir tmp("phantom_spacing");
  PhantomConfig small = cfg;
  small.subjects_per_vendor = 6;
  small.slices_per_subject = 1;
  const DatasetManifest m = generate_phantom_dataset(small, tmp.path());
  for (const auto& rec : m.records) {
    if (rec.vendor != "A") continue;
    const double area = rec.pixel_area();
    CHECK(area >= 1.0);
    CHECK(area <= 1.3);
  }
}

TEST_CASE("inter-vendor intensity shift between A and C is at least 0.1") {
  TempDir tmp("phantom_shift");
  PhantomConfig cfg = all_labeled_variant(small_config(13), 5, 13);
  const DatasetManifest m = generate_phantom_dataset(cfg, tmp.path());
  double mean_a = 0.0, mean_c = 0.0;
  int n_a = 0, n_c = 0;
  for (const auto& rec : m.records) {
    if (rec.vendor != "A" && rec.vendor != "C") continue;
    const Sample s = read_sample(rec, m.base_dir);
    const double t = tissue_mean_normalized(s);
    if (rec.vendor == "A") {
      mean_a += t;
      ++n_a;
    } else {
      mean_c += t;
      ++n_c;
    }
  }
  mean_a /= n_a;
  mean_c /= n_c;
  INFO("A tissue mean ", mean_a, ", C tissue mean ", mean_c);
  CHECK(std::abs(mean_a - mean_c) >= 0.1);
}

TEST_CASE("config validation errors") {
  PhantomConfig cfg = small_config();
  cfg.subjects_per_vendor = 0;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("zero subjects"), Error);

  PhantomConfig bad = small_config();
  bad.vendor_profiles[0].area_lo_mm2 = -1.0;
  CHECK_THROWS_AS(bad.validate(), Error);

  PhantomConfig dup = small_config();
  dup.vendor_profiles[1].tag = "A";
  CHECK_THROWS_WITH_AS(dup.validate(), doctest::Contains("duplicate vendor"), Error);
}
