// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "carseg/aug/resolution.hpp"
#include "carseg/error.hpp"
#include "carseg/phantom/phantom.hpp"
#include "test_util.hpp"

using namespace carseg;
using testutil::TempDir;

namespace {

Sample disk_sample(int size, double radius, double spacing) {
  Sample s;
  s.image.height = size;
  s.image.width = size;
  s.image.row_mm = spacing;
  s.image.col_mm = spacing;
  s.image.pixels.assign(static_cast<std::size_t>(size) * size, -1.0f);
  s.image.vendor = "A";
  s.image.subject_id = "disk";
  SegMask m;
  m.height = size;
  m.width = size;
  m.labels.assign(s.image.pixels.size(), 0);
  const double mid = size / 2.0;
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c)
      if (std::hypot(r + 0.5 - mid, c + 0.5 - mid) <= radius) {
        m.at(r, c) = 1;
        s.image.at(r, c) = 0.8f;
      }
  s.mask = std::move(m);
  return s;
}

long count_label(const SegMask& m, std::uint8_t v) {
  long n = 0;
  for (auto x : m.labels)
    if (x == v) ++n;
  return n;
}

}  // namespace

TEST_CASE("target area sampling endpoints and midpoint") {
  const RAConfig cfg;
  CHECK(area_from_unit(0.0, cfg) == doctest::Approx(0.954));
  CHECK(area_from_unit(1.0, cfg) == doctest::Approx(2.692));
  CHECK(area_from_unit(0.5, cfg) == doctest::Approx(1.823));
}

TEST_CASE("resample_to_area geometry") {
  SUBCASE("300x300 at 1.0 mm2 to 2.25 mm2") {
    const Sample s = disk_sample(300, 60.0, 1.0);
    const Sample out = resample_to_area(s, 2.25);
    CHECK(out.image.height == 200);  // f = 2/3
    CHECK(out.image.width == 200);
    CHECK(out.image.row_mm == doctest::Approx(1.5));
    CHECK(out.image.col_mm == doctest::Approx(1.5));
    CHECK(out.mask->height == 200);
  }

  SUBCASE("matching target area is the identity") {
    const Sample s = disk_sample(100, 20.0, 1.3);
    const Sample out = resample_to_area(s, 1.3 * 1.3);
    CHECK(out.image.height == 100);
    CHECK(out.image.pixels == s.image.pixels);
    CHECK(out.mask->labels == s.mask->labels);
  }

  SUBCASE("mask scales by f^2 within 15% and labels never grow") {
    const Sample s = disk_sample(300, 60.0, 1.0);
    const long before = count_label(*s.mask, 1);
    const Sample out = resample_to_area(s, 4.0);  // f = 0.5
    const long after = count_label(*out.mask, 1);
    CHECK(std::abs(after - 0.25 * before) <= 0.15 * 0.25 * before);
    std::set<std::uint8_t> seen(out.mask->labels.begin(), out.mask->labels.end());
    for (auto v : seen) CHECK((v == 0 || v == 1));
  }

  SUBCASE("round trip recovers dims within one pixel") {
    Rng rng(3);
    for (int t = 0; t < 10; ++t) {
      Sample s = disk_sample(150 + int(rng.below(150)), 40.0, rng.uniform(0.9, 1.6));
      const double area0 = s.image.pixel_area();
      const double target = rng.uniform(0.954, 2.692);
      const Sample fwd = resample_to_area(s, target);
      const Sample back = resample_to_area(fwd, area0);
      CHECK(std::abs(back.image.height - s.image.height) <= 1);
      CHECK(std::abs(back.image.width - s.image.width) <= 1);
    }
  }

  SUBCASE("degenerate zoom rejected") {
    const Sample s = disk_sample(16, 5.0, 0.2);  // area 0.04 -> heavy shrink
    CHECK_THROWS_WITH_AS(resample_to_area(s, 2.0), doctest::Contains("degenerate zoom"), Error);
  }
}

TEST_CASE("apply_ra composition contract") {
  Rng rng(17);
  const RAConfig cfg;
  const Sample s = disk_sample(256, 50.0, 1.1);
  for (int t = 0; t < 25; ++t) {
    const Sample out = apply_ra(s, rng, cfg);
    REQUIRE(out.image.height == 224);
    REQUIRE(out.image.width == 224);
    const double area = out.image.pixel_area();
    CHECK(area >= 0.954 * (1 - 1e-9));
    CHECK(area <= 2.692 * (1 + 1e-9));
    REQUIRE(out.mask.has_value());
    CHECK(out.mask->height == 224);
    CHECK(out.image.vendor == "A");
    std::set<std::uint8_t> seen(out.mask->labels.begin(), out.mask->labels.end());
    for (auto v : seen) CHECK((v == 0 || v == 1));
  }
}

TEST_CASE("spacing-area distribution is uniform (chi-squared, 10 bins)") {
  Rng rng(2024);
  const RAConfig cfg;
  const int n = 10000;
  long bins[10] = {0};
  for (int i = 0; i < n; ++i) {
    const double area = sample_target_area(rng, cfg);
    int b = static_cast<int>((area - cfg.area_lo_mm2) / (cfg.area_hi_mm2 - cfg.area_lo_mm2) * 10);
    b = std::clamp(b, 0, 9);
    ++bins[b];
  }
  const double expected = n / 10.0;
  double chi2 = 0.0;
  for (long b : bins) chi2 += (b - expected) * (b - expected) / expected;
  INFO("chi2 = ", chi2);
  CHECK(chi2 < 21.666);  // chi2_{0.99, df=9}
}

TEST_CASE("resolution histogram") {
  SUBCASE("single record lands in its bin") {
    DatasetManifest m;
    m.vendors = {"A"};
    SampleRecord r;
    r.vendor = "A";
    r.row_mm = 1.2;
    r.col_mm = 1.0;
    r.subject_id = "s";
    m.records.push_back(r);
    const auto rows = resolution_histogram(m, {1.0, 1.5, 2.0});
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].count == 1);
    CHECK(rows[1].count == 0);
  }

  SUBCASE("counts are conserved per vendor and C mass sits in coarse bins") {
    TempDir tmp("hist");
    PhantomConfig cfg = default_desk_config();
    cfg.subjects_per_vendor = 5;
    cfg.slices_per_subject = 2;
    const DatasetManifest m = generate_phantom_dataset(cfg, tmp.path());
    std::vector<double> edges;
    for (int i = 0; i <= 10; ++i) edges.push_back(0.9 + i * (2.8 - 0.9) / 10);
    const auto rows = resolution_histogram(m, edges);
    REQUIRE(rows.size() == 4 * 10);
    std::map<std::string, long> totals;
    for (const auto& row : rows) {
      totals[row.vendor] += row.count;
      if (row.vendor == "C" && row.count > 0) CHECK(row.bin_lo >= 2.0 - 1e-9);
    }
    for (const auto& v : m.vendors) {
      long expect = 0;
      for (const auto& rec : m.records) expect += rec.vendor == v;
      CHECK(totals[v] == expect);
    }
    write_histogram_csv(rows, tmp / "hist.csv");
    const auto bytes = testutil::slurp(tmp / "hist.csv");
    CHECK(std::string(bytes.begin(), bytes.begin() + 27) == "vendor,bin_lo,bin_hi,count\n");
  }
}
