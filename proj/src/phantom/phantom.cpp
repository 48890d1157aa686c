// SPDX-License-Identifier: Apache-2.0
#include "carseg/phantom/phantom.hpp"

#include <cmath>
#include <cstdio>

#include "carseg/error.hpp"
#include "carseg/rng.hpp"

namespace carseg {

namespace fs = std::filesystem;

void VendorProfile::validate() const {
  require(!tag.empty(), "vendor profile with empty tag");
  require(area_lo_mm2 > 0, "vendor ", tag, ": non-positive area_lo");
  require(area_lo_mm2 <= area_hi_mm2, "vendor ", tag, ": area_lo > area_hi");
  require(intensity_gamma > 0, "vendor ", tag, ": non-positive gamma");
  require(noise_sigma >= 0, "vendor ", tag, ": negative noise sigma");
}

void PhantomConfig::validate() const {
  require(!vendor_profiles.empty(), "phantom config with no vendor profiles");
  require(subjects_per_vendor > 0, "phantom config: zero subjects per vendor");
  require(slices_per_subject > 0, "phantom config: zero slices per subject");
  require(canvas_size >= 32, "phantom config: canvas below 32");
  for (const auto& p : vendor_profiles) p.validate();
  for (std::size_t i = 0; i < vendor_profiles.size(); ++i)
    for (std::size_t j = i + 1; j < vendor_profiles.size(); ++j)
      require(vendor_profiles[i].tag != vendor_profiles[j].tag, "duplicate vendor tag '",
              vendor_profiles[i].tag, "'");
}

PhantomConfig default_desk_config() {
  PhantomConfig cfg;
  cfg.vendor_profiles = {
      {"A", 1.0, 1.3, 1.00, 0.00, 0.03, true, false},
      {"B", 1.1, 1.5, 1.30, 0.05, 0.04, true, false},
      {"C", 2.0, 2.4, 2.60, 0.00, 0.05, false, false},
      {"D", 1.7, 2.1, 0.75, 0.08, 0.04, true, true},
  };
  cfg.subjects_per_vendor = 20;
  cfg.slices_per_subject = 3;
  cfg.canvas_size = 256;
  cfg.seed = 1234;
  return cfg;
}

PhantomConfig all_labeled_variant(PhantomConfig cfg, int subjects_per_vendor,
                                  std::uint64_t seed) {
  for (auto& p : cfg.vendor_profiles) {
    p.labeled = true;
    p.held_out = false;
  }
  cfg.subjects_per_vendor = subjects_per_vendor;
  cfg.seed = seed;
  return cfg;
}

namespace {

// Ellipse in mm coordinates: center (cy,cx), semi-axes (ay,ax), rotation theta.
struct Ellipse {
  double cy, cx, ay, ax, theta;

  bool contains(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double ct = std::cos(theta), st = std::sin(theta);
    const double u = ct * dy + st * dx;
    const double v = -st * dy + ct * dx;
    return (u * u) / (ay * ay) + (v * v) / (ax * ax) <= 1.0;
  }

  Ellipse scaled(double f) const { return {cy, cx, ay * f, ax * f, theta}; }
  Ellipse grown(double t) const { return {cy, cx, ay + t, ax + t, theta}; }
};

struct SubjectGeometry {
  Ellipse lv;        // blood pool
  double myo_thickness_mm;
  Ellipse rv;        // crescent = rv minus the outer myo ellipse
};

SubjectGeometry draw_geometry(Rng& rng, double canvas_mm) {
  SubjectGeometry g;
  const double mid = canvas_mm / 2.0;
  g.lv.cy = mid + rng.uniform(-15.0, 15.0);
  g.lv.cx = mid + rng.uniform(-15.0, 15.0);
  const double r = rng.uniform(14.0, 20.0);
  const double ecc = rng.uniform(0.85, 1.15);
  g.lv.ay = r * ecc;
  g.lv.ax = r / ecc;
  g.lv.theta = rng.uniform(0.0, 3.14159265358979323846);
  g.myo_thickness_mm = rng.uniform(7.0, 11.0);

  const double outer = std::max(g.lv.ay, g.lv.ax) + g.myo_thickness_mm;
  const double dir = g.lv.theta + 3.14159265358979323846 * rng.uniform(0.85, 1.15);
  const double dist = outer * rng.uniform(0.9, 1.05);
  g.rv.cy = g.lv.cy + dist * std::sin(dir);
  g.rv.cx = g.lv.cx + dist * std::cos(dir);
  g.rv.ay = outer * rng.uniform(0.95, 1.15);
  g.rv.ax = outer * rng.uniform(0.55, 0.75);
  g.rv.theta = dir;
  return g;
}

SegMask rasterize(const SubjectGeometry& g, int canvas, double spacing) {
  SegMask m;
  m.height = canvas;
  m.width = canvas;
  m.labels.assign(static_cast<std::size_t>(canvas) * canvas, 0);
  const Ellipse outer = g.lv.grown(g.myo_thickness_mm);
  for (int r = 0; r < canvas; ++r) {
    const double y = (r + 0.5) * spacing;
    for (int c = 0; c < canvas; ++c) {
      const double x = (c + 0.5) * spacing;
      std::uint8_t label = 0;
      if (g.lv.contains(y, x)) label = 1;
      else if (outer.contains(y, x)) label = 2;
      else if (g.rv.contains(y, x)) label = 3;
      m.at(r, c) = label;
    }
  }
  return m;
}

bool classes_present(const SegMask& m, int min_pixels) {
  int counts[4] = {0, 0, 0, 0};
  for (auto v : m.labels) ++counts[v];
  return counts[1] >= min_pixels && counts[2] >= min_pixels && counts[3] >= min_pixels;
}

constexpr double kTissueLevel[4] = {0.10, 0.85, 0.35, 0.75};  // BG, LV, MYO, RV

Image2D render(const SegMask& mask, const VendorProfile& vp, double spacing, Rng& rng) {
  Image2D img;
  img.height = mask.height;
  img.width = mask.width;
  img.row_mm = spacing;
  img.col_mm = spacing;
  img.pixels.resize(mask.labels.size());
  const double slice_bias = rng.uniform(-0.02, 0.02);
  for (std::size_t i = 0; i < mask.labels.size(); ++i) {
    double v = std::pow(kTissueLevel[mask.labels[i]], vp.intensity_gamma);
    v += vp.intensity_bias + slice_bias + vp.noise_sigma * rng.normal();
    img.pixels[i] = static_cast<float>(v);
  }
  return img;
}

Phase phase_for_slice(int slice) {
  switch (slice % 3) {
    case 0: return Phase::ED;
    case 1: return Phase::ES;
    default: return Phase::Other;
  }
}

}  // namespace

DatasetManifest generate_phantom_dataset(const PhantomConfig& config, const fs::path& out_dir) {
  config.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  require(!ec && fs::is_directory(out_dir), "cannot create output directory ",
          out_dir.string(), ": ", ec.message());

  DatasetManifest manifest;
  manifest.base_dir = out_dir;
  for (const auto& vp : config.vendor_profiles) manifest.vendors.push_back(vp.tag);

  for (std::size_t vi = 0; vi < config.vendor_profiles.size(); ++vi) {
    const auto& vp = config.vendor_profiles[vi];
    for (int subj = 0; subj < config.subjects_per_vendor; ++subj) {
      Rng rng(config.seed, vi * 1000003ULL + static_cast<std::uint64_t>(subj));
      const double area = rng.uniform(vp.area_lo_mm2, vp.area_hi_mm2);
      const double spacing = std::sqrt(area);
      const double canvas_mm = config.canvas_size * spacing;
      const SubjectGeometry base = draw_geometry(rng, canvas_mm);

      char subject_id[64];
      std::snprintf(subject_id, sizeof(subject_id), "%s%03d", vp.tag.c_str(), subj);

      for (int slice = 0; slice < config.slices_per_subject; ++slice) {
        const Phase phase = phase_for_slice(slice);
        SegMask mask;
        for (int attempt = 0;; ++attempt) {
          SubjectGeometry g = base;
          const double jitter = rng.uniform(0.95, 1.05);
          g.lv = g.lv.scaled(jitter * (phase == Phase::ES ? 0.85 : 1.0));
          g.lv.cy += rng.uniform(-2.0, 2.0);
          g.lv.cx += rng.uniform(-2.0, 2.0);
          g.lv.theta += rng.uniform(-0.05, 0.05);
          g.myo_thickness_mm *= (phase == Phase::ES ? 1.12 : 1.0);
          g.rv.cy += rng.uniform(-2.0, 2.0);
          g.rv.cx += rng.uniform(-2.0, 2.0);
          g.rv = g.rv.scaled(jitter);
          mask = rasterize(g, config.canvas_size, spacing);
          if (classes_present(mask, 30)) break;
          require(attempt < 100, "phantom geometry failed to place all classes for ",
                  subject_id, " slice ", slice);
        }

        Sample sample;
        sample.image = render(mask, vp, spacing, rng);
        sample.image.vendor = vp.tag;
        sample.image.subject_id = subject_id;
        sample.image.phase = phase;
        if (vp.labeled) sample.mask = mask;

        char dir_name[96];
        std::snprintf(dir_name, sizeof(dir_name), "%s_%s_sl%d", subject_id, to_string(phase),
                      slice);
        const fs::path dir = out_dir / dir_name;
        write_sample(sample, dir);
        manifest.records.push_back(record_for(sample, dir, out_dir));
      }
    }
  }
  manifest.sort_records();
  save_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

}  // namespace carseg
