// SPDX-License-Identifier: Apache-2.0
#include "carseg/aug/resolution.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "carseg/data/preprocess.hpp"
#include "carseg/error.hpp"

namespace carseg {

namespace {

std::vector<float> resize_bilinear(const std::vector<float>& src, int h, int w, int nh, int nw) {
  std::vector<float> dst(static_cast<std::size_t>(nh) * nw);
  const double sy = static_cast<double>(h) / nh;
  const double sx = static_cast<double>(w) / nw;
  for (int r = 0; r < nh; ++r) {
    double fy = (r + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int c = 0; c < nw; ++c) {
      double fx = (c + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      const double top = (1.0 - wx) * src[std::size_t(y0) * w + x0] + wx * src[std::size_t(y0) * w + x1];
      const double bot = (1.0 - wx) * src[std::size_t(y1) * w + x0] + wx * src[std::size_t(y1) * w + x1];
      dst[std::size_t(r) * nw + c] = static_cast<float>((1.0 - wy) * top + wy * bot);
    }
  }
  return dst;
}

std::vector<std::uint8_t> resize_nearest(const std::vector<std::uint8_t>& src, int h, int w,
                                         int nh, int nw) {
  std::vector<std::uint8_t> dst(static_cast<std::size_t>(nh) * nw);
  const double sy = static_cast<double>(h) / nh;
  const double sx = static_cast<double>(w) / nw;
  for (int r = 0; r < nh; ++r) {
    const int y = std::clamp<long>(std::lround((r + 0.5) * sy - 0.5), 0, h - 1);
    for (int c = 0; c < nw; ++c) {
      const int x = std::clamp<long>(std::lround((c + 0.5) * sx - 0.5), 0, w - 1);
      dst[std::size_t(r) * nw + c] = src[std::size_t(y) * w + x];
    }
  }
  return dst;
}

}  // namespace

Sample resample_to_area(const Sample& sample, double target_area) {
  const Image2D& img = sample.image;
  require(target_area > 0, "resample_to_area: non-positive target area");
  require(img.row_mm > 0 && img.col_mm > 0, "resample_to_area: non-positive spacing");

  const double area0 = img.pixel_area();
  const double f = std::sqrt(area0 / target_area);
  const int nh = std::max<long>(1, std::lround(img.height * f));
  const int nw = std::max<long>(1, std::lround(img.width * f));
  require(nh >= 8 && nw >= 8, "degenerate zoom: output dims ", nh, "x", nw, " below 8x8");

  Sample out;
  out.provenance = sample.provenance;
  out.image = img;
  out.image.height = nh;
  out.image.width = nw;
  out.image.row_mm = img.row_mm / f;
  out.image.col_mm = img.col_mm / f;
  out.image.pixels = resize_bilinear(img.pixels, img.height, img.width, nh, nw);
  if (sample.mask) {
    SegMask m;
    m.height = nh;
    m.width = nw;
    m.labels = resize_nearest(sample.mask->labels, sample.mask->height, sample.mask->width, nh, nw);
    out.mask = std::move(m);
  }
  return out;
}

Sample apply_ra(const Sample& sample, Rng& rng, const RAConfig& cfg) {
  const double target_area = sample_target_area(rng, cfg);
  Sample zoomed = resample_to_area(sample, target_area);
  Sample out = center_crop_or_pad(zoomed, cfg.target_size);
  out.provenance = sample.provenance;
  return out;
}

std::vector<HistogramRow> resolution_histogram(const DatasetManifest& manifest,
                                               const std::vector<double>& bin_edges) {
  require(bin_edges.size() >= 2, "resolution_histogram: need at least two bin edges");
  require(std::is_sorted(bin_edges.begin(), bin_edges.end()),
          "resolution_histogram: bin edges must be ascending");
  const std::size_t bins = bin_edges.size() - 1;

  std::vector<HistogramRow> rows;
  for (const auto& vendor : manifest.vendors) {
    std::vector<long> counts(bins, 0);
    for (const auto& rec : manifest.records) {
      if (rec.vendor != vendor) continue;
      const double area = rec.pixel_area();
      std::size_t b = 0;
      while (b + 1 < bins && area >= bin_edges[b + 1]) ++b;
      ++counts[b];
    }
    for (std::size_t b = 0; b < bins; ++b)
      rows.push_back({vendor, bin_edges[b], bin_edges[b + 1], counts[b]});
  }
  return rows;
}

void write_histogram_csv(const std::vector<HistogramRow>& rows,
                         const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), "cannot open ", path.string(), " for writing");
  out << "vendor,bin_lo,bin_hi,count\n";
  char line[160];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%s,%.6g,%.6g,%ld\n", r.vendor.c_str(), r.bin_lo, r.bin_hi,
                  r.count);
    out << line;
  }
  require(out.good(), "write failed: ", path.string());
}

}  // namespace carseg
