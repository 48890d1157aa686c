// SPDX-License-Identifier: Apache-2.0
#include "carseg/eval/evaluate.hpp"

#include <cstdio>
#include <fstream>
#include <map>

#include "carseg/data/preprocess.hpp"
#include "carseg/error.hpp"
#include "carseg/model/checkpoint.hpp"

namespace carseg {

SegMask argmax_mask(const nn::Tensor& probs, int batch_index) {
  const int ch = probs.dim(1), h = probs.dim(2), w = probs.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  SegMask m;
  m.height = h;
  m.width = w;
  m.labels.resize(plane);
  const float* base = probs.ptr() + static_cast<std::size_t>(batch_index) * ch * plane;
  for (std::size_t j = 0; j < plane; ++j) {
    int best = 0;
    float bv = base[j];
    for (int c = 1; c < ch; ++c)
      if (base[c * plane + j] > bv) {  // strict: ties keep the lowest class
        bv = base[c * plane + j];
        best = c;
      }
    m.labels[j] = static_cast<std::uint8_t>(best);
  }
  return m;
}

double dice_coefficient(const SegMask& pred, const SegMask& gt, int class_id) {
  require(pred.height == gt.height && pred.width == gt.width,
          "dice_coefficient: dim mismatch");
  require(class_id >= 1 && class_id <= 3, "dice_coefficient: class_id must be 1..3");
  long p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const bool in_p = pred.labels[i] == class_id;
    const bool in_g = gt.labels[i] == class_id;
    p += in_p;
    g += in_g;
    both += in_p && in_g;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * both / static_cast<double>(p + g);
}

double mean_foreground_dice(const SegMask& pred, const SegMask& gt) {
  return (dice_coefficient(pred, gt, 1) + dice_coefficient(pred, gt, 2) +
          dice_coefficient(pred, gt, 3)) /
         3.0;
}

EvalReport evaluate_with(const Predictor& predictor, const DatasetManifest& manifest,
                         const std::string& model_name) {
  require(!manifest.records.empty(), "evaluate: empty manifest");
  std::map<std::string, EvalRow> by_vendor;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& rec = manifest.records[i];
    require(rec.labeled, "evaluate: record ", i, " (", rec.subject_id,
            ") has no ground-truth mask");
    const Sample s = preprocess(read_sample(rec, manifest.base_dir));
    nn::Tensor x({1, 1, s.image.height, s.image.width});
    std::copy(s.image.pixels.begin(), s.image.pixels.end(), x.data.begin());
    const nn::Tensor probs = predictor(x);
    const SegMask pred = argmax_mask(probs, 0);
    EvalRow& row = by_vendor[rec.vendor];
    row.model = model_name;
    row.vendor = rec.vendor;
    for (int c = 1; c <= 3; ++c) row.dice[c - 1] += dice_coefficient(pred, *s.mask, c);
    ++row.count;
  }
  EvalReport report;
  for (const auto& v : manifest.vendors) {
    auto it = by_vendor.find(v);
    if (it == by_vendor.end()) continue;
    EvalRow row = it->second;
    for (double& d : row.dice) d /= row.count;
    report.rows.push_back(std::move(row));
  }
  return report;
}

EvalReport evaluate(model::SdNet& net, const DatasetManifest& manifest,
                    const std::string& model_name) {
  return evaluate_with(
      [&net](const nn::Tensor& x) {
        auto anatomy = net.ea.forward(x, false);
        return net.seg.forward(anatomy.binary, false);
      },
      manifest, model_name);
}

EvalReport evaluate(model::UNetSeg& net, const DatasetManifest& manifest,
                    const std::string& model_name) {
  return evaluate_with([&net](const nn::Tensor& x) { return net.forward(x, false); }, manifest,
                       model_name);
}

EvalReport evaluate_checkpoint(const std::filesystem::path& ckpt,
                               const DatasetManifest& manifest, const std::string& model_name) {
  const std::string desc = model::read_checkpoint_descriptor(ckpt);
  if (desc == model::SdNet::arch_descriptor()) {
    model::SdNet net;
    net.init(0);
    model::load_checkpoint(net, ckpt);
    return evaluate(net, manifest, model_name);
  }
  if (desc == model::UNetSeg::arch_descriptor()) {
    model::UNetSeg net;
    net.init(0);
    model::load_checkpoint(net, ckpt);
    return evaluate(net, manifest, model_name);
  }
  fail("unsupported checkpoint architecture: ", desc);
}

SegMask predict_mask(model::SdNet& net, const Image2D& preprocessed) {
  nn::Tensor x({1, 1, preprocessed.height, preprocessed.width});
  std::copy(preprocessed.pixels.begin(), preprocessed.pixels.end(), x.data.begin());
  auto anatomy = net.ea.forward(x, false);
  return argmax_mask(net.seg.forward(anatomy.binary, false), 0);
}

void write_report_csv(const std::vector<EvalReport>& reports, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), "cannot open ", path.string(), " for writing");
  out << "model,vendor,class,dice,n\n";
  const char* class_names[3] = {"LV", "MYO", "RV"};
  char line[180];
  for (const auto& report : reports)
    for (const auto& row : report.rows)
      for (int c = 0; c < 3; ++c) {
        std::snprintf(line, sizeof(line), "%s,%s,%s,%.4f,%d\n", row.model.c_str(),
                      row.vendor.c_str(), class_names[c], row.dice[c], row.count);
        out << line;
      }
  require(out.good(), "write failed: ", path.string());
}

std::string format_report_table(const std::vector<EvalReport>& reports) {
  std::vector<std::string> vendors;
  for (const auto& rep : reports)
    for (const auto& row : rep.rows)
      if (std::find(vendors.begin(), vendors.end(), row.vendor) == vendors.end())
        vendors.push_back(row.vendor);
  std::sort(vendors.begin(), vendors.end());

  std::string out;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%-18s", "Model");
  out += buf;
  for (const auto& v : vendors) {
    std::snprintf(buf, sizeof(buf), "| %s LV   MYO   RV   ", v.c_str());
    out += buf;
  }
  out += "\n";
  out += std::string(18 + vendors.size() * 22, '-') + "\n";
  for (const auto& rep : reports) {
    if (rep.rows.empty()) continue;
    std::snprintf(buf, sizeof(buf), "%-18s", rep.rows.front().model.c_str());
    out += buf;
    for (const auto& v : vendors) {
      const EvalRow* row = rep.find(v);
      if (row)
        std::snprintf(buf, sizeof(buf), "| %.3f %.3f %.3f ", row->dice[0], row->dice[1],
                      row->dice[2]);
      else
        std::snprintf(buf, sizeof(buf), "| %-20s", "-");
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace carseg
