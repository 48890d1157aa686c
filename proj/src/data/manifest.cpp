// SPDX-License-Identifier: Apache-2.0
#include "carseg/data/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>

#include "carseg/error.hpp"

namespace carseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_json_file(const fs::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), what, " not found: ", path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    fail("malformed ", what, " ", path.string(), ": ", e.what());
  }
  return j;
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), "cannot open ", path.string(), " for writing");
  out << text;
  require(out.good(), "write failed: ", path.string());
}

template <typename T>
std::vector<T> read_raw(const fs::path& path, std::size_t count, const char* what) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), what, " not found: ", path.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  require(bytes == count * sizeof(T), what, " ", path.string(), " has ", bytes,
          " bytes, expected ", count * sizeof(T));
  std::vector<T> out(count);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(bytes));
  require(in.good(), "read failed: ", path.string());
  return out;
}

template <typename T>
void write_raw(const fs::path& path, const std::vector<T>& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), "cannot open ", path.string(), " for writing");
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(T)));
  require(out.good(), "write failed: ", path.string());
}

int phase_rank(Phase p) { return p == Phase::ED ? 0 : p == Phase::ES ? 1 : 2; }

}  // namespace

void DatasetManifest::sort_records() {
  std::sort(records.begin(), records.end(), [](const SampleRecord& a, const SampleRecord& b) {
    if (a.subject_id != b.subject_id) return a.subject_id < b.subject_id;
    if (a.phase != b.phase) return phase_rank(a.phase) < phase_rank(b.phase);
    return a.image_uri < b.image_uri;
  });
}

DatasetManifest load_manifest(const fs::path& path) {
  const json j = load_json_file(path, "manifest");
  DatasetManifest m;
  m.base_dir = path.parent_path();
  try {
    m.vendors = j.at("vendors").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    fail("malformed manifest ", path.string(), ": vendors: ", e.what());
  }
  require(j.contains("records") && j["records"].is_array(),
          "malformed manifest ", path.string(), ": missing records array");
  const auto& records = j["records"];
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    SampleRecord rec;
    try {
      rec.image_uri = r.at("image_uri").get<std::string>();
      if (r.contains("mask_uri")) rec.mask_uri = r["mask_uri"].get<std::string>();
      rec.vendor = r.at("vendor").get<std::string>();
      rec.row_mm = r.at("row_mm").get<double>();
      rec.col_mm = r.at("col_mm").get<double>();
      rec.subject_id = r.at("subject_id").get<std::string>();
      rec.phase = phase_from_string(r.at("phase").get<std::string>());
      rec.labeled = r.at("labeled").get<bool>();
    } catch (const json::exception& e) {
      fail("malformed record ", i, " in ", path.string(), ": ", e.what());
    }
    require(rec.labeled == rec.mask_uri.has_value(), "record ", i,
            ": labeled flag inconsistent with mask_uri presence");
    require(std::find(m.vendors.begin(), m.vendors.end(), rec.vendor) != m.vendors.end(),
            "record ", i, ": vendor '", rec.vendor, "' not in the declared vendor set");
    require(rec.row_mm > 0 && rec.col_mm > 0, "record ", i, ": non-positive spacing");
    require(fs::exists(m.base_dir / rec.image_uri), "record ", i, ": dangling image_uri '",
            rec.image_uri, "'");
    if (rec.mask_uri)
      require(fs::exists(m.base_dir / *rec.mask_uri), "record ", i, ": dangling mask_uri '",
              *rec.mask_uri, "'");
    m.records.push_back(std::move(rec));
  }
  m.sort_records();
  return m;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  json j;
  j["vendors"] = manifest.vendors;
  j["records"] = json::array();
  for (const auto& r : manifest.records) {
    json jr;
    jr["image_uri"] = r.image_uri;
    if (r.mask_uri) jr["mask_uri"] = *r.mask_uri;
    jr["vendor"] = r.vendor;
    jr["row_mm"] = r.row_mm;
    jr["col_mm"] = r.col_mm;
    jr["subject_id"] = r.subject_id;
    jr["phase"] = to_string(r.phase);
    jr["labeled"] = r.labeled;
    j["records"].push_back(std::move(jr));
  }
  write_text_file(path, j.dump(2) + "\n");
}

Sample read_sample(const SampleRecord& record, const fs::path& base_dir) {
  const fs::path dir = (base_dir / record.image_uri).parent_path();
  const json meta = load_json_file(dir / "meta.json", "sample meta");
  Sample s;
  try {
    s.image.height = meta.at("height").get<int>();
    s.image.width = meta.at("width").get<int>();
    s.image.row_mm = meta.at("row_mm").get<double>();
    s.image.col_mm = meta.at("col_mm").get<double>();
    s.image.vendor = meta.at("vendor").get<std::string>();
    s.image.subject_id = meta.at("subject_id").get<std::string>();
    s.image.phase = phase_from_string(meta.at("phase").get<std::string>());
    if (meta.contains("provenance"))
      for (const auto& [k, v] : meta["provenance"].items())
        s.provenance[k] = v.get<std::string>();
    const bool has_mask = meta.at("has_mask").get<bool>();
    const auto count = static_cast<std::size_t>(s.image.height) * s.image.width;
    s.image.pixels = read_raw<float>(base_dir / record.image_uri, count, "image data");
    if (has_mask) {
      require(record.mask_uri.has_value(), "sample ", dir.string(),
              " has a mask but the record is unlabeled");
      SegMask mask;
      mask.height = s.image.height;
      mask.width = s.image.width;
      mask.labels = read_raw<std::uint8_t>(base_dir / *record.mask_uri, count, "mask data");
      mask.validate();
      s.mask = std::move(mask);
    }
  } catch (const json::exception& e) {
    fail("corrupt sample header ", (dir / "meta.json").string(), ": ", e.what());
  }
  s.image.validate();
  return s;
}

void write_sample(const Sample& sample, const fs::path& dir) {
  sample.image.validate();
  fs::create_directories(dir);
  json meta;
  meta["height"] = sample.image.height;
  meta["width"] = sample.image.width;
  meta["row_mm"] = sample.image.row_mm;
  meta["col_mm"] = sample.image.col_mm;
  meta["vendor"] = sample.image.vendor;
  meta["subject_id"] = sample.image.subject_id;
  meta["phase"] = to_string(sample.image.phase);
  meta["has_mask"] = sample.labeled();
  if (!sample.provenance.empty()) {
    json prov;
    for (const auto& [k, v] : sample.provenance) prov[k] = v;
    meta["provenance"] = std::move(prov);
  }
  write_text_file(dir / "meta.json", meta.dump(2) + "\n");
  write_raw(dir / "image.f32", sample.image.pixels);
  if (sample.mask) {
    require(sample.mask->height == sample.image.height &&
                sample.mask->width == sample.image.width,
            "mask dims differ from image dims for subject '", sample.image.subject_id, "'");
    sample.mask->validate();
    write_raw(dir / "mask.u8", sample.mask->labels);
  }
}

SampleRecord record_for(const Sample& sample, const fs::path& dir, const fs::path& base_dir) {
  SampleRecord rec;
  rec.image_uri = fs::relative(dir / "image.f32", base_dir).generic_string();
  if (sample.labeled()) rec.mask_uri = fs::relative(dir / "mask.u8", base_dir).generic_string();
  rec.vendor = sample.image.vendor;
  rec.row_mm = sample.image.row_mm;
  rec.col_mm = sample.image.col_mm;
  rec.subject_id = sample.image.subject_id;
  rec.phase = sample.image.phase;
  rec.labeled = sample.labeled();
  return rec;
}

}  // namespace carseg
