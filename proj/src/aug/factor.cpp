// SPDX-License-Identifier: Apache-2.0
#include "carseg/aug/factor.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "carseg/data/preprocess.hpp"
#include "carseg/error.hpp"
#include "carseg/model/checkpoint.hpp"

namespace carseg {

namespace fs = std::filesystem;

std::size_t FactorBank::anatomy_count() const {
  std::size_t n = 0;
  for (const auto& v : vendors) n += v.anatomy.size();
  return n;
}
std::size_t FactorBank::modality_count() const {
  std::size_t n = 0;
  for (const auto& v : vendors) n += v.modality.size();
  return n;
}
const VendorFactors* FactorBank::find(const std::string& vendor) const {
  for (const auto& v : vendors)
    if (v.vendor == vendor) return &v;
  return nullptr;
}

std::vector<std::uint8_t> pack_bits(const nn::Tensor& binary, int batch_index) {
  const std::size_t count = static_cast<std::size_t>(binary.dim(1)) * binary.dim(2) * binary.dim(3);
  const float* p = binary.ptr() + static_cast<std::size_t>(batch_index) * count;
  std::vector<std::uint8_t> out((count + 7) / 8, 0);
  for (std::size_t i = 0; i < count; ++i)
    if (p[i] != 0.0f) out[i >> 3] |= static_cast<std::uint8_t>(1u << (i & 7));
  return out;
}

nn::Tensor unpack_bits(const std::vector<std::uint8_t>& packed, int channels, int h, int w) {
  const std::size_t count = static_cast<std::size_t>(channels) * h * w;
  require(packed.size() == (count + 7) / 8, "unpack_bits: size mismatch");
  nn::Tensor t({1, channels, h, w});
  for (std::size_t i = 0; i < count; ++i)
    t.data[i] = (packed[i >> 3] >> (i & 7)) & 1u ? 1.0f : 0.0f;
  return t;
}

FactorBank extract_factors(model::SdNet& net, const DatasetManifest& manifest,
                           std::uint64_t fingerprint,
                           const std::vector<std::string>& exclude_vendors) {
  FactorBank bank;
  bank.fingerprint = fingerprint;
  const auto excluded = [&](const std::string& v) {
    return std::find(exclude_vendors.begin(), exclude_vendors.end(), v) != exclude_vendors.end();
  };
  for (const auto& vendor : manifest.vendors)
    if (!excluded(vendor)) bank.vendors.push_back({vendor, {}, {}});

  for (const auto& rec : manifest.records) {
    if (excluded(rec.vendor)) continue;
    VendorFactors* vf = nullptr;
    for (auto& v : bank.vendors)
      if (v.vendor == rec.vendor) vf = &v;
    const Sample s = preprocess(read_sample(rec, manifest.base_dir));
    require(s.image.height == bank.height && s.image.width == bank.width,
            "extract_factors: sample is not 224x224 after preprocessing");
    nn::Tensor x({1, 1, bank.height, bank.width});
    std::copy(s.image.pixels.begin(), s.image.pixels.end(), x.data.begin());

    AnatomyEntry ae;
    ae.packed = pack_bits(net.ea.forward(x, false).binary, 0);
    ae.labeled = rec.labeled;
    ae.source = rec.image_uri;
    ae.row_mm = rec.row_mm;
    ae.col_mm = rec.col_mm;
    ae.phase = rec.phase;
    if (rec.labeled) {
      ae.mask_uri = *rec.mask_uri;
      ae.mask = s.mask->labels;
    }
    vf->anatomy.push_back(std::move(ae));

    ModalityEntry me;
    const nn::Tensor z = net.em.forward(x, false);
    for (int i = 0; i < bank.z_dim; ++i) me.z[static_cast<std::size_t>(i)] = z.data[i];
    me.source = rec.image_uri;
    vf->modality.push_back(std::move(me));
  }
  return bank;
}

FactorBank extract_factors(const fs::path& checkpoint, const DatasetManifest& manifest,
                           const std::vector<std::string>& exclude_vendors) {
  model::SdNet net;
  net.init(0);
  model::load_checkpoint(net, checkpoint);
  return extract_factors(net, manifest, model::checkpoint_fingerprint(checkpoint),
                         exclude_vendors);
}

namespace {

constexpr char kBankMagic[8] = {'C', 'S', 'E', 'G', 'B', 'N', 'K', '1'};

template <typename V>
void put(std::ofstream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}
template <typename V>
V get(std::ifstream& in) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  return v;
}
void put_str(std::ofstream& out, const std::string& s) {
  put<std::uint16_t>(out, static_cast<std::uint16_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::string get_str(std::ifstream& in) {
  const auto len = get<std::uint16_t>(in);
  std::string s(len, '\0');
  in.read(s.data(), len);
  return s;
}

}  // namespace

void save_bank(const FactorBank& bank, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), "cannot open bank ", path.string(), " for writing");
  out.write(kBankMagic, sizeof(kBankMagic));
  put<std::uint64_t>(out, bank.fingerprint);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(bank.height));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(bank.width));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(bank.channels));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(bank.z_dim));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(bank.vendors.size()));
  for (const auto& v : bank.vendors) {
    put_str(out, v.vendor);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(v.anatomy.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(v.modality.size()));
    for (const auto& a : v.anatomy) {
      put_str(out, a.source);
      put_str(out, a.mask_uri);
      put<std::uint8_t>(out, a.labeled ? 1 : 0);
      put<std::uint8_t>(out, static_cast<std::uint8_t>(a.phase));
      put<double>(out, a.row_mm);
      put<double>(out, a.col_mm);
      out.write(reinterpret_cast<const char*>(a.packed.data()),
                static_cast<std::streamsize>(a.packed.size()));
      if (a.labeled)
        out.write(reinterpret_cast<const char*>(a.mask.data()),
                  static_cast<std::streamsize>(a.mask.size()));
    }
    for (const auto& m : v.modality) {
      put_str(out, m.source);
      out.write(reinterpret_cast<const char*>(m.z.data()),
                static_cast<std::streamsize>(m.z.size() * sizeof(float)));
    }
  }
  require(out.good(), "bank write failed: ", path.string());
}

FactorBank load_bank(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "bank not found: ", path.string());
  char magic[8];
  in.read(magic, 8);
  require(in.good() && std::memcmp(magic, kBankMagic, 8) == 0, "not a factor bank: ",
          path.string());
  FactorBank bank;
  bank.fingerprint = get<std::uint64_t>(in);
  bank.height = static_cast<int>(get<std::uint32_t>(in));
  bank.width = static_cast<int>(get<std::uint32_t>(in));
  bank.channels = static_cast<int>(get<std::uint32_t>(in));
  bank.z_dim = static_cast<int>(get<std::uint32_t>(in));
  const auto n_vendors = get<std::uint32_t>(in);
  const std::size_t packed_size =
      (static_cast<std::size_t>(bank.channels) * bank.height * bank.width + 7) / 8;
  const std::size_t mask_size = static_cast<std::size_t>(bank.height) * bank.width;
  for (std::uint32_t vi = 0; vi < n_vendors; ++vi) {
    VendorFactors v;
    v.vendor = get_str(in);
    const auto na = get<std::uint32_t>(in);
    const auto nm = get<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < na; ++i) {
      AnatomyEntry a;
      a.source = get_str(in);
      a.mask_uri = get_str(in);
      a.labeled = get<std::uint8_t>(in) != 0;
      a.phase = static_cast<Phase>(get<std::uint8_t>(in));
      a.row_mm = get<double>(in);
      a.col_mm = get<double>(in);
      a.packed.resize(packed_size);
      in.read(reinterpret_cast<char*>(a.packed.data()),
              static_cast<std::streamsize>(packed_size));
      if (a.labeled) {
        a.mask.resize(mask_size);
        in.read(reinterpret_cast<char*>(a.mask.data()), static_cast<std::streamsize>(mask_size));
      }
      v.anatomy.push_back(std::move(a));
    }
    for (std::uint32_t i = 0; i < nm; ++i) {
      ModalityEntry m;
      m.source = get_str(in);
      in.read(reinterpret_cast<char*>(m.z.data()),
              static_cast<std::streamsize>(m.z.size() * sizeof(float)));
      v.modality.push_back(std::move(m));
    }
    bank.vendors.push_back(std::move(v));
  }
  require(in.good(), "truncated factor bank: ", path.string());
  return bank;
}

FaDraw fa_draw(const FactorBank& bank, Rng& rng, bool same_vendor_control) {
  std::vector<const VendorFactors*> with_anatomy, with_modality;
  for (const auto& v : bank.vendors) {
    if (!v.anatomy.empty()) with_anatomy.push_back(&v);
    if (!v.modality.empty()) with_modality.push_back(&v);
  }
  require(!with_anatomy.empty() && !with_modality.empty(), "factor bank is empty");

  FaDraw draw;
  const VendorFactors* av = with_anatomy[rng.below(with_anatomy.size())];
  draw.anatomy = &av->anatomy[rng.below(av->anatomy.size())];
  draw.anatomy_vendor = av->vendor;
  const VendorFactors* mv =
      same_vendor_control ? av : with_modality[rng.below(with_modality.size())];
  require(!mv->modality.empty(), "vendor ", mv->vendor, " has no modality factors");
  draw.modality = &mv->modality[rng.below(mv->modality.size())];
  draw.modality_vendor = mv->vendor;
  return draw;
}

namespace {

Sample assemble_sample(const FactorBank& bank, const FaDraw& draw, const nn::Tensor& decoded,
                       int batch_index) {
  Sample s;
  s.image.height = bank.height;
  s.image.width = bank.width;
  s.image.pixels.resize(static_cast<std::size_t>(bank.height) * bank.width);
  const float* p =
      decoded.ptr() + static_cast<std::size_t>(batch_index) * s.image.pixels.size();
  std::copy(p, p + s.image.pixels.size(), s.image.pixels.begin());
  s.image.row_mm = draw.anatomy->row_mm;
  s.image.col_mm = draw.anatomy->col_mm;
  s.image.vendor = draw.anatomy_vendor + "+" + draw.modality_vendor;
  s.image.phase = draw.anatomy->phase;
  s.provenance["anatomy_source"] = draw.anatomy->source;
  s.provenance["modality_source"] = draw.modality->source;
  s.provenance["anatomy_vendor"] = draw.anatomy_vendor;
  s.provenance["modality_vendor"] = draw.modality_vendor;
  if (draw.anatomy->labeled) {
    SegMask m;
    m.height = bank.height;
    m.width = bank.width;
    m.labels = draw.anatomy->mask;
    s.mask = std::move(m);
    s.provenance["anatomy_mask"] = draw.anatomy->mask_uri;
  }
  return s;
}

}  // namespace

Sample fa_sample(const FactorBank& bank, Rng& rng, model::SdNet& net, bool same_vendor_control) {
  const FaDraw draw = fa_draw(bank, rng, same_vendor_control);
  nn::Tensor anatomy = unpack_bits(draw.anatomy->packed, bank.channels, bank.height, bank.width);
  nn::Tensor z({1, bank.z_dim});
  std::copy(draw.modality->z.begin(), draw.modality->z.end(), z.data.begin());
  const nn::Tensor decoded = net.dec.forward(anatomy, z, false);
  return assemble_sample(bank, draw, decoded, 0);
}

DatasetManifest generate_fa_dataset(const FactorBank& bank, const fs::path& checkpoint, int n,
                                    std::uint64_t seed, const fs::path& out_dir,
                                    bool same_vendor_control) {
  require(n >= 1, "generate_fa_dataset: n must be >= 1");
  const std::uint64_t fp = model::checkpoint_fingerprint(checkpoint);
  require(fp == bank.fingerprint, "factor bank fingerprint ", bank.fingerprint,
          " does not match checkpoint ", checkpoint.string(), " (", fp,
          "); regenerate the bank with this checkpoint");
  model::SdNet net;
  net.init(0);
  model::load_checkpoint(net, checkpoint);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  require(fs::is_directory(out_dir), "cannot create output directory ", out_dir.string());

  DatasetManifest manifest;
  manifest.base_dir = out_dir;
  std::set<std::string> vendor_tags;

  constexpr int kDecodeBatch = 8;
  for (int base = 0; base < n; base += kDecodeBatch) {
    const int b = std::min(kDecodeBatch, n - base);
    std::vector<FaDraw> draws;
    nn::Tensor anatomy({b, bank.channels, bank.height, bank.width});
    nn::Tensor z({b, bank.z_dim});
    for (int j = 0; j < b; ++j) {
      Rng rng(seed, static_cast<std::uint64_t>(base + j));  // stream id = output index
      draws.push_back(fa_draw(bank, rng, same_vendor_control));
      const nn::Tensor a =
          unpack_bits(draws[j].anatomy->packed, bank.channels, bank.height, bank.width);
      std::copy(a.data.begin(), a.data.end(),
                anatomy.data.begin() + static_cast<std::size_t>(j) * a.data.size());
      std::copy(draws[j].modality->z.begin(), draws[j].modality->z.end(),
                z.data.begin() + static_cast<std::size_t>(j) * bank.z_dim);
    }
    const nn::Tensor decoded = net.dec.forward(anatomy, z, false);
    for (int j = 0; j < b; ++j) {
      Sample s = assemble_sample(bank, draws[j], decoded, j);
      char name[32];
      std::snprintf(name, sizeof(name), "fa%06d", base + j);
      s.image.subject_id = name;
      const fs::path dir = out_dir / name;
      write_sample(s, dir);
      manifest.records.push_back(record_for(s, dir, out_dir));
      vendor_tags.insert(s.image.vendor);
    }
  }
  manifest.vendors.assign(vendor_tags.begin(), vendor_tags.end());
  manifest.sort_records();
  save_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

}  // namespace carseg
