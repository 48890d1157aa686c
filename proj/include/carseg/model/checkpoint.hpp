// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>

#include "carseg/error.hpp"
#include "carseg/model/blocks.hpp"
#include "carseg/rng.hpp"

namespace carseg::model {

// Checkpoint container: magic, architecture descriptor, then named float32
// tensors (parameters and batch-norm running statistics), little-endian.
inline constexpr char kCkptMagic[8] = {'C', 'S', 'E', 'G', 'C', 'K', 'P', '1'};

namespace detail {

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

inline void put_tensor(std::ofstream& out, const std::string& name, const nn::Tensor& t) {
  put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
  for (int d : t.shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(t.data.size() * sizeof(float)));
  out.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
}

inline void get_tensor(std::ifstream& in, const std::string& expect_name, nn::Tensor& t,
                       const std::filesystem::path& path) {
  const auto name_len = get<std::uint16_t>(in);
  std::string name(name_len, '\0');
  in.read(name.data(), name_len);
  require(name == expect_name, "checkpoint ", path.string(), ": tensor '", name,
          "' does not match expected '", expect_name, "' (architecture mismatch)");
  const auto ndim = get<std::uint32_t>(in);
  std::vector<int> shape(ndim);
  for (auto& d : shape) d = static_cast<int>(get<std::uint32_t>(in));
  require(shape == t.shape, "checkpoint ", path.string(), ": shape mismatch for '", name, "'");
  const auto bytes = get<std::uint64_t>(in);
  require(bytes == t.data.size() * sizeof(float), "checkpoint ", path.string(),
          ": data size mismatch for '", name, "'");
  in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(bytes));
  require(in.good(), "checkpoint ", path.string(), ": truncated while reading '", name, "'");
}

}  // namespace detail

template <typename Model>
void save_checkpoint(Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), "cannot open checkpoint ", path.string(), " for writing");
  out.write(kCkptMagic, sizeof(kCkptMagic));
  const std::string desc = Model::arch_descriptor();
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(desc.size()));
  out.write(desc.data(), static_cast<std::streamsize>(desc.size()));
  const auto params = model.named_params();
  const auto buffers = model.named_buffers();
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size() + buffers.size()));
  for (const auto& [name, p] : params) detail::put_tensor(out, name, p->value);
  for (const auto& [name, b] : buffers) detail::put_tensor(out, name, *b);
  require(out.good(), "checkpoint write failed: ", path.string());
}

inline std::string read_checkpoint_descriptor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "checkpoint not found: ", path.string());
  char magic[8];
  in.read(magic, 8);
  require(in.good() && std::memcmp(magic, kCkptMagic, 8) == 0, "not a checkpoint file: ",
          path.string());
  const auto len = detail::get<std::uint32_t>(in);
  std::string desc(len, '\0');
  in.read(desc.data(), len);
  require(in.good(), "truncated checkpoint header: ", path.string());
  return desc;
}

template <typename Model>
void load_checkpoint(Model& model, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "checkpoint not found: ", path.string());
  char magic[8];
  in.read(magic, 8);
  require(in.good() && std::memcmp(magic, kCkptMagic, 8) == 0, "not a checkpoint file: ",
          path.string());
  const auto len = detail::get<std::uint32_t>(in);
  std::string desc(len, '\0');
  in.read(desc.data(), len);
  require(desc == Model::arch_descriptor(), "checkpoint ", path.string(),
          ": architecture descriptor mismatch\n  file:  ", desc,
          "\n  model: ", Model::arch_descriptor());
  const auto params = model.named_params();
  const auto buffers = model.named_buffers();
  const auto n = detail::get<std::uint32_t>(in);
  require(n == params.size() + buffers.size(), "checkpoint ", path.string(),
          ": tensor count mismatch");
  for (const auto& [name, p] : params) detail::get_tensor(in, name, p->value, path);
  for (const auto& [name, b] : buffers) detail::get_tensor(in, name, *b, path);
}

/// Fingerprint of a checkpoint file's bytes; couples factor banks to the
/// checkpoint that produced them.
inline std::uint64_t checkpoint_fingerprint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "checkpoint not found: ", path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
    h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
  return h;
}

}  // namespace carseg::model
