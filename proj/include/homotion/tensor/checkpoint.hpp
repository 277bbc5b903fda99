#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "homotion/tensor/tensor.hpp"

namespace homotion::tensor {

struct NamedArray {
  std::string name;
  Tensor value;
};

struct Checkpoint {
  std::string config_hash;
  nlohmann::json meta;
  std::vector<NamedArray> entries;

  // Throws DataError when `name` is missing.
  const Tensor& at(const std::string& name) const;
};

// Layout: 8-byte magic "HOCKPT01", u64 LE header length, JSON header
// {format, version, config_hash, meta, entries:[{name, shape, offset, count}]},
// then every array as little-endian f64 in entry order. Offsets count doubles
// from the start of the data block.
void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& entries,
                     const nlohmann::json& meta, const std::string& config_hash);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace homotion::tensor
