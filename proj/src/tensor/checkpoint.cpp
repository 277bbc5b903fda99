#include "homotion/tensor/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "homotion/errors.hpp"

namespace homotion::tensor {

namespace {

constexpr char kMagic[8] = {'H', 'O', 'C', 'K', 'P', 'T', '0', '1'};

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(v);
  return v;
}

void write_u64(std::ostream& os, std::uint64_t v) {
  v = to_le(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return to_le(v);
}

}  // namespace

const Tensor& Checkpoint::at(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return e.value;
  }
  throw DataError("checkpoint has no entry '" + name + "'");
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& entries,
                     const nlohmann::json& meta, const std::string& config_hash) {
  nlohmann::json header;
  header["format"] = "homotion-checkpoint";
  header["version"] = 1;
  header["config_hash"] = config_hash;
  header["meta"] = meta;
  header["entries"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& e : entries) {
    header["entries"].push_back(
        {{"name", e.name}, {"shape", e.value.shape()}, {"offset", offset}, {"count", e.value.numel()}});
    offset += e.value.numel();
  }
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic, sizeof(kMagic));
  write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& e : entries) {
    for (double v : e.value.data()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof(bits));
      write_u64(os, bits);
    }
  }
  if (!os) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not a checkpoint file: " + path.string());
  }
  const std::uint64_t header_len = read_u64(is);
  std::string text(header_len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!is) throw DataError("truncated checkpoint header: " + path.string());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  Checkpoint ck;
  ck.config_hash = header.value("config_hash", "");
  ck.meta = header.value("meta", nlohmann::json::object());
  std::uint64_t expected_offset = 0;
  for (const auto& entry : header.at("entries")) {
    const auto shape = entry.at("shape").get<Shape>();
    const auto count = entry.at("count").get<std::uint64_t>();
    if (entry.at("offset").get<std::uint64_t>() != expected_offset || numel(shape) != count) {
      throw DataError("inconsistent checkpoint entry '" + entry.at("name").get<std::string>() + "'");
    }
    std::vector<double> values(count);
    for (auto& v : values) {
      const std::uint64_t bits = read_u64(is);
      std::memcpy(&v, &bits, sizeof(v));
    }
    if (!is) throw DataError("truncated checkpoint data: " + path.string());
    ck.entries.push_back({entry.at("name").get<std::string>(), Tensor(shape, std::move(values))});
    expected_offset += count;
  }
  return ck;
}

}  // namespace homotion::tensor
