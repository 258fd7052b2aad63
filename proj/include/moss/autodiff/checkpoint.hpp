#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "moss/autodiff/adamw.hpp"
#include "moss/error.hpp"

namespace moss::ad {

// Layout:
//   8 bytes   magic "MOSSCKPT"
//   uint32    format version (little-endian)
//   uint64    header length in bytes (little-endian)
//   header    UTF-8 JSON: {"metadata": {...}, "tensors": [{"name","shape","offset"}]}
//   payload   concatenated little-endian float32 values; offsets count floats
inline constexpr char kCheckpointMagic[8] = {'M', 'O', 'S', 'S', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<NamedTensor<float>> tensors;

  const Tensor<float>* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t.tensor;
    return nullptr;
  }
};

namespace detail {

template <typename U>
U byte_reverse(U value) {
  unsigned char bytes[sizeof(U)];
  std::memcpy(bytes, &value, sizeof(U));
  for (std::size_t i = 0; i < sizeof(U) / 2; ++i) std::swap(bytes[i], bytes[sizeof(U) - 1 - i]);
  std::memcpy(&value, bytes, sizeof(U));
  return value;
}

template <typename U>
void write_le(std::ostream& os, U value) {
  if constexpr (std::endian::native == std::endian::big) value = byte_reverse(value);
  os.write(reinterpret_cast<const char*>(&value), sizeof(U));
}

template <typename U>
U read_le(std::istream& is) {
  U value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(U));
  if constexpr (std::endian::native == std::endian::big) value = byte_reverse(value);
  return value;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["metadata"] = ckpt.metadata;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    header["tensors"].push_back({{"name", t.name}, {"shape", t.tensor.shape()}, {"offset", offset}});
    offset += t.tensor.size();
  }
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write checkpoint", {path.string()});
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_le<std::uint32_t>(os, kCheckpointVersion);
  detail::write_le<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : ckpt.tensors)
    for (float v : t.tensor.data()) detail::write_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(v));
  if (!os) throw DataError("failed while writing checkpoint", {path.string()});
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint", {path.string()});
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw DataError("not a checkpoint file", {path.string()});
  const auto version = detail::read_le<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version), {path.string()});
  const auto header_len = detail::read_le<std::uint64_t>(is);
  if (!is || header_len > (1u << 30)) throw DataError("corrupt checkpoint header", {path.string()});
  std::string text(header_len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!is) throw DataError("truncated checkpoint header", {path.string()});

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("corrupt checkpoint header: ") + e.what(), {path.string()});
  }
  Checkpoint ckpt;
  ckpt.metadata = header.value("metadata", nlohmann::json::object());
  std::uint64_t expected_offset = 0;
  for (const auto& entry : header.at("tensors")) {
    Shape shape = entry.at("shape").get<Shape>();
    if (entry.at("offset").get<std::uint64_t>() != expected_offset)
      throw DataError("checkpoint tensor offsets are not contiguous", {path.string()});
    std::vector<float> values(numel(shape));
    for (auto& v : values) v = std::bit_cast<float>(detail::read_le<std::uint32_t>(is));
    if (!is) throw DataError("truncated checkpoint payload", {path.string()});
    expected_offset += values.size();
    ckpt.tensors.push_back({entry.at("name").get<std::string>(), Tensor<float>(std::move(shape), std::move(values))});
  }
  return ckpt;
}

}  // namespace moss::ad
