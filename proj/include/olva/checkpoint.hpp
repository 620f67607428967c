#pragma once

// Binary tensor container, little-endian:
//   "OLVA" | version u32 | count u32 |
//   count x ( name_len u16 | name bytes | rank u8 | extents u32[rank] | f32 payload )

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "olva/tensor.hpp"

namespace olva {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Throws IoError with the path on any failure.
void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

/// Lookup by name; throws ConfigError naming the missing tensor.
const Tensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name);

}  // namespace olva
