#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "feataug/tensor.hpp"

namespace feataug::fmat {

// On-disk layout, little-endian, no padding:
//   "FMAT" | u32 version=1 | u8 dtype=1 (float32) | u8 ndim | ndim x u32 dims | payload
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint8_t kFloat32 = 1;

/// Shape-generic FMAT payload, used for parameters of rank 1..4.
struct Array {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

std::vector<std::uint8_t> encode(std::span<const std::uint32_t> dims, std::span<const float> data);
Array decode(std::span<const std::uint8_t> bytes);

void write_array(const std::filesystem::path& path, std::span<const std::uint32_t> dims,
                 std::span<const float> data);
Array read_array(const std::filesystem::path& path);

void write_tensor(const std::filesystem::path& path, const Tensor4& t);
/// Reads a rank-4 FMAT file. Throws FormatError on bad magic, version,
/// dtype, rank or payload length, and on I/O failure.
Tensor4 read_tensor(const std::filesystem::path& path);

Tensor4 to_tensor(Array a);

}  // namespace feataug::fmat
