#pragma once

#include "eloss/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace eloss {

/// ELFT tensor record, all integers little-endian:
///
///   offset  size      field
///   0       4         magic "ELFT"
///   4       4         version (u32) = 1
///   8       1         dtype (u8), 0 = float32
///   9       1         rank (u8)
///   10      8*rank    extents (u64 each)
///   ...     4*count   row-major float32 payload
///
/// A file may hold several records back to back (params.bin does).
inline constexpr std::uint32_t kElftVersion = 1;
inline constexpr std::uint8_t kElftFloat32 = 0;

std::vector<std::uint8_t> elft_encode(const Tensor& t);
/// Decodes one record starting at `offset`; advances it past the record.
Tensor elft_decode(std::span<const std::uint8_t> bytes, std::size_t& offset);

void elft_write(const Tensor& t, const std::filesystem::path& path);
Tensor elft_read(const std::filesystem::path& path);

void elft_write_all(std::span<const Tensor> tensors, const std::filesystem::path& path);
std::vector<Tensor> elft_read_all(const std::filesystem::path& path);

/// Values as they survive a float32 round trip.
Tensor round_to_float32(const Tensor& t);

}  // namespace eloss
