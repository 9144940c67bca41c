// Copyright (c) 2026 The hybridbert authors
// SPDX-License-Identifier: Apache-2.0
//
// Named-array binary container.
//
//   "HBCK" | version u32 | count u32 | count x array
//   array: name_len u16 | name | dtype u8 (0 f32, 1 f64, 2 i64) | rank u8 |
//          dims u32 x rank | payload
//
// Every integer and payload element is little-endian.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace hybridbert {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class ArrayDType : std::uint8_t { f32 = 0, f64 = 1, i64 = 2 };

std::size_t dtype_size(ArrayDType dtype);
const char* dtype_name(ArrayDType dtype);

struct ArrayRecord {
  std::string name;
  ArrayDType dtype = ArrayDType::f32;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> payload;

  std::size_t numel() const;

  static ArrayRecord from_values(std::string name, std::span<const float> values, std::vector<std::uint32_t> dims);
  static ArrayRecord from_values(std::string name, std::span<const double> values, std::vector<std::uint32_t> dims);
  static ArrayRecord from_values(std::string name, std::span<const std::int64_t> values, std::vector<std::uint32_t> dims);

  /// Copies the payload into `out`; throws CheckpointError on dtype or size mismatch.
  template <typename V>
  void copy_to(std::span<V> out) const;
};

std::vector<std::uint8_t> encode_checkpoint(const std::vector<ArrayRecord>& arrays);

/// Throws CheckpointError on bad magic or version, truncation, duplicate
/// names, unknown dtype codes or trailing bytes.
std::vector<ArrayRecord> decode_checkpoint(std::span<const std::uint8_t> bytes);

/// Writes to a sibling temporary file, then renames over `path`.
void write_checkpoint(const std::filesystem::path& path, const std::vector<ArrayRecord>& arrays);
std::vector<ArrayRecord> read_checkpoint(const std::filesystem::path& path);

}  // namespace hybridbert
