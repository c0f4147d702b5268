#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gjem/tensor.hpp"

namespace gjem {

// Binary container shared by checkpoints, buffer snapshots and datasets.
//
//   "GJEM" | u32 version | u64 record count | records... | u64 FNV-1a checksum
//   record: u64 name length | UTF-8 name | u64 rank | u64 extents[rank] | f64 payload
//
// All integers and doubles are little-endian. The checksum covers every byte
// before it.
inline constexpr std::uint32_t kContainerVersion = 1;

struct Record {
  std::string name;
  Tensor value;
};

std::vector<char> encode_container(std::span<const Record> records);
std::vector<Record> decode_container(std::span<const char> bytes);

void write_container(const std::filesystem::path& path, std::span<const Record> records);
std::vector<Record> read_container(const std::filesystem::path& path);

// Throws IoError naming the missing record.
const Tensor& find_record(std::span<const Record> records, std::string_view name);
const Record* try_find_record(std::span<const Record> records, std::string_view name);

// Text stored as a [1 + n] tensor: the byte count followed by one byte per entry.
Record text_record(std::string name, std::string_view text);
std::string record_text(const Tensor& value);

}  // namespace gjem
