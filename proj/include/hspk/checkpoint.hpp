#pragma once

// HSCK1 named-tensor container. Layout (little-endian):
//   "HSCK1" | u32 version | u32 entry count | entries...
//   entry: u32 name length | name bytes | u8 dtype (0 = f32) | u32 rank |
//          u64 dims[rank] | f32 payload[prod(dims)]

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace hspk {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Prefixes of the reserved entry names.
inline constexpr const char* kAdamPrefix = "__adam__/";
inline constexpr const char* kConfigPrefix = "__config__/";

struct CheckpointEntry {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<float> values;

  bool operator==(const CheckpointEntry&) const = default;
};

class Checkpoint {
 public:
  std::uint32_t version = kCheckpointVersion;
  std::vector<CheckpointEntry> entries;

  // Appends an entry; duplicate names throw ContractError.
  void add(std::string name, std::vector<std::uint64_t> shape, std::vector<float> values);
  const CheckpointEntry* find(const std::string& name) const;
  const CheckpointEntry& at(const std::string& name) const;
  bool contains(const std::string& name) const { return find(name) != nullptr; }

  bool operator==(const Checkpoint&) const = default;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& what = "checkpoint");
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hspk
