#include "hspk/checkpoint.hpp"

#include <cstring>

#include "hspk/error.hpp"
#include "hspk/io.hpp"

namespace hspk {

namespace {
constexpr char kMagic[5] = {'H', 'S', 'C', 'K', '1'};
constexpr std::uint8_t kDtypeF32 = 0;
}  // namespace

void Checkpoint::add(std::string name, std::vector<std::uint64_t> shape, std::vector<float> values) {
  if (contains(name)) throw ContractError("checkpoint: duplicate entry name '" + name + "'");
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  if (n != values.size()) {
    throw ContractError("checkpoint: entry '" + name + "' has " + std::to_string(values.size()) +
                        " values for " + std::to_string(n) + " elements");
  }
  entries.push_back({std::move(name), std::move(shape), std::move(values)});
}

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

const CheckpointEntry& Checkpoint::at(const std::string& name) const {
  const auto* e = find(name);
  if (!e) throw FormatError("checkpoint: missing entry '" + name + "'");
  return *e;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 5);
  le::put_u32(out, ckpt.version);
  le::put_u32(out, static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& e : ckpt.entries) {
    le::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    le::put_bytes(out, e.name);
    le::put_u8(out, kDtypeF32);
    le::put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) le::put_u64(out, d);
    for (float v : e.values) le::put_f32(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& what) {
  le::Reader r(bytes, what);
  if (bytes.size() < 5 || std::memcmp(r.take(5), kMagic, 5) != 0) throw FormatError(what + ": bad magic (expected HSCK1)");
  Checkpoint ckpt;
  ckpt.version = r.u32();
  if (ckpt.version != kCheckpointVersion) {
    throw FormatError(what + ": unsupported checkpoint version " + std::to_string(ckpt.version));
  }
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str(r.u32());
    if (r.u8() != kDtypeF32) throw FormatError(what + ": entry '" + name + "' has an unsupported dtype");
    const auto rank = r.u32();
    std::vector<std::uint64_t> shape(rank);
    std::uint64_t n = 1;
    for (auto& d : shape) {
      d = r.u64();
      n *= d;
    }
    if (n > r.remaining() / 4) throw FormatError(what + ": entry '" + name + "' payload is truncated");
    std::vector<float> values(n);
    for (auto& v : values) v = r.f32();
    if (ckpt.contains(name)) throw FormatError(what + ": duplicate entry '" + name + "'");
    ckpt.entries.push_back({std::move(name), std::move(shape), std::move(values)});
  }
  if (r.remaining() != 0) throw FormatError(what + ": trailing bytes after the last entry");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path), path.string());
}

}  // namespace hspk
