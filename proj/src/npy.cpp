#include "hspk/npy.hpp"

#include <zlib.h>

#include <bit>
#include <cctype>
#include <cstring>

#include "hspk/error.hpp"
#include "hspk/io.hpp"

namespace hspk {

namespace {

constexpr std::uint8_t kNpyMagic[6] = {0x93, 'N', 'U', 'M', 'P', 'Y'};
constexpr std::uint32_t kLocalSig = 0x04034b50;
constexpr std::uint32_t kCentralSig = 0x02014b50;
constexpr std::uint32_t kEndSig = 0x06054b50;
constexpr std::uint32_t kEnd64Sig = 0x06064b50;
constexpr std::uint32_t kEnd64LocatorSig = 0x07064b50;

std::size_t dtype_size(NpyDtype d) {
  switch (d) {
    case NpyDtype::u8: return 1;
    case NpyDtype::f32: return 4;
    case NpyDtype::f64: return 8;
  }
  return 0;
}

// Minimal reader for the header literal: a dict of string keys whose values
// are strings, booleans or integer tuples.
class LiteralParser {
 public:
  explicit LiteralParser(const std::string& s) : s_(s) {}

  NpyHeader parse() {
    NpyHeader h;
    bool saw_descr = false, saw_order = false, saw_shape = false;
    expect('{');
    while (true) {
      skip_ws();
      if (peek() == '}') {
        ++pos_;
        break;
      }
      const std::string key = quoted();
      expect(':');
      skip_ws();
      if (key == "descr") {
        h.dtype = dtype_from_descr(quoted());
        saw_descr = true;
      } else if (key == "fortran_order") {
        h.fortran_order = boolean();
        saw_order = true;
      } else if (key == "shape") {
        h.shape = tuple();
        saw_shape = true;
      } else {
        throw FormatError("npy header: unexpected key '" + key + "'");
      }
      skip_ws();
      if (peek() == ',') ++pos_;
    }
    if (!saw_descr || !saw_order || !saw_shape) {
      throw FormatError("npy header: descr, fortran_order and shape are all required");
    }
    return h;
  }

 private:
  static NpyDtype dtype_from_descr(const std::string& d) {
    if (d == "|u1" || d == "<u1" || d == "u1") return NpyDtype::u8;
    if (d == "<f4") return NpyDtype::f32;
    if (d == "<f8") return NpyDtype::f64;
    throw FormatError("npy: unsupported dtype '" + d + "' (supported: |u1, <f4, <f8)");
  }

  char peek() const {
    if (pos_ >= s_.size()) throw FormatError("npy header: unexpected end");
    return s_[pos_];
  }
  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  void expect(char c) {
    skip_ws();
    if (peek() != c) throw FormatError(std::string("npy header: expected '") + c + "' at offset " + std::to_string(pos_));
    ++pos_;
  }
  std::string quoted() {
    skip_ws();
    const char q = peek();
    if (q != '\'' && q != '"') throw FormatError("npy header: expected a quoted string");
    ++pos_;
    const auto end = s_.find(q, pos_);
    if (end == std::string::npos) throw FormatError("npy header: unterminated string");
    std::string out = s_.substr(pos_, end - pos_);
    pos_ = end + 1;
    return out;
  }
  bool boolean() {
    if (s_.compare(pos_, 4, "True") == 0) {
      pos_ += 4;
      return true;
    }
    if (s_.compare(pos_, 5, "False") == 0) {
      pos_ += 5;
      return false;
    }
    throw FormatError("npy header: expected True or False");
  }
  std::vector<std::size_t> tuple() {
    expect('(');
    std::vector<std::size_t> out;
    while (true) {
      skip_ws();
      if (peek() == ')') {
        ++pos_;
        return out;
      }
      if (!std::isdigit(static_cast<unsigned char>(peek()))) throw FormatError("npy header: bad shape entry");
      std::size_t v = 0;
      while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
        v = v * 10 + static_cast<std::size_t>(s_[pos_++] - '0');
      }
      out.push_back(v);
      skip_ws();
      if (peek() == ',') ++pos_;
    }
  }

  const std::string& s_;
  std::size_t pos_ = 0;
};

struct ZipEntry {
  std::string name;
  std::uint16_t method = 0;
  std::uint64_t compressed = 0;
  std::uint64_t uncompressed = 0;
  std::uint64_t local_offset = 0;
};

// Applies a zip64 extended-information extra field to the saturated fields.
void apply_zip64_extra(const std::uint8_t* extra, std::size_t len, ZipEntry& e, bool usize_sat, bool csize_sat,
                       bool offset_sat, const std::string& what) {
  le::Reader r(extra, len, what);
  while (r.remaining() >= 4) {
    const auto id = r.u16();
    const auto size = r.u16();
    le::Reader field(r.take(size), size, what);
    if (id != 0x0001) continue;
    if (usize_sat) e.uncompressed = field.u64();
    if (csize_sat) e.compressed = field.u64();
    if (offset_sat) e.local_offset = field.u64();
  }
}

std::vector<ZipEntry> read_central_directory(const std::vector<std::uint8_t>& bytes, const std::string& what) {
  if (bytes.size() < 22) throw FormatError(what + ": too small to be a zip archive");
  // The end record sits within the last 64 KiB + 22 bytes (comment length).
  std::size_t end_pos = std::string::npos;
  const std::size_t lowest = bytes.size() > 65557 ? bytes.size() - 65557 : 0;
  for (std::size_t p = bytes.size() - 22 + 1; p-- > lowest;) {
    le::Reader r(bytes.data() + p, 4, what);
    if (r.u32() == kEndSig) {
      end_pos = p;
      break;
    }
  }
  if (end_pos == std::string::npos) throw FormatError(what + ": zip end-of-central-directory record not found");

  le::Reader end(bytes, what);
  end.seek(end_pos + 4);
  end.u16();  // disk number
  end.u16();  // disk with central directory
  end.u16();  // entries on this disk
  std::uint64_t count = end.u16();
  std::uint64_t cd_size = end.u32();
  std::uint64_t cd_offset = end.u32();

  if (count == 0xFFFF || cd_offset == 0xFFFFFFFF || cd_size == 0xFFFFFFFF) {
    if (end_pos < 20) throw FormatError(what + ": zip64 locator missing");
    le::Reader loc(bytes, what);
    loc.seek(end_pos - 20);
    if (loc.u32() != kEnd64LocatorSig) throw FormatError(what + ": zip64 locator missing");
    loc.u32();
    const auto end64_pos = loc.u64();
    le::Reader e64(bytes, what);
    e64.seek(end64_pos);
    if (e64.u32() != kEnd64Sig) throw FormatError(what + ": bad zip64 end record");
    e64.u64();  // record size
    e64.u16();  // version made by
    e64.u16();  // version needed
    e64.u32();
    e64.u32();
    e64.u64();  // entries on this disk
    count = e64.u64();
    cd_size = e64.u64();
    cd_offset = e64.u64();
  }

  std::vector<ZipEntry> entries;
  le::Reader cd(bytes, what);
  cd.seek(cd_offset);
  for (std::uint64_t i = 0; i < count; ++i) {
    if (cd.u32() != kCentralSig) throw FormatError(what + ": bad central directory entry");
    cd.u16();  // version made by
    cd.u16();  // version needed
    cd.u16();  // flags
    ZipEntry e;
    e.method = cd.u16();
    cd.u16();  // time
    cd.u16();  // date
    cd.u32();  // crc
    e.compressed = cd.u32();
    e.uncompressed = cd.u32();
    const auto name_len = cd.u16();
    const auto extra_len = cd.u16();
    const auto comment_len = cd.u16();
    cd.u16();  // disk start
    cd.u16();  // internal attributes
    cd.u32();  // external attributes
    e.local_offset = cd.u32();
    e.name = cd.str(name_len);
    const auto* extra = cd.take(extra_len);
    apply_zip64_extra(extra, extra_len, e, e.uncompressed == 0xFFFFFFFF, e.compressed == 0xFFFFFFFF,
                      e.local_offset == 0xFFFFFFFF, what);
    cd.take(comment_len);
    entries.push_back(std::move(e));
  }
  return entries;
}

std::string strip_npy_suffix(const std::string& name) {
  if (name.size() > 4 && name.compare(name.size() - 4, 4, ".npy") == 0) return name.substr(0, name.size() - 4);
  return name;
}

}  // namespace

std::string npy_descr(NpyDtype dtype) {
  switch (dtype) {
    case NpyDtype::u8: return "|u1";
    case NpyDtype::f32: return "<f4";
    case NpyDtype::f64: return "<f8";
  }
  return "";
}

std::size_t NpyArray::numel() const {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

NpyHeader parse_npy_header(const std::string& text) { return LiteralParser(text).parse(); }

NpyArray parse_npy(const std::uint8_t* data, std::size_t size, const std::string& what) {
  le::Reader r(data, size, what);
  if (size < 6 || std::memcmp(r.take(6), kNpyMagic, 6) != 0) throw FormatError(what + ": bad magic (not a .npy file)");
  const auto major = r.u8();
  r.u8();  // minor
  std::size_t header_len = 0;
  if (major == 1) {
    header_len = r.u16();
  } else if (major == 2 || major == 3) {
    header_len = r.u32();
  } else {
    throw FormatError(what + ": unsupported .npy version " + std::to_string(major));
  }
  const NpyHeader header = parse_npy_header(r.str(header_len));
  if (header.fortran_order) {
    throw FormatError(what + ": unsupported layout (fortran_order=True); save the array in C order");
  }
  NpyArray out;
  out.dtype = header.dtype;
  out.shape = header.shape;
  const std::size_t n = out.numel();
  const std::size_t expected = n * dtype_size(out.dtype);
  if (r.remaining() != expected) {
    throw FormatError(what + ": payload length mismatch (header implies " + std::to_string(expected) +
                      " bytes, found " + std::to_string(r.remaining()) + ")");
  }
  out.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    switch (out.dtype) {
      case NpyDtype::u8: out.data[i] = r.u8(); break;
      case NpyDtype::f32: out.data[i] = r.f32(); break;
      case NpyDtype::f64: out.data[i] = std::bit_cast<double>(r.u64()); break;
    }
  }
  return out;
}

std::vector<std::uint8_t> encode_npy(const NpyArray& array) {
  if (array.data.size() != array.numel()) throw ContractError("encode_npy: data length does not match shape");
  std::string dict = "{'descr': '" + npy_descr(array.dtype) + "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < array.shape.size(); ++i) {
    dict += (i ? ", " : "") + std::to_string(array.shape[i]);
  }
  if (array.shape.size() == 1) dict += ",";
  dict += "), }";
  // Pad with spaces so the payload starts on a 64-byte boundary.
  const std::size_t unpadded = 10 + dict.size() + 1;
  dict.append((64 - unpadded % 64) % 64, ' ');
  dict += '\n';
  if (dict.size() > 0xFFFF) throw ContractError("encode_npy: header too long for version 1.0");

  std::vector<std::uint8_t> out(kNpyMagic, kNpyMagic + 6);
  le::put_u8(out, 1);
  le::put_u8(out, 0);
  le::put_u16(out, static_cast<std::uint16_t>(dict.size()));
  le::put_bytes(out, dict);
  for (double v : array.data) {
    switch (array.dtype) {
      case NpyDtype::u8:
        if (!(v >= 0.0 && v <= 255.0) || v != static_cast<double>(static_cast<std::uint8_t>(v))) {
          throw ContractError("encode_npy: value is not representable as u8");
        }
        le::put_u8(out, static_cast<std::uint8_t>(v));
        break;
      case NpyDtype::f32: le::put_f32(out, static_cast<float>(v)); break;
      case NpyDtype::f64: le::put_u64(out, std::bit_cast<std::uint64_t>(v)); break;
    }
  }
  return out;
}

NpyArray read_npy(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse_npy(bytes.data(), bytes.size(), path.string());
}

void write_npy(const NpyArray& array, const std::filesystem::path& path) { write_file_bytes(path, encode_npy(array)); }

std::map<std::string, NpyArray> read_npy_archive(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  const std::string what = path.string();
  std::map<std::string, NpyArray> out;
  if (bytes.size() >= 6 && std::memcmp(bytes.data(), kNpyMagic, 6) == 0) {
    out.emplace(path.stem().string(), parse_npy(bytes.data(), bytes.size(), what));
    return out;
  }
  if (bytes.size() < 4 || le::Reader(bytes, what).u32() != kLocalSig) {
    throw FormatError(what + ": bad magic (neither .npy nor .npz)");
  }
  for (const ZipEntry& e : read_central_directory(bytes, what)) {
    if (e.method != 0) {
      throw FormatError(what + ": entry '" + e.name +
                        "': compressed archives unsupported; re-save uncompressed (numpy.savez, not savez_compressed)");
    }
    if (e.compressed != e.uncompressed) throw FormatError(what + ": stored entry '" + e.name + "' has inconsistent sizes");
    le::Reader local(bytes, what);
    local.seek(e.local_offset);
    if (local.u32() != kLocalSig) throw FormatError(what + ": bad local header for '" + e.name + "'");
    local.seek(e.local_offset + 26);
    const auto name_len = local.u16();
    const auto extra_len = local.u16();
    local.take(name_len);
    local.take(extra_len);
    const auto* payload = local.take(e.compressed);
    out.emplace(strip_npy_suffix(e.name), parse_npy(payload, e.compressed, what + ":" + e.name));
  }
  return out;
}

void write_npz(const std::map<std::string, NpyArray>& arrays, const std::filesystem::path& path) {
  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> central;
  std::uint16_t count = 0;
  for (const auto& [name, array] : arrays) {
    const auto payload = encode_npy(array);
    const std::string file = name + ".npy";
    if (payload.size() >= 0xFFFFFFFFull || out.size() >= 0xFFFFFFFFull) {
      throw CapacityError("write_npz: archives above 4 GiB are not supported");
    }
    const auto crc = static_cast<std::uint32_t>(crc32(0L, payload.data(), static_cast<uInt>(payload.size())));
    const auto offset = static_cast<std::uint32_t>(out.size());
    const auto size = static_cast<std::uint32_t>(payload.size());

    le::put_u32(out, kLocalSig);
    le::put_u16(out, 20);
    le::put_u16(out, 0);
    le::put_u16(out, 0);
    le::put_u16(out, 0);
    le::put_u16(out, 0x21);  // 1980-01-01
    le::put_u32(out, crc);
    le::put_u32(out, size);
    le::put_u32(out, size);
    le::put_u16(out, static_cast<std::uint16_t>(file.size()));
    le::put_u16(out, 0);
    le::put_bytes(out, file);
    out.insert(out.end(), payload.begin(), payload.end());

    le::put_u32(central, kCentralSig);
    le::put_u16(central, 20);
    le::put_u16(central, 20);
    le::put_u16(central, 0);
    le::put_u16(central, 0);
    le::put_u16(central, 0);
    le::put_u16(central, 0x21);
    le::put_u32(central, crc);
    le::put_u32(central, size);
    le::put_u32(central, size);
    le::put_u16(central, static_cast<std::uint16_t>(file.size()));
    le::put_u16(central, 0);
    le::put_u16(central, 0);
    le::put_u16(central, 0);
    le::put_u16(central, 0);
    le::put_u32(central, 0);
    le::put_u32(central, offset);
    le::put_bytes(central, file);
    ++count;
  }
  const auto cd_offset = static_cast<std::uint32_t>(out.size());
  out.insert(out.end(), central.begin(), central.end());
  le::put_u32(out, kEndSig);
  le::put_u16(out, 0);
  le::put_u16(out, 0);
  le::put_u16(out, count);
  le::put_u16(out, count);
  le::put_u32(out, static_cast<std::uint32_t>(central.size()));
  le::put_u32(out, cd_offset);
  le::put_u16(out, 0);
  write_file_bytes(path, out);
}

std::vector<Image> as_images(const NpyArray& array) {
  std::size_t n = 1, h = 0, w = 0;
  if (array.shape.size() == 2) {
    h = array.shape[0];
    w = array.shape[1];
  } else if (array.shape.size() == 3) {
    n = array.shape[0];
    h = array.shape[1];
    w = array.shape[2];
  } else {
    throw DimensionError("as_images: expected a [n,h,w] or [h,w] array, got rank " + std::to_string(array.shape.size()));
  }
  const double scale = array.dtype == NpyDtype::u8 ? 1.0 / 255.0 : 1.0;
  std::vector<Image> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Image im(h, w);
    for (std::size_t p = 0; p < h * w; ++p) {
      const double v = array.data[i * h * w + p] * scale;
      if (!(v >= 0.0 && v <= 1.0)) throw FormatError("as_images: float image values must lie in [0,1]");
      im.pixels[p] = static_cast<float>(v);
    }
    out.push_back(std::move(im));
  }
  return out;
}

}  // namespace hspk
