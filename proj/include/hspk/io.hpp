#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hspk/image.hpp"

namespace hspk {

// Binary PGM (P5), maxval 255. Byte = floor(clamp(v,0,1) * 255 + 0.5).
std::uint8_t pixel_to_byte(float value);
void write_pgm(const Image& image, const std::filesystem::path& path);
Image read_pgm(const std::filesystem::path& path);

// Places images left to right (all must share the height).
Image hconcat(const std::vector<const Image*>& images);

/// Header row plus rows of text cells. Numbers are written with
/// format_number so that write -> read -> write is byte-identical.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

std::string format_number(double value);
void write_csv(const CsvTable& table, const std::filesystem::path& path);
CsvTable read_csv(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// Little-endian encoding helpers shared by the binary formats.
namespace le {

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v);
void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v);
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v);
void put_f32(std::vector<std::uint8_t>& out, float v);
void put_bytes(std::vector<std::uint8_t>& out, const std::string& s);

// Bounds-checked sequential reader; throws FormatError on truncation.
class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size, std::string what)
      : data_(data), size_(size), what_(std::move(what)) {}
  explicit Reader(const std::vector<std::uint8_t>& bytes, std::string what)
      : Reader(bytes.data(), bytes.size(), std::move(what)) {}

  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  std::string str(std::size_t n);
  const std::uint8_t* take(std::size_t n);
  void seek(std::size_t pos);
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string what_;
};

}  // namespace le

}  // namespace hspk
