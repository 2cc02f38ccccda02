#include "hspk/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace hspk {

std::uint8_t pixel_to_byte(float value) {
  const double v = std::clamp(static_cast<double>(value), 0.0, 1.0);
  return static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

void write_pgm(const Image& image, const std::filesystem::path& path) {
  std::string head = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> bytes(head.begin(), head.end());
  for (float v : image.pixels) bytes.push_back(pixel_to_byte(v));
  write_file_bytes(path, bytes);
}

Image read_pgm(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  std::size_t pos = 0;
  // Whitespace-separated header tokens, '#' comments allowed.
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  if (token() != "P5") throw FormatError(path.string() + ": not a binary PGM (P5)");
  const auto w = std::stoul(token());
  const auto h = std::stoul(token());
  const auto maxval = std::stoul(token());
  if (maxval != 255) throw FormatError(path.string() + ": only maxval 255 is supported");
  ++pos;  // single whitespace after maxval
  if (bytes.size() - std::min(pos, bytes.size()) != w * h) {
    throw FormatError(path.string() + ": payload length does not match " + std::to_string(w) + "x" +
                      std::to_string(h));
  }
  Image out(h, w);
  for (std::size_t i = 0; i < w * h; ++i) out.pixels[i] = static_cast<float>(bytes[pos + i]) / 255.0f;
  return out;
}

Image hconcat(const std::vector<const Image*>& images) {
  if (images.empty()) return {};
  const std::size_t h = images[0]->height;
  std::size_t w = 0;
  for (const Image* im : images) {
    if (im->height != h) throw DimensionError("hconcat: heights differ");
    w += im->width;
  }
  Image out(h, w);
  std::size_t x0 = 0;
  for (const Image* im : images) {
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < im->width; ++x) out.at(y, x0 + x) = im->at(y, x);
    x0 += im->width;
  }
  return out;
}

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  // Shortest representation that round-trips.
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, end);
}

namespace {

std::string csv_escape(const std::string& cell) {
  if (cell.find_first_of(",\"\n") == std::string::npos) return cell;
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  cells.push_back(std::move(cur));
  return cells;
}

}  // namespace

void write_csv(const CsvTable& table, const std::filesystem::path& path) {
  std::ostringstream os;
  auto line = [&os](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << csv_escape(cells[i]);
    os << '\n';
  };
  line(table.header);
  for (const auto& r : table.rows) {
    if (r.size() != table.header.size()) throw ContractError("write_csv: row width differs from header");
    line(r);
  }
  write_text_file(path, os.str());
}

CsvTable read_csv(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  CsvTable table;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    auto cells = csv_split(line);
    if (first) {
      table.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != table.header.size()) throw FormatError(path.string() + ": ragged CSV row");
      table.rows.push_back(std::move(cells));
    }
  }
  if (first) throw FormatError(path.string() + ": empty CSV");
  return table;
}

namespace le {

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }
void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  for (int i = 0; i < 2; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
void put_bytes(std::vector<std::uint8_t>& out, const std::string& s) { out.insert(out.end(), s.begin(), s.end()); }

const std::uint8_t* Reader::take(std::size_t n) {
  if (n > size_ - pos_) {
    throw FormatError(what_ + ": truncated (need " + std::to_string(n) + " bytes at offset " +
                      std::to_string(pos_) + ", " + std::to_string(size_ - pos_) + " left)");
  }
  const std::uint8_t* p = data_ + pos_;
  pos_ += n;
  return p;
}

std::uint8_t Reader::u8() { return *take(1); }
std::uint16_t Reader::u16() {
  const auto* p = take(2);
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
std::uint32_t Reader::u32() {
  const auto* p = take(4);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}
std::uint64_t Reader::u64() {
  const auto* p = take(8);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}
float Reader::f32() { return std::bit_cast<float>(u32()); }
std::string Reader::str(std::size_t n) {
  const auto* p = take(n);
  return std::string(reinterpret_cast<const char*>(p), n);
}
void Reader::seek(std::size_t pos) {
  if (pos > size_) throw FormatError(what_ + ": offset " + std::to_string(pos) + " past end");
  pos_ = pos;
}

}  // namespace le

}  // namespace hspk
