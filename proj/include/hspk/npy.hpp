#pragma once

// Subset of the NumPy array formats: .npy (v1/v2/v3 headers) with dtypes
// |u1, <f4, <f8 in C order, and .npz zip archives with STORED entries.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hspk/image.hpp"

namespace hspk {

enum class NpyDtype { u8, f32, f64 };

std::string npy_descr(NpyDtype dtype);

/// One array. Elements are kept as double regardless of the stored dtype;
/// u8 arrays keep their raw 0..255 values here (see as_images for the /255).
struct NpyArray {
  NpyDtype dtype = NpyDtype::f32;
  std::vector<std::size_t> shape;
  std::vector<double> data;

  std::size_t numel() const;
};

struct NpyHeader {
  NpyDtype dtype = NpyDtype::f32;
  bool fortran_order = false;
  std::vector<std::size_t> shape;
};

// Parses the python-literal header dictionary.
NpyHeader parse_npy_header(const std::string& text);

NpyArray parse_npy(const std::uint8_t* data, std::size_t size, const std::string& what);
std::vector<std::uint8_t> encode_npy(const NpyArray& array);

NpyArray read_npy(const std::filesystem::path& path);
void write_npy(const NpyArray& array, const std::filesystem::path& path);

/// Reads either a bare .npy (single entry named after the file stem) or an
/// .npz archive (entry names without the .npy suffix).
std::map<std::string, NpyArray> read_npy_archive(const std::filesystem::path& path);

// Writes an uncompressed .npz.
void write_npz(const std::map<std::string, NpyArray>& arrays, const std::filesystem::path& path);

/// Interprets an [n,h,w] (or [h,w]) array as grayscale images in [0,1].
/// u8 data is divided by 255; float data must already lie in [0,1].
std::vector<Image> as_images(const NpyArray& array);

}  // namespace hspk
