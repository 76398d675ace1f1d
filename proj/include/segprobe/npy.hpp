#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "segprobe/tensor.hpp"

namespace segprobe::npy {

/// Parsed NPY v1.0 header. Only the fields the store contract needs.
struct Header {
  std::string descr;
  bool fortran_order = false;
  std::vector<std::size_t> shape;
  std::size_t data_offset = 0;
};

/// Reads and parses the header only. Throws StoreError(Decode) on a malformed
/// header, StoreError(MissingFile/Io) when the file cannot be read.
Header read_header(const std::filesystem::path& path);

/// Decodes a little-endian float32, C-order array. Any other dtype, a Fortran
/// layout or a short payload is a StoreError(Decode).
Tensor read_f32(const std::filesystem::path& path);

/// Writes `t` as NPY v1.0 `<f4`, C-order, header padded to 64 bytes.
void write_f32(const std::filesystem::path& path, const Tensor& t);

/// Serialized bytes of write_f32, for hashing or in-memory comparison.
std::vector<char> encode_f32(const Tensor& t);

}  // namespace segprobe::npy
