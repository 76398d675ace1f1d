#include "segprobe/npy.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <regex>

#include "segprobe/error.hpp"

namespace segprobe::npy {
namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicLen = 6;
constexpr const char* kExpected = "expected little-endian float32 ('<f4'), C-order";

StoreError decode_error(const std::filesystem::path& path, const std::string& msg) {
  return StoreError(StoreError::Kind::Decode, path.string() + ": " + msg);
}

Header parse_dict(const std::filesystem::path& path, const std::string& dict,
                  std::size_t data_offset) {
  Header h;
  h.data_offset = data_offset;
  std::smatch m;
  static const std::regex descr_re(R"('descr'\s*:\s*'([^']*)')");
  static const std::regex fortran_re(R"('fortran_order'\s*:\s*(True|False))");
  static const std::regex shape_re(R"('shape'\s*:\s*\(([^)]*)\))");
  if (!std::regex_search(dict, m, descr_re)) throw decode_error(path, "header lacks 'descr'");
  h.descr = m[1];
  if (!std::regex_search(dict, m, fortran_re)) {
    throw decode_error(path, "header lacks 'fortran_order'");
  }
  h.fortran_order = (m[1] == "True");
  if (!std::regex_search(dict, m, shape_re)) throw decode_error(path, "header lacks 'shape'");
  const std::string dims = m[1];
  static const std::regex int_re(R"(\d+)");
  for (auto it = std::sregex_iterator(dims.begin(), dims.end(), int_re);
       it != std::sregex_iterator(); ++it) {
    h.shape.push_back(static_cast<std::size_t>(std::stoull(it->str())));
  }
  return h;
}

std::string build_header(const std::vector<std::size_t>& shape) {
  std::string dict = "{'descr': '<f4', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    dict += std::to_string(shape[i]);
    if (shape.size() == 1 || i + 1 < shape.size()) dict += ", ";
  }
  dict += "), }";
  const std::size_t unpadded = kMagicLen + 2 + 2 + dict.size() + 1;
  const std::size_t total = (unpadded + 63) / 64 * 64;
  dict.append(total - unpadded, ' ');
  dict.push_back('\n');
  return dict;
}

}  // namespace

Header read_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    const auto kind = std::filesystem::exists(path) ? StoreError::Kind::Io
                                                    : StoreError::Kind::MissingFile;
    throw StoreError(kind, path.string() + ": cannot open feature file");
  }
  char pre[10];
  in.read(pre, sizeof pre);
  if (in.gcount() != sizeof pre || std::memcmp(pre, kMagic, kMagicLen) != 0) {
    throw decode_error(path, "not an NPY file (bad magic)");
  }
  const auto major = static_cast<unsigned char>(pre[6]);
  if (major != 1) {
    throw decode_error(path, "unsupported NPY version " + std::to_string(major) + " (need 1.0)");
  }
  const std::size_t len = static_cast<unsigned char>(pre[8]) |
                          (static_cast<std::size_t>(static_cast<unsigned char>(pre[9])) << 8);
  std::string dict(len, '\0');
  in.read(dict.data(), static_cast<std::streamsize>(len));
  if (static_cast<std::size_t>(in.gcount()) != len) throw decode_error(path, "truncated header");
  return parse_dict(path, dict, sizeof pre + len);
}

Tensor read_f32(const std::filesystem::path& path) {
  const Header h = read_header(path);
  if (h.descr != "<f4") {
    throw decode_error(path, "dtype '" + h.descr + "' unsupported; " + kExpected);
  }
  if (h.fortran_order) throw decode_error(path, std::string("Fortran order unsupported; ") + kExpected);

  std::size_t count = 1;
  for (auto d : h.shape) count *= d;
  std::ifstream in(path, std::ios::binary);
  in.seekg(static_cast<std::streamoff>(h.data_offset));
  std::vector<float> data(count);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * 4));
  if (static_cast<std::size_t>(in.gcount()) != count * 4) {
    throw decode_error(path, "truncated payload: expected " + std::to_string(count * 4) +
                                 " bytes of float32 data");
  }
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& v : data) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      bits = __builtin_bswap32(bits);
      v = std::bit_cast<float>(bits);
    }
  }
  return Tensor(h.shape, std::move(data));
}

std::vector<char> encode_f32(const Tensor& t) {
  const std::string header = build_header(t.shape());
  std::vector<char> out(kMagic, kMagic + kMagicLen);
  out.reserve(kMagicLen + 4 + header.size() + t.size() * 4);
  out.push_back(1);
  out.push_back(0);
  out.push_back(static_cast<char>(header.size() & 0xFF));
  out.push_back(static_cast<char>((header.size() >> 8) & 0xFF));
  out.insert(out.end(), header.begin(), header.end());
  for (float v : t.data()) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
  }
  return out;
}

void write_f32(const std::filesystem::path& path, const Tensor& t) {
  const auto bytes = encode_f32(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StoreError(StoreError::Kind::Io, path.string() + ": cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw StoreError(StoreError::Kind::Io, path.string() + ": write failed");
}

}  // namespace segprobe::npy
