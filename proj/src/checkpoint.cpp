#include "segprobe/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "segprobe/error.hpp"

namespace segprobe {
namespace {

constexpr char kMagic[4] = {'S', 'P', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kHasStandardizer = 1;

void put_u32(std::vector<char>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

void put_f32s(std::vector<char>& out, std::span<const float> values) {
  for (float v : values) put_u32(out, std::bit_cast<std::uint32_t>(v));
}

class Reader {
 public:
  Reader(const std::filesystem::path& path, std::vector<char> bytes)
      : path_(path), bytes_(std::move(bytes)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + b])) << (8 * b);
    }
    pos_ += 4;
    return v;
  }

  std::vector<float> f32s(std::size_t n) {
    std::vector<float> out(n);
    for (auto& v : out) v = std::bit_cast<float>(u32());
    return out;
  }

  std::string text(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

  [[noreturn]] void fail(const std::string& why) const {
    throw StoreError(StoreError::Kind::Decode, path_.string() + ": " + why);
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) fail("truncated checkpoint");
  }

  std::filesystem::path path_;
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto& p = checkpoint.params;
  std::vector<char> out(kMagic, kMagic + 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(p.dim()));
  put_u32(out, static_cast<std::uint32_t>(p.num_classes()));
  put_u32(out, p.standardizer ? kHasStandardizer : 0u);
  put_u32(out, static_cast<std::uint32_t>(checkpoint.metadata_json.size()));
  out.insert(out.end(), checkpoint.metadata_json.begin(), checkpoint.metadata_json.end());
  put_f32s(out, p.weight.data());
  put_f32s(out, p.bias);
  if (p.standardizer) {
    put_f32s(out, p.standardizer->mean);
    put_f32s(out, p.standardizer->inv_std);
  }
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw StoreError(StoreError::Kind::Io, tmp.string() + ": cannot open for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    f.close();
    if (!f) throw StoreError(StoreError::Kind::Io, tmp.string() + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    throw StoreError(StoreError::Kind::MissingFile, path.string() + ": checkpoint not found");
  }
  Reader r(path, std::vector<char>(std::istreambuf_iterator<char>(f), {}));
  if (r.text(4) != std::string(kMagic, 4)) r.fail("not a probe checkpoint (bad magic)");
  if (const auto v = r.u32(); v != kVersion) r.fail("unsupported version " + std::to_string(v));
  const std::size_t dim = r.u32();
  const std::size_t classes = r.u32();
  const std::uint32_t flags = r.u32();
  if (dim == 0 || classes == 0) r.fail("zero-sized probe");
  Checkpoint ck;
  ck.metadata_json = r.text(r.u32());
  ck.params.weight = Tensor({dim, classes}, r.f32s(dim * classes));
  ck.params.bias = r.f32s(classes);
  if (flags & kHasStandardizer) {
    FeatureStandardizer s;
    s.mean = r.f32s(dim);
    s.inv_std = r.f32s(dim);
    ck.params.standardizer = std::move(s);
  }
  if (!r.done()) r.fail("trailing bytes after payload");
  return ck;
}

}  // namespace segprobe
