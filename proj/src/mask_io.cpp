#include "segprobe/mask_io.hpp"

#include <png.h>

#include <cctype>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include "segprobe/error.hpp"

namespace segprobe {
namespace {

namespace fs = std::filesystem;

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw MaskError(MaskError::Kind::Io, path.string() + ": cannot open");
  return f;
}

bool is_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  return in.gcount() == 2 && magic[0] == 'P' && magic[1] == '5';
}

// Error text captured by the libpng callbacks; read after longjmp.
struct PngErrorSink {
  char message[256] = {0};
};

void png_error_fn(png_structp png, png_const_charp msg) {
  auto* sink = static_cast<PngErrorSink*>(png_get_error_ptr(png));
  std::snprintf(sink->message, sizeof sink->message, "%s", msg);
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

// Decodes an open PNG into *pixels. Returns an empty string on success,
// otherwise a format description. No object with a destructor is created
// between setjmp and a possible longjmp.
std::string read_png_into(std::FILE* fp, bool header_only, std::size_t* h, std::size_t* w,
                          std::vector<std::uint8_t>* pixels) {
  PngErrorSink sink;
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, &sink, png_error_fn, png_warning_fn);
  if (!png) return "libpng init failed";
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    return "libpng init failed";
  }
  std::vector<png_bytep>* volatile rows = nullptr;
  if (setjmp(png_jmpbuf(png))) {
    delete rows;
    png_destroy_read_struct(&png, &info, nullptr);
    return sink.message[0] ? sink.message : "corrupt PNG";
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  const char* reject = nullptr;
  if (color == PNG_COLOR_TYPE_GRAY) {
    if (depth != 8) reject = "unsupported bit depth for grayscale mask (need 8-bit)";
  } else if (color == PNG_COLOR_TYPE_PALETTE) {
    if (depth < 8) png_set_packing(png);
  } else {
    reject = "unsupported colour type (need 8-bit grayscale or palette PNG)";
  }
  if (reject) {
    png_destroy_read_struct(&png, &info, nullptr);
    return reject;
  }
  *h = png_get_image_height(png, info);
  *w = png_get_image_width(png, info);
  if (!header_only) {
    png_read_update_info(png, info);
    pixels->assign(*h * *w, 0);
    rows = new std::vector<png_bytep>(*h);
    for (std::size_t y = 0; y < *h; ++y) (*rows)[y] = pixels->data() + y * *w;
    png_read_image(png, rows->data());
    png_read_end(png, nullptr);
    delete rows;
    rows = nullptr;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return {};
}

GrayImage read_png(const fs::path& path, bool header_only) {
  auto fp = open_file(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw MaskError(MaskError::Kind::Format, path.string() + ": not a PNG or PGM file");
  }
  std::rewind(fp.get());
  GrayImage img;
  const std::string err = read_png_into(fp.get(), header_only, &img.h, &img.w, &img.pixels);
  if (!err.empty()) throw MaskError(MaskError::Kind::Format, path.string() + ": " + err);
  return img;
}

// Skips whitespace and '#' comments between PGM header tokens.
long read_pgm_token(std::istream& in) {
  while (true) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  long v = -1;
  in >> v;
  return in ? v : -1;
}

GrayImage read_pgm(const fs::path& path, bool header_only) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MaskError(MaskError::Kind::Io, path.string() + ": cannot open");
  in.ignore(2);
  const long w = read_pgm_token(in);
  const long h = read_pgm_token(in);
  const long maxval = read_pgm_token(in);
  if (w <= 0 || h <= 0 || maxval <= 0) {
    throw MaskError(MaskError::Kind::Format, path.string() + ": malformed PGM header");
  }
  if (maxval > 255) {
    throw MaskError(MaskError::Kind::Format,
                    path.string() + ": unsupported bit depth (PGM maxval > 255)");
  }
  in.get();
  GrayImage img{static_cast<std::size_t>(h), static_cast<std::size_t>(w), {}};
  if (!header_only) {
    img.pixels.resize(img.h * img.w);
    in.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (static_cast<std::size_t>(in.gcount()) != img.pixels.size()) {
      throw MaskError(MaskError::Kind::Format, path.string() + ": truncated PGM payload");
    }
  }
  return img;
}

GrayImage read_any(const fs::path& path, bool header_only) {
  if (!fs::exists(path)) throw MaskError(MaskError::Kind::Io, path.string() + ": no such file");
  return is_pgm(path) ? read_pgm(path, header_only) : read_png(path, header_only);
}

void write_png(const fs::path& path, const GrayImage& img,
               std::span<const std::array<std::uint8_t, 3>> palette) {
  if (img.pixels.size() != img.h * img.w || img.h == 0 || img.w == 0) {
    throw MaskError(MaskError::Kind::Shape, path.string() + ": image buffer does not match size");
  }
  auto fp = open_file(path, "wb");
  PngErrorSink sink;
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, &sink, png_error_fn, png_warning_fn);
  if (!png) throw MaskError(MaskError::Kind::Io, "libpng init failed");
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep> rows(img.h);
  for (std::size_t y = 0; y < img.h; ++y) {
    rows[y] = const_cast<png_bytep>(img.pixels.data() + y * img.w);
  }
  std::vector<png_color> colors;
  for (const auto& c : palette) colors.push_back({c[0], c[1], c[2]});

  volatile bool failed = false;
  if (!info || setjmp(png_jmpbuf(png))) {
    failed = true;
  } else {
    png_init_io(png, fp.get());
    png_set_compression_level(png, 6);
    const int color = palette.empty() ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_PALETTE;
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
                 color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    if (!colors.empty()) png_set_PLTE(png, info, colors.data(), static_cast<int>(colors.size()));
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
  }
  png_destroy_write_struct(&png, &info);
  if (failed) {
    throw MaskError(MaskError::Kind::Io, path.string() + ": PNG write failed: " + sink.message);
  }
  if (std::fflush(fp.get()) != 0) {
    throw MaskError(MaskError::Kind::Io, path.string() + ": flush failed");
  }
}

void write_pgm(const fs::path& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw MaskError(MaskError::Kind::Io, path.string() + ": cannot open for writing");
  out << "P5\n" << img.w << ' ' << img.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw MaskError(MaskError::Kind::Io, path.string() + ": write failed");
}

}  // namespace

GrayImage read_gray8(const fs::path& path) { return read_any(path, false); }

std::array<std::size_t, 2> read_image_dims(const fs::path& path) {
  const auto img = read_any(path, true);
  return {img.h, img.w};
}

void write_gray8(const fs::path& path, const GrayImage& img) {
  if (path.extension() == ".pgm") {
    write_pgm(path, img);
  } else {
    write_png(path, img, {});
  }
}

void write_indexed_png(const fs::path& path, const GrayImage& indices,
                       std::span<const std::array<std::uint8_t, 3>> palette) {
  if (palette.empty() || palette.size() > 256) {
    throw MaskError(MaskError::Kind::Format, "palette must hold 1..256 colours");
  }
  for (auto v : indices.pixels) {
    if (v >= palette.size()) {
      throw MaskError(MaskError::Kind::Format, "index " + std::to_string(v) + " outside palette");
    }
  }
  write_png(path, indices, palette);
}

LabelMask load_mask(const fs::path& path, int num_classes, std::uint8_t ignore_index) {
  auto img = read_gray8(path);
  try {
    return LabelMask(img.h, img.w, num_classes, std::move(img.pixels), ignore_index);
  } catch (const MaskError& e) {
    throw MaskError(e.kind(), path.string() + ": " + e.what());
  }
}

void save_mask(const fs::path& path, const LabelMask& mask) {
  GrayImage img{mask.h(), mask.w(), {mask.values().begin(), mask.values().end()}};
  write_gray8(path, img);
}

}  // namespace segprobe
