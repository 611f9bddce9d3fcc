#include "tvio/image_io.hpp"

#include <png.h>

#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>

namespace tvio {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

[[noreturn]] void io_fail(const std::filesystem::path& path, const std::string& what) {
  throw std::runtime_error(path.string() + ": " + what);
}

}  // namespace

Image8 load_png_gray(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) io_fail(path, "cannot open for reading");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) io_fail(path, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    io_fail(path, "png_create_info_struct failed");
  }
  std::vector<png_bytep> rows;
  Image8 image;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    io_fail(path, "libpng decode error");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  image.width = int(w);
  image.height = int(h);
  image.pixels.resize(size_t(w) * h);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = image.pixels.data() + size_t(y) * w;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

namespace {

void save_png_impl(const std::filesystem::path& path, int width, int height,
                   const uint8_t* data, int color_type, int channels) {
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) io_fail(path, "cannot open for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) io_fail(path, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    io_fail(path, "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    io_fail(path, "libpng encode error");
  }
  png_init_io(png, fp.get());
  // Fixed settings keep output byte-stable for the determinism checks.
  png_set_compression_level(png, 6);
  png_set_filter(png, 0, PNG_FILTER_SUB);
  png_set_IHDR(png, info, png_uint_32(width), png_uint_32(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<size_t>(height), nullptr);
  for (int y = 0; y < height; ++y) {
    rows[size_t(y)] = const_cast<png_bytep>(data + size_t(y) * width * channels);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void save_png_gray(const std::filesystem::path& path, const Image8& image) {
  if (!image.valid()) io_fail(path, "refusing to write invalid image");
  save_png_impl(path, image.width, image.height, image.pixels.data(), PNG_COLOR_TYPE_GRAY, 1);
}

void save_png_rgb(const std::filesystem::path& path, int width, int height,
                  const std::vector<uint8_t>& rgb) {
  if (rgb.size() != size_t(width) * height * 3) io_fail(path, "rgb buffer size mismatch");
  save_png_impl(path, width, height, rgb.data(), PNG_COLOR_TYPE_RGB, 3);
}

Image8 load_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) io_fail(path, "cannot open for reading");
  std::string magic;
  in >> magic;
  if (magic != "P5") io_fail(path, "not a binary PGM (P5) file");

  auto next_int = [&](const char* what) {
    // skip whitespace and '#' comment lines
    int c = in.get();
    while (c != EOF && (std::isspace(c) || c == '#')) {
      if (c == '#') {
        while (c != EOF && c != '\n') c = in.get();
      }
      c = in.get();
    }
    if (c == EOF) io_fail(path, std::string("truncated header reading ") + what);
    long v = 0;
    while (c != EOF && std::isdigit(c)) {
      v = v * 10 + (c - '0');
      c = in.get();
    }
    in.unget();
    return v;
  };

  const long w = next_int("width");
  const long h = next_int("height");
  const long maxval = next_int("maxval");
  if (w < 1 || h < 1) io_fail(path, "bad dimensions");
  if (maxval != 255) io_fail(path, "only 8-bit PGM supported (maxval 255)");
  in.get();  // single whitespace after maxval
  Image8 image;
  image.width = int(w);
  image.height = int(h);
  image.pixels.resize(size_t(w) * h);
  in.read(reinterpret_cast<char*>(image.pixels.data()), std::streamsize(image.pixels.size()));
  if (size_t(in.gcount()) != image.pixels.size()) io_fail(path, "truncated pixel data");
  return image;
}

void save_pgm(const std::filesystem::path& path, const Image8& image) {
  if (!image.valid()) io_fail(path, "refusing to write invalid image");
  std::ofstream out(path, std::ios::binary);
  if (!out) io_fail(path, "cannot open for writing");
  out << "P5\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            std::streamsize(image.pixels.size()));
  if (!out) io_fail(path, "write failed");
}

Image8 load_image(const std::filesystem::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".png" || ext == ".PNG") return load_png_gray(path);
  if (ext == ".pgm" || ext == ".PGM") return load_pgm(path);
  io_fail(path, "unsupported image extension (want .png or .pgm)");
}

}  // namespace tvio
