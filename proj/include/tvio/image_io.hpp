#pragma once

#include "tvio/image.hpp"

#include <filesystem>

namespace tvio {

// 8-bit grayscale PNG.
Image8 load_png_gray(const std::filesystem::path& path);
void save_png_gray(const std::filesystem::path& path, const Image8& image);

// Interleaved 8-bit RGB, used for debug overlays.
void save_png_rgb(const std::filesystem::path& path, int width, int height,
                  const std::vector<uint8_t>& rgb);

// Binary PGM (P5), 8-bit.
Image8 load_pgm(const std::filesystem::path& path);
void save_pgm(const std::filesystem::path& path, const Image8& image);

// Dispatches on extension (.png / .pgm).
Image8 load_image(const std::filesystem::path& path);

}  // namespace tvio
