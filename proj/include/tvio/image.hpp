#pragma once

#include "tvio/types.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace tvio {

// Row-major 8-bit single-channel image.
struct Image8 {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;

  Image8() = default;
  Image8(int w, int h, uint8_t fill = 0) : width(w), height(h), pixels(size_t(w) * h, fill) {}

  uint8_t at(int x, int y) const { return pixels[size_t(y) * width + x]; }
  uint8_t& at(int x, int y) { return pixels[size_t(y) * width + x]; }
  bool valid() const {
    return width > 0 && height > 0 && pixels.size() == size_t(width) * height;
  }
};

struct Frame {
  Image8 image;
  double timestamp = 0.0;
  Spectrum spectrum = Spectrum::kVisual;
  std::string camera_id;
};

// Per-pixel gradient magnitude of the 3x3 Sobel response; 1-pixel border is zero.
struct GradientImage {
  int width = 0;
  int height = 0;
  std::vector<float> magnitude;

  float at(int x, int y) const { return magnitude[size_t(y) * width + x]; }
};

// Sobel x/y responses kept separately for the corner detector's structure tensor.
struct SobelImage {
  int width = 0;
  int height = 0;
  std::vector<float> gx;
  std::vector<float> gy;
};

// Normalized histogram over fixed bin edges. `empty_flagged` marks the
// degenerate all-zero-source case; downstream entropy treats it as 0.
struct ProbabilityVector {
  std::vector<double> bins;
  std::vector<double> bin_edges;  // size bins+1, monotone increasing
  bool empty_flagged = false;
};

// Maximum 3x3 Sobel magnitude on 8-bit input is 4*255*sqrt(2) ~ 1442.5;
// the fixed histogram range rounds this up so entropy is comparable across frames.
inline constexpr double kGradientHistogramMax = 1448.0;
inline constexpr int kDefaultHistogramBins = 64;

SobelImage compute_sobel(const Image8& image);
GradientImage compute_gradient(const Frame& frame);

std::vector<double> uniform_bin_edges(double lo, double hi, int bins);

// Counts clamp into the last bin above the top edge (and the first below the
// bottom edge); output sums to 1 unless the input is empty.
ProbabilityVector histogram(std::span<const float> values, std::span<const double> bin_edges);

}  // namespace tvio
