#include "tvio/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tvio {

SobelImage compute_sobel(const Image8& image) {
  if (!image.valid() || image.width < 3 || image.height < 3) {
    throw std::invalid_argument("compute_sobel: image must be at least 3x3");
  }
  const int w = image.width, h = image.height;
  SobelImage out;
  out.width = w;
  out.height = h;
  out.gx.assign(size_t(w) * h, 0.0f);
  out.gy.assign(size_t(w) * h, 0.0f);
  const uint8_t* p = image.pixels.data();
  for (int y = 1; y + 1 < h; ++y) {
    const uint8_t* rm = p + size_t(y - 1) * w;
    const uint8_t* r0 = p + size_t(y) * w;
    const uint8_t* rp = p + size_t(y + 1) * w;
    float* gx = out.gx.data() + size_t(y) * w;
    float* gy = out.gy.data() + size_t(y) * w;
    for (int x = 1; x + 1 < w; ++x) {
      const int a = rm[x - 1], b = rm[x], c = rm[x + 1];
      const int d = r0[x - 1], f = r0[x + 1];
      const int g = rp[x - 1], i = rp[x], j = rp[x + 1];
      gx[x] = float((c + 2 * f + j) - (a + 2 * d + g));
      gy[x] = float((g + 2 * i + j) - (a + 2 * b + c));
    }
  }
  return out;
}

GradientImage compute_gradient(const Frame& frame) {
  const SobelImage s = compute_sobel(frame.image);
  GradientImage out;
  out.width = s.width;
  out.height = s.height;
  out.magnitude.assign(size_t(s.width) * s.height, 0.0f);
  for (size_t i = 0; i < out.magnitude.size(); ++i) {
    out.magnitude[i] = std::sqrt(s.gx[i] * s.gx[i] + s.gy[i] * s.gy[i]);
  }
  return out;
}

std::vector<double> uniform_bin_edges(double lo, double hi, int bins) {
  if (!(hi > lo) || bins < 1) {
    throw std::invalid_argument("uniform_bin_edges: need hi > lo and bins >= 1");
  }
  std::vector<double> edges(size_t(bins) + 1);
  for (int i = 0; i <= bins; ++i) {
    edges[size_t(i)] = lo + (hi - lo) * double(i) / double(bins);
  }
  return edges;
}

ProbabilityVector histogram(std::span<const float> values, std::span<const double> bin_edges) {
  if (bin_edges.size() < 2) {
    throw std::invalid_argument("histogram: need at least two bin edges");
  }
  for (size_t i = 0; i + 1 < bin_edges.size(); ++i) {
    if (!(bin_edges[i] < bin_edges[i + 1])) {
      throw std::invalid_argument("histogram: bin edges must be strictly increasing");
    }
  }
  const int bins = int(bin_edges.size()) - 1;
  ProbabilityVector out;
  out.bin_edges.assign(bin_edges.begin(), bin_edges.end());
  out.bins.assign(size_t(bins), 0.0);
  if (values.empty()) {
    out.empty_flagged = true;
    return out;
  }
  const double lo = bin_edges.front();
  const double hi = bin_edges.back();
  // Uniform spacing admits direct index computation; otherwise binary search.
  bool uniform = true;
  const double step = (hi - lo) / double(bins);
  for (size_t i = 0; i < bin_edges.size(); ++i) {
    if (std::abs(bin_edges[i] - (lo + step * double(i))) > 1e-9 * (std::abs(hi) + 1.0)) {
      uniform = false;
      break;
    }
  }
  const double scale = double(bins) / (hi - lo);
  for (float vf : values) {
    if (!std::isfinite(vf)) {
      throw std::invalid_argument("histogram: values must be finite");
    }
    const double v = double(vf);
    int idx;
    if (v <= lo) {
      idx = 0;
    } else if (v >= hi) {
      idx = bins - 1;  // clamp into last bin
    } else if (uniform) {
      idx = int((v - lo) * scale);
      if (idx >= bins) idx = bins - 1;
    } else {
      idx = int(std::upper_bound(bin_edges.begin() + 1, bin_edges.end() - 1, v) -
                (bin_edges.begin() + 1));
    }
    out.bins[size_t(idx)] += 1.0;
  }
  const double inv = 1.0 / double(values.size());
  for (double& b : out.bins) b *= inv;
  return out;
}

}  // namespace tvio
