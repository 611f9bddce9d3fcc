#include "tvio/entropy_mask.hpp"

#include "tvio/image_io.hpp"

#include <cmath>
#include <stdexcept>

namespace tvio {

RegionGrid::RegionGrid(int r, int width, int height) : grid_r(r), frame_width(width), frame_height(height) {
  if (r < 1) throw std::invalid_argument("RegionGrid: grid_r must be >= 1");
  if (width < r || height < r) {
    throw std::invalid_argument("RegionGrid: frame smaller than grid");
  }
}

RegionGrid::Rect RegionGrid::rect(int index) const {
  const int row = index / grid_r;
  const int col = index % grid_r;
  const int bw = frame_width / grid_r;
  const int bh = frame_height / grid_r;
  Rect rc;
  rc.x0 = col * bw;
  rc.y0 = row * bh;
  rc.x1 = (col + 1 == grid_r) ? frame_width : (col + 1) * bw;
  rc.y1 = (row + 1 == grid_r) ? frame_height : (row + 1) * bh;
  return rc;
}

int RegionGrid::region_index(int x, int y) const {
  if (x < 0 || y < 0 || x >= frame_width || y >= frame_height) {
    throw std::invalid_argument("RegionGrid: pixel out of bounds");
  }
  const int bw = frame_width / grid_r;
  const int bh = frame_height / grid_r;
  int col = x / bw;
  int row = y / bh;
  if (col >= grid_r) col = grid_r - 1;  // remainder pixels belong to the last row/column
  if (row >= grid_r) row = grid_r - 1;
  return row * grid_r + col;
}

GaussianWeightVector GaussianWeightVector::make(int bins, double center_bin, double sigma_bins) {
  if (bins < 1 || sigma_bins <= 0.0) {
    throw std::invalid_argument("GaussianWeightVector: bins >= 1 and sigma > 0 required");
  }
  GaussianWeightVector w;
  w.center_bin = center_bin;
  w.sigma_bins = sigma_bins;
  w.weights.resize(size_t(bins));
  const double inv2s2 = 1.0 / (2.0 * sigma_bins * sigma_bins);
  for (int k = 0; k < bins; ++k) {
    const double d = double(k) - center_bin;
    w.weights[size_t(k)] = std::exp(-d * d * inv2s2);
  }
  return w;
}

bool RegionEntropyMap::lookup(int x, int y) const {
  return status[size_t(grid.region_index(x, y))] == RegionStatus::kCandidate;
}

double image_entropy(const ProbabilityVector& p) {
  if (p.empty_flagged) return 0.0;
  double e = 0.0;
  for (double pi : p.bins) {
    if (pi > 0.0) e -= pi * std::log2(pi);
  }
  return e;
}

double region_entropy(const ProbabilityVector& p, const GaussianWeightVector& w) {
  if (p.bins.size() != w.weights.size()) {
    throw std::invalid_argument("region_entropy: probability/weight length mismatch");
  }
  if (p.empty_flagged) return 0.0;
  double e = 0.0;
  for (size_t i = 0; i < p.bins.size(); ++i) {
    const double pi = p.bins[i];
    if (pi > 0.0) e -= (w.weights[i] * pi) * std::log2(pi);
  }
  return e;
}

RegionEntropyMap build_mask(const GradientImage& gradient, const RegionGrid& grid,
                            const GaussianWeightVector& w, std::span<const double> bin_edges,
                            const RegionEntropyMap* prior, int temporal_window) {
  if (grid.frame_width != gradient.width || grid.frame_height != gradient.height) {
    throw std::invalid_argument("build_mask: grid does not match gradient dimensions");
  }
  if (temporal_window < 1 || temporal_window > 32) {
    throw std::invalid_argument("build_mask: temporal window must be in [1, 32]");
  }
  if (prior && (prior->grid.grid_r != grid.grid_r || prior->grid.frame_width != grid.frame_width ||
                prior->grid.frame_height != grid.frame_height)) {
    throw std::invalid_argument("build_mask: prior map has a different grid");
  }

  const int n = grid.region_count();
  RegionEntropyMap map;
  map.grid = grid;
  map.entropies.assign(size_t(n), 0.0);
  map.status.assign(size_t(n), RegionStatus::kBelowMean);
  map.history.assign(size_t(n), 0u);
  map.consecutive_above.assign(size_t(n), 0);
  map.frames_seen = prior ? prior->frames_seen + 1 : 1;

  std::vector<float> scratch;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const RegionGrid::Rect rc = grid.rect(i);
    scratch.clear();
    scratch.reserve(size_t(rc.x1 - rc.x0) * size_t(rc.y1 - rc.y0));
    for (int y = rc.y0; y < rc.y1; ++y) {
      const float* row = gradient.magnitude.data() + size_t(y) * gradient.width;
      scratch.insert(scratch.end(), row + rc.x0, row + rc.x1);
    }
    const ProbabilityVector p = histogram(scratch, bin_edges);
    map.entropies[size_t(i)] = region_entropy(p, w);
    sum += map.entropies[size_t(i)];
  }
  map.mean_entropy = sum / double(n);

  const uint32_t window_mask = (temporal_window >= 32) ? 0xffffffffu : ((1u << temporal_window) - 1u);
  // Strict comparison with a relative slack so exact ties stay non-candidates
  // under mean-accumulation rounding.
  const double tie_slack = 1e-12 * std::max(1.0, std::abs(map.mean_entropy));
  for (int i = 0; i < n; ++i) {
    const bool above = map.entropies[size_t(i)] > map.mean_entropy + tie_slack;
    const uint32_t prev_bits = prior ? prior->history[size_t(i)] : 0u;
    map.history[size_t(i)] = ((prev_bits << 1) | (above ? 1u : 0u)) & window_mask;
    const int prev_streak = (prior && above) ? prior->consecutive_above[size_t(i)] : 0;
    map.consecutive_above[size_t(i)] = above ? prev_streak + 1 : 0;

    if (!above) {
      map.status[size_t(i)] = RegionStatus::kBelowMean;
      continue;
    }
    // Bootstrap: during the first K-1 frames, above-mean in every frame so far qualifies.
    const int required = int(std::min<uint64_t>(map.frames_seen, uint64_t(temporal_window)));
    map.status[size_t(i)] = (map.consecutive_above[size_t(i)] >= required)
                                ? RegionStatus::kCandidate
                                : RegionStatus::kRejectedTemporal;
  }
  return map;
}

EntropyMaskBuilder::EntropyMaskBuilder(const EntropyMaskConfig& config)
    : config_(config),
      weights_(GaussianWeightVector::make(config.histogram_bins, config.gaussian_center_bin,
                                          config.gaussian_sigma_bins)),
      bin_edges_(uniform_bin_edges(0.0, config.histogram_max, config.histogram_bins)) {}

const RegionEntropyMap& EntropyMaskBuilder::update(const GradientImage& gradient) {
  RegionGrid grid(config_.grid_r, gradient.width, gradient.height);
  map_ = build_mask(gradient, grid, weights_, bin_edges_, map_ ? &*map_ : nullptr,
                    config_.temporal_window);
  return *map_;
}

void write_mask_overlay_png(const std::filesystem::path& path, const Image8& frame,
                            const RegionEntropyMap& map) {
  const int w = frame.width, h = frame.height;
  std::vector<uint8_t> rgb(size_t(w) * h * 3);
  for (size_t i = 0; i < frame.pixels.size(); ++i) {
    rgb[3 * i] = rgb[3 * i + 1] = rgb[3 * i + 2] = frame.pixels[i];
  }
  auto paint = [&](int x, int y, uint8_t r, uint8_t g, uint8_t b) {
    const size_t o = (size_t(y) * w + size_t(x)) * 3;
    rgb[o] = r;
    rgb[o + 1] = g;
    rgb[o + 2] = b;
  };
  for (int i = 0; i < map.grid.region_count(); ++i) {
    const RegionGrid::Rect rc = map.grid.rect(i);
    uint8_t r = 128, g = 128, b = 128;  // BelowMean: gray
    if (map.status[size_t(i)] == RegionStatus::kCandidate) {
      r = 0, g = 220, b = 0;
    } else if (map.status[size_t(i)] == RegionStatus::kRejectedTemporal) {
      r = 230, g = 0, b = 0;
    }
    for (int x = rc.x0; x < rc.x1; ++x) {
      paint(x, rc.y0, r, g, b);
      paint(x, rc.y1 - 1, r, g, b);
    }
    for (int y = rc.y0; y < rc.y1; ++y) {
      paint(rc.x0, y, r, g, b);
      paint(rc.x1 - 1, y, r, g, b);
    }
  }
  save_png_rgb(path, w, h, rgb);
}

}  // namespace tvio
