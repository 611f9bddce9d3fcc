#pragma once

#include "tvio/image.hpp"

#include <filesystem>
#include <optional>
#include <vector>

namespace tvio {

// Tiles a frame into grid_r x grid_r rectangles; remainder pixels from
// non-divisible dimensions are absorbed by the last row/column.
struct RegionGrid {
  int grid_r = 8;
  int frame_width = 0;
  int frame_height = 0;

  RegionGrid() = default;
  RegionGrid(int r, int width, int height);

  int region_count() const { return grid_r * grid_r; }

  struct Rect {
    int x0, y0, x1, y1;  // half-open [x0, x1) x [y0, y1)
  };
  Rect rect(int index) const;

  // Index of the unique region containing the pixel; throws when out of bounds.
  int region_index(int x, int y) const;
};

// w[k] = exp(-(k - center)^2 / (2 sigma^2)); the maximum entry is 1.
struct GaussianWeightVector {
  std::vector<double> weights;
  double center_bin = 0.0;
  double sigma_bins = 1.0;

  static GaussianWeightVector make(int bins, double center_bin, double sigma_bins);
};

enum class RegionStatus : uint8_t { kCandidate, kRejectedTemporal, kBelowMean };

// Per-frame output of the mask builder plus the temporal history it carries
// between frames of one stream.
struct RegionEntropyMap {
  RegionGrid grid;
  std::vector<double> entropies;         // weighted spatial entropy per region
  double mean_entropy = 0.0;
  std::vector<RegionStatus> status;
  std::vector<uint32_t> history;         // ring of the last K above-mean bits per region
  std::vector<int> consecutive_above;    // streak length including current frame
  uint64_t frames_seen = 0;

  bool lookup(int x, int y) const;       // true iff enclosing region is Candidate
};

// Shannon entropy in bits: -sum p_i log2(p_i); empty-flagged input gives 0.
double image_entropy(const ProbabilityVector& p);

// Gaussian-weighted region entropy: -sum (w_i p_i) log2(p_i).
// With unit weights this equals image_entropy bitwise (same summation order).
double region_entropy(const ProbabilityVector& p, const GaussianWeightVector& w);

struct EntropyMaskConfig {
  int grid_r = 8;
  int temporal_window = 3;  // K consecutive above-mean frames to become Candidate
  int histogram_bins = kDefaultHistogramBins;
  double gaussian_center_bin = kDefaultHistogramBins / 2.0;
  double gaussian_sigma_bins = kDefaultHistogramBins / 6.0;
  double histogram_max = kGradientHistogramMax;
};

// One step of the mask computation. `prior` carries the temporal history of
// the stream; pass nullptr for the first frame. During the first K-1 frames a
// region above mean in all frames so far is already a Candidate.
RegionEntropyMap build_mask(const GradientImage& gradient, const RegionGrid& grid,
                            const GaussianWeightVector& w, std::span<const double> bin_edges,
                            const RegionEntropyMap* prior, int temporal_window);

// Per-stream convenience wrapper holding config, weights and history.
class EntropyMaskBuilder {
 public:
  explicit EntropyMaskBuilder(const EntropyMaskConfig& config);

  const RegionEntropyMap& update(const GradientImage& gradient);
  const RegionEntropyMap* current() const { return map_ ? &*map_ : nullptr; }
  const EntropyMaskConfig& config() const { return config_; }

 private:
  EntropyMaskConfig config_;
  GaussianWeightVector weights_;
  std::vector<double> bin_edges_;
  std::optional<RegionEntropyMap> map_;
};

// Debug overlay: green Candidate, red RejectedTemporal, gray BelowMean outlines.
void write_mask_overlay_png(const std::filesystem::path& path, const Image8& frame,
                            const RegionEntropyMap& map);

}  // namespace tvio
