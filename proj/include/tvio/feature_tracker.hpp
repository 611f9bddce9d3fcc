#pragma once

#include "tvio/entropy_mask.hpp"
#include "tvio/image.hpp"
#include "tvio/rng.hpp"

#include <Eigen/Core>

#include <optional>
#include <vector>

namespace tvio {

struct FeatureCandidate {
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();  // sub-pixel
  double score = 0.0;                               // Shi-Tomasi min-eigenvalue response
  Spectrum spectrum = Spectrum::kVisual;
  int region_index = -1;
};

// Per-frame multi-resolution float copy of the image; level l is the 2x2 box
// downsampling of level l-1.
struct ImagePyramid {
  std::vector<std::vector<float>> levels;
  std::vector<int> widths;
  std::vector<int> heights;

  static ImagePyramid build(const Image8& image, int num_levels);
  // Bilinear sample at (x, y) in level coordinates; integer coordinates are
  // pixel sample points.
  float sample(int level, double x, double y) const;
  bool contains(int level, double x, double y, double margin) const;
};

// Reference patch with precomputed gradients and inverse Hessian per level
// (inverse-compositional alignment, translation-only).
struct PatchPyramid {
  int patch_size = 8;
  struct Level {
    std::vector<float> intensity;  // patch_size^2
    std::vector<float> gx, gy;
    Eigen::Matrix2d hessian_inv;
  };
  std::vector<Level> levels;
};

struct DetectConfig {
  double min_distance = 20.0;   // pixels, enforced among outputs and against `occupied`
  int max_candidates = 60;
  int border_margin = 16;       // keep clear of image borders for patch extraction
  double min_score = 25.0;      // absolute Shi-Tomasi floor
  double subpixel_jitter = 0.25;  // per-trial uniform jitter amplitude, pixels
};

// Shi-Tomasi corners restricted to Candidate regions when `mask` is given
// (whole frame otherwise), sorted by descending score. `occupied` pixels are
// respected by the min-distance rule. `jitter` may be null.
std::vector<FeatureCandidate> detect(const Frame& frame, const RegionEntropyMap* mask,
                                     const DetectConfig& config,
                                     std::span<const Eigen::Vector2d> occupied,
                                     RngStream* jitter);

// Merges per-spectrum candidate lists by per-frame max-normalized score and
// returns the top free_slots. Ties break Visual first, then lower x, then lower y.
std::vector<FeatureCandidate> select_best(const std::vector<FeatureCandidate>& visual,
                                          const std::vector<FeatureCandidate>& thermal,
                                          int free_slots);

struct AlignConfig {
  int patch_size = 8;
  int pyramid_levels = 2;
  int max_iterations = 30;
  double convergence_px = 0.03;
  double residual_threshold = 16.0;  // mean absolute intensity error
  double min_hessian_eig = 50.0;     // patch gradient strength floor at extraction
};

// nullopt when the patch (any level) leaves the image at `pixel`, or the patch
// is gradient-deficient.
std::optional<PatchPyramid> extract_patch(const ImagePyramid& pyramid,
                                          const Eigen::Vector2d& pixel,
                                          const AlignConfig& config);

struct MatchResult {
  Eigen::Vector2d measured_pixel = Eigen::Vector2d::Zero();
  double photometric_residual = 0.0;  // mean absolute intensity error at the solution
  bool converged = false;
  int iterations = 0;
};

// Coarse-to-fine inverse-compositional translation alignment starting at
// predicted_pixel, clamped to search_radius. nullopt = prediction outside the
// frame (out-of-view signal; caller drops or parks the feature).
std::optional<MatchResult> align_patch(const ImagePyramid& pyramid, const PatchPyramid& reference,
                                       const Eigen::Vector2d& predicted_pixel,
                                       double search_radius, const AlignConfig& config);

}  // namespace tvio
