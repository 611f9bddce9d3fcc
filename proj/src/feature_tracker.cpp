#include "tvio/feature_tracker.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tvio {

ImagePyramid ImagePyramid::build(const Image8& image, int num_levels) {
  if (!image.valid()) throw std::invalid_argument("ImagePyramid: invalid image");
  if (num_levels < 1) throw std::invalid_argument("ImagePyramid: need >= 1 level");
  ImagePyramid p;
  p.levels.resize(size_t(num_levels));
  p.widths.resize(size_t(num_levels));
  p.heights.resize(size_t(num_levels));
  p.widths[0] = image.width;
  p.heights[0] = image.height;
  p.levels[0].resize(size_t(image.width) * image.height);
  for (size_t i = 0; i < p.levels[0].size(); ++i) p.levels[0][i] = float(image.pixels[i]);
  for (int l = 1; l < num_levels; ++l) {
    const int pw = p.widths[size_t(l - 1)], ph = p.heights[size_t(l - 1)];
    const int w = pw / 2, h = ph / 2;
    if (w < 4 || h < 4) throw std::invalid_argument("ImagePyramid: image too small for levels");
    p.widths[size_t(l)] = w;
    p.heights[size_t(l)] = h;
    p.levels[size_t(l)].resize(size_t(w) * h);
    const std::vector<float>& src = p.levels[size_t(l - 1)];
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const size_t o = size_t(2 * y) * pw + size_t(2 * x);
        p.levels[size_t(l)][size_t(y) * w + x] =
            0.25f * (src[o] + src[o + 1] + src[o + pw] + src[o + pw + 1]);
      }
    }
  }
  return p;
}

float ImagePyramid::sample(int level, double x, double y) const {
  const int w = widths[size_t(level)];
  const std::vector<float>& img = levels[size_t(level)];
  const int x0 = int(std::floor(x));
  const int y0 = int(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  const size_t o = size_t(y0) * w + size_t(x0);
  const double v00 = img[o], v10 = img[o + 1];
  const double v01 = img[o + w], v11 = img[o + w + 1];
  return float((1 - fy) * ((1 - fx) * v00 + fx * v10) + fy * ((1 - fx) * v01 + fx * v11));
}

bool ImagePyramid::contains(int level, double x, double y, double margin) const {
  return x >= margin && y >= margin && x <= widths[size_t(level)] - 1.0 - margin &&
         y <= heights[size_t(level)] - 1.0 - margin;
}

namespace {

// Min eigenvalue of the 3x3-window gradient structure tensor.
double shi_tomasi_score(const SobelImage& sob, int x, int y) {
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (int dy = -1; dy <= 1; ++dy) {
    const size_t row = size_t(y + dy) * sob.width;
    for (int dx = -1; dx <= 1; ++dx) {
      const double gx = sob.gx[row + size_t(x + dx)];
      const double gy = sob.gy[row + size_t(x + dx)];
      sxx += gx * gx;
      sxy += gx * gy;
      syy += gy * gy;
    }
  }
  // Sobel kernels carry a factor 8 per unit slope; normalize so scores are
  // roughly (intensity/px)^2 and thresholds transfer across detectors.
  constexpr double kNorm = 1.0 / 64.0;
  const double tr_half = 0.5 * (sxx + syy);
  const double det_part = std::sqrt(0.25 * (sxx - syy) * (sxx - syy) + sxy * sxy);
  return (tr_half - det_part) * kNorm;
}

}  // namespace

std::vector<FeatureCandidate> detect(const Frame& frame, const RegionEntropyMap* mask,
                                     const DetectConfig& config,
                                     std::span<const Eigen::Vector2d> occupied, RngStream* jitter) {
  const SobelImage sob = compute_sobel(frame.image);
  const int w = frame.image.width, h = frame.image.height;
  const int margin = std::max(config.border_margin, 2);

  // Scores at maskable pixels.
  std::vector<float> score(size_t(w) * h, 0.0f);
  for (int y = margin; y < h - margin; ++y) {
    for (int x = margin; x < w - margin; ++x) {
      if (mask && !mask->lookup(x, y)) continue;
      const double s = shi_tomasi_score(sob, x, y);
      if (s > config.min_score) score[size_t(y) * w + x] = float(s);
    }
  }

  // 3x3 non-maximum suppression.
  struct Peak {
    int x, y;
    float s;
  };
  std::vector<Peak> peaks;
  for (int y = margin; y < h - margin; ++y) {
    for (int x = margin; x < w - margin; ++x) {
      const float s = score[size_t(y) * w + x];
      if (s <= 0.0f) continue;
      bool is_max = true;
      for (int dy = -1; dy <= 1 && is_max; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          if (score[size_t(y + dy) * w + (x + dx)] > s) {
            is_max = false;
            break;
          }
        }
      }
      if (is_max) peaks.push_back({x, y, s});
    }
  }
  std::stable_sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
    if (a.s != b.s) return a.s > b.s;
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
  });

  const double min_d2 = config.min_distance * config.min_distance;
  std::vector<FeatureCandidate> out;
  std::vector<Eigen::Vector2d> taken(occupied.begin(), occupied.end());
  for (const Peak& pk : peaks) {
    if (int(out.size()) >= config.max_candidates) break;
    Eigen::Vector2d px(pk.x, pk.y);
    bool clear = true;
    for (const Eigen::Vector2d& t : taken) {
      if ((t - px).squaredNorm() < min_d2) {
        clear = false;
        break;
      }
    }
    if (!clear) continue;

    // Quadratic sub-pixel refinement on the score surface.
    auto sc = [&](int dx, int dy) {
      return double(score[size_t(pk.y + dy) * w + (pk.x + dx)]);
    };
    const double dxx = sc(1, 0) - 2 * sc(0, 0) + sc(-1, 0);
    const double dyy = sc(0, 1) - 2 * sc(0, 0) + sc(0, -1);
    if (dxx < 0.0) px.x() += std::clamp(-0.5 * (sc(1, 0) - sc(-1, 0)) / dxx, -0.5, 0.5);
    if (dyy < 0.0) px.y() += std::clamp(-0.5 * (sc(0, 1) - sc(0, -1)) / dyy, -0.5, 0.5);
    if (jitter && config.subpixel_jitter > 0.0) {
      px.x() += jitter->uniform(-config.subpixel_jitter, config.subpixel_jitter);
      px.y() += jitter->uniform(-config.subpixel_jitter, config.subpixel_jitter);
    }

    FeatureCandidate c;
    c.pixel = px;
    c.score = pk.s;
    c.spectrum = frame.spectrum;
    c.region_index = mask ? mask->grid.region_index(pk.x, pk.y) : -1;
    out.push_back(c);
    taken.push_back(px);
  }
  return out;
}

std::vector<FeatureCandidate> select_best(const std::vector<FeatureCandidate>& visual,
                                          const std::vector<FeatureCandidate>& thermal,
                                          int free_slots) {
  if (free_slots <= 0) return {};
  double max_v = 0.0, max_t = 0.0;
  for (const auto& c : visual) max_v = std::max(max_v, c.score);
  for (const auto& c : thermal) max_t = std::max(max_t, c.score);

  struct Scored {
    FeatureCandidate c;
    double norm_score;
  };
  std::vector<Scored> pool;
  pool.reserve(visual.size() + thermal.size());
  for (const auto& c : visual) pool.push_back({c, max_v > 0.0 ? c.score / max_v : 0.0});
  for (const auto& c : thermal) pool.push_back({c, max_t > 0.0 ? c.score / max_t : 0.0});

  std::sort(pool.begin(), pool.end(), [](const Scored& a, const Scored& b) {
    if (a.norm_score != b.norm_score) return a.norm_score > b.norm_score;
    if (a.c.spectrum != b.c.spectrum) return a.c.spectrum == Spectrum::kVisual;
    if (a.c.pixel.x() != b.c.pixel.x()) return a.c.pixel.x() < b.c.pixel.x();
    return a.c.pixel.y() < b.c.pixel.y();
  });

  std::vector<FeatureCandidate> out;
  for (const Scored& s : pool) {
    if (int(out.size()) >= free_slots) break;
    out.push_back(s.c);
  }
  return out;
}

std::optional<PatchPyramid> extract_patch(const ImagePyramid& pyramid,
                                          const Eigen::Vector2d& pixel, const AlignConfig& config) {
  const int n = config.patch_size;
  const double half = 0.5 * (n - 1);
  PatchPyramid patch;
  patch.patch_size = n;
  patch.levels.resize(size_t(config.pyramid_levels));
  for (int l = 0; l < config.pyramid_levels; ++l) {
    const double scale = std::pow(0.5, l);
    const Eigen::Vector2d c = pixel * scale;
    // +1 margin for the centered gradient samples.
    if (!pyramid.contains(l, c.x() - half - 1.5, c.y() - half - 1.5, 0.0) ||
        !pyramid.contains(l, c.x() + half + 1.5, c.y() + half + 1.5, 0.0)) {
      return std::nullopt;
    }
    PatchPyramid::Level& lev = patch.levels[size_t(l)];
    lev.intensity.resize(size_t(n) * n);
    lev.gx.resize(size_t(n) * n);
    lev.gy.resize(size_t(n) * n);
    Eigen::Matrix2d hess = Eigen::Matrix2d::Zero();
    for (int py = 0; py < n; ++py) {
      for (int px = 0; px < n; ++px) {
        const double x = c.x() - half + px;
        const double y = c.y() - half + py;
        const size_t o = size_t(py) * n + size_t(px);
        lev.intensity[o] = pyramid.sample(l, x, y);
        const double gx = 0.5 * (pyramid.sample(l, x + 1, y) - pyramid.sample(l, x - 1, y));
        const double gy = 0.5 * (pyramid.sample(l, x, y + 1) - pyramid.sample(l, x, y - 1));
        lev.gx[o] = float(gx);
        lev.gy[o] = float(gy);
        hess(0, 0) += gx * gx;
        hess(0, 1) += gx * gy;
        hess(1, 1) += gy * gy;
      }
    }
    hess(1, 0) = hess(0, 1);
    const double tr_half = 0.5 * hess.trace();
    const double det_part = std::sqrt(std::max(
        0.0, 0.25 * (hess(0, 0) - hess(1, 1)) * (hess(0, 0) - hess(1, 1)) + hess(0, 1) * hess(0, 1)));
    if (tr_half - det_part < config.min_hessian_eig) return std::nullopt;  // gradient-deficient
    lev.hessian_inv = hess.inverse();
  }
  return patch;
}

std::optional<MatchResult> align_patch(const ImagePyramid& pyramid, const PatchPyramid& reference,
                                       const Eigen::Vector2d& predicted_pixel, double search_radius,
                                       const AlignConfig& config) {
  const int n = reference.patch_size;
  const double half = 0.5 * (n - 1);
  if (!pyramid.contains(0, predicted_pixel.x(), predicted_pixel.y(), 1.0)) {
    return std::nullopt;  // out-of-view: caller drops or parks the feature
  }

  MatchResult result;
  const int top = int(reference.levels.size()) - 1;
  Eigen::Vector2d pos = predicted_pixel * std::pow(0.5, top);
  bool ok = true;
  double mean_abs_residual = 0.0;
  int total_iters = 0;

  for (int l = top; l >= 0; --l) {
    const PatchPyramid::Level& lev = reference.levels[size_t(l)];
    bool level_converged = false;
    for (int it = 0; it < config.max_iterations; ++it) {
      if (!pyramid.contains(l, pos.x() - half - 0.5, pos.y() - half - 0.5, 0.0) ||
          !pyramid.contains(l, pos.x() + half + 0.5, pos.y() + half + 0.5, 0.0)) {
        ok = false;
        break;
      }
      Eigen::Vector2d rhs = Eigen::Vector2d::Zero();
      double abs_sum = 0.0;
      for (int py = 0; py < n; ++py) {
        for (int px = 0; px < n; ++px) {
          const size_t o = size_t(py) * n + size_t(px);
          const double cur =
              pyramid.sample(l, pos.x() - half + px, pos.y() - half + py);
          const double r = cur - double(lev.intensity[o]);
          abs_sum += std::abs(r);
          rhs.x() += double(lev.gx[o]) * r;
          rhs.y() += double(lev.gy[o]) * r;
        }
      }
      mean_abs_residual = abs_sum / double(n * n);
      const Eigen::Vector2d delta = lev.hessian_inv * rhs;
      pos -= delta;  // inverse-compositional translation update
      ++total_iters;
      if (delta.norm() < config.convergence_px) {
        level_converged = true;
        break;
      }
    }
    if (!ok || !level_converged) {
      ok = false;
      break;
    }
    if (l > 0) pos *= 2.0;
  }

  result.measured_pixel = pos;
  result.iterations = total_iters;
  result.photometric_residual = mean_abs_residual;
  const bool within_radius = (pos - predicted_pixel).norm() <= search_radius;
  result.converged = ok && within_radius && mean_abs_residual <= config.residual_threshold;
  return result;
}

}  // namespace tvio
