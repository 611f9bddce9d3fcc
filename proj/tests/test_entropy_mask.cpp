#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tvio/entropy_mask.hpp"
#include "tvio/rng.hpp"

#include <cmath>
#include <numeric>

using namespace tvio;

namespace {

ProbabilityVector make_pv(std::vector<double> bins) {
  ProbabilityVector p;
  p.bins = std::move(bins);
  p.bin_edges.resize(p.bins.size() + 1);
  std::iota(p.bin_edges.begin(), p.bin_edges.end(), 0.0);
  return p;
}

ProbabilityVector random_distribution(RngStream& rng, int bins) {
  std::vector<double> b(static_cast<size_t>(bins), 0.0);
  double sum = 0.0;
  for (double& v : b) {
    v = rng.uniform() < 0.3 ? 0.0 : rng.uniform();
    sum += v;
  }
  if (sum == 0.0) {
    b[0] = 1.0;
    sum = 1.0;
  }
  for (double& v : b) v /= sum;
  return make_pv(std::move(b));
}

GaussianWeightVector unit_weights(int bins) {
  GaussianWeightVector w;
  w.weights.assign(size_t(bins), 1.0);
  w.center_bin = 0;
  w.sigma_bins = 1;
  return w;
}

// Gradient image where region (r, c) of an rxr grid is filled per `fill`.
GradientImage region_filled(int w, int h, int grid_r,
                            const std::function<float(int region, int k)>& fill) {
  GradientImage g;
  g.width = w;
  g.height = h;
  g.magnitude.assign(size_t(w) * h, 0.0f);
  RegionGrid grid(grid_r, w, h);
  for (int i = 0; i < grid.region_count(); ++i) {
    const auto rc = grid.rect(i);
    int k = 0;
    for (int y = rc.y0; y < rc.y1; ++y) {
      for (int x = rc.x0; x < rc.x1; ++x) {
        g.magnitude[size_t(y) * w + x] = fill(i, k++);
      }
    }
  }
  return g;
}

}  // namespace

TEST_CASE("entropy of delta and uniform distributions") {
  std::vector<double> delta(64, 0.0);
  delta[10] = 1.0;
  CHECK(image_entropy(make_pv(delta)) == 0.0);

  std::vector<double> uniform(64, 1.0 / 64.0);
  CHECK(image_entropy(make_pv(uniform)) == 6.0);  // log2(64), exact

  CHECK(image_entropy(make_pv({0.5, 0.5, 0.0, 0.0})) == 1.0);
}

TEST_CASE("empty-flagged distribution has zero entropy") {
  ProbabilityVector p = make_pv(std::vector<double>(64, 0.0));
  p.empty_flagged = true;
  CHECK(image_entropy(p) == 0.0);
  CHECK(region_entropy(p, unit_weights(64)) == 0.0);
}

TEST_CASE("unit weights reduce region entropy to image entropy bitwise") {
  RngStream rng(23);
  const GaussianWeightVector w = unit_weights(64);
  for (int i = 0; i < 1000; ++i) {
    const ProbabilityVector p = random_distribution(rng, 64);
    CHECK(region_entropy(p, w) == image_entropy(p));
  }
}

TEST_CASE("weighted entropy with masking weight vector") {
  // Only the first term survives: -1 * 0.5 * log2(0.5) = 0.5
  std::vector<double> bins(64, 0.0);
  bins[0] = 0.5;
  bins[1] = 0.5;
  GaussianWeightVector w = unit_weights(64);
  for (size_t i = 1; i < w.weights.size(); ++i) w.weights[i] = 0.0;
  CHECK(region_entropy(make_pv(bins), w) == 0.5);
}

TEST_CASE("gaussian-weighted uniform distribution matches scalar summation oracle") {
  std::vector<double> uniform(64, 1.0 / 64.0);
  const GaussianWeightVector w = GaussianWeightVector::make(64, 32.0, 8.0);
  // Independent term-by-term summation.
  double expected = 0.0;
  for (int k = 0; k < 64; ++k) {
    const double wk = std::exp(-(k - 32.0) * (k - 32.0) / (2.0 * 8.0 * 8.0));
    expected -= wk * (1.0 / 64.0) * std::log2(1.0 / 64.0);
  }
  CHECK(region_entropy(make_pv(uniform), w) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(w.weights[32] == 1.0);  // peak weight is 1
}

TEST_CASE("region entropy rejects length mismatch") {
  CHECK_THROWS_AS(region_entropy(make_pv({0.5, 0.5}), unit_weights(4)), std::invalid_argument);
}

TEST_CASE("weighted entropy bounded by log2(B) and non-negative") {
  RngStream rng(29);
  const GaussianWeightVector w = GaussianWeightVector::make(64, 32.0, 10.6667);
  for (int i = 0; i < 200; ++i) {
    const ProbabilityVector p = random_distribution(rng, 64);
    const double e = region_entropy(p, w);
    CHECK(e >= 0.0);
    CHECK(e <= 6.0 + 1e-12);
    CHECK(e <= image_entropy(p) + 1e-12);
  }
}

TEST_CASE("entropy invariant under joint permutation of bins and weights") {
  RngStream rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    ProbabilityVector p = random_distribution(rng, 32);
    GaussianWeightVector w = GaussianWeightVector::make(32, 16.0, 5.0);
    const double before = region_entropy(p, w);
    // Fisher-Yates over bins and weights together.
    for (size_t i = p.bins.size(); i > 1; --i) {
      const size_t j = size_t(rng.uniform_int(0, int(i) - 1));
      std::swap(p.bins[i - 1], p.bins[j]);
      std::swap(w.weights[i - 1], w.weights[j]);
    }
    CHECK(region_entropy(p, w) == doctest::Approx(before).epsilon(1e-12));
  }
}

TEST_CASE("region grid tiles the frame exactly once") {
  RegionGrid grid(8, 645, 483);  // non-divisible on purpose
  std::vector<int> hits(size_t(645) * 483, 0);
  for (int i = 0; i < grid.region_count(); ++i) {
    const auto rc = grid.rect(i);
    for (int y = rc.y0; y < rc.y1; ++y) {
      for (int x = rc.x0; x < rc.x1; ++x) hits[size_t(y) * 645 + x] += 1;
    }
  }
  for (int v : hits) CHECK(v == 1);
  // border pixel membership agrees with rect ownership
  for (int i = 0; i < grid.region_count(); ++i) {
    const auto rc = grid.rect(i);
    CHECK(grid.region_index(rc.x0, rc.y0) == i);
    CHECK(grid.region_index(rc.x1 - 1, rc.y1 - 1) == i);
  }
  CHECK_THROWS_AS(grid.region_index(-1, 0), std::invalid_argument);
  CHECK_THROWS_AS(grid.region_index(645, 0), std::invalid_argument);
}

TEST_CASE("identical regions produce zero candidates (strict mean comparison)") {
  const auto config = EntropyMaskConfig{};
  EntropyMaskBuilder builder(config);
  const GradientImage g = region_filled(
      160, 160, 8, [](int, int k) { return float((k * 37) % 900); });
  for (int frame = 0; frame < 5; ++frame) {
    const RegionEntropyMap& map = builder.update(g);
    for (const auto st : map.status) CHECK(st == RegionStatus::kBelowMean);
  }
}

TEST_CASE("single textured region becomes the only candidate") {
  EntropyMaskConfig config;
  config.grid_r = 2;
  config.temporal_window = 3;
  EntropyMaskBuilder builder(config);
  const GradientImage g = region_filled(
      80, 80, 2, [](int region, int k) { return region == 0 ? float((k * 13) % 1200) : 0.0f; });
  for (int frame = 0; frame < 4; ++frame) {
    const RegionEntropyMap& map = builder.update(g);
    CHECK(map.status[0] == RegionStatus::kCandidate);
    CHECK(map.status[1] == RegionStatus::kBelowMean);
    CHECK(map.status[2] == RegionStatus::kBelowMean);
    CHECK(map.status[3] == RegionStatus::kBelowMean);
    CHECK(map.entropies[0] > map.mean_entropy);
    // hand check: zero-gradient regions are delta distributions with entropy 0
    CHECK(map.entropies[1] == 0.0);
    CHECK(map.mean_entropy == doctest::Approx(map.entropies[0] / 4.0));
  }
}

TEST_CASE("transient dust spike is rejected temporally") {
  EntropyMaskConfig config;
  config.grid_r = 2;
  config.temporal_window = 3;
  EntropyMaskBuilder builder(config);

  auto frame_at = [&](bool dust) {
    return region_filled(80, 80, 2, [&](int region, int k) {
      if (region == 0) return float((k * 13) % 1200);       // persistent texture
      if (region == 1 && dust) return float((k * 211) % 1400);  // dust spike
      return 0.0f;
    });
  };

  for (int t = 0; t < 4; ++t) builder.update(frame_at(false));
  const RegionEntropyMap& spiked = builder.update(frame_at(true));
  CHECK(spiked.status[0] == RegionStatus::kCandidate);
  CHECK(spiked.status[1] == RegionStatus::kRejectedTemporal);
  const RegionEntropyMap& after = builder.update(frame_at(false));
  CHECK(after.status[1] == RegionStatus::kBelowMean);
}

TEST_CASE("bootstrap admits regions above mean in all frames so far") {
  EntropyMaskConfig config;
  config.grid_r = 2;
  config.temporal_window = 3;
  EntropyMaskBuilder builder(config);
  const GradientImage g = region_filled(
      80, 80, 2, [](int region, int k) { return region == 0 ? float((k * 13) % 1200) : 0.0f; });
  const RegionEntropyMap& first = builder.update(g);
  CHECK(first.status[0] == RegionStatus::kCandidate);  // frame 1 of the stream
}

TEST_CASE("candidate count never exceeds above-mean count") {
  RngStream rng(67);
  EntropyMaskConfig config;
  config.grid_r = 4;
  EntropyMaskBuilder builder(config);
  for (int frame = 0; frame < 20; ++frame) {
    const GradientImage g = region_filled(64, 64, 4, [&](int region, int k) {
      return (region + frame) % 3 == 0 ? float((k * 7 + region) % 1000) : float(k % 5);
    });
    const RegionEntropyMap& map = builder.update(g);
    int candidates = 0, above = 0;
    for (int i = 0; i < map.grid.region_count(); ++i) {
      if (map.status[size_t(i)] == RegionStatus::kCandidate) ++candidates;
      if (map.entropies[size_t(i)] > map.mean_entropy) ++above;
    }
    CHECK(candidates <= above);
  }
}

TEST_CASE("mask_lookup reflects candidate status and bounds-checks") {
  EntropyMaskConfig config;
  config.grid_r = 2;
  config.temporal_window = 1;
  EntropyMaskBuilder builder(config);
  const GradientImage g = region_filled(
      80, 80, 2, [](int region, int k) { return region == 0 ? float((k * 13) % 1200) : 0.0f; });
  const RegionEntropyMap& map = builder.update(g);
  CHECK(map.lookup(5, 5));        // region 0
  CHECK(!map.lookup(45, 5));      // region 1
  CHECK(!map.lookup(5, 45));      // region 2
  CHECK_THROWS_AS(map.lookup(80, 0), std::invalid_argument);
  // shared border column belongs to the right-hand region
  CHECK(map.grid.region_index(39, 0) == 0);
  CHECK(map.grid.region_index(40, 0) == 1);
}

TEST_CASE("mask determinism across rebuilds") {
  EntropyMaskConfig config;
  RngStream rng(91);
  std::vector<GradientImage> frames;
  for (int t = 0; t < 6; ++t) {
    frames.push_back(region_filled(160, 120, 8, [&](int region, int k) {
      return float(((k + region * 31) * 17) % 1300) * float(0.5 + 0.5 * ((region + t) % 2));
    }));
  }
  EntropyMaskBuilder b1(config), b2(config);
  for (const auto& g : frames) {
    const RegionEntropyMap& m1 = b1.update(g);
    const RegionEntropyMap& m2 = b2.update(g);
    CHECK(m1.entropies == m2.entropies);
    CHECK(m1.status == m2.status);
  }
}
