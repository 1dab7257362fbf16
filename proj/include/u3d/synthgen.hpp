#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "u3d/errors.hpp"
#include "u3d/random.hpp"
#include "u3d/tensor.hpp"

// Synthetic chest-CT-like volumes: air around an elliptic soft-tissue body,
// two ellipsoidal lungs, and spherical lesions inside the lungs. Geometry is
// expressed in in-plane voxel units; the depth axis is scaled so the body is
// as deep as it is wide regardless of slice count, like a real scan whose
// slice spacing varies.

namespace u3d::synth {

namespace hu {
inline constexpr float kAir = -1000.0f;
inline constexpr float kLung = -800.0f;
inline constexpr float kTissue = 40.0f;
inline constexpr float kLesion = 50.0f;
inline constexpr float kMin = -1024.0f;
inline constexpr float kMax = 3071.0f;
/// Inside the lungs, only lesion voxels exceed this value.
inline constexpr float kLesionThreshold = -500.0f;
}  // namespace hu

/// Depth band, as fractions of D, that confines positive-class lesions.
struct DepthBand {
  double lo = 0.35;
  double hi = 0.45;

  std::size_t first(std::size_t depth) const { return static_cast<std::size_t>(std::floor(lo * static_cast<double>(depth))); }
  std::size_t last(std::size_t depth) const {
    return std::min(depth - 1, static_cast<std::size_t>(std::floor(hi * static_cast<double>(depth))));
  }
};

struct SynthSpec {
  std::size_t count = 100;
  std::size_t width = 64;
  std::size_t height = 64;
  std::size_t depth_min = 50;
  std::size_t depth_max = 400;
  double positive_fraction = 0.5;
  /// Lesions per positive-intent volume; more are added while the fraction stays <= tau.
  std::size_t lesions_min = 2;
  std::size_t lesions_max = 4;
  /// Lesions per negative-intent volume (kept only while the fraction stays <= tau).
  std::size_t negative_lesions_max = 0;
  /// Lesion radius range in in-plane voxels.
  double radius_min = 3.0;
  double radius_max = 5.0;
  /// Label is 1 iff lesion voxels / lung voxels > tau.
  double tau = 0.002;
  double noise_sd = 15.0;
  std::optional<DepthBand> positive_band;
  std::uint64_t seed = 0;

  void validate() const {
    if (count == 0) throw ConfigError("count must be positive");
    if (width < 8 || height < 8) throw ConfigError("plane must be at least 8x8");
    if (depth_min < 1 || depth_max > 500 || depth_min > depth_max) throw ConfigError("depth range must lie in [1, 500]");
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must be in (0, 1)");
    if (!(positive_fraction >= 0.0 && positive_fraction <= 1.0)) throw ConfigError("positive_fraction must be in [0, 1]");
    if (lesions_min > lesions_max) throw ConfigError("lesions_min > lesions_max");
    if (!(radius_min > 0.0 && radius_min <= radius_max)) throw ConfigError("bad lesion radius range");
    if (noise_sd < 0.0) throw ConfigError("noise_sd must be non-negative");
    if (positive_band && !(positive_band->lo >= 0.0 && positive_band->lo < positive_band->hi && positive_band->hi <= 1.0)) {
      throw ConfigError("depth band must satisfy 0 <= lo < hi <= 1");
    }
  }
};

struct Ellipsoid {
  std::array<double, 3> center{};  ///< x, y in voxels; z in slices
  std::array<double, 3> radii{};   ///< same units as center

  bool contains(double x, double y, double z) const {
    const double a = (x - center[0]) / radii[0], b = (y - center[1]) / radii[1], c = (z - center[2]) / radii[2];
    return a * a + b * b + c * c <= 1.0;
  }
};

struct Geometry {
  std::size_t width = 0, height = 0, depth = 0;
  double body_rx = 0, body_ry = 0;  ///< elliptic body cross-section, constant along z
  std::array<Ellipsoid, 2> lungs;

  bool in_body(std::size_t x, std::size_t y) const {
    const double a = (static_cast<double>(x) - 0.5 * static_cast<double>(width - 1)) / body_rx;
    const double b = (static_cast<double>(y) - 0.5 * static_cast<double>(height - 1)) / body_ry;
    return a * a + b * b <= 1.0;
  }
  bool in_lung(std::size_t x, std::size_t y, std::size_t z) const {
    const auto fx = static_cast<double>(x), fy = static_cast<double>(y), fz = static_cast<double>(z);
    return in_body(x, y) && (lungs[0].contains(fx, fy, fz) || lungs[1].contains(fx, fy, fz));
  }
};

struct Sample {
  Volume volume;
  int label = 0;
  double lesion_fraction = 0.0;
  std::size_t lesion_count = 0;
  Geometry geometry;
};

/// Lesion voxels / lung voxels, recounted from voxel values.
inline double lesion_fraction(const Volume& v, const Geometry& g) {
  std::size_t lung = 0, lesion = 0;
  for (std::size_t x = 0; x < v.width(); ++x) {
    for (std::size_t y = 0; y < v.height(); ++y) {
      for (std::size_t z = 0; z < v.depth(); ++z) {
        if (!g.in_lung(x, y, z)) continue;
        ++lung;
        if (v(x, y, z) > hu::kLesionThreshold) ++lesion;
      }
    }
  }
  return lung ? static_cast<double>(lesion) / static_cast<double>(lung) : 0.0;
}

inline int label_rule(double fraction, double tau) { return fraction > tau ? 1 : 0; }

inline std::string sample_id(std::size_t index) {
  std::string s = std::to_string(index);
  return "case_" + std::string(s.size() < 4 ? 4 - s.size() : 0, '0') + s;
}

namespace detail {

enum Tissue : std::uint8_t { kAirT = 0, kTissueT = 1, kLungT = 2, kLesionT = 3 };

inline Geometry draw_geometry(const SynthSpec& spec, std::size_t depth, Rng& rng) {
  Geometry g;
  g.width = spec.width;
  g.height = spec.height;
  g.depth = depth;
  const double w = static_cast<double>(spec.width), h = static_cast<double>(spec.height);
  const double d = static_cast<double>(depth);
  g.body_rx = 0.5 * w * rng.uniform(0.82, 0.92);
  g.body_ry = 0.5 * h * rng.uniform(0.70, 0.80);
  const double cx = 0.5 * (w - 1), cy = 0.5 * (h - 1);
  for (int side = 0; side < 2; ++side) {
    Ellipsoid& e = g.lungs[static_cast<std::size_t>(side)];
    const double sign = side == 0 ? -1.0 : 1.0;
    e.center = {cx + sign * w * rng.uniform(0.18, 0.22), cy + h * rng.uniform(-0.03, 0.03), d * rng.uniform(0.48, 0.52)};
    e.radii = {w * rng.uniform(0.14, 0.17), h * rng.uniform(0.22, 0.27), d * rng.uniform(0.42, 0.46)};
  }
  return g;
}

struct Canvas {
  const Geometry& g;
  std::vector<std::uint8_t> tissue;
  std::size_t lung_voxels = 0;
  std::size_t lesion_voxels = 0;

  explicit Canvas(const Geometry& geom) : g(geom), tissue(geom.width * geom.height * geom.depth, kAirT) {
    for (std::size_t x = 0; x < g.width; ++x) {
      for (std::size_t y = 0; y < g.height; ++y) {
        if (!g.in_body(x, y)) continue;
        for (std::size_t z = 0; z < g.depth; ++z) {
          const bool lung = g.in_lung(x, y, z);
          tissue[at(x, y, z)] = lung ? kLungT : kTissueT;
          lung_voxels += lung;
        }
      }
    }
  }

  std::size_t at(std::size_t x, std::size_t y, std::size_t z) const { return (x * g.height + y) * g.depth + z; }
  double fraction(std::size_t extra = 0) const {
    return static_cast<double>(lesion_voxels + extra) / static_cast<double>(std::max<std::size_t>(lung_voxels, 1));
  }

  /// Lung voxels (within [z_lo, z_hi]) a sphere would newly claim.
  template <typename Fn>
  void for_sphere(const std::array<double, 3>& c, double r, double zscale, std::size_t z_lo, std::size_t z_hi, Fn&& fn) {
    const double rz = r * zscale;
    const auto lo = [](double v) { return static_cast<std::size_t>(std::max(0.0, std::ceil(v))); };
    const std::size_t x0 = lo(c[0] - r), y0 = lo(c[1] - r), zs = std::max(z_lo, lo(c[2] - rz));
    const std::size_t x1 = std::min(g.width - 1, static_cast<std::size_t>(std::max(0.0, std::floor(c[0] + r))));
    const std::size_t y1 = std::min(g.height - 1, static_cast<std::size_t>(std::max(0.0, std::floor(c[1] + r))));
    const std::size_t ze = std::min(z_hi, static_cast<std::size_t>(std::max(0.0, std::floor(c[2] + rz))));
    for (std::size_t x = x0; x <= x1; ++x) {
      for (std::size_t y = y0; y <= y1; ++y) {
        for (std::size_t z = zs; z <= ze; ++z) {
          const double a = (static_cast<double>(x) - c[0]) / r, b = (static_cast<double>(y) - c[1]) / r;
          const double e = (static_cast<double>(z) - c[2]) / rz;
          if (a * a + b * b + e * e > 1.0) continue;
          const std::size_t i = at(x, y, z);
          if (tissue[i] == kLungT) fn(i);
        }
      }
    }
  }
};

/// Tries to place one lesion. Returns false when no valid centre is found
/// within `attempts` draws.
inline bool place_lesion(Canvas& cv, const SynthSpec& spec, std::size_t z_lo, std::size_t z_hi, Rng& rng,
                         std::size_t& attempts, std::optional<double> max_fraction) {
  const Geometry& g = cv.g;
  const double zscale = static_cast<double>(g.depth) / static_cast<double>(g.width);
  while (attempts < 1000) {
    ++attempts;
    const double r = rng.uniform(spec.radius_min, spec.radius_max);
    const Ellipsoid& lung = g.lungs[rng.below(2)];
    const std::array<double, 3> c{lung.center[0] + lung.radii[0] * rng.uniform(-1.0, 1.0),
                                  lung.center[1] + lung.radii[1] * rng.uniform(-1.0, 1.0),
                                  rng.uniform(static_cast<double>(z_lo), static_cast<double>(z_hi))};
    // Whole sphere inside the lung: test the centre against the lung shrunk by r.
    const Ellipsoid inner{lung.center, {lung.radii[0] - r, lung.radii[1] - r, lung.radii[2] - r * zscale}};
    if (inner.radii[0] <= 0 || inner.radii[1] <= 0 || inner.radii[2] <= 0) continue;
    if (!inner.contains(c[0], c[1], c[2])) continue;
    std::size_t fresh = 0;
    cv.for_sphere(c, r, zscale, z_lo, z_hi, [&](std::size_t) { ++fresh; });
    if (fresh == 0) continue;
    if (max_fraction && cv.fraction(fresh) > *max_fraction) continue;
    cv.for_sphere(c, r, zscale, z_lo, z_hi, [&](std::size_t i) { cv.tissue[i] = kLesionT; });
    cv.lesion_voxels += fresh;
    return true;
  }
  return false;
}

}  // namespace detail

/// Generates sample `index` of the dataset described by `spec`; depends only
/// on (spec, index).
inline Sample generate_one(const SynthSpec& spec, std::size_t index) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, index));
  const auto depth = static_cast<std::size_t>(
      rng.integer(static_cast<std::int64_t>(spec.depth_min), static_cast<std::int64_t>(spec.depth_max)));
  Sample s;
  s.geometry = detail::draw_geometry(spec, depth, rng);
  detail::Canvas cv(s.geometry);
  const bool positive = rng.bernoulli(spec.positive_fraction);

  std::size_t z_lo = 0, z_hi = depth - 1;
  if (positive && spec.positive_band) {
    z_lo = spec.positive_band->first(depth);
    z_hi = spec.positive_band->last(depth);
  }
  std::size_t attempts = 0;
  if (positive) {
    const auto wanted = static_cast<std::size_t>(
        rng.integer(static_cast<std::int64_t>(spec.lesions_min), static_cast<std::int64_t>(spec.lesions_max)));
    for (std::size_t k = 0; k < wanted || cv.fraction() <= spec.tau; ++k) {
      if (!detail::place_lesion(cv, spec, z_lo, z_hi, rng, attempts, std::nullopt)) {
        throw GenerationError("could not place lesions for " + sample_id(index) + " after 1000 attempts");
      }
      ++s.lesion_count;
    }
  } else if (spec.negative_lesions_max > 0) {
    const auto wanted = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(spec.negative_lesions_max)));
    for (std::size_t k = 0; k < wanted; ++k) {
      if (!detail::place_lesion(cv, spec, z_lo, z_hi, rng, attempts, spec.tau)) break;
      ++s.lesion_count;
    }
  }

  TensorF t({spec.width, spec.height, depth});
  auto out = t.data();
  const double sd = spec.noise_sd;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double noise = sd > 0.0 ? std::clamp(rng.normal(), -3.0, 3.0) * sd : 0.0;
    float base = hu::kAir;
    switch (cv.tissue[i]) {
      case detail::kAirT: base = hu::kAir; break;
      case detail::kTissueT: base = hu::kTissue; break;
      case detail::kLungT: base = hu::kLung; break;
      case detail::kLesionT: base = hu::kLesion; break;
    }
    out[i] = std::clamp(static_cast<float>(base + noise), hu::kMin, hu::kMax);
  }
  s.volume = Volume(std::move(t), VoxelUnits::HounsfieldUnits, sample_id(index));
  s.lesion_fraction = cv.fraction();
  s.label = label_rule(s.lesion_fraction, spec.tau);
  return s;
}

inline std::vector<Sample> generate(const SynthSpec& spec) {
  spec.validate();
  std::vector<Sample> out;
  out.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) out.push_back(generate_one(spec, i));
  return out;
}

/// Variant whose positive lesions lie only in the depth band [0.35, 0.45] of
/// each volume; negatives carry no lesions.
inline SynthSpec depth_localized_variant(SynthSpec spec) {
  spec.positive_band = DepthBand{0.35, 0.45};
  spec.negative_lesions_max = 0;
  return spec;
}

}  // namespace u3d::synth
