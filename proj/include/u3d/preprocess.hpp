#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <vector>
#include <span>
#include <string>

#include "u3d/errors.hpp"
#include "u3d/kv.hpp"
#include "u3d/tensor.hpp"

namespace u3d {

/// Intensity window mapped onto [0, 1].
struct HuWindow {
  float lo = -1000.0f;
  float hi = 400.0f;
};

enum class NormalizeMode { FixedWindow, PerVolumeMinMax };

/// Training-set statistics used for zero-centering. `phase` records that the
/// mean was measured on normalized data.
struct DatasetStats {
  HuWindow window;
  double dataset_mean = 0.0;
  std::size_t computed_over = 0;
  VoxelUnits phase = VoxelUnits::Normalized;
};

/// out = clamp((v - lo) / (hi - lo), 0, 1).
inline void normalize_in_place(std::span<float> values, HuWindow w) {
  if (!(w.lo < w.hi)) throw ConfigError("normalization window needs lo < hi");
  const float lo = w.lo, inv = 1.0f / (w.hi - w.lo);
  for (float& v : values) v = std::clamp((v - lo) * inv, 0.0f, 1.0f);
}

inline Volume normalize(Volume vol, HuWindow w = {}, NormalizeMode mode = NormalizeMode::FixedWindow) {
  if (mode == NormalizeMode::PerVolumeMinMax) {
    const auto [mn, mx] = std::minmax_element(vol.tensor.data().begin(), vol.tensor.data().end());
    w = HuWindow{*mn, *mx};
    if (!(w.lo < w.hi)) {
      vol.tensor.fill(0.0f);
      vol.units = VoxelUnits::Normalized;
      return vol;
    }
  }
  normalize_in_place(vol.tensor.data(), w);
  vol.units = VoxelUnits::Normalized;
  return vol;
}

namespace detail {
/// Neumaier-compensated sum of one volume.
inline double compensated_sum(std::span<const float> values) {
  double sum = 0.0, comp = 0.0;
  for (float f : values) {
    const double v = f;
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v)) {
      comp += (sum - t) + v;
    } else {
      comp += (v - t) + sum;
    }
    sum = t;
  }
  return sum + comp;
}
}  // namespace detail

/// Mean voxel value over every voxel of every training volume. Per-volume
/// compensated sums are combined in input order, so the result does not
/// depend on how the caller parallelizes anything else.
inline DatasetStats fit_stats(std::span<const Volume* const> volumes, HuWindow window = {}) {
  if (volumes.empty()) throw EmptyInputError("fit_stats needs at least one training volume");
  double total = 0.0;
  std::size_t count = 0;
  for (const Volume* v : volumes) {
    if (v->units == VoxelUnits::HounsfieldUnits) {
      throw ConfigError("fit_stats expects normalized volumes; normalize before zero-centering");
    }
    total += detail::compensated_sum(v->tensor.data());
    count += v->tensor.size();
  }
  DatasetStats s;
  s.window = window;
  s.dataset_mean = total / static_cast<double>(count);
  s.computed_over = volumes.size();
  s.phase = VoxelUnits::Normalized;
  return s;
}

inline DatasetStats fit_stats(std::span<const Volume> volumes, HuWindow window = {}) {
  std::vector<const Volume*> ptrs;
  ptrs.reserve(volumes.size());
  for (const auto& v : volumes) ptrs.push_back(&v);
  return fit_stats(std::span<const Volume* const>(ptrs), window);
}

/// Subtracts the training mean. Refuses raw HU input.
inline Volume zero_center(Volume vol, const DatasetStats& stats) {
  if (vol.units == VoxelUnits::HounsfieldUnits) {
    throw ConfigError("zero-centering requires normalized input");
  }
  const auto mean = static_cast<float>(stats.dataset_mean);
  for (float& v : vol.tensor.data()) v -= mean;
  vol.units = VoxelUnits::Arbitrary;
  return vol;
}

inline void save_stats(const std::filesystem::path& path, const DatasetStats& s) {
  KeyValues kv;
  kv.set("window_lo", s.window.lo);
  kv.set("window_hi", s.window.hi);
  kv.set("dataset_mean", s.dataset_mean);
  kv.set("computed_over", s.computed_over);
  kv.set("phase", to_string(s.phase));
  kv.save(path);
}

inline DatasetStats load_stats(const std::filesystem::path& path) {
  const KeyValues kv = KeyValues::load(path);
  DatasetStats s;
  s.window.lo = kv.get_float("window_lo");
  s.window.hi = kv.get_float("window_hi");
  s.dataset_mean = kv.get_double("dataset_mean");
  s.computed_over = kv.get_size("computed_over");
  if (kv.get("phase") != "normalized") throw FormatError("stats manifest phase must be 'normalized'");
  if (!(s.window.lo < s.window.hi)) throw ConfigError("stats manifest window needs lo < hi");
  return s;
}

}  // namespace u3d
