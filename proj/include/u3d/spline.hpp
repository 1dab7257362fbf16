#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "u3d/errors.hpp"
#include "u3d/parallel.hpp"
#include "u3d/tensor.hpp"

// Cubic B-spline interpolation with mirror-reflect boundaries (period
// 2(L-1)). Samples are first converted to interpolation coefficients by the
// causal/anticausal recursive filter with pole sqrt(3)-2, then evaluated
// with the centered cubic kernel. All arithmetic is double precision.

namespace u3d::spline {

inline constexpr double kPole = -0.26794919243112270;  // sqrt(3) - 2
inline constexpr double kGain = 6.0;

/// Centered cubic B-spline, support [-2, 2].
inline double bspline3(double x) {
  const double a = std::abs(x);
  if (a < 1.0) return 2.0 / 3.0 - a * a + 0.5 * a * a * a;
  if (a < 2.0) {
    const double t = 2.0 - a;
    return t * t * t / 6.0;
  }
  return 0.0;
}

/// Folds any integer position onto [0, L) by mirror reflection about the end samples.
inline std::size_t mirror_index(std::ptrdiff_t k, std::size_t length) {
  if (length <= 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (length - 1));
  k = std::abs(k) % period;
  if (k >= static_cast<std::ptrdiff_t>(length)) k = period - k;
  return static_cast<std::size_t>(k);
}

struct SplineLine {
  std::vector<double> coefficients;
  /// False when the line was too short to filter and the samples were passed through.
  bool filtered = true;

  std::size_t length() const { return coefficients.size(); }
};

namespace detail {

/// Filters `cols` interleaved lines in lockstep: buf[k * cols + j] is sample k of line j.
inline void prefilter_columns(double* buf, std::size_t length, std::size_t cols) {
  if (length < 2) return;
  const double z = kPole;
  const std::size_t period = 2 * (length - 1);
  // Causal initialization: sum over one mirrored period, truncated once z^k
  // is below double resolution.
  constexpr std::size_t kHorizon = 40;
  const std::size_t terms = std::min(period, kHorizon);
  std::vector<double> init(cols, 0.0);
  double zk = 1.0;
  for (std::size_t k = 0; k < terms; ++k) {
    const double* row = buf + mirror_index(static_cast<std::ptrdiff_t>(k), length) * cols;
    for (std::size_t j = 0; j < cols; ++j) init[j] += zk * row[j];
    zk *= z;
  }
  const double denom = 1.0 - std::pow(z, static_cast<double>(period));
  for (std::size_t j = 0; j < cols; ++j) buf[j] = init[j] / denom;

  for (std::size_t k = 1; k < length; ++k) {
    double* cur = buf + k * cols;
    const double* prev = cur - cols;
    for (std::size_t j = 0; j < cols; ++j) cur[j] += z * prev[j];
  }

  double* last = buf + (length - 1) * cols;
  const double* before = last - cols;
  const double scale = z / (z * z - 1.0);
  for (std::size_t j = 0; j < cols; ++j) last[j] = scale * (last[j] + z * before[j]);
  for (std::size_t k = length - 1; k-- > 0;) {
    double* cur = buf + k * cols;
    const double* next = cur + cols;
    for (std::size_t j = 0; j < cols; ++j) cur[j] = z * (next[j] - cur[j]);
  }
  for (std::size_t i = 0; i < length * cols; ++i) buf[i] *= kGain;
}

}  // namespace detail

inline SplineLine prefilter_cubic(std::span<const double> line) {
  SplineLine out;
  out.coefficients.assign(line.begin(), line.end());
  out.filtered = line.size() >= 2;
  detail::prefilter_columns(out.coefficients.data(), out.coefficients.size(), 1);
  return out;
}

/// The four coefficient indices (already mirrored) and kernel weights at x.
struct CubicTaps {
  std::array<std::size_t, 4> index{};
  std::array<double, 4> weight{};
};

inline CubicTaps cubic_taps(double x, std::size_t length) {
  if (length == 0) throw DomainError("empty spline line");
  const double hi = static_cast<double>(length - 1);
  if (!(x >= 0.0 && x <= hi)) {
    throw DomainError("spline position " + std::to_string(x) + " outside [0, " + std::to_string(hi) + "]");
  }
  CubicTaps taps;
  const auto base = static_cast<std::ptrdiff_t>(std::floor(x)) - 1;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::ptrdiff_t k = base + static_cast<std::ptrdiff_t>(i);
    taps.index[i] = mirror_index(k, length);
    taps.weight[i] = bspline3(x - static_cast<double>(k));
  }
  return taps;
}

inline double eval_cubic(const SplineLine& sl, double x) {
  const CubicTaps t = cubic_taps(x, sl.length());
  const auto& c = sl.coefficients;
  return t.weight[0] * c[t.index[0]] + t.weight[1] * c[t.index[1]] + t.weight[2] * c[t.index[2]] +
         t.weight[3] * c[t.index[3]];
}

/// Source coordinate of output sample o when resampling `length` samples to
/// `target` samples with both end points aligned.
inline double zoom_coordinate(std::size_t o, std::size_t length, std::size_t target) {
  if (target == 1) return static_cast<double>(length - 1) / 2.0;
  return static_cast<double>(o) * static_cast<double>(length - 1) / static_cast<double>(target - 1);
}

/// Resamples one axis of a rank-3 tensor to `target` samples.
inline TensorF zoom_axis(const TensorF& in, std::size_t axis, std::size_t target) {
  if (in.rank() != 3) throw ShapeError("zoom_axis expects a rank-3 tensor, got " + shape_string(in.shape()));
  if (axis > 2) throw DomainError("axis must be 0, 1 or 2");
  if (target == 0) throw DomainError("zoom target must be positive");
  const Shape& s = in.shape();
  const std::size_t length = s[axis];

  Shape out_shape = s;
  out_shape[axis] = target;
  TensorF out(out_shape);

  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= s[a];
  for (std::size_t a = axis + 1; a < 3; ++a) inner *= s[a];

  std::vector<CubicTaps> taps(target);
  for (std::size_t o = 0; o < target; ++o) taps[o] = cubic_taps(zoom_coordinate(o, length, target), length);

  const auto src = in.data();
  auto dst = out.data();
  constexpr std::size_t kBlock = 256;
  parallel_for(outer, [&](std::size_t ob) {
    const float* slab = src.data() + ob * length * inner;
    float* oslab = dst.data() + ob * target * inner;
    std::vector<double> buf;
    for (std::size_t j0 = 0; j0 < inner; j0 += kBlock) {
      const std::size_t cols = std::min(kBlock, inner - j0);
      buf.resize(length * cols);
      for (std::size_t k = 0; k < length; ++k) {
        for (std::size_t j = 0; j < cols; ++j) buf[k * cols + j] = slab[k * inner + j0 + j];
      }
      detail::prefilter_columns(buf.data(), length, cols);
      for (std::size_t o = 0; o < target; ++o) {
        const CubicTaps& t = taps[o];
        const double* r0 = buf.data() + t.index[0] * cols;
        const double* r1 = buf.data() + t.index[1] * cols;
        const double* r2 = buf.data() + t.index[2] * cols;
        const double* r3 = buf.data() + t.index[3] * cols;
        float* orow = oslab + o * inner + j0;
        for (std::size_t j = 0; j < cols; ++j) {
          orow[j] = static_cast<float>(t.weight[0] * r0[j] + t.weight[1] * r1[j] + t.weight[2] * r2[j] +
                                       t.weight[3] * r3[j]);
        }
      }
    }
  });
  return out;
}

enum class Axis : std::size_t { X = 0, Y = 1, Z = 2 };

/// Depth-axis (or any-axis) cubic zoom of a volume to `target` samples.
inline Volume zoom_axis_cubic(const Volume& vol, std::size_t target, Axis axis = Axis::Z) {
  return Volume(zoom_axis(vol.tensor, static_cast<std::size_t>(axis), target), vol.units, vol.source_id);
}

/// In-plane resize of every depth plane to width x height.
inline Volume resize_plane(const Volume& vol, std::size_t width, std::size_t height) {
  if (width == 0 || height == 0) throw DomainError("plane size must be positive");
  if (vol.width() == width && vol.height() == height) return vol;
  TensorF t = vol.width() == width ? vol.tensor : zoom_axis(vol.tensor, 0, width);
  if (t.extent(1) != height) t = zoom_axis(t, 1, height);
  return Volume(std::move(t), vol.units, vol.source_id);
}

}  // namespace u3d::spline
