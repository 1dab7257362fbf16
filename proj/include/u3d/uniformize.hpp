#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "u3d/errors.hpp"
#include "u3d/spline.hpp"
#include "u3d/tensor.hpp"

namespace u3d {

/// Depth uniformization strategy.
///   Sss: contiguous chunks from the start, middle and end of the stack.
///   Ess: evenly spaced slices with spacing factor D/N.
///   Siz: cubic-spline zoom of the depth axis to N samples.
enum class Method { Sss, Ess, Siz };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::Sss: return "sss";
    case Method::Ess: return "ess";
    case Method::Siz: return "siz";
  }
  return "?";
}

inline std::optional<Method> parse_method(std::string_view s) {
  if (s == "sss" || s == "SSS") return Method::Sss;
  if (s == "ess" || s == "ESS") return Method::Ess;
  if (s == "siz" || s == "SIZ") return Method::Siz;
  return std::nullopt;
}

struct UniformizeSpec {
  Method method = Method::Siz;
  std::size_t depth = 64;
  std::size_t width = 128;
  std::size_t height = 128;

  void validate() const {
    if (depth == 0) throw DomainError("target depth must be positive");
    if (width == 0 || height == 0) throw DomainError("target plane must be positive");
  }
};

struct UniformizedTensor {
  Volume volume;  ///< [width, height, depth]
  Method method = Method::Siz;
  std::size_t source_depth = 0;
};

namespace detail {
inline void check_depths(std::size_t d, std::size_t n) {
  if (d == 0) throw DomainError("source depth must be positive");
  if (n == 0) throw DomainError("target depth must be positive");
}
}  // namespace detail

/// Even slice selection. For D >= N index i is floor(i*D/N); shorter stacks
/// keep every slice and repeat the last one until N indices exist.
inline std::vector<std::size_t> ess_indices(std::size_t d, std::size_t n) {
  detail::check_depths(d, n);
  std::vector<std::size_t> idx(n);
  if (d >= n) {
    for (std::size_t i = 0; i < n; ++i) idx[i] = i * d / n;
  } else {
    for (std::size_t i = 0; i < n; ++i) idx[i] = std::min(i, d - 1);
  }
  return idx;
}

/// Subset slice selection: ceil(N/3) leading slices, floor(N/3) slices from
/// floor(D/2) on, and the remaining count from the tail. Indices past the end
/// clamp to D-1; chunks may overlap.
inline std::vector<std::size_t> sss_indices(std::size_t d, std::size_t n) {
  detail::check_depths(d, n);
  const std::size_t n_first = (n + 2) / 3;
  const std::size_t n_mid = n / 3;
  const std::size_t n_last = n - n_first - n_mid;
  std::vector<std::size_t> idx;
  idx.reserve(n);
  auto clamp = [d](std::size_t i) { return std::min(i, d - 1); };
  for (std::size_t i = 0; i < n_first; ++i) idx.push_back(clamp(i));
  for (std::size_t i = 0; i < n_mid; ++i) idx.push_back(clamp(d / 2 + i));
  const std::size_t tail_start = d >= n_last ? d - n_last : 0;
  for (std::size_t i = 0; i < n_last; ++i) idx.push_back(clamp(tail_start + i));
  return idx;
}

inline std::vector<std::size_t> selection_indices(Method m, std::size_t d, std::size_t n) {
  switch (m) {
    case Method::Sss: return sss_indices(d, n);
    case Method::Ess: return ess_indices(d, n);
    case Method::Siz: break;
  }
  throw DomainError("SIZ does not select slices");
}

/// Produces a [width, height, depth] tensor from a volume of any depth.
/// Selection methods pick depth planes and then resize them in-plane; SIZ
/// zooms the depth axis first and resizes in-plane afterwards.
inline UniformizedTensor uniformize(const Volume& vol, const UniformizeSpec& spec) {
  spec.validate();
  const std::size_t d = vol.depth();
  Volume out;
  if (spec.method == Method::Siz) {
    out = spline::resize_plane(spline::zoom_axis_cubic(vol, spec.depth), spec.width, spec.height);
  } else {
    const auto idx = selection_indices(spec.method, d, spec.depth);
    out = spline::resize_plane(gather_z(vol, idx), spec.width, spec.height);
  }
  return UniformizedTensor{std::move(out), spec.method, d};
}

}  // namespace u3d
