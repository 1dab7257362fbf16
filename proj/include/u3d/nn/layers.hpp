#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "u3d/errors.hpp"
#include "u3d/parallel.hpp"
#include "u3d/random.hpp"
#include "u3d/tensor.hpp"

// Batched layer kernels. Activations are [B, C, X, Y, Z] with Z fastest.
// Every parallel task owns a disjoint slice of its output and reduces in a
// fixed order, so results are identical for any thread count.

namespace u3d::nn {

enum class Mode { Train, Eval };

inline constexpr std::size_t kKernel = 3;
inline constexpr std::size_t kKernelVolume = 27;

namespace detail {
inline void require_rank(const Shape& s, std::size_t rank, const char* what) {
  if (s.size() != rank) {
    throw ShapeError(std::string(what) + " expects rank " + std::to_string(rank) + ", got " + shape_string(s));
  }
}
}  // namespace detail

// ---------------------------------------------------------------------------
// 3x3x3 valid convolution

template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  detail::require_rank(x.shape(), 5, "conv3d input");
  detail::require_rank(w.shape(), 5, "conv3d weight");
  const std::size_t B = x.extent(0), Ci = x.extent(1), X = x.extent(2), Y = x.extent(3), Z = x.extent(4);
  const std::size_t Co = w.extent(0);
  if (w.extent(1) != Ci || w.extent(2) != 3 || w.extent(3) != 3 || w.extent(4) != 3) {
    throw ShapeError("conv3d weight shape " + shape_string(w.shape()) + " incompatible with input " +
                     shape_string(x.shape()));
  }
  if (bias.size() != Co) throw ShapeError("conv3d bias length mismatch");
  if (X < 3 || Y < 3 || Z < 3) throw ShapeError("conv3d needs spatial extents >= 3, got " + shape_string(x.shape()));
  const std::size_t Xo = X - 2, Yo = Y - 2, Zo = Z - 2;
  Tensor<T> y({B, Co, Xo, Yo, Zo});
  const std::size_t in_block = X * Y * Z, out_block = Xo * Yo * Zo;
  const T* xp = x.data().data();
  const T* wp = w.data().data();
  T* yp = y.data().data();

  parallel_for(B * Co, [&](std::size_t task) {
    const std::size_t b = task / Co, o = task % Co;
    T* __restrict out = yp + task * out_block;
    std::fill(out, out + out_block, bias[o]);
    for (std::size_t c = 0; c < Ci; ++c) {
      const T* in = xp + (b * Ci + c) * in_block;
      const T* wk = wp + (o * Ci + c) * kKernelVolume;
      for (std::size_t xo = 0; xo < Xo; ++xo) {
        for (std::size_t yo = 0; yo < Yo; ++yo) {
          T* __restrict orow = out + (xo * Yo + yo) * Zo;
          for (std::size_t kx = 0; kx < 3; ++kx) {
            for (std::size_t ky = 0; ky < 3; ++ky) {
              const T* __restrict irow = in + ((xo + kx) * Y + (yo + ky)) * Z;
              const T w0 = wk[kx * 9 + ky * 3], w1 = wk[kx * 9 + ky * 3 + 1], w2 = wk[kx * 9 + ky * 3 + 2];
              for (std::size_t z = 0; z < Zo; ++z) orow[z] += w0 * irow[z] + w1 * irow[z + 1] + w2 * irow[z + 2];
            }
          }
        }
      }
    }
  });
  return y;
}

/// Gradients of a valid 3x3x3 convolution. `dx` is skipped when null.
template <typename T>
void conv3d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, Tensor<T>& dw, Tensor<T>& db,
                     Tensor<T>* dx) {
  const std::size_t B = x.extent(0), Ci = x.extent(1), X = x.extent(2), Y = x.extent(3), Z = x.extent(4);
  const std::size_t Co = w.extent(0);
  const std::size_t Xo = X - 2, Yo = Y - 2, Zo = Z - 2;
  if (dy.shape() != Shape{B, Co, Xo, Yo, Zo}) throw ShapeError("conv3d output gradient shape mismatch");
  const std::size_t in_block = X * Y * Z, out_block = Xo * Yo * Zo;
  const T* xp = x.data().data();
  const T* wp = w.data().data();
  const T* dyp = dy.data().data();
  dw = Tensor<T>(w.shape());
  db = Tensor<T>({Co});
  T* dwp = dw.data().data();

  for (std::size_t o = 0; o < Co; ++o) {
    T sum = 0;
    for (std::size_t b = 0; b < B; ++b) {
      const T* d = dyp + (b * Co + o) * out_block;
      T part = 0;
      for (std::size_t i = 0; i < out_block; ++i) part += d[i];
      sum += part;
    }
    db[o] = sum;
  }

  // Weight gradient per (o, c): per-z partial sums for all 27 taps, then a
  // final reduction over z.
  parallel_for(Co * Ci, [&](std::size_t task) {
    const std::size_t o = task / Ci, c = task % Ci;
    std::vector<T> acc(kKernelVolume * Zo, T{0});
    for (std::size_t b = 0; b < B; ++b) {
      const T* dout = dyp + (b * Co + o) * out_block;
      const T* in = xp + (b * Ci + c) * in_block;
      for (std::size_t xo = 0; xo < Xo; ++xo) {
        for (std::size_t yo = 0; yo < Yo; ++yo) {
          const T* __restrict drow = dout + (xo * Yo + yo) * Zo;
          for (std::size_t kx = 0; kx < 3; ++kx) {
            for (std::size_t ky = 0; ky < 3; ++ky) {
              const T* __restrict irow = in + ((xo + kx) * Y + (yo + ky)) * Z;
              T* __restrict a0 = acc.data() + (kx * 9 + ky * 3) * Zo;
              T* __restrict a1 = a0 + Zo;
              T* __restrict a2 = a1 + Zo;
              for (std::size_t z = 0; z < Zo; ++z) {
                const T g = drow[z];
                a0[z] += g * irow[z];
                a1[z] += g * irow[z + 1];
                a2[z] += g * irow[z + 2];
              }
            }
          }
        }
      }
    }
    T* dwk = dwp + task * kKernelVolume;
    for (std::size_t k = 0; k < kKernelVolume; ++k) {
      T s = 0;
      for (std::size_t z = 0; z < Zo; ++z) s += acc[k * Zo + z];
      dwk[k] = s;
    }
  });

  if (!dx) return;
  *dx = Tensor<T>(x.shape());
  T* dxp = dx->data().data();
  parallel_for(B * Ci, [&](std::size_t task) {
    const std::size_t b = task / Ci, c = task % Ci;
    T* dxb = dxp + task * in_block;
    for (std::size_t o = 0; o < Co; ++o) {
      const T* dout = dyp + (b * Co + o) * out_block;
      const T* wk = wp + (o * Ci + c) * kKernelVolume;
      for (std::size_t xo = 0; xo < Xo; ++xo) {
        for (std::size_t yo = 0; yo < Yo; ++yo) {
          const T* __restrict drow = dout + (xo * Yo + yo) * Zo;
          for (std::size_t kx = 0; kx < 3; ++kx) {
            for (std::size_t ky = 0; ky < 3; ++ky) {
              T* __restrict xrow = dxb + ((xo + kx) * Y + (yo + ky)) * Z;
              for (std::size_t kz = 0; kz < 3; ++kz) {
                const T wv = wk[kx * 9 + ky * 3 + kz];
                T* __restrict dst = xrow + kz;
                for (std::size_t z = 0; z < Zo; ++z) dst[z] += wv * drow[z];
              }
            }
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// 2x2x2 max pooling, stride 2, trailing odd elements dropped

template <typename T>
struct PoolResult {
  Tensor<T> output;
  /// Offset of the selected input element within its (b, c) block.
  std::vector<std::uint32_t> argmax;
};

template <typename T>
PoolResult<T> maxpool3d_forward(const Tensor<T>& x) {
  detail::require_rank(x.shape(), 5, "maxpool input");
  const std::size_t B = x.extent(0), C = x.extent(1), X = x.extent(2), Y = x.extent(3), Z = x.extent(4);
  if (X < 2 || Y < 2 || Z < 2) throw ShapeError("maxpool needs spatial extents >= 2, got " + shape_string(x.shape()));
  const std::size_t Xo = X / 2, Yo = Y / 2, Zo = Z / 2;
  PoolResult<T> r{Tensor<T>({B, C, Xo, Yo, Zo}), {}};
  r.argmax.resize(r.output.size());
  const std::size_t in_block = X * Y * Z, out_block = Xo * Yo * Zo;
  parallel_for(B * C, [&](std::size_t bc) {
    const T* in = x.data().data() + bc * in_block;
    T* out = r.output.data().data() + bc * out_block;
    std::uint32_t* arg = r.argmax.data() + bc * out_block;
    for (std::size_t xo = 0; xo < Xo; ++xo) {
      for (std::size_t yo = 0; yo < Yo; ++yo) {
        for (std::size_t zo = 0; zo < Zo; ++zo) {
          // Visit window elements in increasing offset order; strict > keeps the first maximum.
          std::size_t best = ((2 * xo) * Y + 2 * yo) * Z + 2 * zo;
          T best_v = in[best];
          for (std::size_t dx = 0; dx < 2; ++dx) {
            for (std::size_t dy = 0; dy < 2; ++dy) {
              for (std::size_t dz = 0; dz < 2; ++dz) {
                const std::size_t off = ((2 * xo + dx) * Y + 2 * yo + dy) * Z + 2 * zo + dz;
                if (in[off] > best_v) {
                  best_v = in[off];
                  best = off;
                }
              }
            }
          }
          const std::size_t o = (xo * Yo + yo) * Zo + zo;
          out[o] = best_v;
          arg[o] = static_cast<std::uint32_t>(best);
        }
      }
    }
  });
  return r;
}

template <typename T>
Tensor<T> maxpool3d_backward(const Shape& input_shape, const std::vector<std::uint32_t>& argmax, const Tensor<T>& dy) {
  Tensor<T> dx(input_shape);
  const std::size_t BC = input_shape[0] * input_shape[1];
  const std::size_t in_block = dx.size() / BC, out_block = dy.size() / BC;
  for (std::size_t bc = 0; bc < BC; ++bc) {
    T* d = dx.data().data() + bc * in_block;
    const T* g = dy.data().data() + bc * out_block;
    const std::uint32_t* a = argmax.data() + bc * out_block;
    for (std::size_t i = 0; i < out_block; ++i) d[a[i]] += g[i];
  }
  return dx;
}

// ---------------------------------------------------------------------------
// ReLU

template <typename T>
void relu_in_place(Tensor<T>& x) {
  for (T& v : x.data()) v = v > T{0} ? v : T{0};
}

/// dy masked by y > 0, where y is the ReLU output.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& y, Tensor<T> dy) {
  auto g = dy.data();
  const auto out = y.data();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(out[i] > T{0})) g[i] = T{0};
  }
  return dy;
}

// ---------------------------------------------------------------------------
// Batch normalization over (batch, spatial) per channel

struct BatchNormOptions {
  double epsilon = 1e-5;
  /// running <- momentum * running + (1 - momentum) * batch
  double momentum = 0.9;
};

template <typename T>
struct BatchNormCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;
};

/// Channel axis is 1; all other axes are reduced. Accepts [B, C, ...] of any rank >= 2.
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& running_mean,
                            Tensor<T>& running_var, Mode mode, BatchNormCache<T>* cache,
                            const BatchNormOptions& opt = {}) {
  if (x.rank() < 2) throw ShapeError("batchnorm input needs a channel axis");
  const std::size_t B = x.extent(0), C = x.extent(1);
  const std::size_t S = x.size() / (B * C);
  if (gamma.size() != C || beta.size() != C || running_mean.size() != C || running_var.size() != C) {
    throw ShapeError("batchnorm parameter length mismatch");
  }
  const std::size_t count = B * S;
  if (mode == Mode::Train && count < 2) {
    throw DegenerateBatchError("batch statistics need at least 2 values per channel, got " + std::to_string(count));
  }
  Tensor<T> y(x.shape());
  if (cache) {
    cache->xhat = Tensor<T>(x.shape());
    cache->inv_std.assign(C, T{0});
  }
  const T* xp = x.data().data();
  T* yp = y.data().data();
  for (std::size_t c = 0; c < C; ++c) {
    double mean, var;
    if (mode == Mode::Train) {
      double sum = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const T* p = xp + (b * C + c) * S;
        for (std::size_t i = 0; i < S; ++i) sum += static_cast<double>(p[i]);
      }
      mean = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const T* p = xp + (b * C + c) * S;
        for (std::size_t i = 0; i < S; ++i) {
          const double d = static_cast<double>(p[i]) - mean;
          sq += d * d;
        }
      }
      var = sq / static_cast<double>(count);
      running_mean[c] = static_cast<T>(opt.momentum * static_cast<double>(running_mean[c]) + (1.0 - opt.momentum) * mean);
      running_var[c] = static_cast<T>(opt.momentum * static_cast<double>(running_var[c]) + (1.0 - opt.momentum) * var);
    } else {
      mean = static_cast<double>(running_mean[c]);
      var = static_cast<double>(running_var[c]);
    }
    const T m = static_cast<T>(mean);
    const T inv = static_cast<T>(1.0 / std::sqrt(var + opt.epsilon));
    const T g = gamma[c], bt = beta[c];
    if (cache) cache->inv_std[c] = inv;
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t base = (b * C + c) * S;
      for (std::size_t i = 0; i < S; ++i) {
        const T xh = (xp[base + i] - m) * inv;
        if (cache) cache->xhat[base + i] = xh;
        yp[base + i] = g * xh + bt;
      }
    }
  }
  return y;
}

/// Train-mode batchnorm gradient (batch statistics depend on x).
template <typename T>
Tensor<T> batchnorm_backward(const Tensor<T>& dy, const BatchNormCache<T>& cache, const Tensor<T>& gamma,
                             Tensor<T>& dgamma, Tensor<T>& dbeta) {
  const std::size_t B = dy.extent(0), C = dy.extent(1);
  const std::size_t S = dy.size() / (B * C);
  const double n = static_cast<double>(B * S);
  dgamma = Tensor<T>({C});
  dbeta = Tensor<T>({C});
  Tensor<T> dx(dy.shape());
  for (std::size_t c = 0; c < C; ++c) {
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t base = (b * C + c) * S;
      for (std::size_t i = 0; i < S; ++i) {
        sum_dy += static_cast<double>(dy[base + i]);
        sum_dy_xh += static_cast<double>(dy[base + i]) * static_cast<double>(cache.xhat[base + i]);
      }
    }
    dbeta[c] = static_cast<T>(sum_dy);
    dgamma[c] = static_cast<T>(sum_dy_xh);
    const T k = static_cast<T>(static_cast<double>(gamma[c]) * static_cast<double>(cache.inv_std[c]) / n);
    const T mean_dy = static_cast<T>(sum_dy), mean_dy_xh = static_cast<T>(sum_dy_xh);
    const T nn = static_cast<T>(n);
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t base = (b * C + c) * S;
      for (std::size_t i = 0; i < S; ++i) {
        dx[base + i] = k * (nn * dy[base + i] - mean_dy - cache.xhat[base + i] * mean_dy_xh);
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Dense: y = x W^T + b, W is [out, in]

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require_rank(x.shape(), 2, "dense input");
  const std::size_t B = x.extent(0), In = x.extent(1), Out = w.extent(0);
  if (w.rank() != 2 || w.extent(1) != In || b.size() != Out) {
    throw ShapeError("dense weight " + shape_string(w.shape()) + " incompatible with input " + shape_string(x.shape()));
  }
  Tensor<T> y({B, Out});
  parallel_for(Out, [&](std::size_t o) {
    const T* wr = w.data().data() + o * In;
    for (std::size_t s = 0; s < B; ++s) {
      const T* xr = x.data().data() + s * In;
      T acc = 0;
      for (std::size_t i = 0; i < In; ++i) acc += wr[i] * xr[i];
      y[s * Out + o] = acc + b[o];
    }
  });
  return y;
}

template <typename T>
Tensor<T> dense_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, Tensor<T>& dw, Tensor<T>& db) {
  const std::size_t B = x.extent(0), In = x.extent(1), Out = w.extent(0);
  dw = Tensor<T>(w.shape());
  db = Tensor<T>({Out});
  parallel_for(Out, [&](std::size_t o) {
    T* dwr = dw.data().data() + o * In;
    T bsum = 0;
    for (std::size_t s = 0; s < B; ++s) {
      const T g = dy[s * Out + o];
      bsum += g;
      const T* xr = x.data().data() + s * In;
      for (std::size_t i = 0; i < In; ++i) dwr[i] += g * xr[i];
    }
    db[o] = bsum;
  });
  Tensor<T> dx({B, In});
  for (std::size_t s = 0; s < B; ++s) {
    T* dxr = dx.data().data() + s * In;
    for (std::size_t o = 0; o < Out; ++o) {
      const T g = dy[s * Out + o];
      const T* wr = w.data().data() + o * In;
      for (std::size_t i = 0; i < In; ++i) dxr[i] += g * wr[i];
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Dropout (inverted scaling), softmax, MAE loss

/// Returns the per-element multiplier: 0 for dropped units, 1/(1-rate) otherwise.
template <typename T>
std::vector<T> dropout_mask(std::size_t n, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must be in [0, 1)");
  std::vector<T> mask(n, T{1});
  if (rate == 0.0) return mask;
  const T keep = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& m : mask) m = rng.uniform() < rate ? T{0} : keep;
  return mask;
}

template <typename T>
void apply_mask(Tensor<T>& x, const std::vector<T>& mask) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] *= mask[i];
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& z) {
  detail::require_rank(z.shape(), 2, "softmax input");
  const std::size_t B = z.extent(0), K = z.extent(1);
  Tensor<T> p(z.shape());
  for (std::size_t s = 0; s < B; ++s) {
    const T* zr = z.data().data() + s * K;
    T* pr = p.data().data() + s * K;
    const T mx = *std::max_element(zr, zr + K);
    T sum = 0;
    for (std::size_t k = 0; k < K; ++k) {
      pr[k] = std::exp(zr[k] - mx);
      sum += pr[k];
    }
    for (std::size_t k = 0; k < K; ++k) pr[k] /= sum;
  }
  return p;
}

/// Gradient w.r.t. logits given gradient w.r.t. softmax outputs.
template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& p, const Tensor<T>& dp) {
  const std::size_t B = p.extent(0), K = p.extent(1);
  Tensor<T> dz(p.shape());
  for (std::size_t s = 0; s < B; ++s) {
    T dot = 0;
    for (std::size_t k = 0; k < K; ++k) dot += dp[s * K + k] * p[s * K + k];
    for (std::size_t k = 0; k < K; ++k) dz[s * K + k] = p[s * K + k] * (dp[s * K + k] - dot);
  }
  return dz;
}

template <typename T>
struct LossResult {
  T loss;
  Tensor<T> grad;  ///< d loss / d probs
};

/// Mean absolute error over batch and classes; subgradient sign(p - y) / (B*K).
template <typename T>
LossResult<T> mae_loss(const Tensor<T>& probs, const Tensor<T>& target) {
  if (probs.shape() != target.shape()) throw ShapeError("loss operand shapes differ");
  const T n = static_cast<T>(probs.size());
  LossResult<T> r{T{0}, Tensor<T>(probs.shape())};
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const T d = probs[i] - target[i];
    r.loss += std::abs(d);
    r.grad[i] = (d > T{0} ? T{1} : (d < T{0} ? T{-1} : T{0})) / n;
  }
  r.loss /= n;
  return r;
}

template <typename T>
Tensor<T> one_hot(std::span<const int> labels, std::size_t classes) {
  Tensor<T> y({labels.size(), classes});
  for (std::size_t s = 0; s < labels.size(); ++s) {
    if (labels[s] < 0 || static_cast<std::size_t>(labels[s]) >= classes) throw DomainError("label out of range");
    y[s * classes + static_cast<std::size_t>(labels[s])] = T{1};
  }
  return y;
}

}  // namespace u3d::nn
