#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "u3d/errors.hpp"
#include "u3d/nn/layers.hpp"
#include "u3d/random.hpp"
#include "u3d/tensor.hpp"

namespace u3d::nn {

/// Architecture hyperparameters. The stack is
///   [Conv3x3x3(valid) -> MaxPool2 -> ReLU -> BatchNorm] per conv filter entry,
///   flatten -> Dense(fc_width) -> ReLU -> Dropout -> Dropout -> Dense(classes) -> Softmax.
struct ModelConfig {
  std::array<std::size_t, 3> input{128, 128, 64};
  std::vector<std::size_t> conv_filters{64, 64, 128, 256};
  std::size_t fc_width = 512;
  /// Two stacked dropout layers; a unit survives both with probability 0.4.
  std::array<double, 2> dropout{1.0 - 0.63245553203367588, 1.0 - 0.63245553203367588};
  std::size_t classes = 2;
};

/// Spatial extents after each conv+pool stage. Throws ConfigError when a
/// stage would collapse below one voxel.
inline std::vector<std::array<std::size_t, 3>> stage_extents(const ModelConfig& cfg) {
  if (cfg.conv_filters.empty()) throw ConfigError("at least one conv stage is required");
  if (cfg.classes < 2 || cfg.fc_width == 0) throw ConfigError("fc_width must be positive and classes >= 2");
  std::vector<std::array<std::size_t, 3>> out;
  std::array<std::size_t, 3> e = cfg.input;
  for (std::size_t s = 0; s < cfg.conv_filters.size(); ++s) {
    if (cfg.conv_filters[s] == 0) throw ConfigError("conv filter count must be positive");
    for (auto& v : e) {
      if (v < 4) {
        throw ConfigError("input " + std::to_string(cfg.input[0]) + "x" + std::to_string(cfg.input[1]) + "x" +
                          std::to_string(cfg.input[2]) + " collapses below one voxel at stage " +
                          std::to_string(s + 1));
      }
      v = (v - 2) / 2;
    }
    out.push_back(e);
  }
  return out;
}

inline std::size_t flatten_size(const ModelConfig& cfg) {
  const auto e = stage_extents(cfg).back();
  return e[0] * e[1] * e[2] * cfg.conv_filters.back();
}

/// Trainable parameter count (batchnorm running statistics excluded).
inline std::uint64_t count_parameters(const ModelConfig& cfg) {
  const std::uint64_t flat = flatten_size(cfg);
  std::uint64_t total = 0;
  std::uint64_t in = 1;
  for (std::size_t f : cfg.conv_filters) {
    total += kKernelVolume * in * f + f;  // conv weights + bias
    total += 2 * f;                        // batchnorm gamma, beta
    in = f;
  }
  total += flat * cfg.fc_width + cfg.fc_width;
  total += cfg.fc_width * cfg.classes + cfg.classes;
  return total;
}

/// Uniform on +-sqrt(6 / (fan_in + fan_out)).
template <typename T>
void glorot_uniform(Tensor<T>& w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (T& v : w.data()) v = static_cast<T>(rng.uniform(-limit, limit));
}

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

template <typename T>
class Network {
 public:
  explicit Network(ModelConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)) {
    extents_ = stage_extents(cfg_);
    flat_ = flatten_size(cfg_);
    Rng rng(seed);
    std::size_t in = 1;
    for (std::size_t s = 0; s < cfg_.conv_filters.size(); ++s) {
      const std::size_t f = cfg_.conv_filters[s];
      const std::string tag = std::to_string(s + 1);
      Tensor<T> w({f, in, 3, 3, 3});
      glorot_uniform(w, in * kKernelVolume, f * kKernelVolume, rng);
      add_param("conv" + tag + ".weight", std::move(w));
      add_param("conv" + tag + ".bias", Tensor<T>({f}, T{0}));
      add_param("bn" + tag + ".gamma", Tensor<T>({f}, T{1}));
      add_param("bn" + tag + ".beta", Tensor<T>({f}, T{0}));
      buffers_.push_back({"bn" + tag + ".running_mean", Tensor<T>({f}, T{0}), {}});
      buffers_.push_back({"bn" + tag + ".running_var", Tensor<T>({f}, T{1}), {}});
      in = f;
    }
    Tensor<T> w1({cfg_.fc_width, flat_});
    glorot_uniform(w1, flat_, cfg_.fc_width, rng);
    add_param("fc1.weight", std::move(w1));
    add_param("fc1.bias", Tensor<T>({cfg_.fc_width}, T{0}));
    Tensor<T> w2({cfg_.classes, cfg_.fc_width});
    glorot_uniform(w2, cfg_.fc_width, cfg_.classes, rng);
    add_param("fc2.weight", std::move(w2));
    add_param("fc2.bias", Tensor<T>({cfg_.classes}, T{0}));
    stages_.resize(cfg_.conv_filters.size());
  }

  const ModelConfig& config() const { return cfg_; }
  std::vector<Parameter<T>>& parameters() { return params_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }
  /// Non-trainable state (batchnorm running statistics).
  std::vector<Parameter<T>>& buffers() { return buffers_; }
  const std::vector<Parameter<T>>& buffers() const { return buffers_; }

  std::uint64_t trainable_count() const {
    std::uint64_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  /// Class probabilities [B, classes] for input [B, 1, X, Y, Z] (or [B, X, Y, Z]).
  /// Dropout masks are drawn from `dropout_rng` in train mode.
  Tensor<T> forward(const Tensor<T>& input, Mode mode, Rng* dropout_rng = nullptr) {
    Tensor<T> x = input.rank() == 4 ? input.reshaped({input.extent(0), 1, input.extent(1), input.extent(2),
                                                      input.extent(3)})
                                    : input;
    if (x.rank() != 5 || x.extent(1) != 1 || x.extent(2) != cfg_.input[0] || x.extent(3) != cfg_.input[1] ||
        x.extent(4) != cfg_.input[2]) {
      throw ShapeError("network expects [B,1," + std::to_string(cfg_.input[0]) + "," + std::to_string(cfg_.input[1]) +
                       "," + std::to_string(cfg_.input[2]) + "], got " + shape_string(input.shape()));
    }
    mode_ = mode;
    const std::size_t B = x.extent(0);
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      StageCache& st = stages_[s];
      st.input = std::move(x);
      Tensor<T> conv = conv3d_forward(st.input, param(s, 0), param(s, 1));
      st.conv_shape = conv.shape();
      PoolResult<T> pooled = maxpool3d_forward(conv);
      st.argmax = std::move(pooled.argmax);
      st.relu_out = std::move(pooled.output);
      relu_in_place(st.relu_out);
      x = batchnorm_forward(st.relu_out, param(s, 2), param(s, 3), buffer(s, 0), buffer(s, 1), mode, &st.bn);
    }
    flat_in_ = std::move(x).reshaped({B, flat_});
    fc1_out_ = dense_forward(flat_in_, fc1_w(), fc1_b());
    relu_in_place(fc1_out_);
    Tensor<T> h = fc1_out_;
    for (std::size_t d = 0; d < 2; ++d) {
      if (mode == Mode::Train && cfg_.dropout[d] > 0.0) {
        if (!dropout_rng) throw ConfigError("train-mode dropout needs a random generator");
        masks_[d] = dropout_mask<T>(h.size(), cfg_.dropout[d], *dropout_rng);
        apply_mask(h, masks_[d]);
      } else {
        masks_[d].assign(h.size(), T{1});
      }
    }
    fc2_in_ = std::move(h);
    probs_ = softmax_rows(dense_forward(fc2_in_, fc2_w(), fc2_b()));
    return probs_;
  }

  /// Back-propagates d loss / d probs from the last forward call into every
  /// parameter's `grad` (overwritten, not accumulated).
  void backward(const Tensor<T>& dprobs) {
    if (dprobs.shape() != probs_.shape()) throw ShapeError("gradient shape does not match last forward output");
    if (mode_ != Mode::Train) throw ConfigError("backward requires a train-mode forward pass");
    Tensor<T> g = softmax_backward(probs_, dprobs);
    Tensor<T> dh = dense_backward(fc2_in_, fc2_w(), g, grad_of(fc_index() + 2), grad_of(fc_index() + 3));
    for (std::size_t d = 2; d-- > 0;) apply_mask(dh, masks_[d]);
    dh = relu_backward(fc1_out_, std::move(dh));
    Tensor<T> dx = dense_backward(flat_in_, fc1_w(), dh, grad_of(fc_index()), grad_of(fc_index() + 1));

    const auto& last = stages_.back().relu_out.shape();
    dx = std::move(dx).reshaped(last);
    for (std::size_t s = stages_.size(); s-- > 0;) {
      StageCache& st = stages_[s];
      Tensor<T> d_relu = batchnorm_backward(dx, st.bn, param(s, 2), grad_of(4 * s + 2), grad_of(4 * s + 3));
      d_relu = relu_backward(st.relu_out, std::move(d_relu));
      Tensor<T> d_conv = maxpool3d_backward(st.conv_shape, st.argmax, d_relu);
      Tensor<T> d_in;
      conv3d_backward(st.input, param(s, 0), d_conv, grad_of(4 * s), grad_of(4 * s + 1), s > 0 ? &d_in : nullptr);
      dx = std::move(d_in);
    }
  }

  /// Hash of every discrete decision made by the last forward pass (pool
  /// winners, ReLU on/off). Two passes with equal signatures lie on the same
  /// smooth piece of the loss.
  std::uint64_t activation_signature() const {
    std::uint64_t h = 0x243f6a8885a308d3ULL;
    auto mix = [&h](std::uint64_t v) { h = mix64(h ^ v); };
    for (const auto& st : stages_) {
      for (auto a : st.argmax) mix(a);
      for (auto v : st.relu_out.data()) mix(v > T{0});
    }
    for (auto v : fc1_out_.data()) mix(v > T{0});
    return h;
  }

 private:
  struct StageCache {
    Tensor<T> input;
    Shape conv_shape;
    std::vector<std::uint32_t> argmax;
    Tensor<T> relu_out;
    BatchNormCache<T> bn;
  };

  void add_param(std::string name, Tensor<T> v) {
    Tensor<T> g(v.shape());
    params_.push_back({std::move(name), std::move(v), std::move(g)});
  }

  // Per-stage parameter order: conv weight, conv bias, bn gamma, bn beta.
  Tensor<T>& param(std::size_t stage, std::size_t k) { return params_[4 * stage + k].value; }
  Tensor<T>& buffer(std::size_t stage, std::size_t k) { return buffers_[2 * stage + k].value; }
  Tensor<T>& grad_of(std::size_t i) { return params_[i].grad; }
  std::size_t fc_index() const { return 4 * stages_.size(); }
  Tensor<T>& fc1_w() { return params_[fc_index()].value; }
  Tensor<T>& fc1_b() { return params_[fc_index() + 1].value; }
  Tensor<T>& fc2_w() { return params_[fc_index() + 2].value; }
  Tensor<T>& fc2_b() { return params_[fc_index() + 3].value; }

  ModelConfig cfg_;
  std::vector<std::array<std::size_t, 3>> extents_;
  std::size_t flat_ = 0;
  std::vector<Parameter<T>> params_;
  std::vector<Parameter<T>> buffers_;

  Mode mode_ = Mode::Eval;
  std::vector<StageCache> stages_;
  Tensor<T> flat_in_, fc1_out_, fc2_in_, probs_;
  std::array<std::vector<T>, 2> masks_;
};

}  // namespace u3d::nn
